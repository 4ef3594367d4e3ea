//! Assignment mechanisms, exhaustive enumeration, and exact moments of
//! products of assignment indicators.

use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::binomial;

/// Default limit on the number of enumerated assignments.
pub const DEFAULT_ENUM_CAP: u64 = 2_000_000;

/// Treatment assignment mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    /// Complete randomization: exactly `n1` of `n` units treated.
    Cre { n: usize, n1: usize },
    /// Independent coin flips with probability `pi1`.
    Bernoulli { n: usize, pi1: f64 },
}

impl Design {
    pub fn cre(n: usize, n1: usize) -> Result<Self> {
        if n < 2 || n1 == 0 || n1 > n {
            return Err(Error::Usage(format!("invalid CRE design: n = {n}, n1 = {n1}")));
        }
        Ok(Design::Cre { n, n1 })
    }

    pub fn bernoulli(n: usize, pi1: f64) -> Result<Self> {
        if n < 2 || !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::Usage(format!("invalid Bernoulli design: n = {n}, pi1 = {pi1}")));
        }
        Ok(Design::Bernoulli { n, pi1 })
    }

    pub fn n(&self) -> usize {
        match *self {
            Design::Cre { n, .. } | Design::Bernoulli { n, .. } => n,
        }
    }

    /// Treated probability; `n1 / n` exactly under CRE.
    pub fn pi1(&self) -> f64 {
        match *self {
            Design::Cre { n, n1 } => n1 as f64 / n as f64,
            Design::Bernoulli { pi1, .. } => pi1,
        }
    }

    pub fn pi0(&self) -> f64 {
        match *self {
            Design::Cre { n, n1 } => (n - n1) as f64 / n as f64,
            Design::Bernoulli { pi1, .. } => 1.0 - pi1,
        }
    }

    /// `π₀ / π₁`.
    pub fn odds(&self) -> f64 {
        self.pi0() / self.pi1()
    }

    pub fn n1(&self) -> Option<usize> {
        match *self {
            Design::Cre { n1, .. } => Some(n1),
            Design::Bernoulli { .. } => None,
        }
    }

    pub fn is_cre(&self) -> bool {
        matches!(self, Design::Cre { .. })
    }

    /// `(n, n1)` or a usage error naming `what` for non-CRE designs.
    pub fn require_cre(&self, what: &str) -> Result<(usize, usize)> {
        match *self {
            Design::Cre { n, n1 } => Ok((n, n1)),
            Design::Bernoulli { .. } => {
                Err(Error::Usage(format!("{what} is only defined under CRE")))
            }
        }
    }
}

/// A 0/1 treatment vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    t: Vec<u8>,
}

impl Assignment {
    pub fn new(t: Vec<u8>) -> Result<Self> {
        if t.iter().any(|&v| v > 1) {
            return Err(Error::Input("assignment entries must be 0 or 1".into()));
        }
        Ok(Self { t })
    }

    /// Units `0..n` with bit `i` of `mask` set are treated.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self {
            t: (0..n).map(|i| ((mask >> i) & 1) as u8).collect(),
        }
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn treated_count(&self) -> usize {
        self.t.iter().map(|&v| v as usize).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.t.iter().map(|&v| v as f64).collect()
    }
}

/// Draw one assignment. CRE uses a partial Fisher–Yates shuffle.
pub fn sample_assignment<R: Rng + ?Sized>(d: &Design, rng: &mut R) -> Assignment {
    match *d {
        Design::Cre { n, n1 } => {
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..n1.min(n) {
                let j = rng.random_range(i..n);
                idx.swap(i, j);
            }
            let mut t = vec![0u8; n];
            for &i in &idx[..n1] {
                t[i] = 1;
            }
            Assignment { t }
        }
        Design::Bernoulli { n, pi1 } => Assignment {
            t: (0..n).map(|_| (rng.random::<f64>() < pi1) as u8).collect(),
        },
    }
}

/// Iterator over all `n1`-subsets of `0..n` as bitmasks, in increasing
/// integer (colexicographic) order via Gosper's hack.
#[derive(Debug, Clone)]
pub struct CombinationMasks {
    next: Option<u64>,
    limit: u64,
}

impl CombinationMasks {
    /// All masks with `n1` bits set below bit `n`.
    fn all(n: usize, n1: usize) -> Self {
        let first = if n1 == 0 { 0 } else { (1u64 << n1) - 1 };
        Self {
            next: Some(first),
            limit: 1u64 << n,
        }
    }

    /// Masks whose highest set bit is `top`.
    fn with_top(top: usize, n1: usize) -> Self {
        let first = (1u64 << top) | ((1u64 << (n1 - 1)) - 1);
        Self {
            next: Some(first),
            limit: 1u64 << (top + 1),
        }
    }
}

impl Iterator for CombinationMasks {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        let cur = self.next?;
        if cur >= self.limit {
            self.next = None;
            return None;
        }
        self.next = if cur == 0 {
            None
        } else {
            let c = cur & cur.wrapping_neg();
            let r = cur + c;
            Some((((r ^ cur) >> 2) / c) | r)
        };
        Some(cur)
    }
}

fn check_enumerable(d: &Design, cap: u64) -> Result<(usize, usize)> {
    let (n, n1) = d.require_cre("enumeration")?;
    let count = binomial(n, n1);
    if count > cap as f64 || n > 63 {
        return Err(Error::Resource { n, n1, count, cap });
    }
    Ok((n, n1))
}

/// Every CRE assignment exactly once, as bitmasks (bit `i` = unit `i`).
pub fn enumerate_masks(d: &Design, cap: u64) -> Result<CombinationMasks> {
    let (n, n1) = check_enumerable(d, cap)?;
    Ok(CombinationMasks::all(n, n1))
}

/// Every CRE assignment split into blocks by the highest treated index.
/// Concatenating the blocks in order reproduces [`enumerate_masks`].
pub fn enumerate_mask_blocks(d: &Design, cap: u64) -> Result<Vec<CombinationMasks>> {
    let (n, n1) = check_enumerable(d, cap)?;
    if n1 == 0 {
        return Ok(vec![CombinationMasks::all(n, 0)]);
    }
    Ok(((n1 - 1)..n).map(|top| CombinationMasks::with_top(top, n1)).collect())
}

/// Every CRE assignment exactly once.
pub fn enumerate_assignments(
    d: &Design,
    cap: u64,
) -> Result<impl Iterator<Item = Assignment>> {
    let n = d.n();
    Ok(enumerate_masks(d, cap)?.map(move |m| Assignment::from_mask(m, n)))
}

/// `E[t_1 ⋯ t_j]` for `j` distinct units.
///
/// CRE: `π₁ ∏_{i=1}^{j−1} (n₁−i)/(n−i)`, zero when `j > n₁`.
/// Bernoulli: `π₁^j`.
pub fn cre_product_moment(d: &Design, j: usize) -> f64 {
    match *d {
        Design::Cre { n, n1 } => {
            if j == 0 {
                return 1.0;
            }
            if j > n1 {
                return 0.0;
            }
            let mut e = n1 as f64 / n as f64;
            for i in 1..j {
                e *= (n1 - i) as f64 / (n - i) as f64;
            }
            e
        }
        Design::Bernoulli { pi1, .. } => pi1.powi(j as i32),
    }
}

/// Index configurations for covariances involving `A_{ij} = (t_i/π₁ − 1) t_j`.
///
/// Distinct digits denote distinct units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovPattern {
    /// `var(A₁₂)`.
    Var12,
    /// `cov(A₁₂, A₂₁)`.
    A12A21,
    /// `cov(A₁₂, A₁₃)`.
    A12A13,
    /// `cov(A₁₂, A₂₃)`.
    A12A23,
    /// `cov(A₁₂, A₃₁)`.
    A12A31,
    /// `cov(A₁₂, A₃₂)`.
    A12A32,
    /// `cov(A₁₂, A₃₄)`.
    A12A34,
    /// `cov(A₁₂, t₃)`.
    A12T3,
    /// `cov(A₁₂, t₁)`.
    A12T1,
    /// `cov(A₁₂, t₂)`.
    A12T2,
}

impl CovPattern {
    pub const ALL: [CovPattern; 10] = [
        CovPattern::Var12,
        CovPattern::A12A21,
        CovPattern::A12A13,
        CovPattern::A12A23,
        CovPattern::A12A31,
        CovPattern::A12A32,
        CovPattern::A12A34,
        CovPattern::A12T3,
        CovPattern::A12T1,
        CovPattern::A12T2,
    ];

    /// Stable identifier.
    pub fn id(&self) -> &'static str {
        match self {
            CovPattern::Var12 => "var12",
            CovPattern::A12A21 => "a12a21",
            CovPattern::A12A13 => "a12a13",
            CovPattern::A12A23 => "a12a23",
            CovPattern::A12A31 => "a12a31",
            CovPattern::A12A32 => "a12a32",
            CovPattern::A12A34 => "a12a34",
            CovPattern::A12T3 => "a12t3",
            CovPattern::A12T1 => "a12t1",
            CovPattern::A12T2 => "a12t2",
        }
    }

    /// Number of distinct units the pattern touches.
    pub fn units(&self) -> usize {
        match self {
            CovPattern::Var12 | CovPattern::A12A21 | CovPattern::A12T1 | CovPattern::A12T2 => 2,
            CovPattern::A12A34 => 4,
            _ => 3,
        }
    }
}

impl FromStr for CovPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CovPattern::ALL
            .iter()
            .copied()
            .find(|p| p.id() == s)
            .ok_or_else(|| Error::Usage(format!("unknown covariance pattern '{s}'")))
    }
}

/// Exact value of a covariance pattern, expanded into product moments
/// `e_k = E[t_1 ⋯ t_k]` using `t² = t`.
pub fn cre_pair_covariance_scalar(d: &Design, pattern: CovPattern) -> Result<f64> {
    if d.n() < pattern.units() {
        return Err(Error::Usage(format!(
            "pattern {} needs n >= {}, got {}",
            pattern.id(),
            pattern.units(),
            d.n()
        )));
    }
    let p = d.pi1();
    let e2 = cre_product_moment(d, 2);
    let e3 = cre_product_moment(d, 3);
    let e4 = cre_product_moment(d, 4);
    // E[A₁₂] = e₂/π₁ − π₁.
    let m = e2 / p - p;
    let v = match pattern {
        CovPattern::Var12 => e2 * (1.0 / (p * p) - 2.0 / p) + p - m * m,
        CovPattern::A12A21 => e2 * (1.0 / p - 1.0).powi(2) - m * m,
        CovPattern::A12A13 => e3 * (1.0 / (p * p) - 2.0 / p) + e2 - m * m,
        CovPattern::A12A23 | CovPattern::A12A31 => (1.0 / p - 1.0) * (e3 / p - e2) - m * m,
        CovPattern::A12A32 => e3 / (p * p) - 2.0 * e2 / p + p - m * m,
        CovPattern::A12A34 => e4 / (p * p) - 2.0 * e3 / p + e2 - m * m,
        CovPattern::A12T3 => e3 / p - e2 - m * p,
        CovPattern::A12T1 => e2 / p - e2 - m * p,
        CovPattern::A12T2 => (1.0 - p) * m,
    };
    Ok(v)
}

/// Which moment [`cre_db_moment`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbMoment {
    /// `E[∏_{i∈S} t_i · τ̂_unadj]`.
    First,
    /// `E[∏_{i∈S} t_i · τ̂_unadj²]`.
    Second,
}

/// Moments of `τ̂_unadj` weighted by the product of `m = |S|` distinct
/// indicators, `m ∈ {1, 2, 3}`, in closed form.
pub fn cre_db_moment(d: &Design, y1: &[f64], which: DbMoment, indices: &[usize]) -> Result<f64> {
    let (n, n1) = d.require_cre("cre_db_moment")?;
    let m = indices.len();
    if !(1..=3).contains(&m) {
        return Err(Error::Usage(format!("cre_db_moment supports m in 1..=3, got {m}")));
    }
    if y1.len() != n {
        return Err(Error::Input(format!("y1 has length {}, design has n = {n}", y1.len())));
    }
    if indices.iter().any(|&i| i >= n) {
        return Err(Error::Usage("index out of range".into()));
    }
    for a in 0..m {
        for b in (a + 1)..m {
            if indices[a] == indices[b] {
                return Err(Error::Usage("indices must be distinct".into()));
            }
        }
    }
    if n < m + 2 {
        return Err(Error::Usage(format!("cre_db_moment needs n >= m + 2, got n = {n}")));
    }
    let pi1 = d.pi1();
    let pi0 = d.pi0();
    // q(k) = ∏_{i=1}^{k} (n₁−i)/(n−i).
    let q = |k: usize| -> f64 {
        let mut v = 1.0;
        for i in 1..=k {
            v *= (n1 as f64 - i as f64) / (n - i) as f64;
        }
        v
    };
    let nf = n as f64;
    let mf = m as f64;
    let taubar = y1.iter().sum::<f64>() / nf;
    let s: f64 = indices.iter().map(|&i| y1[i]).sum();
    match which {
        DbMoment::First => Ok(q(m) * taubar + q(m - 1) * pi0 / (nf - mf) * s),
        DbMoment::Second => {
            let tau2 = y1.iter().map(|v| v * v).sum::<f64>() / nf;
            let mut pairs = 0.0;
            for a in 0..m {
                for b in a..m {
                    pairs += y1[indices[a]] * y1[indices[b]];
                }
            }
            let odds = pi0 / pi1;
            let qm = q(m);
            let v = q(m + 1) / pi1 * taubar * taubar
                + odds * qm / (nf - mf - 1.0) * tau2
                + odds * qm * 2.0 / (nf - mf - 1.0) * taubar * s
                - odds * qm * 2.0 / (nf * (nf - mf - 1.0)) * pairs
                + odds * q(m - 1) / (nf * (nf - mf)) * s * s;
            Ok(v)
        }
    }
}
