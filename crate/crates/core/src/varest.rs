//! Plug-in variance estimators and Wald intervals.
//!
//! Both estimators share the normalization of the main term: the
//! `B`-quadratic part carries `(π₀/π₁)/(n(n−1))` so that its expectation
//! tracks `ν^f₁ = (π₀/π₁)(1/n)V_n(·)`, and the `H∘H` part carries
//! `(π₀/π₁)²/n²`.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::HatMatrix;
use crate::error::{Error, Result};
use crate::estimators::{check_hat, EstimatorKind, ObservedDataset};
use crate::numeric::{dot, sample_var};
use crate::randomization::Design;

/// Which plug-in estimator of the main-term variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarEstKind {
    /// `ν̂^f`, unbiased to leading order.
    Unbiased,
    /// `ν̂'^f`, larger in expectation by a nonnegative term.
    Conservative,
}

impl VarEstKind {
    pub const ALL: [VarEstKind; 2] = [VarEstKind::Unbiased, VarEstKind::Conservative];

    pub fn name(&self) -> &'static str {
        match self {
            VarEstKind::Unbiased => "unbiased",
            VarEstKind::Conservative => "conservative",
        }
    }
}

impl std::str::FromStr for VarEstKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unbiased" => Ok(VarEstKind::Unbiased),
            "conservative" => Ok(VarEstKind::Conservative),
            _ => Err(Error::Usage(format!("unknown variance estimator '{s}'"))),
        }
    }
}

/// `P = I − 𝟙𝟙ᵀ/n`, `M = P − H + P·diag(H)`, `B = MᵀM`.
#[derive(Debug, Clone)]
pub struct AuxMatrices {
    pub p: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

pub fn aux_matrices(hat: &HatMatrix) -> AuxMatrices {
    let n = hat.n();
    let p = DMatrix::from_fn(n, n, |i, j| (i == j) as u8 as f64 - 1.0 / n as f64);
    let mut pd = p.clone();
    for (j, &hj) in hat.diag.iter().enumerate() {
        pd.column_mut(j).scale_mut(hj);
    }
    let m = &p - &hat.h + pd;
    let b = m.tr_mul(&m);
    AuxMatrices { p, m, b }
}

/// Per-design quantities reused across assignments.
#[derive(Debug, Clone)]
pub struct VarEstWorkspace {
    hat: HatMatrix,
    /// `B_ii`.
    b_diag: Vec<f64>,
    /// `H∘H`, row-major by symmetry.
    h_sq: DMatrix<f64>,
}

impl VarEstWorkspace {
    pub fn new(hat: &HatMatrix) -> Self {
        let n = hat.n();
        let nf = n as f64;
        let h = &hat.diag;
        let h_sq = hat.h.map(|v| v * v);
        // ‖M e_i‖² with w = (1+h_i)e_i − H e_i and P removing its mean (1+h_i)/n.
        let b_diag = (0..n)
            .map(|i| {
                let col_sq: f64 = h_sq.column(i).sum();
                let a = 1.0 + h[i];
                a * a - 2.0 * a * h[i] + col_sq - a * a / nf
            })
            .collect();
        Self {
            hat: hat.clone(),
            b_diag,
            h_sq,
        }
    }

    pub fn b_diag(&self) -> &[f64] {
        &self.b_diag
    }

    /// `ν̂` or `ν̂'` for observed `(t, y)`.
    pub fn nu_hat(&self, kind: VarEstKind, t: &[u8], y: &[f64], d: &Design) -> f64 {
        let n = t.len();
        let nf = n as f64;
        let pi = d.pi1();
        let odds = d.odds();
        let k1 = odds / (nf * (nf - 1.0));
        let k2 = odds * odds / (nf * nf);
        let h = &self.hat.diag;
        let u: Vec<f64> = (0..n).map(|i| t[i] as f64 * y[i] / pi).collect();
        let hu = self.hat.apply(&u);

        let h2u = mat_vec(&self.h_sq, &u);
        let part2 = (0..n)
            .map(|i| h[i] * (1.0 - h[i]) * t[i] as f64 * y[i] * y[i] / pi)
            .sum::<f64>()
            + dot(&u, &h2u)
            - (0..n).map(|i| h[i] * h[i] * u[i] * u[i]).sum::<f64>();

        let part1 = match kind {
            VarEstKind::Unbiased => {
                // uᵀBu = ‖Mu‖² with Mu = P(u − Hu + h∘u).
                let mu: Vec<f64> = (0..n).map(|i| u[i] - hu[i] + h[i] * u[i]).collect();
                let mbar = mu.iter().sum::<f64>() / nf;
                let ubu: f64 = mu.iter().map(|v| (v - mbar) * (v - mbar)).sum();
                let diag_obs: f64 = (0..n)
                    .map(|i| self.b_diag[i] * t[i] as f64 * y[i] * y[i] / pi)
                    .sum();
                let diag_uu: f64 = (0..n).map(|i| self.b_diag[i] * u[i] * u[i]).sum();
                diag_obs + ubu - diag_uu
            }
            VarEstKind::Conservative => {
                let centre = (0..n).map(|k| (1.0 + h[k]) * u[k]).sum::<f64>() / nf;
                (0..n)
                    .filter(|&i| t[i] == 1)
                    .map(|i| {
                        let r = y[i] - (hu[i] - h[i] * u[i]) - centre;
                        r * r / pi
                    })
                    .sum()
            }
        };
        k1 * part1 + k2 * part2
    }

    /// Variance estimate matched to an estimator, `None` where no estimator
    /// is defined (`Adj`, `Adj1`).
    ///
    /// `Adj2` and `Adj3` share `ν̂`; `Db` and `Adj2Dagger` use `ν̂` on
    /// `y − τ̂_unadj`; `Unadj` uses `(π₀/π₁)(1/n)s²` over treated units.
    pub fn for_estimator(
        &self,
        est: EstimatorKind,
        kind: VarEstKind,
        t: &[u8],
        y: &[f64],
        d: &Design,
    ) -> Option<f64> {
        match est {
            EstimatorKind::Unadj => Some(unadj_variance(t, y, d)),
            EstimatorKind::Adj2 | EstimatorKind::Adj3 => Some(self.nu_hat(kind, t, y, d)),
            EstimatorKind::Db | EstimatorKind::Adj2Dagger => {
                let n = t.len();
                let tau_u = (0..n).map(|i| t[i] as f64 * y[i]).sum::<f64>()
                    / (n as f64 * d.pi1());
                let yc: Vec<f64> = y.iter().map(|v| v - tau_u).collect();
                Some(self.nu_hat(kind, t, &yc, d))
            }
            EstimatorKind::Adj | EstimatorKind::Adj1 => None,
        }
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    // Symmetric matrix: column j dotted with v gives entry j.
    let n = v.len();
    let s = m.as_slice();
    (0..n).map(|j| dot(&s[j * n..(j + 1) * n], v)).collect()
}

/// `(π₀/π₁)(1/n) s²` with `s²` the sample variance of treated outcomes.
pub fn unadj_variance(t: &[u8], y: &[f64], d: &Design) -> f64 {
    let treated: Vec<f64> = t.iter().zip(y).filter(|(&ti, _)| ti == 1).map(|(_, &v)| v).collect();
    if treated.len() < 2 {
        return f64::NAN;
    }
    d.odds() / t.len() as f64 * sample_var(&treated)
}

/// `ν̂` or `ν̂'` on an observed dataset.
pub fn nu_hat(kind: VarEstKind, data: &ObservedDataset, hat: &HatMatrix) -> Result<f64> {
    check_hat(data, hat)?;
    Ok(VarEstWorkspace::new(hat).nu_hat(kind, data.t.as_slice(), &data.y, &data.design))
}

/// A symmetric normal-theory interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalReport {
    pub point: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    /// Set when a negative variance estimate was clamped to zero.
    pub clamped: bool,
}

/// Two-sided normal quantile for coverage `level`; 1.959964… at 0.95.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Usage(format!("level must lie in (0, 1), got {level}")));
    }
    let z = Normal::standard();
    Ok(z.inverse_cdf(0.5 + level / 2.0))
}

/// `point ± z·√ν`. `nu` is already on the estimator's scale (it estimates
/// the variance of the point estimate itself), so no further `1/n` factor
/// is applied.
pub fn wald_ci(point: f64, nu: f64, level: f64) -> Result<IntervalReport> {
    let z = normal_quantile(level)?;
    let clamped = nu < 0.0;
    let se = nu.max(0.0).sqrt();
    Ok(IntervalReport {
        point,
        se,
        ci_lower: point - z * se,
        ci_upper: point + z * se,
        level,
        clamped,
    })
}
