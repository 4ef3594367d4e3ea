//! Closed-form randomization bias and variance at a fixed population.
//!
//! Everything here treats `(X, y(1))` as fixed and averages over the
//! assignment distribution. Exact formulas keep every covariance scalar
//! from [`cre_pair_covariance_scalar`]; main-term formulas keep the leading
//! `O(1/n)` pieces.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::{center_design, CenteredDesign, CovariateMatrix, HatMatrix};
use crate::design::hat_matrix;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::numeric::{dot, sample_var};
use crate::randomization::{cre_pair_covariance_scalar, CovPattern, Design};

/// Covariates and treated potential outcomes, held fixed.
#[derive(Debug, Clone)]
pub struct FixedPopulation {
    pub x: CovariateMatrix,
    pub y1: Vec<f64>,
    /// `τ̄ = mean(y(1))`.
    pub taubar: f64,
    pub design: CenteredDesign,
    pub hat: HatMatrix,
    /// `Σ̂_y = X_cᵀ (y(1) ∘ X_c)`.
    pub sigma_y: DMatrix<f64>,
}

impl FixedPopulation {
    pub fn new(x: CovariateMatrix, y1: Vec<f64>) -> Result<Self> {
        let cd = center_design(&x)?;
        let hat = hat_matrix(&cd);
        Self::from_parts(x, y1, cd, hat)
    }

    /// Assemble from an already built design and hat matrix.
    pub fn from_parts(
        x: CovariateMatrix,
        y1: Vec<f64>,
        design: CenteredDesign,
        hat: HatMatrix,
    ) -> Result<Self> {
        if y1.len() != x.n() {
            return Err(Error::Input(format!(
                "y1 has length {}, X has {} rows",
                y1.len(),
                x.n()
            )));
        }
        if let Some(i) = y1.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite potential outcome at unit {i}")));
        }
        let taubar = y1.iter().sum::<f64>() / y1.len() as f64;
        let sigma_y = weighted_gram(&design.xc, &y1);
        Ok(Self {
            x,
            y1,
            taubar,
            design,
            hat,
            sigma_y,
        })
    }

    /// Same covariates with different outcomes.
    pub fn with_outcomes(&self, y1: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.x.clone(), y1, self.design.clone(), self.hat.clone())
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    /// `tr(Σ̂_y Σ̂⁻) = Σ_i H_{i,i} y_i`.
    pub fn trace_sy(&self) -> f64 {
        traces(&self.sigma_y, &self.design.sigma_pinv).0
    }

    /// `tr((Σ̂_y Σ̂⁻)²) = Σ_{i,j} H_{i,j}² y_i y_j`.
    pub fn trace_sy_sq(&self) -> f64 {
        traces(&self.sigma_y, &self.design.sigma_pinv).1
    }
}

/// `X_cᵀ diag(w) X_c`.
fn weighted_gram(xc: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = xc.clone();
    for (i, &wi) in w.iter().enumerate() {
        scaled.row_mut(i).iter_mut().for_each(|v| *v *= wi);
    }
    let g = xc.transpose() * scaled;
    (&g + g.transpose()) * 0.5
}

/// `(tr A, tr A²)` for `A = S Σ̂⁻`, via `p × p` products only.
fn traces(s: &DMatrix<f64>, sigma_pinv: &DMatrix<f64>) -> (f64, f64) {
    let a = s * sigma_pinv;
    let p = a.nrows();
    let mut tr2 = 0.0;
    for k in 0..p {
        for l in 0..p {
            tr2 += a[(k, l)] * a[(l, k)];
        }
    }
    (a.trace(), tr2)
}

/// Whether a reported variance is exact or a leading-order main term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    Exact,
    MainTerm,
}

/// Bias and variance of one estimator.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub estimator: EstimatorKind,
    pub bias: f64,
    pub variance: f64,
    pub variance_kind: VarianceKind,
    pub components: BTreeMap<String, f64>,
}

/// Quadratic and bilinear `H`/`y` sums shared by the exact formulas.
struct Sums {
    n: f64,
    taubar: f64,
    /// `Σ_i H_ii y_i`.
    t: f64,
    /// `Σ_{i,j} H_ij² y_i y_j`.
    s2: f64,
    /// `Σ_i H_ii y_i²`.
    hy2: f64,
    /// `Σ_i H_ii² y_i²`.
    h2y2: f64,
    /// `Σ_{i≠j} H_ij y_i y_j`.
    off: f64,
    /// `Σ_{i≠j} H_ii H_ij y_i y_j`.
    off_h: f64,
}

impl Sums {
    fn new(pop: &FixedPopulation) -> Self {
        let y = &pop.y1;
        let h = &pop.hat.diag;
        let hy = pop.hat.apply(y);
        let (t, s2) = traces(&pop.sigma_y, &pop.design.sigma_pinv);
        let hy2: f64 = (0..y.len()).map(|i| h[i] * y[i] * y[i]).sum();
        let h2y2: f64 = (0..y.len()).map(|i| h[i] * h[i] * y[i] * y[i]).sum();
        let off = dot(y, &hy) - hy2;
        let off_h = (0..y.len()).map(|i| h[i] * y[i] * hy[i]).sum::<f64>() - h2y2;
        Self {
            n: y.len() as f64,
            taubar: pop.taubar,
            t,
            s2,
            hy2,
            h2y2,
            off,
            off_h,
        }
    }
}

fn pattern(d: &Design, p: CovPattern) -> f64 {
    cre_pair_covariance_scalar(d, p).expect("n checked by caller")
}

fn check_len(pop: &FixedPopulation, d: &Design) -> Result<()> {
    if pop.n() != d.n() {
        return Err(Error::Input(format!(
            "population has n = {}, design has n = {}",
            pop.n(),
            d.n()
        )));
    }
    Ok(())
}

/// Exact `var(τ̂_unadj) = (π₀/π₁)(1/n) V_n(y(1))`.
pub fn var_unadj(pop: &FixedPopulation, d: &Design) -> Result<f64> {
    check_len(pop, d)?;
    d.require_cre("var_unadj")?;
    Ok(d.odds() / pop.n() as f64 * sample_var(&pop.y1))
}

/// Exact bias of `τ̂_adj,2`: `−(π₀/π₁) Σ_i H_ii y_i / (n(n−1))` under CRE,
/// zero under Bernoulli sampling.
pub fn bias_adj2(pop: &FixedPopulation, d: &Design) -> Result<f64> {
    check_len(pop, d)?;
    if !d.is_cre() {
        return Ok(0.0);
    }
    let n = pop.n() as f64;
    Ok(-d.odds() * pop.trace_sy() / (n * (n - 1.0)))
}

/// `(ν₁, ν₂)` for outcomes `y`.
fn nu_parts(pop: &FixedPopulation, d: &Design, y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let h = &pop.hat.diag;
    let hy = pop.hat.apply(y);
    let resid: Vec<f64> = (0..y.len()).map(|i| y[i] - hy[i] + h[i] * y[i]).collect();
    let nu1 = d.odds() / n * sample_var(&resid);
    let sy = weighted_gram(&pop.design.xc, y);
    let (_, s2) = traces(&sy, &pop.design.sigma_pinv);
    let hy2: f64 = (0..y.len()).map(|i| h[i] * y[i] * y[i]).sum();
    let h2y2: f64 = (0..y.len()).map(|i| h[i] * h[i] * y[i] * y[i]).sum();
    let nu2 = d.odds().powi(2) / (n * n) * (hy2 - h2y2 + s2 - h2y2);
    (nu1, nu2)
}

fn main_term_report(
    kind: EstimatorKind,
    bias: f64,
    (nu1, nu2): (f64, f64),
) -> MomentReport {
    let mut components = BTreeMap::new();
    components.insert("nu1".to_string(), nu1);
    components.insert("nu2".to_string(), nu2);
    MomentReport {
        estimator: kind,
        bias,
        variance: nu1 + nu2,
        variance_kind: VarianceKind::MainTerm,
        components,
    }
}

/// Main-term variance `ν^f = ν^f₁ + ν^f₂` of `τ̂_adj,2`.
pub fn nu_f(pop: &FixedPopulation, d: &Design) -> Result<MomentReport> {
    check_len(pop, d)?;
    d.require_cre("nu_f")?;
    let parts = nu_parts(pop, d, &pop.y1);
    Ok(main_term_report(EstimatorKind::Adj2, bias_adj2(pop, d)?, parts))
}

/// `ν^f_c`: the main term with outcomes shifted by a constant `c`.
pub fn nu_f_centered(pop: &FixedPopulation, d: &Design, c: f64) -> Result<f64> {
    check_len(pop, d)?;
    d.require_cre("nu_f_centered")?;
    let y: Vec<f64> = pop.y1.iter().map(|v| v - c).collect();
    let (a, b) = nu_parts(pop, d, &y);
    Ok(a + b)
}

/// Main-term variance `ν^f†` of `τ̂_adj,2†` (equivalently `τ̂_db`).
pub fn nu_f_dagger(pop: &FixedPopulation, d: &Design) -> Result<MomentReport> {
    check_len(pop, d)?;
    d.require_cre("nu_f_dagger")?;
    let y: Vec<f64> = pop.y1.iter().map(|v| v - pop.taubar).collect();
    let parts = nu_parts(pop, d, &y);
    Ok(main_term_report(EstimatorKind::Adj2Dagger, bias_db(pop, d)?, parts))
}

/// Exact bias of `τ̂_db`:
/// `2(π₀/π₁²)((n₁−1)/(n−1))(1/(n−2))((p/n)τ̄ − (1/n)Σ_i H_ii y_i)` with `p = tr H`.
pub fn bias_db(pop: &FixedPopulation, d: &Design) -> Result<f64> {
    check_len(pop, d)?;
    let (n, n1) = d.require_cre("bias_db")?;
    if n < 3 {
        return Err(Error::Usage(format!("bias_db needs n >= 3, got {n}")));
    }
    let nf = n as f64;
    let pi1 = d.pi1();
    let p = pop.hat.trace;
    let lead = 2.0 * d.pi0() / (pi1 * pi1) * ((n1 as f64 - 1.0) / (nf - 1.0)) / (nf - 2.0);
    Ok(lead * (p / nf * pop.taubar - pop.trace_sy() / nf))
}

/// The V- and U-statistics of the exact variance, each already multiplied
/// by `1/(n²π₁²)`.
fn v_u_statistics(s: &Sums, pi1: f64) -> ([f64; 7], [f64; 3]) {
    let c = 1.0 / (s.n * s.n * pi1 * pi1);
    let v1 = c * (s.hy2 - s.h2y2);
    let v2 = c * (s.s2 - s.h2y2);
    let v3 = c * (s.off - 2.0 * s.off_h);
    let v45 = c * (-s.off_h - s.s2 + s.h2y2);
    let v6 = c * (2.0 * s.h2y2 - s.hy2);
    let v7 = c * (s.t * s.t + s.s2 - 2.0 * s.h2y2 + 4.0 * s.off_h - s.off);
    let u1 = c * (-s.n * s.taubar * s.t - s.off + s.hy2);
    let u2 = c * s.off;
    let u3 = -c * s.hy2;
    ([v1, v2, v3, v45, v45, v6, v7], [u1, u2, u3])
}

struct Adj2Exact {
    var_unadj: f64,
    var_if22: f64,
    cov_unadj_if22: f64,
    v: [f64; 7],
    u: [f64; 3],
}

fn adj2_exact(pop: &FixedPopulation, d: &Design, s: &Sums) -> Result<Adj2Exact> {
    let vu = var_unadj(pop, d)?;
    let (v, u) = v_u_statistics(s, d.pi1());
    let vp = [
        CovPattern::Var12,
        CovPattern::A12A21,
        CovPattern::A12A13,
        CovPattern::A12A23,
        CovPattern::A12A31,
        CovPattern::A12A32,
        CovPattern::A12A34,
    ];
    let up = [CovPattern::A12T3, CovPattern::A12T1, CovPattern::A12T2];
    let var_if22: f64 = v.iter().zip(vp).map(|(x, p)| x * pattern(d, p)).sum();
    let cov: f64 = u.iter().zip(up).map(|(x, p)| x * pattern(d, p)).sum();
    Ok(Adj2Exact {
        var_unadj: vu,
        var_if22,
        cov_unadj_if22: cov,
        v,
        u,
    })
}

fn require_exact_n(pop: &FixedPopulation, d: &Design, what: &str) -> Result<()> {
    check_len(pop, d)?;
    let (n, _) = d.require_cre(what)?;
    if n < 5 {
        return Err(Error::Usage(format!("{what} needs n >= 5, got {n}")));
    }
    Ok(())
}

/// Exact variance of `τ̂_adj,2`:
/// `var(τ̂_unadj) + var(ÎF₂₂) − 2 cov(τ̂_unadj, ÎF₂₂)`.
pub fn exact_var_adj2(pop: &FixedPopulation, d: &Design) -> Result<MomentReport> {
    require_exact_n(pop, d, "exact_var_adj2")?;
    let s = Sums::new(pop);
    let e = adj2_exact(pop, d, &s)?;
    let mut components = BTreeMap::new();
    components.insert("var_unadj".into(), e.var_unadj);
    components.insert("var_if22".into(), e.var_if22);
    components.insert("cov_unadj_if22".into(), e.cov_unadj_if22);
    for (k, v) in e.v.iter().enumerate() {
        components.insert(format!("V{}", k + 1), *v);
    }
    for (k, u) in e.u.iter().enumerate() {
        components.insert(format!("U{}", k + 1), *u);
    }
    Ok(MomentReport {
        estimator: EstimatorKind::Adj2,
        bias: bias_adj2(pop, d)?,
        variance: e.var_unadj + e.var_if22 - 2.0 * e.cov_unadj_if22,
        variance_kind: VarianceKind::Exact,
        components,
    })
}

/// Exact bias (zero) and variance of `τ̂_adj,3 = τ̂_adj,2 + α̂`,
/// `α̂ = (π₀/π₁) Σ_i H_ii t_i y_i / (n(n−1)π₁)`.
pub fn moments_adj3(pop: &FixedPopulation, d: &Design) -> Result<MomentReport> {
    require_exact_n(pop, d, "moments_adj3")?;
    let s = Sums::new(pop);
    let e = adj2_exact(pop, d, &s)?;
    let n = s.n;
    let pi1 = d.pi1();
    let odds = d.odds();
    let var_adj2 = e.var_unadj + e.var_if22 - 2.0 * e.cov_unadj_if22;

    let var_alpha = odds.powi(3) / (n * (n - 1.0).powi(3)) * (s.h2y2 - s.t * s.t / n);
    let cov_unadj_alpha = odds * odds / (n * (n - 1.0).powi(2)) * (s.hy2 - s.taubar * s.t);
    let kappa = odds / (n * (n - 1.0) * pi1);
    let u1 = pattern(d, CovPattern::A12T3);
    let u2 = pattern(d, CovPattern::A12T1);
    let u3 = pattern(d, CovPattern::A12T2);
    let cov_if22_alpha = kappa / (n * pi1)
        * (u2 * s.off_h - u3 * s.h2y2 + u1 * (-s.t * s.t - s.off_h + s.h2y2));

    let mut components = BTreeMap::new();
    components.insert("var_adj2".into(), var_adj2);
    components.insert("var_alpha".into(), var_alpha);
    components.insert("cov_unadj_alpha".into(), cov_unadj_alpha);
    components.insert("cov_if22_alpha".into(), cov_if22_alpha);
    Ok(MomentReport {
        estimator: EstimatorKind::Adj3,
        bias: 0.0,
        variance: var_adj2 + var_alpha + 2.0 * cov_unadj_alpha - 2.0 * cov_if22_alpha,
        variance_kind: VarianceKind::Exact,
        components,
    })
}

/// Both sides of the efficiency criterion `var(τ̂_unadj) − ν^f₁ ≥ ν^f₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyCriterion {
    pub improves: bool,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn efficiency_criterion(pop: &FixedPopulation, d: &Design) -> Result<EfficiencyCriterion> {
    let vu = var_unadj(pop, d)?;
    let r = nu_f(pop, d)?;
    let lhs = vu - r.components["nu1"];
    let rhs = r.components["nu2"];
    Ok(EfficiencyCriterion {
        improves: lhs >= rhs,
        lhs,
        rhs,
    })
}
