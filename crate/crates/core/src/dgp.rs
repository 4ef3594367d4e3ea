//! Simulation populations and the two simulation harnesses: formula-only
//! relative efficiencies, and Monte Carlo over re-randomized assignments.
//!
//! Covariate rows are multivariate t₃ with `Σ_kl = ρ^|k−l|`, realized as
//! Gaussian rows divided by `√(χ²₃/3)`. The Toeplitz factor is the AR(1)
//! recursion, so row `i` of the conceptual `N × N` master matrix can be
//! generated lazily up to any column without materializing the pool.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{CovariateMatrix, HatMatrix};
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, EstimatorKind};
use crate::moments::{
    exact_var_adj2, moments_adj3, nu_f, nu_f_dagger, var_unadj, FixedPopulation,
};
use crate::numeric::{mean, pairwise_sum, sample_var};
use crate::randomization::{sample_assignment, Design};
use crate::rng::stream;
use crate::varest::{normal_quantile, VarEstKind, VarEstWorkspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeModel {
    Linear,
    Nonlinear,
}

impl OutcomeModel {
    pub fn name(&self) -> &'static str {
        match self {
            OutcomeModel::Linear => "linear",
            OutcomeModel::Nonlinear => "nonlinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    T3,
    WorstCase,
}

impl ErrorKind {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorKind::T3 => "t3",
            ErrorKind::WorstCase => "worst-case",
        }
    }
}

/// Which hat matrix defines the worst-case residual direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorstCaseScope {
    /// `H` of the selected `n × p` block.
    Sample,
    /// `H` of the first `p` columns over all `N` pool rows, then sliced.
    Pool,
}

/// One population of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    /// Master pool size `N`.
    pub pool_size: usize,
    pub n: usize,
    /// `p = ⌈nα⌉`.
    pub alpha: f64,
    pub outcome_model: OutcomeModel,
    pub error_kind: ErrorKind,
    pub gamma: f64,
    /// `n₁ = ⌈nπ₁⌉`; the design then uses `π₁ = n₁/n`.
    pub pi1: f64,
    pub cov_decay: f64,
    pub worst_case_scope: WorstCaseScope,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            pool_size: 5000,
            n: 500,
            alpha: 0.1,
            outcome_model: OutcomeModel::Linear,
            error_kind: ErrorKind::T3,
            gamma: 1.0,
            pi1: 0.5,
            cov_decay: 0.1,
            worst_case_scope: WorstCaseScope::Sample,
            seed: 2024,
        }
    }
}

/// `⌈x⌉` that ignores representation noise such as `100 × 0.07 = 7.000…01`.
fn ceil_tol(x: f64) -> usize {
    (x - 1e-9 * x.abs().max(1.0)).ceil().max(0.0) as usize
}

impl DgpConfig {
    pub fn p(&self) -> usize {
        ceil_tol(self.n as f64 * self.alpha)
    }

    pub fn n1(&self) -> usize {
        ceil_tol(self.n as f64 * self.pi1)
    }

    pub fn design(&self) -> Result<Design> {
        Design::cre(self.n, self.n1())
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bad.push(("/alpha".to_string(), format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            bad.push(("/gamma".to_string(), format!("must be positive, got {}", self.gamma)));
        }
        if !(self.pi1 > 0.0 && self.pi1 < 1.0) {
            bad.push(("/pi1".to_string(), format!("must lie in (0, 1), got {}", self.pi1)));
        }
        if !(0.0..1.0).contains(&self.cov_decay) {
            bad.push(("/cov_decay".to_string(), format!("must lie in [0, 1), got {}", self.cov_decay)));
        }
        if self.n < 2 || self.n > self.pool_size {
            bad.push((
                "/n".to_string(),
                format!("must satisfy 2 <= n <= pool_size ({}), got {}", self.pool_size, self.n),
            ));
        }
        if bad.is_empty() {
            if self.p() >= self.n {
                bad.push(("/alpha".to_string(), format!("p = {} must be below n = {}", self.p(), self.n)));
            }
            let n1 = self.n1();
            if n1 == 0 || n1 >= self.n {
                bad.push(("/pi1".to_string(), format!("n1 = {n1} must lie in 1..n")));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Row `i` of the master matrix, first `p` columns.
pub fn master_row(seed: u64, i: usize, p: usize, rho: f64) -> Vec<f64> {
    let mut rng = stream(seed, "x-row", i as u64);
    let chi2: f64 = ChiSquared::new(3.0).expect("valid dof").sample(&mut rng);
    let scale = (chi2 / 3.0).sqrt();
    let innov = (1.0 - rho * rho).sqrt();
    let mut z = 0.0;
    (0..p)
        .map(|k| {
            let e: f64 = rng.sample(StandardNormal);
            z = if k == 0 { e } else { rho * z + innov * e };
            z / scale
        })
        .collect()
}

/// The first `rows × p` block of the master matrix.
pub fn master_block(seed: u64, rows: usize, p: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..rows).into_par_iter().map(|i| master_row(seed, i, p, rho)).collect()
}

/// `β_j = (−1)^j/√j`, `j = 1..p`.
pub fn beta(p: usize) -> Vec<f64> {
    (1..=p)
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / (j as f64).sqrt())
        .collect()
}

pub fn outcome_signal(model: OutcomeModel, x: &[f64], b: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
    match model {
        OutcomeModel::Linear => s,
        OutcomeModel::Nonlinear => s.signum() * s.abs().sqrt() + s.sin(),
    }
}

/// `Scale(a) = (a − ā)/‖a − ā‖₂`.
pub fn scale(a: &[f64]) -> Result<Vec<f64>> {
    let m = mean(a);
    let c: Vec<f64> = a.iter().map(|v| v - m).collect();
    let norm = pairwise_sum(&c.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    if norm <= 1e-300 || !norm.is_finite() {
        return Err(Error::Degenerate("cannot scale a constant vector".into()));
    }
    Ok(c.into_iter().map(|v| v / norm).collect())
}

/// `(I − H) diag(H)` for the hat matrix of `rows`.
fn worst_case_direction(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let x = CovariateMatrix::from_rows(rows)?;
    let cd = crate::design::center_design(&x)?;
    // Thin form: H = Q Qᵀ on the numerical column space of X_c.
    let svd = cd.xc.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-10 * smax.max(1e-300))
        .collect();
    let n = rows.len();
    let h: Vec<f64> = (0..n)
        .map(|i| keep.iter().map(|&k| u[(i, k)] * u[(i, k)]).sum())
        .collect();
    let mut qth = vec![0.0; keep.len()];
    for (a, &k) in keep.iter().enumerate() {
        qth[a] = (0..n).map(|i| u[(i, k)] * h[i]).sum();
    }
    Ok((0..n)
        .map(|i| h[i] - keep.iter().enumerate().map(|(a, &k)| u[(i, k)] * qth[a]).sum::<f64>())
        .collect())
}

/// Draw the fixed population `(X, y(1))`.
pub fn generate_population(cfg: &DgpConfig) -> Result<FixedPopulation> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p());
    let rows = master_block(cfg.seed, n, p, cfg.cov_decay);
    let b = beta(p);
    let f: Vec<f64> = rows.iter().map(|r| outcome_signal(cfg.outcome_model, r, &b)).collect();
    let x = CovariateMatrix::from_rows(&rows)?;
    let hat = HatMatrix::from_covariates(&x)?;
    let eps: Vec<f64> = match cfg.error_kind {
        ErrorKind::T3 => {
            let t3 = StudentT::new(3.0).expect("valid dof");
            (0..n).map(|i| t3.sample(&mut stream(cfg.seed, "eps", i as u64))).collect()
        }
        ErrorKind::WorstCase => match cfg.worst_case_scope {
            WorstCaseScope::Sample => {
                let hh = hat.apply(&hat.diag);
                scale(&(0..n).map(|i| hat.diag[i] - hh[i]).collect::<Vec<_>>())?
            }
            WorstCaseScope::Pool => {
                let pool = master_block(cfg.seed, cfg.pool_size, p, cfg.cov_decay);
                let dir = scale(&worst_case_direction(&pool)?)?;
                dir[..n].to_vec()
            }
        },
    };
    let vf = sample_var(&f);
    let ve = sample_var(&eps);
    if ve.is_nan() || ve <= 0.0 {
        return Err(Error::Degenerate("error vector has zero variance".into()));
    }
    let k = (vf / ve).sqrt() / cfg.gamma.sqrt();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + f[i] + eps[i] * k).collect();
    FixedPopulation::new(x, y)
}

/// Grid of populations for the formula-only simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleGrid {
    pub pool_size: usize,
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
    pub outcome_model: Vec<OutcomeModel>,
    pub error_kind: Vec<ErrorKind>,
    pub gamma: Vec<f64>,
    pub pi1: Vec<f64>,
    pub cov_decay: f64,
    pub worst_case_scope: WorstCaseScope,
    pub seed: u64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self {
            pool_size: 5000,
            n: vec![50, 100, 500, 1000],
            alpha: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            outcome_model: vec![OutcomeModel::Linear, OutcomeModel::Nonlinear],
            error_kind: vec![ErrorKind::T3, ErrorKind::WorstCase],
            gamma: vec![1.0],
            pi1: vec![0.5],
            cov_decay: 0.1,
            worst_case_scope: WorstCaseScope::Sample,
            seed: 2024,
        }
    }
}

impl OracleGrid {
    /// Grid points in a fixed nesting order (n, α, model, error, γ, π₁).
    pub fn points(&self) -> Vec<DgpConfig> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &alpha in &self.alpha {
                for &outcome_model in &self.outcome_model {
                    for &error_kind in &self.error_kind {
                        for &gamma in &self.gamma {
                            for &pi1 in &self.pi1 {
                                out.push(DgpConfig {
                                    pool_size: self.pool_size,
                                    n,
                                    alpha,
                                    outcome_model,
                                    error_kind,
                                    gamma,
                                    pi1,
                                    cov_decay: self.cov_decay,
                                    worst_case_scope: self.worst_case_scope,
                                    seed: self.seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One tidy output row of the formula-only simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub n: usize,
    pub alpha: f64,
    pub p: usize,
    pub model: String,
    pub error: String,
    pub gamma: f64,
    pub pi1: f64,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
}

/// Relative efficiencies (variance over `var(τ̂_unadj)`) at one population.
pub fn oracle_point(cfg: &DgpConfig) -> Result<Vec<OracleRow>> {
    let pop = generate_population(cfg)?;
    let d = cfg.design()?;
    let vu = var_unadj(&pop, &d)?;
    let adj2_exact = exact_var_adj2(&pop, &d)?.variance;
    let nu = nu_f(&pop, &d)?.variance;
    let nu_dag = nu_f_dagger(&pop, &d)?.variance;
    let adj3 = moments_adj3(&pop, &d)?.variance;
    let cov2 = if pop.taubar == 0.0 {
        f64::INFINITY
    } else {
        sample_var(&pop.y1) / (pop.taubar * pop.taubar)
    };
    let entries: [(&str, &str, f64); 7] = [
        ("adj2", "rel_eff_exact", adj2_exact / vu),
        ("adj2", "rel_eff_main", nu / vu),
        ("adj2dagger", "rel_eff_main", nu_dag / vu),
        ("db", "rel_eff_main", nu_dag / vu),
        ("adj3", "rel_eff_exact", adj3 / vu),
        ("adj2", "nu_over_nu_dagger", nu / nu_dag),
        ("population", "cov2", cov2),
    ];
    Ok(entries
        .iter()
        .map(|(e, m, v)| OracleRow {
            n: cfg.n,
            alpha: cfg.alpha,
            p: cfg.p(),
            model: cfg.outcome_model.name().into(),
            error: cfg.error_kind.name().into(),
            gamma: cfg.gamma,
            pi1: d.pi1(),
            estimator: (*e).into(),
            metric: (*m).into(),
            value: *v,
        })
        .collect())
}

/// Evaluate every grid point; rows come out in grid order.
pub fn oracle_sim(grid: &OracleGrid) -> Result<Vec<OracleRow>> {
    let pts = grid.points();
    for p in &pts {
        p.validate()?;
    }
    let parts: Vec<Result<Vec<OracleRow>>> = pts.par_iter().map(oracle_point).collect();
    let mut rows = Vec::new();
    for part in parts {
        rows.extend(part?);
    }
    Ok(rows)
}

/// Monte Carlo simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub replicates: usize,
    pub estimators: Vec<EstimatorKind>,
    pub level: f64,
    /// Seed for assignment streams; the population uses `dgp.seed`.
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            replicates: 20000,
            estimators: vec![
                EstimatorKind::Unadj,
                EstimatorKind::Adj2,
                EstimatorKind::Adj3,
                EstimatorKind::Db,
            ],
            level: 0.95,
            seed: 7,
        }
    }
}

/// Metrics for one estimator, optionally paired with a variance estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub estimator: EstimatorKind,
    /// `None` for point-estimate metrics and for `Unadj`'s single estimator.
    pub varest: Option<VarEstKind>,
    pub bias: f64,
    /// `|bias| / √σ²` with `σ²` the main-term (or exact, for `Unadj`) variance.
    pub rel_abs_bias: f64,
    pub rmse: f64,
    /// Monte Carlo variance, divisor `K − 1`.
    pub mc_var: f64,
    pub coverage: f64,
    pub ci_length: f64,
    /// `mean_k √ν̂_k` over the Monte Carlo standard deviation.
    pub sd_inflation_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub config: McConfig,
    pub p: usize,
    pub taubar: f64,
    pub metrics: Vec<SimMetrics>,
    pub warnings: Vec<String>,
}

/// One tidy row of the Monte Carlo output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub n: usize,
    pub alpha: f64,
    pub p: usize,
    pub model: String,
    pub error: String,
    pub gamma: f64,
    pub pi1: f64,
    pub estimator: String,
    pub varest: String,
    pub metric: String,
    pub value: f64,
}

/// Estimator values and variance estimates for one replicate.
struct Replicate {
    est: Vec<f64>,
    /// Per estimator: `[unbiased, conservative]`, NaN where undefined.
    nu: Vec<[f64; 2]>,
}

fn theoretical_variance(pop: &FixedPopulation, d: &Design, e: EstimatorKind) -> Result<f64> {
    Ok(match e {
        EstimatorKind::Unadj => var_unadj(pop, d)?,
        EstimatorKind::Adj1 | EstimatorKind::Adj2 | EstimatorKind::Adj3 => nu_f(pop, d)?.variance,
        EstimatorKind::Adj | EstimatorKind::Adj2Dagger | EstimatorKind::Db => {
            nu_f_dagger(pop, d)?.variance
        }
    })
}

/// Draw `K` assignments from the CRE and summarize every estimator.
///
/// Replicate `k` uses the stream `(seed, "assign", k)`. Per-replicate
/// values are gathered in index order and reduced with pairwise sums, so
/// the result does not depend on the number of worker threads.
pub fn realistic_sim(cfg: &McConfig) -> Result<SimResult> {
    cfg.dgp.validate()?;
    if cfg.replicates < 2 {
        return Err(Error::Usage("realistic_sim needs at least 2 replicates".into()));
    }
    let z = normal_quantile(cfg.level)?;
    let pop = generate_population(&cfg.dgp)?;
    let d = cfg.dgp.design()?;
    let ws = VarEstWorkspace::new(&pop.hat);
    let ests = cfg.estimators.clone();
    let y = &pop.y1;

    let reps: Vec<Replicate> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|k| {
            let a = sample_assignment(&d, &mut stream(cfg.seed, "assign", k));
            let t = a.as_slice();
            let all = estimate_all(t, y, &d, &pop.hat, &pop.design);
            let mut cache: Vec<(EstimatorKind, [f64; 2])> = Vec::new();
            let nu = ests
                .iter()
                .map(|&e| {
                    let key = match e {
                        EstimatorKind::Adj3 => EstimatorKind::Adj2,
                        EstimatorKind::Adj2Dagger => EstimatorKind::Db,
                        other => other,
                    };
                    if let Some((_, v)) = cache.iter().find(|(k, _)| *k == key) {
                        return *v;
                    }
                    let v = VarEstKind::ALL.map(|kind| {
                        ws.for_estimator(key, kind, t, y, &d).unwrap_or(f64::NAN)
                    });
                    cache.push((key, v));
                    v
                })
                .collect();
            Replicate {
                est: ests.iter().map(|&e| all.get(e)).collect(),
                nu,
            }
        })
        .collect();

    let kf = cfg.replicates as f64;
    let tb = pop.taubar;
    let mut metrics = Vec::new();
    for (j, &e) in ests.iter().enumerate() {
        let vals: Vec<f64> = reps.iter().map(|r| r.est[j]).collect();
        let m = pairwise_sum(&vals) / kf;
        let bias = m - tb;
        let mse = pairwise_sum(&vals.iter().map(|v| (v - tb) * (v - tb)).collect::<Vec<_>>()) / kf;
        let mc_var = sample_var(&vals);
        let sigma2 = theoretical_variance(&pop, &d, e)?;
        let base = SimMetrics {
            estimator: e,
            varest: None,
            bias,
            rel_abs_bias: bias.abs() / sigma2.sqrt(),
            rmse: mse.sqrt(),
            mc_var,
            coverage: f64::NAN,
            ci_length: f64::NAN,
            sd_inflation_ratio: f64::NAN,
        };
        let kinds: &[VarEstKind] = match e {
            EstimatorKind::Adj | EstimatorKind::Adj1 => &[],
            EstimatorKind::Unadj => &[VarEstKind::Unbiased],
            _ => &VarEstKind::ALL,
        };
        if kinds.is_empty() {
            metrics.push(base);
            continue;
        }
        for &kind in kinds {
            let ki = kind as usize;
            let se: Vec<f64> = reps.iter().map(|r| r.nu[j][ki].max(0.0).sqrt()).collect();
            let covered: Vec<f64> = vals
                .iter()
                .zip(&se)
                .map(|(v, s)| ((v - tb).abs() <= z * s) as u8 as f64)
                .collect();
            let mean_se = pairwise_sum(&se) / kf;
            metrics.push(SimMetrics {
                varest: if e == EstimatorKind::Unadj { None } else { Some(kind) },
                coverage: pairwise_sum(&covered) / kf,
                ci_length: 2.0 * z * mean_se,
                sd_inflation_ratio: mean_se / mc_var.sqrt(),
                ..base.clone()
            });
        }
    }
    let mut warnings = Vec::new();
    if cfg.replicates < 100 {
        warnings.push(format!(
            "only {} replicates; coverage estimates are unstable below 100",
            cfg.replicates
        ));
    }
    Ok(SimResult {
        config: cfg.clone(),
        p: cfg.dgp.p(),
        taubar: tb,
        metrics,
        warnings,
    })
}

impl SimResult {
    /// Tidy rows, one metric per row, in a fixed order.
    pub fn rows(&self) -> Vec<McRow> {
        let g = &self.config.dgp;
        let pi1 = g.n1() as f64 / g.n as f64;
        let mut out = Vec::new();
        let mut push = |e: &str, v: &str, metric: &str, value: f64| {
            out.push(McRow {
                n: g.n,
                alpha: g.alpha,
                p: self.p,
                model: g.outcome_model.name().into(),
                error: g.error_kind.name().into(),
                gamma: g.gamma,
                pi1,
                estimator: e.into(),
                varest: v.into(),
                metric: metric.into(),
                value,
            });
        };
        let mut seen = Vec::new();
        for m in &self.metrics {
            let e = m.estimator.name();
            if !seen.contains(&m.estimator) {
                seen.push(m.estimator);
                push(e, "none", "bias", m.bias);
                push(e, "none", "rel_abs_bias", m.rel_abs_bias);
                push(e, "none", "rmse", m.rmse);
                push(e, "none", "mc_var", m.mc_var);
            }
            if m.coverage.is_nan() {
                continue;
            }
            let v = m.varest.map_or("neyman", |k| k.name());
            push(e, v, "coverage", m.coverage);
            push(e, v, "ci_length", m.ci_length);
            push(e, v, "sd_inflation", m.sd_inflation_ratio);
        }
        out
    }
}
