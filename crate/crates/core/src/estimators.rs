//! Point estimators of the treatment-arm mean `τ̄`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::design::{center_design, CenteredDesign, CovariateMatrix, HatMatrix};
use crate::error::{Error, Result};
use crate::numeric::dot;
use crate::randomization::{Assignment, Design};

/// The estimators implemented by [`estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Unadj,
    Adj,
    Adj1,
    Adj2,
    Adj2Dagger,
    Db,
    Adj3,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Unadj,
        EstimatorKind::Adj,
        EstimatorKind::Adj1,
        EstimatorKind::Adj2,
        EstimatorKind::Adj2Dagger,
        EstimatorKind::Db,
        EstimatorKind::Adj3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Unadj => "unadj",
            EstimatorKind::Adj => "adj",
            EstimatorKind::Adj1 => "adj1",
            EstimatorKind::Adj2 => "adj2",
            EstimatorKind::Adj2Dagger => "adj2dagger",
            EstimatorKind::Db => "db",
            EstimatorKind::Adj3 => "adj3",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', '-'], "");
        EstimatorKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Usage(format!("unknown estimator '{s}'")))
    }
}

/// One realized experiment.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    pub x: CovariateMatrix,
    pub t: Assignment,
    /// Observed outcomes; only treated entries enter the estimators.
    pub y: Vec<f64>,
    pub design: Design,
}

impl ObservedDataset {
    pub fn new(x: CovariateMatrix, t: Assignment, y: Vec<f64>, design: Design) -> Result<Self> {
        let n = x.n();
        if t.len() != n || y.len() != n || design.n() != n {
            return Err(Error::Input(format!(
                "length mismatch: X has {n} rows, t has {}, y has {}, design has n = {}",
                t.len(),
                y.len(),
                design.n()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite outcome at unit {i}")));
        }
        let treated = t.treated_count();
        if treated == 0 {
            return Err(Error::Degenerate("no treated units".into()));
        }
        if let Some(n1) = design.n1() {
            if n1 != treated {
                return Err(Error::Input(format!(
                    "CRE design has n1 = {n1} but the assignment treats {treated} units"
                )));
            }
        }
        Ok(Self { x, t, y, design })
    }
}

/// All estimators evaluated on one assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimates {
    pub unadj: f64,
    pub adj: f64,
    pub adj1: f64,
    pub adj2: f64,
    pub adj2dagger: f64,
    pub db: f64,
    pub adj3: f64,
}

impl Estimates {
    pub fn get(&self, kind: EstimatorKind) -> f64 {
        match kind {
            EstimatorKind::Unadj => self.unadj,
            EstimatorKind::Adj => self.adj,
            EstimatorKind::Adj1 => self.adj1,
            EstimatorKind::Adj2 => self.adj2,
            EstimatorKind::Adj2Dagger => self.adj2dagger,
            EstimatorKind::Db => self.db,
            EstimatorKind::Adj3 => self.adj3,
        }
    }
}

/// Evaluate every estimator in `O(n² + np)`.
///
/// `cd` must be the centered design that produced `hat`. `τ̂_db` is
/// computed from the OLS slope, independently of the `H`-weighted sums
/// used for `τ̂_adj,2†`.
pub fn estimate_all(
    t: &[u8],
    y: &[f64],
    design: &Design,
    hat: &HatMatrix,
    cd: &CenteredDesign,
) -> Estimates {
    let n = t.len();
    let nf = n as f64;
    let pi = design.pi1();
    let odds = design.odds();
    let h = &hat.diag;

    let u: Vec<f64> = (0..n).map(|i| t[i] as f64 * y[i] / pi).collect();
    let g: Vec<f64> = (0..n).map(|i| t[i] as f64 / pi - 1.0).collect();
    let tau_u = u.iter().sum::<f64>() / nf;
    let ut: Vec<f64> = (0..n).map(|i| t[i] as f64 * (y[i] - tau_u) / pi).collect();

    let hu = hat.apply(&u);
    let hut = hat.apply(&ut);
    let g_hu = dot(&g, &hu);
    let g_hut = dot(&g, &hut);
    let diag_u: f64 = (0..n).map(|i| g[i] * h[i] * u[i]).sum();
    let diag_ut: f64 = (0..n).map(|i| g[i] * h[i] * ut[i]).sum();
    let hu_sum: f64 = (0..n).map(|i| h[i] * u[i]).sum();
    let hut_sum: f64 = (0..n).map(|i| h[i] * ut[i]).sum();

    let adj1 = tau_u - g_hu / nf;
    let adj = tau_u - g_hut / nf;
    let adj2 = tau_u - (g_hu - diag_u) / nf;
    let adj2dagger = tau_u - (g_hut - diag_ut) / nf;
    let adj3 = adj2 + odds / (nf * (nf - 1.0)) * hu_sum;

    let beta = slope_from(cd, &ut);
    let xg = cd.xc.tr_mul(&DVector::from_column_slice(&g));
    let adj_beta = tau_u - xg.dot(&beta) / nf;
    let db = adj_beta + odds / nf * hut_sum;

    Estimates {
        unadj: tau_u,
        adj,
        adj1,
        adj2,
        adj2dagger,
        db,
        adj3,
    }
}

fn slope_from(cd: &CenteredDesign, weights: &[f64]) -> DVector<f64> {
    let b = cd.xc.tr_mul(&DVector::from_column_slice(weights));
    &cd.sigma_pinv * b
}

/// Evaluate one estimator on an observed dataset.
pub fn estimate(kind: EstimatorKind, data: &ObservedDataset, hat: &HatMatrix) -> Result<f64> {
    check_hat(data, hat)?;
    let cd = center_design(&data.x)?;
    Ok(estimate_all(data.t.as_slice(), &data.y, &data.design, hat, &cd).get(kind))
}

pub(crate) fn check_hat(data: &ObservedDataset, hat: &HatMatrix) -> Result<()> {
    if hat.n() != data.x.n() {
        return Err(Error::Input(format!(
            "hat matrix is {}x{}, data has n = {}",
            hat.n(),
            hat.n(),
            data.x.n()
        )));
    }
    Ok(())
}

/// OLS slope of the treated, outcome-centered responses on centered covariates.
#[derive(Debug, Clone)]
pub struct SlopeResult {
    /// `β̂_c = Σ̂⁻ Σ_j (x_j − x̄) t_j (y_j − τ̂_unadj)/π₁`.
    pub beta: DVector<f64>,
    /// Set when `Σ̂` is singular and the pseudoinverse was used.
    pub rank_deficient: bool,
}

/// The slope vector of the classical adjusted estimator.
pub fn ols_slope_centered(data: &ObservedDataset, hat: &HatMatrix) -> Result<SlopeResult> {
    check_hat(data, hat)?;
    let cd = center_design(&data.x)?;
    let n = data.y.len();
    let pi = data.design.pi1();
    let t = data.t.as_slice();
    let tau_u = (0..n).map(|i| t[i] as f64 * data.y[i]).sum::<f64>() / (n as f64 * pi);
    let ut: Vec<f64> = (0..n).map(|i| t[i] as f64 * (data.y[i] - tau_u) / pi).collect();
    Ok(SlopeResult {
        beta: slope_from(&cd, &ut),
        rank_deficient: cd.rank_deficient(),
    })
}
