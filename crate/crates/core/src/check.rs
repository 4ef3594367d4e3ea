//! Closed-form moments against exhaustive enumeration on random populations.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::design::CovariateMatrix;
use crate::error::{Error, Result};
use crate::estimators::estimate_all;
use crate::moments::{bias_adj2, bias_db, exact_var_adj2, moments_adj3, var_unadj, FixedPopulation};
use crate::numeric::rel_err;
use crate::oracle::{enumerate_values, moments_of};
use crate::randomization::{Design, DEFAULT_ENUM_CAP};
use crate::rng::stream;

/// Largest relative discrepancy of one formula over all populations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormulaCheck {
    pub formula: String,
    /// `None` when the formula does not apply at this `n`.
    pub max_rel_err: Option<f64>,
}

/// Standard normal covariates and outcomes `1 + 2z` for population `r`.
pub fn random_population(n: usize, p: usize, seed: u64, r: u64) -> Result<FixedPopulation> {
    let mut g = stream(seed, "check-pop", r);
    let x = if p == 0 {
        CovariateMatrix::empty(n)?
    } else {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| g.sample(StandardNormal)).collect())
            .collect();
        CovariateMatrix::from_rows(&rows)?
    };
    let y = (0..n).map(|_| 1.0 + 2.0 * g.sample::<f64, _>(StandardNormal)).collect();
    FixedPopulation::new(x, y)
}

/// Compare every closed form with enumeration over `CRE(n, n1)`.
///
/// Relative errors use a floor of `1e-12` times the outcome variance scale
/// so that formulas whose true value is zero do not divide by zero.
pub fn enum_check(n: usize, n1: usize, p: usize, seed: u64, reps: usize) -> Result<Vec<FormulaCheck>> {
    let d = Design::cre(n, n1)?;
    if p + 1 >= n {
        return Err(Error::Usage(format!("need p + 1 < n, got p = {p}, n = {n}")));
    }
    if reps == 0 {
        return Err(Error::Usage("reps must be at least 1".into()));
    }
    let names = ["var_unadj", "bias_adj2", "var_adj2", "bias_db", "mean_adj3", "var_adj3"];
    let mut worst: [Option<f64>; 6] = [None; 6];
    for r in 0..reps as u64 {
        let pop = random_population(n, p, seed, r)?;
        let vals = enumerate_values(
            |t| {
                let e = estimate_all(t, &pop.y1, &d, &pop.hat, &pop.design);
                [e.unadj, e.adj2, e.db, e.adj3]
            },
            &d,
            DEFAULT_ENUM_CAP,
        )?;
        let m = |k: usize| moments_of(&vals.iter().map(|v| v[k]).collect::<Vec<_>>());
        let (mu, m2, mdb, m3) = (m(0), m(1), m(2), m(3));
        let tb = pop.taubar;
        let floor = 1e-12 * (1.0 + pop.y1.iter().map(|v| v * v).sum::<f64>() / n as f64);
        let mut errs: [Option<f64>; 6] = [None; 6];
        errs[0] = Some(rel_err(var_unadj(&pop, &d)?, mu.variance, floor));
        errs[1] = Some(rel_err(bias_adj2(&pop, &d)?, m2.mean - tb, floor));
        if n >= 5 {
            errs[2] = Some(rel_err(exact_var_adj2(&pop, &d)?.variance, m2.variance, floor));
            let a3 = moments_adj3(&pop, &d)?;
            errs[4] = Some(rel_err(tb + a3.bias, m3.mean, floor));
            errs[5] = Some(rel_err(a3.variance, m3.variance, floor));
        }
        if n >= 3 {
            errs[3] = Some(rel_err(bias_db(&pop, &d)?, mdb.mean - tb, floor));
        }
        for (w, e) in worst.iter_mut().zip(errs) {
            if let Some(e) = e {
                *w = Some(w.map_or(e, |v| v.max(e)));
            }
        }
    }
    Ok(names
        .iter()
        .zip(worst)
        .map(|(f, w)| FormulaCheck {
            formula: (*f).into(),
            max_rel_err: w,
        })
        .collect())
}
