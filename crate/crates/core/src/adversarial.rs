//! Quadratic-form representations of the variance main terms, the optimal
//! outcome centering, and a constrained search for populations on which
//! `τ̂_adj,2` beats both `τ̂_adj,2†` and `τ̂_unadj`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::HatMatrix;
use crate::error::{Error, Result};
use crate::moments::FixedPopulation;
use crate::numeric::dot;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::randomization::Design;
use crate::rng::stream;

/// `vᵀQ₀v = var(τ̂_unadj)`, `vᵀQ₁v = ν^f†`, `vᵀQ₂v = ν^f` at `y(1) = v`.
#[derive(Debug, Clone)]
pub struct QuadraticForms {
    pub q0: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q11: DMatrix<f64>,
    pub q12: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub q21: DMatrix<f64>,
    pub q22: DMatrix<f64>,
    pub pc: DMatrix<f64>,
}

impl QuadraticForms {
    /// The three forms in program order.
    pub fn program_forms(&self) -> [&DMatrix<f64>; 3] {
        [&self.q0, &self.q1, &self.q2]
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Build every form. The `B`-type pieces carry `(π₀/π₁)/(n(n−1))`, the
/// `H∘H` pieces `(π₀/π₁)²/n²`.
pub fn build_quadratic_forms(hat: &HatMatrix, d: &Design) -> Result<QuadraticForms> {
    d.require_cre("build_quadratic_forms")?;
    let n = hat.n();
    if d.n() != n {
        return Err(Error::Input(format!("hat has n = {n}, design has n = {}", d.n())));
    }
    let nf = n as f64;
    let odds = d.odds();
    let k1 = odds / (nf * (nf - 1.0));
    let k2 = odds * odds / (nf * nf);
    let h = &hat.diag;
    let pc = DMatrix::from_fn(n, n, |i, j| (i == j) as u8 as f64 - 1.0 / nf);
    let a = DMatrix::from_fn(n, n, |i, j| {
        (i == j) as u8 as f64 * (1.0 + h[i]) - hat.h[(i, j)]
    });
    let q0 = &pc * k1;
    let q21 = symmetrize(a.transpose() * &pc * &a * k1);
    let g = DMatrix::from_fn(n, n, |i, j| {
        let hij = hat.h[(i, j)];
        hij * hij + if i == j { h[i] - 2.0 * h[i] * h[i] } else { 0.0 }
    });
    let q22 = g * k2;
    let q2 = &q21 + &q22;
    let q11 = symmetrize(&pc * &q21 * &pc);
    let q12 = symmetrize(&pc * &q22 * &pc);
    let q1 = &q11 + &q12;
    Ok(QuadraticForms {
        q0,
        q1,
        q11,
        q12,
        q2,
        q21,
        q22,
        pc,
    })
}

/// `vᵀQv`.
pub fn quad(q: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let s = q.as_slice();
    (0..n).map(|j| v[j] * dot(&s[j * n..(j + 1) * n], v)).sum()
}

/// `∇(vᵀQv) = 2Qv` for symmetric `Q`.
pub fn quad_grad(q: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let s = q.as_slice();
    (0..n).map(|j| 2.0 * dot(&s[j * n..(j + 1) * n], v)).collect()
}

/// The weights `ω` with `c* ≈ 0` iff `(1/n)Σω_i y_i ≈ (1/n)Σ y_i`.
pub fn omega_weights(hat: &HatMatrix, d: &Design) -> Result<Vec<f64>> {
    let n = hat.n();
    let p = hat.trace;
    if hat.rank == 0 {
        return Err(Error::Usage("omega_weights needs p >= 1".into()));
    }
    let nf = n as f64;
    let odds = d.odds();
    let h = &hat.diag;
    let hh = hat.apply(h);
    Ok((0..n)
        .map(|i| {
            let sq: f64 = hat.h.column(i).iter().map(|v| v * v).sum();
            nf / p
                * ((odds + (nf - p) / nf) * h[i] + (1.0 - 2.0 * odds) * h[i] * h[i] + odds * sq
                    - hh[i])
        })
        .collect())
}

/// The minimizer `c*` of the parabola `c ↦ ν^f_c`.
pub fn optimal_center(pop: &FixedPopulation, d: &Design) -> Result<f64> {
    d.require_cre("optimal_center")?;
    let n = pop.n();
    let nf = n as f64;
    let odds = d.odds();
    let k1 = odds / (nf * (nf - 1.0));
    let k2 = odds * odds / (nf * nf);
    let h = &pop.hat.diag;
    let y = &pop.y1;
    let hy = pop.hat.apply(y);
    let r: Vec<f64> = (0..n).map(|i| y[i] - hy[i] + h[i] * y[i]).collect();
    let rbar = r.iter().sum::<f64>() / nf;
    let hbar = h.iter().sum::<f64>() / nf;
    let cov_rh: f64 = (0..n).map(|i| (r[i] - rbar) * (h[i] - hbar)).sum();
    let var_h: f64 = h.iter().map(|v| (v - hbar) * (v - hbar)).sum();
    // G𝟙 with G = D_h − 2D_{h²} + H∘H.
    let g1: Vec<f64> = (0..n)
        .map(|i| h[i] - 2.0 * h[i] * h[i] + pop.hat.h.column(i).iter().map(|v| v * v).sum::<f64>())
        .collect();
    let num = k1 * cov_rh + k2 * dot(y, &g1);
    let den = k1 * var_h + k2 * g1.iter().sum::<f64>();
    if den.abs() <= f64::EPSILON * (k1 + k2) {
        return Err(Error::Degenerate("c* denominator vanishes".into()));
    }
    Ok(num / den)
}

/// Options for [`adversarial_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub starts: usize,
    /// Offsets of the three constraints, in program order.
    pub offsets: [f64; 3],
    /// Every start is scaled so `vᵀQ₀v` equals this.
    pub init_q0: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub feas_tol: f64,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            offsets: [0.1, 0.05, 0.01],
            init_q0: 0.02,
            max_outer: 60,
            max_inner: 400,
            feas_tol: 1e-6,
            seed: 20240101,
        }
    }
}

/// Outcome of the constrained search.
#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub v: Vec<f64>,
    /// `vᵀQ₂v`.
    pub objective: f64,
    /// `g_k(v)`; feasible when all are `≤ 0`.
    pub constraint_slacks: [f64; 3],
    pub converged: bool,
    pub iterations: usize,
    pub feasible_starts: usize,
    pub total_starts: usize,
}

struct Program {
    /// `Q₂ − Q₁`, `Q₂ − Q₀`, `−Q₀`.
    a: [DMatrix<f64>; 3],
    q2: DMatrix<f64>,
    offsets: [f64; 3],
}

impl Program {
    fn constraints(&self, v: &[f64]) -> [f64; 3] {
        [0, 1, 2].map(|k| quad(&self.a[k], v) + self.offsets[k])
    }

    /// Rescale a direction so every constraint holds with the tightest one
    /// active; `None` if some constraint cannot be met along the ray.
    fn polish(&self, v: &[f64]) -> Option<Vec<f64>> {
        let mut s2: f64 = 0.0;
        for k in 0..3 {
            let a = quad(&self.a[k], v);
            if a >= 0.0 {
                return None;
            }
            s2 = s2.max(self.offsets[k] / -a);
        }
        let s = s2.sqrt() * (1.0 + 1e-12);
        Some(v.iter().map(|x| x * s).collect())
    }
}

struct StartResult {
    v: Vec<f64>,
    objective: f64,
    slacks: [f64; 3],
    feasible: bool,
    iterations: usize,
}

fn run_start(prog: &Program, v0: Vec<f64>, opts: &SearchOptions) -> StartResult {
    let mut v = v0;
    let mut lambda = [0.0; 3];
    let mut mu = 10.0 / prog.offsets.iter().fold(0.0_f64, |m, o| m.max(o.abs())).max(1e-3);
    let mut iterations = 0;
    let inner = LbfgsOptions {
        max_iter: opts.max_inner,
        ..LbfgsOptions::default()
    };
    let mut prev_viol = f64::INFINITY;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..opts.max_outer {
        let lam = lambda;
        let out = lbfgs(
            |x, g| {
                let mut val = quad(&prog.q2, x);
                let mut grad = quad_grad(&prog.q2, x);
                for ((a, off), &l) in prog.a.iter().zip(&prog.offsets).zip(lam.iter()) {
                    let gk = quad(a, x) + off;
                    let m = (l + mu * gk).max(0.0);
                    val += (m * m - l * l) / (2.0 * mu);
                    if m > 0.0 {
                        let gg = quad_grad(a, x);
                        for (gi, ai) in grad.iter_mut().zip(gg) {
                            *gi += m * ai;
                        }
                    }
                }
                g.copy_from_slice(&grad);
                val
            },
            &v,
            &inner,
        );
        iterations += out.iterations;
        v = out.x;
        let c = prog.constraints(&v);
        for k in 0..3 {
            lambda[k] = (lambda[k] + mu * c[k]).max(0.0);
        }
        if let Some(p) = prog.polish(&v) {
            let obj = quad(&prog.q2, &p);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                best = Some((p, obj));
            }
        }
        let viol = c.iter().fold(0.0_f64, |m, x| m.max(*x));
        let comp: f64 = (0..3).map(|k| (lambda[k] * c[k]).abs()).sum();
        if viol <= opts.feas_tol && comp <= 1e-10 {
            break;
        }
        if viol > 0.25 * prev_viol {
            mu *= 10.0;
        }
        prev_viol = viol;
    }
    match best {
        Some((v, objective)) => {
            let slacks = prog.constraints(&v);
            StartResult {
                feasible: slacks.iter().all(|s| *s <= opts.feas_tol),
                v,
                objective,
                slacks,
                iterations,
            }
        }
        None => StartResult {
            slacks: prog.constraints(&v),
            objective: quad(&prog.q2, &v),
            v,
            feasible: false,
            iterations,
        },
    }
}

fn initial_point(q0: &DMatrix<f64>, n: usize, target: f64, seed: u64, k: u64, shift: bool) -> Vec<f64> {
    let mut rng = stream(seed, "adv-start", k);
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    if shift {
        let c: f64 = rng.random_range(1.0..4.0);
        v.iter_mut().for_each(|x| *x += c / (n as f64).sqrt());
    }
    let a = quad(q0, &v);
    let s = (target / a).sqrt();
    v.iter().map(|x| x * s).collect()
}

/// Multi-start augmented-Lagrangian search for
/// `min vᵀQ₂v` s.t. `vᵀ(Q₂−Q₁)v + o₁ ≤ 0`, `vᵀ(Q₂−Q₀)v + o₂ ≤ 0`, `−vᵀQ₀v + o₃ ≤ 0`.
///
/// If no start is feasible, a second round with mean-shifted starts runs.
/// Failure is reported through `converged = false`.
pub fn adversarial_search(hat: &HatMatrix, d: &Design, opts: &SearchOptions) -> Result<SearchResult> {
    let n = hat.n();
    if n < hat.rank + 2 {
        return Err(Error::Usage(format!("adversarial_search needs n >= p + 2, got n = {n}")));
    }
    if opts.starts == 0 {
        return Err(Error::Usage("adversarial_search needs at least one start".into()));
    }
    let qf = build_quadratic_forms(hat, d)?;
    let prog = Program {
        a: [&qf.q2 - &qf.q1, &qf.q2 - &qf.q0, -&qf.q0],
        q2: qf.q2.clone(),
        offsets: opts.offsets,
    };
    let run_round = |offset: u64, shift: bool| -> Vec<StartResult> {
        (0..opts.starts as u64)
            .into_par_iter()
            .map(|k| {
                let v0 = initial_point(&qf.q0, n, opts.init_q0, opts.seed, offset + k, shift);
                run_start(&prog, v0, opts)
            })
            .collect()
    };
    let mut results = run_round(0, false);
    if !results.iter().any(|r| r.feasible) {
        results.extend(run_round(opts.starts as u64, true));
    }
    let total_starts = results.len();
    let feasible_starts = results.iter().filter(|r| r.feasible).count();
    // Lexicographic (feasible first, then objective, then start index).
    let best = results
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            b.feasible
                .cmp(&a.feasible)
                .then(a.objective.total_cmp(&b.objective))
                .then(ia.cmp(ib))
        })
        .map(|(_, r)| r)
        .expect("at least one start");
    Ok(SearchResult {
        converged: best.feasible,
        objective: best.objective,
        constraint_slacks: best.slacks,
        iterations: best.iterations,
        v: best.v,
        feasible_starts,
        total_starts,
    })
}

/// One coordinate of the witness vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessRow {
    pub unit: usize,
    pub v: f64,
}

impl SearchResult {
    pub fn witness_rows(&self) -> Vec<WitnessRow> {
        self.v
            .iter()
            .enumerate()
            .map(|(unit, &v)| WitnessRow { unit, v })
            .collect()
    }
}

/// `Qv` as a vector, for callers that need the raw product.
pub fn apply_form(q: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (q * DVector::from_column_slice(v)).as_slice().to_vec()
}
