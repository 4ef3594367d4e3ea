#![allow(dead_code)]

use hoif_cre::design::{CovariateMatrix, HatMatrix};
use hoif_cre::moments::FixedPopulation;
use hoif_cre::randomization::Design;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng>(r: &mut R) -> f64 {
    // Box–Muller keeps the test oracle free of library sampling code.
    let u1: f64 = r.random_range(f64::EPSILON..1.0);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_covariates(n: usize, p: usize, seed: u64) -> CovariateMatrix {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| gaussian(&mut r)).collect()).collect();
    if p == 0 {
        CovariateMatrix::empty(n).unwrap()
    } else {
        CovariateMatrix::from_rows(&rows).unwrap()
    }
}

pub fn random_population(n: usize, p: usize, seed: u64) -> FixedPopulation {
    let x = random_covariates(n, p, seed);
    let mut r = rng(seed ^ 0x9e37_79b9);
    let y: Vec<f64> = (0..n).map(|_| 1.0 + 2.0 * gaussian(&mut r)).collect();
    FixedPopulation::new(x, y).unwrap()
}

pub fn h(hat: &HatMatrix, i: usize, j: usize) -> f64 {
    hat.h[(i, j)]
}

/// Direct double-loop transcriptions of the estimators.
pub struct Naive {
    pub unadj: f64,
    pub adj: f64,
    pub adj1: f64,
    pub adj2: f64,
    pub adj2dagger: f64,
    pub adj3: f64,
    pub db: f64,
}

pub fn naive_estimators(t: &[u8], y: &[f64], hat: &HatMatrix, pi: f64) -> Naive {
    let n = t.len();
    let nf = n as f64;
    let odds = (1.0 - pi) / pi;
    let tf: Vec<f64> = t.iter().map(|&v| v as f64).collect();
    let unadj: f64 = (0..n).map(|i| tf[i] * y[i] / pi).sum::<f64>() / nf;
    let mut adj = 0.0;
    let mut adj1 = 0.0;
    let mut off = 0.0;
    let mut off_c = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = (tf[i] / pi - 1.0) * h(hat, i, j) * tf[j] / pi;
            adj1 += a * y[j];
            adj += a * (y[j] - unadj);
            if i != j {
                off += a * y[j];
                off_c += a * (y[j] - unadj);
            }
        }
    }
    let adj2 = unadj - off / nf;
    let diag_sum: f64 = (0..n).map(|i| h(hat, i, i) * tf[i] * y[i] / pi).sum();
    let diag_c: f64 = (0..n).map(|i| h(hat, i, i) * tf[i] * (y[i] - unadj) / pi).sum();
    Naive {
        unadj,
        adj: unadj - adj / nf,
        adj1: unadj - adj1 / nf,
        adj2,
        adj2dagger: unadj - off_c / nf,
        adj3: adj2 + odds / (nf * (nf - 1.0)) * diag_sum,
        db: unadj - adj / nf + odds / nf * diag_c,
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// `B = MᵀM` assembled entry by entry from its definition.
pub fn dense_b(hat: &HatMatrix) -> DMatrix<f64> {
    let n = hat.n();
    let nf = n as f64;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let pij = if i == j { 1.0 } else { 0.0 } - 1.0 / nf;
            m[(i, j)] = pij - hat.h[(i, j)] + pij * hat.diag[j];
        }
    }
    m.transpose() * m
}

/// `E[ν̂]` term by term: `E[t_i] = π₁`, `E[t_i t_j] = π₁(n₁−1)/(n−1)`.
pub fn expected_nu_hat(pop: &FixedPopulation, d: &Design) -> f64 {
    let n = pop.n();
    let nf = n as f64;
    let (_, n1) = d.require_cre("test").unwrap();
    let pi = d.pi1();
    let odds = d.odds();
    let r = (n1 as f64 - 1.0) / ((nf - 1.0) * pi);
    let b = dense_b(&pop.hat);
    let y = &pop.y1;
    let h = &pop.hat.h;
    let (mut b_d, mut b_o, mut g_d, mut g_o) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        b_d += b[(i, i)] * y[i] * y[i];
        g_d += h[(i, i)] * (1.0 - h[(i, i)]) * y[i] * y[i];
        for j in 0..n {
            if i != j {
                b_o += b[(i, j)] * y[i] * y[j];
                g_o += h[(i, j)].powi(2) * y[i] * y[j];
            }
        }
    }
    odds / (nf * (nf - 1.0)) * (b_d + r * b_o) + odds * odds / (nf * nf) * (g_d + r * g_o)
}

pub fn leading_extra(pop: &FixedPopulation, d: &Design) -> f64 {
    let n = pop.n();
    let h = &pop.hat.h;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += h[(i, j)].powi(2) * pop.y1[j].powi(2);
            }
        }
    }
    d.odds().powi(2) / (n * n) as f64 * s
}

