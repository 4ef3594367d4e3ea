mod common;

use common::{random_covariates, random_population, rel};
use hoif_cre::design::CovariateMatrix;
use hoif_cre::estimators::estimate_all;
use hoif_cre::moments::{
    bias_adj2, bias_db, efficiency_criterion, exact_var_adj2, moments_adj3, nu_f, nu_f_centered,
    nu_f_dagger, var_unadj, FixedPopulation,
};
use hoif_cre::oracle::mc_moments;
use hoif_cre::randomization::Design;
use nalgebra::{DMatrix, DVector};

fn line_x(n: usize) -> CovariateMatrix {
    CovariateMatrix::from_rows(&(1..=n).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap()
}

fn sample_var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

#[test]
fn hand_examples() {
    let pop = FixedPopulation::new(line_x(4), vec![2.0; 4]).unwrap();
    let d = Design::cre(4, 2).unwrap();
    assert!((bias_adj2(&pop, &d).unwrap() + 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(bias_adj2(&pop, &Design::bernoulli(4, 0.5).unwrap()).unwrap(), 0.0);

    let pop = FixedPopulation::new(line_x(4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((var_unadj(&pop, &d).unwrap() - 5.0 / 12.0).abs() < 1e-15);
}

#[test]
fn no_covariates_reduce_to_unadjusted() {
    let pop = random_population(12, 0, 1);
    let d = Design::cre(12, 5).unwrap();
    assert_eq!(bias_adj2(&pop, &d).unwrap(), 0.0);
    assert_eq!(bias_db(&pop, &d).unwrap(), 0.0);
    let vu = var_unadj(&pop, &d).unwrap();
    assert!(rel(nu_f(&pop, &d).unwrap().variance, vu) < 1e-14);
    let ec = efficiency_criterion(&pop, &d).unwrap();
    assert!(ec.lhs.abs() < 1e-14 && ec.rhs.abs() < 1e-14 && ec.improves);
}

#[test]
fn all_treated_has_no_variance() {
    let pop = random_population(9, 2, 2);
    let d = Design::cre(9, 9).unwrap();
    assert_eq!(exact_var_adj2(&pop, &d).unwrap().variance, 0.0);
    assert_eq!(var_unadj(&pop, &d).unwrap(), 0.0);
}

#[test]
fn constant_outcomes() {
    let x = random_covariates(15, 3, 3);
    let pop = FixedPopulation::new(x, vec![-1.5; 15]).unwrap();
    let d = Design::cre(15, 6).unwrap();
    assert!(bias_db(&pop, &d).unwrap().abs() < 1e-15);
    assert!(nu_f_dagger(&pop, &d).unwrap().variance.abs() < 1e-28);
    assert_eq!(var_unadj(&pop, &d).unwrap(), 0.0);
}

#[test]
fn bias_forms_agree() {
    for s in 0..10 {
        let pop = random_population(20, 1 + s as usize % 5, 10 + s);
        let d = Design::cre(20, 8).unwrap();
        let n = 20.0;
        let h = &pop.hat.h;
        let y = &pop.y1;
        let mut off = 0.0;
        for i in 0..20 {
            for j in 0..20 {
                if i != j {
                    off += h[(i, j)] * y[j];
                }
            }
        }
        let diag: f64 = (0..20).map(|i| h[(i, i)] * y[i]).sum();
        assert!((off + diag).abs() < 1e-12);
        let first = d.odds() * off / (n * (n - 1.0));
        assert!((first - bias_adj2(&pop, &d).unwrap()).abs() < 1e-12);

        let p = pop.hat.trace;
        let lead = 2.0 * d.pi0() / d.pi1().powi(2) * (7.0 / 19.0) / 18.0;
        let form_a = lead * (p / n * pop.taubar + off / n);
        let form_b = lead * (p / n * pop.taubar - diag / n);
        let got = bias_db(&pop, &d).unwrap();
        assert!((form_a - got).abs() < 1e-12 && (form_b - got).abs() < 1e-12);
    }
}

#[test]
fn nu2_is_a_quadratic_form() {
    for s in 0..10 {
        let n = 25;
        let pop = random_population(n, 2 + s as usize % 6, 30 + s);
        let d = Design::cre(n, 11).unwrap();
        let h = &pop.hat.h;
        let mut m = h.component_mul(h);
        for i in 0..n {
            let hi = h[(i, i)];
            m[(i, i)] += hi * (1.0 - hi) - hi * hi;
        }
        let y = DVector::from_column_slice(&pop.y1);
        let want = d.odds().powi(2) / (n * n) as f64 * y.dot(&(&m * &y));
        let got = nu_f(&pop, &d).unwrap().components["nu2"];
        assert!(rel(got, want) < 1e-12);
        // Diagonal H_ii(1 − H_ii) equals the off-diagonal row sum Σ_{j≠i} H_ij².
        let eig = m.symmetric_eigenvalues();
        assert!(eig.min() > -1e-12);
    }
}

#[test]
fn nu1_uses_leave_one_out_projection() {
    for s in 0..8 {
        let n = 18;
        let p = 1 + s as usize % 4;
        let pop = random_population(n, p, 50 + s);
        let d = Design::cre(n, 9).unwrap();
        let xm = pop.x.matrix();
        let xbar = xm.row_mean();
        let xc = DMatrix::from_fn(n, p, |i, k| xm[(i, k)] - xbar[k]);
        let gram = xc.transpose() * &xc;
        let chol = gram.cholesky().unwrap();
        let resid: Vec<f64> = (0..n)
            .map(|i| {
                let mut b = DVector::zeros(p);
                for j in 0..n {
                    if j != i {
                        b += xc.row(j).transpose() * pop.y1[j];
                    }
                }
                let beta = chol.solve(&b);
                pop.y1[i] - xc.row(i).dot(&beta.transpose())
            })
            .collect();
        let want = d.odds() / n as f64 * sample_var(&resid);
        let got = nu_f(&pop, &d).unwrap().components["nu1"];
        assert!(rel(got, want) < 1e-11, "{got} vs {want}");
    }
}

#[test]
fn nu2_gadget_bound() {
    for s in 0..20 {
        let n = 40;
        let p = 1 + s as usize % 15;
        let pop = random_population(n, p, 70 + s);
        let d = Design::cre(n, 10 + s as usize).unwrap();
        let big_b = pop.y1.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let nu2 = nu_f(&pop, &d).unwrap().components["nu2"];
        let bound = 2.0 * d.odds().powi(2) * big_b * big_b * pop.hat.trace / (n * n) as f64;
        assert!(nu2.abs() <= bound);
    }
}

#[test]
fn centered_main_term_endpoints() {
    let pop = random_population(30, 4, 90);
    let d = Design::cre(30, 12).unwrap();
    let f = nu_f(&pop, &d).unwrap().variance;
    let fd = nu_f_dagger(&pop, &d).unwrap().variance;
    assert!((nu_f_centered(&pop, &d, 0.0).unwrap() - f).abs() < 1e-12);
    assert!((nu_f_centered(&pop, &d, pop.taubar).unwrap() - fd).abs() < 1e-12);
    let shifted: Vec<f64> = pop.y1.iter().map(|v| v - pop.taubar).collect();
    let p2 = pop.with_outcomes(shifted).unwrap();
    assert!(rel(nu_f(&p2, &d).unwrap().variance, fd) < 1e-12);
}

#[test]
fn homogeneity_in_outcomes() {
    let pop = random_population(20, 3, 91);
    let d = Design::cre(20, 9).unwrap();
    let k = -2.5;
    let scaled = pop.with_outcomes(pop.y1.iter().map(|v| k * v).collect()).unwrap();
    let pairs = [
        (var_unadj(&pop, &d).unwrap(), var_unadj(&scaled, &d).unwrap()),
        (exact_var_adj2(&pop, &d).unwrap().variance, exact_var_adj2(&scaled, &d).unwrap().variance),
        (moments_adj3(&pop, &d).unwrap().variance, moments_adj3(&scaled, &d).unwrap().variance),
        (nu_f(&pop, &d).unwrap().variance, nu_f(&scaled, &d).unwrap().variance),
        (nu_f_dagger(&pop, &d).unwrap().variance, nu_f_dagger(&scaled, &d).unwrap().variance),
    ];
    for (a, b) in pairs {
        assert!(rel(b, k * k * a) < 1e-12);
    }
    assert!(rel(bias_db(&scaled, &d).unwrap(), k * bias_db(&pop, &d).unwrap()) < 1e-12);
}

#[test]
fn main_term_tracks_exact_variance_at_moderate_n() {
    let pop = random_population(200, 20, 92);
    let d = Design::cre(200, 100).unwrap();
    let exact = exact_var_adj2(&pop, &d).unwrap().variance;
    let main = nu_f(&pop, &d).unwrap().variance;
    assert!((main - exact).abs() <= 0.05 * exact, "{main} vs {exact}");
}

#[test]
fn monte_carlo_agrees_with_closed_forms() {
    let pop = random_population(200, 20, 92);
    let d = Design::cre(200, 100).unwrap();
    let exact = exact_var_adj2(&pop, &d).unwrap();
    let mc = mc_moments(
        |t| estimate_all(t, &pop.y1, &d, &pop.hat, &pop.design).adj2,
        &d,
        40_000,
        5,
    )
    .unwrap();
    assert!((mc.variance - exact.variance).abs() <= 4.0 * mc.se_variance);
    assert!((mc.mean - pop.taubar - exact.bias).abs() <= 4.0 * mc.se_mean);
}

#[test]
fn dagger_main_term_tracks_db_variance() {
    let pop = random_population(500, 50, 93);
    let d = Design::cre(500, 250).unwrap();
    let main = nu_f_dagger(&pop, &d).unwrap().variance;
    let mc = mc_moments(
        |t| estimate_all(t, &pop.y1, &d, &pop.hat, &pop.design).db,
        &d,
        20_000,
        6,
    )
    .unwrap();
    assert!((mc.variance - main).abs() <= 0.10 * mc.variance, "{main} vs {}", mc.variance);
}

#[test]
fn adj3_correction_decays_faster_than_one_over_n() {
    let scaled_gap = |n: usize| {
        let pop = random_population(n, n / 10, 94 + n as u64);
        let d = Design::cre(n, n / 2).unwrap();
        let gap = moments_adj3(&pop, &d).unwrap().variance - exact_var_adj2(&pop, &d).unwrap().variance;
        n as f64 * gap.abs()
    };
    let g: Vec<f64> = [50, 100, 200, 400].into_iter().map(scaled_gap).collect();
    assert!(g[3] < g[0] / 2.0, "{g:?}");
    assert!(g[3] < g[1], "{g:?}");
}
