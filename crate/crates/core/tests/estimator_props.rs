mod common;

use common::{naive_estimators, random_population, rel};
use hoif_cre::estimators::{estimate, estimate_all, ols_slope_centered, EstimatorKind, ObservedDataset};
use hoif_cre::oracle::enumerate_values;
use hoif_cre::randomization::{sample_assignment, Assignment, Design, DEFAULT_ENUM_CAP};
use nalgebra::DVector;

#[test]
fn library_matches_double_loop_transcriptions() {
    for s in 0..60 {
        let n = 10 + (s as usize % 25);
        let p = 1 + (s as usize % (n / 2));
        let pop = random_population(n, p, 100 + s);
        let d = Design::cre(n, n / 2).unwrap();
        let a = sample_assignment(&d, &mut common::rng(200 + s));
        let e = estimate_all(a.as_slice(), &pop.y1, &d, &pop.hat, &pop.design);
        let o = naive_estimators(a.as_slice(), &pop.y1, &pop.hat, d.pi1());
        for (got, want) in [
            (e.unadj, o.unadj),
            (e.adj, o.adj),
            (e.adj1, o.adj1),
            (e.adj2, o.adj2),
            (e.adj2dagger, o.adj2dagger),
            (e.adj3, o.adj3),
            (e.db, o.db),
        ] {
            assert!(rel(got, want) < 1e-10, "{got} vs {want}");
        }
    }
}

#[test]
fn db_equals_adj2_dagger_on_random_instances() {
    for s in 0..100 {
        let p = [2, 10, 20][s as usize % 3];
        let pop = random_population(30, p, 300 + s);
        let d = Design::cre(30, 15).unwrap();
        let a = sample_assignment(&d, &mut common::rng(400 + s));
        let e = estimate_all(a.as_slice(), &pop.y1, &d, &pop.hat, &pop.design);
        assert!(rel(e.db, e.adj2dagger) <= 1e-12, "{} vs {}", e.db, e.adj2dagger);
    }
}

#[test]
fn constant_outcomes_are_error_free() {
    let d = Design::cre(8, 4).unwrap();
    let pop = random_population(8, 3, 9);
    let c = 3.75;
    let y = vec![c; 8];
    let worst = enumerate_values(
        |t| {
            let e = estimate_all(t, &y, &d, &pop.hat, &pop.design);
            (e.adj - c).abs().max((e.adj2dagger - c).abs()).max((e.db - c).abs())
        },
        &d,
        DEFAULT_ENUM_CAP,
    )
    .unwrap()
    .into_iter()
    .fold(0.0_f64, f64::max);
    assert!(worst < 1e-13, "{worst}");
}

#[test]
fn location_shifts() {
    let n = 20;
    let pop = random_population(n, 4, 11);
    let d = Design::cre(n, 9).unwrap();
    let a = sample_assignment(&d, &mut common::rng(12));
    let t = a.as_slice();
    let c = 2.5;
    let base = estimate_all(t, &pop.y1, &d, &pop.hat, &pop.design);
    let ys: Vec<f64> = pop.y1.iter().map(|v| v + c).collect();
    let shifted = estimate_all(t, &ys, &d, &pop.hat, &pop.design);
    let ones = estimate_all(t, &vec![1.0; n], &d, &pop.hat, &pop.design);
    for (s, b) in [
        (shifted.unadj, base.unadj),
        (shifted.adj, base.adj),
        (shifted.adj2dagger, base.adj2dagger),
        (shifted.db, base.db),
    ] {
        assert!((s - b - c).abs() < 1e-12);
    }
    // Adj2 and Adj3 are linear in y, so the shift is c times their value at y ≡ 1.
    assert!((shifted.adj2 - base.adj2 - c * ones.adj2).abs() < 1e-12);
    assert!((shifted.adj3 - base.adj3 - c * ones.adj3).abs() < 1e-12);
    assert!((ones.adj2 - 1.0).abs() > 1e-6);
}

#[test]
fn adj2_is_adj1_minus_own_observation_terms() {
    let n = 25;
    let pop = random_population(n, 6, 13);
    let d = Design::cre(n, 10).unwrap();
    let pi = d.pi1();
    let a = sample_assignment(&d, &mut common::rng(14));
    let t = a.as_slice();
    let e = estimate_all(t, &pop.y1, &d, &pop.hat, &pop.design);
    let corr: f64 = (0..n)
        .map(|i| (t[i] as f64 / pi - 1.0) * pop.hat.diag[i] * t[i] as f64 * pop.y1[i] / pi)
        .sum::<f64>()
        / n as f64;
    assert!((e.adj2 - (e.adj1 + corr)).abs() < 1e-12);
}

#[test]
fn all_treated_collapses_corrections() {
    let n = 9;
    let pop = random_population(n, 2, 15);
    let d = Design::cre(n, n).unwrap();
    let t = vec![1u8; n];
    let e = estimate_all(&t, &pop.y1, &d, &pop.hat, &pop.design);
    assert!((e.adj2 - e.adj1).abs() < 1e-14);
    assert!((e.adj3 - e.adj2).abs() < 1e-14);
}

#[test]
fn slope_forms_agree() {
    for s in 0..20 {
        let n = 30;
        let pop = random_population(n, 5, 500 + s);
        let d = Design::cre(n, 12).unwrap();
        let a = sample_assignment(&d, &mut common::rng(600 + s));
        let data = ObservedDataset::new(pop.x.clone(), a.clone(), pop.y1.clone(), d).unwrap();
        let slope = ols_slope_centered(&data, &pop.hat).unwrap();
        assert!(!slope.rank_deficient);
        let pi = d.pi1();
        let t = a.as_slice();
        let tau_u = estimate(EstimatorKind::Unadj, &data, &pop.hat).unwrap();
        let g = DVector::from_iterator(n, (0..n).map(|i| t[i] as f64 / pi - 1.0));
        let beta_form = tau_u - (pop.design.xc.tr_mul(&g)).dot(&slope.beta) / n as f64;
        let h_form = estimate(EstimatorKind::Adj, &data, &pop.hat).unwrap();
        assert!((beta_form - h_form).abs() < 1e-10);
    }
}

#[test]
fn slope_vanishes_for_flat_treated_outcomes() {
    let pop = random_population(10, 2, 21);
    let d = Design::cre(10, 5).unwrap();
    let t = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
    let y: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 4.0 } else { i as f64 }).collect();
    let data = ObservedDataset::new(pop.x.clone(), Assignment::new(t).unwrap(), y, d).unwrap();
    let s = ols_slope_centered(&data, &pop.hat).unwrap();
    assert!(s.beta.amax() < 1e-12);
}

#[test]
fn single_covariate_slope_is_covariance_ratio() {
    use hoif_cre::design::{CovariateMatrix, HatMatrix};
    let x = CovariateMatrix::from_rows(&[vec![1.0], vec![2.0], vec![4.0], vec![7.0]]).unwrap();
    let hat = HatMatrix::from_covariates(&x).unwrap();
    let d = Design::cre(4, 2).unwrap();
    let y = vec![3.0, 0.0, 5.0, 0.0];
    let data = ObservedDataset::new(x, Assignment::new(vec![1, 0, 1, 0]).unwrap(), y, d).unwrap();
    let s = ols_slope_centered(&data, &hat).unwrap();
    // τ̂_unadj = 4; weights t_j(y_j − 4)/π₁ = (−2, 0, 2, 0); x̄ = 3.5.
    let num = (1.0 - 3.5) * -2.0 + (4.0 - 3.5) * 2.0;
    let den = [1.0, 2.0, 4.0, 7.0].iter().map(|v: &f64| (v - 3.5).powi(2)).sum::<f64>();
    assert!((s.beta[0] - num / den).abs() < 1e-14);
}
