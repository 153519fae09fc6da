mod common;

use common::*;
use hdcox::lasso::{
    cross_validate, fit_cv, fit_lasso, kkt_violation, lambda_max, regularization_path, CvConfig, LassoConfig,
};
use hdcox::partial_likelihood::gradient;
use hdcox::SurvivalDataset;
use ndarray::array;
use proptest::prelude::*;

/// Minimises the naive penalised objective on p = 2 by repeatedly zooming a
/// dense grid around its best point. Valid because the objective is convex.
fn brute_force_p2(raw: &Raw, lambda: f64) -> [f64; 2] {
    let obj = |b: [f64; 2]| raw.value(&b) + 2.0 * lambda * (b[0].abs() + b[1].abs());
    let (mut centre, mut half) = ([0.0, 0.0], 4.0);
    let k = 40;
    while half > 1e-8 {
        let mut best = (f64::INFINITY, centre);
        for a in -k..=k {
            for c in -k..=k {
                let b = [centre[0] + half * a as f64 / k as f64, centre[1] + half * c as f64 / k as f64];
                // the kinks at zero must be on the grid
                for cand in [b, [0.0, b[1]], [b[0], 0.0]] {
                    let v = obj(cand);
                    if v < best.0 {
                        best = (v, cand);
                    }
                }
            }
        }
        centre = best.1;
        half *= 4.0 / k as f64;
    }
    centre
}

#[test]
fn matches_brute_force_on_two_covariates() {
    for seed in 0..4 {
        let raw = fixed_instance(40, 2, 100 + seed);
        let ds = raw.dataset();
        let fit = fit_lasso(&ds, 0.05, None, &LassoConfig::default()).unwrap();
        let oracle = brute_force_p2(&raw, 0.05);
        for k in 0..2 {
            assert!(
                (fit.beta_hat[k] - oracle[k]).abs() < 1e-4,
                "seed {seed} coord {k}: {} vs {}",
                fit.beta_hat[k],
                oracle[k]
            );
        }
    }
}

#[test]
fn brute_force_with_one_coefficient_at_zero() {
    // pick lambda between the two score magnitudes at zero so one coordinate
    // enters and the other stays at the kink
    let raw = fixed_instance(40, 2, 7);
    let ds = raw.dataset();
    let g = gradient(&ds, array![0.0, 0.0].view()).unwrap();
    let (lo, hi) = (g[0].abs().min(g[1].abs()), g[0].abs().max(g[1].abs()));
    let lambda = 0.25 * (lo + hi);
    let fit = fit_lasso(&ds, lambda, None, &LassoConfig::default()).unwrap();
    let oracle = brute_force_p2(&raw, lambda);
    for k in 0..2 {
        assert!((fit.beta_hat[k] - oracle[k]).abs() < 1e-4);
    }
}

#[test]
fn two_observation_instance_is_zero_above_one_eighth() {
    let ds = SurvivalDataset::from_parts(&[1.0, 2.0], &[1, 1], array![[1.0], [0.0]]).unwrap();
    assert!((lambda_max(&ds).unwrap() - 0.125).abs() < 1e-15);
    for lambda in [0.125, 0.2, 5.0] {
        let fit = fit_lasso(&ds, lambda, None, &LassoConfig::default()).unwrap();
        assert_eq!(fit.beta_hat[0], 0.0);
    }
    let fit = fit_lasso(&ds, 0.1, None, &LassoConfig::default()).unwrap();
    assert!(fit.beta_hat[0] > 0.0);
}

#[test]
fn cross_validation_is_deterministic_and_selects_on_the_grid() {
    let raw = fixed_instance(120, 6, 9);
    let ds = raw.dataset();
    let cv = CvConfig { folds: 5, seed: 3, n_lambda: 30, ..CvConfig::default() };
    let (a, fa) = fit_cv(&ds, &cv, &LassoConfig::default()).unwrap();
    let (b, fb) = fit_cv(&ds, &cv, &LassoConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(fa.beta_hat, fb.beta_hat);
    assert!(a.lambda_grid.contains(&a.lambda_selected));
    assert!(a.lambda_grid.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(a.cv_deviance.len(), a.lambda_grid.len());
    let best = a.cv_deviance.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(a.cv_deviance[a.selected_index()], best);
    assert_eq!(fa.lambda, a.lambda_selected);

    let other = cross_validate(&ds, &CvConfig { seed: 4, ..cv }, &LassoConfig::default()).unwrap();
    assert_ne!(other.fold_assignment, a.fold_assignment);
}

#[test]
fn path_fits_are_certified_and_sparsity_grows() {
    let raw = fixed_instance(80, 10, 21);
    let ds = raw.dataset();
    let top = lambda_max(&ds).unwrap();
    let grid: Vec<f64> = (0..12).map(|i| top * 0.7f64.powi(i)).collect();
    let fits = regularization_path(&ds, &grid, &LassoConfig::default()).unwrap();
    assert_eq!(fits[0].support_size(), 0);
    assert!(fits.last().unwrap().support_size() > 0);
    for f in &fits {
        let g = gradient(&ds, f.beta_hat.view()).unwrap();
        assert!(kkt_violation(g.view(), f.beta_hat.view(), f.lambda) <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kkt_certificate_holds((raw, ratio) in (raw_strategy(10..=40, 1..=8), 0.05f64..1.2)) {
        let ds = raw.dataset();
        let top = lambda_max(&ds).unwrap();
        prop_assume!(top > 1e-8);
        let lambda = top * ratio;
        let config = LassoConfig::default();
        match fit_lasso(&ds, lambda, None, &config) {
            Ok(fit) => {
                let g = gradient(&ds, fit.beta_hat.view()).unwrap();
                prop_assert!(kkt_violation(g.view(), fit.beta_hat.view(), lambda) <= 1e-6,
                    "kkt {}", kkt_violation(g.view(), fit.beta_hat.view(), lambda));
                if ratio >= 1.0 {
                    prop_assert!(fit.beta_hat.iter().all(|b| *b == 0.0));
                }
                // the objective trace never increases
                prop_assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
            }
            // separable small samples may legitimately diverge for small lambda
            Err(hdcox::CoxError::DivergingPredictor { .. }) => prop_assert!(ratio < 1.0),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}
