mod common;

use common::*;
use hdcox::inference::{
    confidence_intervals, desparsify_at, holm_adjust, model_variance, normal_quantile, robust_variance, two_sided_p,
};
use hdcox::nodewise::build_precision;
use hdcox::partial_likelihood::{gradient, hessian};
use hdcox::{SurvivalDataset, VarianceKind};
use ndarray::{array, Array1};
use proptest::prelude::*;

#[test]
fn hand_values_on_two_observations() {
    let ds = SurvivalDataset::from_parts(&[1.0, 2.0], &[1, 1], array![[1.0], [0.0]]).unwrap();
    let zero = array![0.0];
    let sigma = hessian(&ds, zero.view()).unwrap();
    let prec = build_precision(sigma.view(), array![1.0].view()).unwrap();
    assert!((prec.theta[[0, 0]] - 8.0).abs() < 1e-12);
    assert!((desparsify_at(&ds, zero.view(), &prec).unwrap()[0] - 2.0).abs() < 1e-12);
    assert!((robust_variance(&ds, zero.view(), &prec).unwrap()[0] - 4.0).abs() < 1e-12);
    assert!((model_variance(&ds, zero.view(), &prec).unwrap()[0] - 8.0).abs() < 1e-12);
}

#[test]
fn normal_tail_and_quantile() {
    assert!((normal_quantile(0.95).unwrap() - 1.959_963_984_540_054).abs() < 1e-9);
    assert!((normal_quantile(0.90).unwrap() - 1.644_853_626_951_472_2).abs() < 1e-9);
    assert!((two_sided_p(2.0) - 0.045_500_263_896_358_4).abs() < 1e-9);
    assert!(normal_quantile(1.0).is_err());
    assert!(normal_quantile(0.0).is_err());

    // b = 2 with sigma / sqrt(n) = 1
    let rep = confidence_intervals(array![2.0].view(), array![2.0].view(), array![2.0].view(), 4, 0.95, VarianceKind::Robust)
        .unwrap();
    assert!((rep.p_values[0] - 0.0455).abs() < 1e-4);
    assert!((rep.ci_lower[0] - (2.0 - 1.959_963_984_540_054)).abs() < 1e-9);
    assert!((rep.ci_upper[0] - (2.0 + 1.959_963_984_540_054)).abs() < 1e-9);
}

#[test]
fn holm_hand_example() {
    // sorted: 0.01 * 3 = 0.03, 0.03 * 2 = 0.06, 0.04 * 1 = 0.04 -> running max
    let adj = holm_adjust(&[0.01, 0.04, 0.03]).unwrap();
    let want = [0.03, 0.06, 0.06];
    for (a, w) in adj.iter().zip(want) {
        assert!((a - w).abs() < 1e-15, "{adj:?}");
    }
    assert!(holm_adjust(&[0.5, 1.2]).is_err());
}

/// Holm by its definition: reject H_(i) at level a iff p_(k) <= a / (m - k + 1)
/// for every k <= i; the adjusted value is the smallest such a, capped at 1.
fn holm_by_definition(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    for (i, &idx) in order.iter().enumerate() {
        let a = (0..=i).map(|k| (m - k) as f64 * p[order[k]]).fold(0.0, f64::max);
        out[idx] = a.min(1.0);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn holm_matches_definition(p in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let adj = holm_adjust(&p).unwrap();
        let oracle = holm_by_definition(&p);
        for (a, o) in adj.iter().zip(&oracle) {
            prop_assert!((a - o).abs() <= 1e-15);
        }
        for (a, raw) in adj.iter().zip(&p) {
            prop_assert!(*a >= *raw && *a <= 1.0);
        }
    }

    #[test]
    fn robust_variance_is_the_projected_second_moment(
        (raw, beta, lam) in raw_strategy(5..=30, 1..=4).prop_flat_map(|r| {
            let p = r.p();
            (Just(r), beta_strategy(p), 0.001f64..0.2)
        })
    ) {
        let ds = raw.dataset();
        let b = Array1::from(beta.clone());
        let sigma = hessian(&ds, b.view()).unwrap();
        let prec = match build_precision(sigma.view(), Array1::from_elem(raw.p(), lam).view()) {
            Ok(p) => p,
            // degenerate Hessians (e.g. a constant column) have no surrogate
            Err(_) => return Ok(()),
        };
        let v = raw.score_residuals(&beta);
        let n = raw.n() as f64;
        let robust = match robust_variance(&ds, b.view(), &prec) {
            Ok(r) => r,
            Err(_) => return Ok(()),
        };
        for j in 0..raw.p() {
            let want: f64 = v.rows().into_iter().map(|vi| prec.theta.row(j).dot(&vi).powi(2)).sum::<f64>() / n;
            prop_assert!((robust[j] - want).abs() <= 1e-10 * want.max(1e-12), "{} vs {want}", robust[j]);
        }
        let model = model_variance(&ds, b.view(), &prec).unwrap();
        for j in 0..raw.p() {
            let want = prec.theta.row(j).dot(&sigma.dot(&prec.theta.row(j)));
            prop_assert!((model[j] - want).abs() <= 1e-12 * want.abs().max(1e-12));
        }
        let g = gradient(&ds, b.view()).unwrap();
        let bh = desparsify_at(&ds, b.view(), &prec).unwrap();
        let want = &b - &prec.theta.dot(&g);
        for j in 0..raw.p() {
            prop_assert!((bh[j] - want[j]).abs() <= 1e-12 * want[j].abs().max(1.0));
        }
    }

    #[test]
    fn intervals_are_centred_and_scaled(
        b in prop::collection::vec(-3.0f64..3.0, 1..6),
        level in 0.5f64..0.999,
        n in 5usize..500,
    ) {
        let p = b.len();
        let b = Array1::from(b);
        let sd_r = Array1::from_elem(p, 1.3);
        let sd_m = Array1::from_elem(p, 0.7);
        let z = normal_quantile(level).unwrap();
        for (kind, sd) in [(VarianceKind::Robust, 1.3), (VarianceKind::Model, 0.7)] {
            let rep = confidence_intervals(b.view(), sd_r.view(), sd_m.view(), n, level, kind).unwrap();
            for j in 0..p {
                let half = z * sd / (n as f64).sqrt();
                prop_assert!((rep.ci_upper[j] - rep.ci_lower[j] - 2.0 * half).abs() < 1e-12);
                prop_assert!((0.5 * (rep.ci_upper[j] + rep.ci_lower[j]) - b[j]).abs() < 1e-12);
                // the interval excludes 0 exactly when p < 1 - level
                let excludes = rep.ci_lower[j] > 0.0 || rep.ci_upper[j] < 0.0;
                if (rep.p_values[j] - (1.0 - level)).abs() > 1e-9 {
                    prop_assert_eq!(excludes, rep.p_values[j] < 1.0 - level);
                }
            }
        }
    }
}
