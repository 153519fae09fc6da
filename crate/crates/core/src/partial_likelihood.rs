//! Negative log partial likelihood of the working Cox model and its first
//! two derivatives.
//!
//! All evaluators read a single [`RiskMoments`] pass. The Hessian is assembled
//! as `(1/n) [X' diag(a) X - M' M]` where `a_j = w_j * sum_{i: j in R_i} 1/S0_i`
//! and `M` stacks the risk-set means, which costs `O(n p^2)` instead of the
//! `O(n^2 p^2)` of summing centred outer products event by event. The latter
//! route is kept as [`hessian_via_factor`] and must agree with it.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::Result;
use crate::survival::{RiskMoments, SurvivalDataset};

#[derive(Debug, Clone)]
pub struct PartialLikelihoodEval {
    pub value: f64,
    pub gradient: Array1<f64>,
    pub hessian: Option<Array2<f64>>,
}

pub fn evaluate(ds: &SurvivalDataset, beta: ArrayView1<f64>, with_hessian: bool) -> Result<PartialLikelihoodEval> {
    let m = RiskMoments::new(ds, beta)?;
    Ok(PartialLikelihoodEval {
        value: value_from(&m),
        gradient: gradient_from(&m),
        hessian: with_hessian.then(|| hessian_from(&m)),
    })
}

pub fn neg_log_partial_likelihood(ds: &SurvivalDataset, beta: ArrayView1<f64>) -> Result<f64> {
    Ok(value_from(&RiskMoments::new(ds, beta)?))
}

pub fn gradient(ds: &SurvivalDataset, beta: ArrayView1<f64>) -> Result<Array1<f64>> {
    Ok(gradient_from(&RiskMoments::new(ds, beta)?))
}

pub fn hessian(ds: &SurvivalDataset, beta: ArrayView1<f64>) -> Result<Array2<f64>> {
    Ok(hessian_from(&RiskMoments::new(ds, beta)?))
}

/// Log partial likelihood in its unnormalised sum form,
/// `sum_i Delta_i [eta_i - log sum_{j in R_i} exp(eta_j)]`.
pub fn log_partial_likelihood_sum(ds: &SurvivalDataset, beta: ArrayView1<f64>) -> Result<f64> {
    let m = RiskMoments::new(ds, beta)?;
    Ok(pl_sum(&m))
}

fn pl_sum(m: &RiskMoments) -> f64 {
    let ds = m.dataset();
    ds.event_positions()
        .iter()
        .zip(m.s0.iter())
        .map(|(&s, &s0)| m.eta[s] - m.shift - s0.ln())
        .sum()
}

pub(crate) fn value_from(m: &RiskMoments) -> f64 {
    let n = m.dataset().n() as f64;
    let d = m.len() as f64;
    // -(1/n) sum [eta_i - log(S0_i / n)]
    -(pl_sum(m) + d * n.ln()) / n
}

pub(crate) fn gradient_from(m: &RiskMoments) -> Array1<f64> {
    let ds = m.dataset();
    let x = ds.centered();
    let mut g = Array1::zeros(ds.p());
    for (e, &s) in ds.event_positions().iter().enumerate() {
        g += &x.row(s);
        g -= &m.mean.row(e);
    }
    g /= -(ds.n() as f64);
    g
}

pub(crate) fn hessian_from(m: &RiskMoments) -> Array2<f64> {
    let ds = m.dataset();
    let a = &m.weights * &m.inverse_s0_cumulative();
    let mut b = ds.centered().to_owned();
    for (mut row, &aj) in b.axis_iter_mut(Axis(0)).zip(a.iter()) {
        row *= aj.sqrt();
    }
    let mut h = b.t().dot(&b);
    h -= &m.mean.t().dot(&m.mean);
    h /= ds.n() as f64;
    symmetrize(&mut h);
    h
}

fn symmetrize(h: &mut Array2<f64>) {
    let p = h.nrows();
    for a in 0..p {
        for b in (a + 1)..p {
            let v = 0.5 * (h[[a, b]] + h[[b, a]]);
            h[[a, b]] = v;
            h[[b, a]] = v;
        }
    }
}

/// Hessian as `C' C`, accumulated event by event as weighted centred outer
/// products `sum_j w~_ij (X_j - m_i)(X_j - m_i)' Delta_i / n`. The `n^2 x p`
/// factor itself is never formed. Quadratic in `n`; intended for checking.
pub fn hessian_via_factor(ds: &SurvivalDataset, beta: ArrayView1<f64>) -> Result<Array2<f64>> {
    let m = RiskMoments::new(ds, beta)?;
    let p = ds.p();
    let x = ds.centered();
    let mut h = Array2::<f64>::zeros((p, p));
    let mut diff = Array1::<f64>::zeros(p);
    for (e, &pos) in ds.event_positions().iter().enumerate() {
        let start = ds.risk_start()[pos];
        let mean = m.mean.row(e);
        for s in start..ds.n() {
            let w = m.weights[s] / m.s0[e];
            diff.assign(&x.row(s));
            diff -= &mean;
            for a in 0..p {
                let wa = w * diff[a];
                for b in a..p {
                    h[[a, b]] += wa * diff[b];
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[[a, b]] = h[[b, a]];
        }
    }
    h /= ds.n() as f64;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_obs() -> SurvivalDataset {
        SurvivalDataset::from_parts(&[1.0, 2.0], &[1, 1], array![[1.0], [0.0]]).unwrap()
    }

    #[test]
    fn hand_values_two_observations() {
        let ds = two_obs();
        let b = array![0.0];
        let ev = evaluate(&ds, b.view(), true).unwrap();
        assert!((ev.value + 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((ev.value - (-0.346_573_590_279_972_6)).abs() < 1e-12);
        assert!((ev.gradient[0] + 0.25).abs() < 1e-15);
        assert!((ev.hessian.unwrap()[[0, 0]] - 0.125).abs() < 1e-15);
        assert!((hessian_via_factor(&ds, b.view()).unwrap()[[0, 0]] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_give_zero_gradient() {
        let x = Array2::from_shape_fn((6, 2), |(_, j)| [0.7, -1.3][j]);
        let ds = SurvivalDataset::from_parts(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 0, 1, 1, 0, 1], x).unwrap();
        let g = gradient(&ds, array![0.4, 1.1].view()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn constant_column_has_zero_hessian_row() {
        let x = array![[1.0, 3.0], [0.2, 3.0], [-0.5, 3.0], [2.0, 3.0], [0.1, 3.0]];
        let ds = SurvivalDataset::from_parts(&[2.0, 1.0, 5.0, 3.0, 4.0], &[1, 1, 0, 1, 1], x).unwrap();
        for h in [
            hessian(&ds, array![0.3, -0.2].view()).unwrap(),
            hessian_via_factor(&ds, array![0.3, -0.2].view()).unwrap(),
        ] {
            for k in 0..2 {
                assert!(h[[1, k]].abs() < 1e-13, "{h}");
                assert!(h[[k, 1]].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn factor_route_zero_for_constant_single_column() {
        let x = array![[2.0], [2.0], [2.0]];
        let ds = SurvivalDataset::from_parts(&[1.0, 2.0, 3.0], &[1, 1, 1], x).unwrap();
        let h = hessian_via_factor(&ds, array![0.5].view()).unwrap();
        assert!(h[[0, 0]].abs() < 1e-15);
    }
}
