//! De-sparsified estimator, robust and model-based variances, Wald
//! intervals and Holm adjustment.
//!
//! The robust variance needs score residuals at the pseudo-true parameter,
//! which is unknown; [`robust_variance`] evaluates them at whatever `beta` it
//! is given, normally the Lasso estimate.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CoxError, Result};
use crate::lasso::LassoFit;
use crate::nodewise::PrecisionSurrogate;
use crate::partial_likelihood::{gradient_from, hessian};
use crate::survival::{RiskMoments, SurvivalDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceKind {
    Robust,
    Model,
}

impl std::str::FromStr for VarianceKind {
    type Err = CoxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "robust" => Ok(Self::Robust),
            "model" => Ok(Self::Model),
            other => Err(CoxError::InvalidArgument(format!("unknown variance {other:?}; expected robust or model"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceReport {
    pub b_hat: Array1<f64>,
    /// robust standard deviation `sigma_hat_j`
    pub sigma_robust: Array1<f64>,
    /// model-based standard deviation `sigma_tilde_j`
    pub sigma_model: Array1<f64>,
    pub level: f64,
    pub variance: VarianceKind,
    pub n: usize,
    pub ci_lower: Array1<f64>,
    pub ci_upper: Array1<f64>,
    pub z_scores: Array1<f64>,
    pub p_values: Array1<f64>,
    pub p_holm: Array1<f64>,
}

/// Score residuals `v_i(beta)`, one row per observation in the caller's order.
#[derive(Debug, Clone)]
pub struct ScoreResiduals {
    pub v_hat: Array2<f64>,
}

/// `b = beta_hat - Theta grad l_n(beta_hat)`.
pub fn desparsify(ds: &SurvivalDataset, fit: &LassoFit, prec: &PrecisionSurrogate) -> Result<Array1<f64>> {
    desparsify_at(ds, fit.beta_hat.view(), prec)
}

pub fn desparsify_at(ds: &SurvivalDataset, beta_hat: ArrayView1<f64>, prec: &PrecisionSurrogate) -> Result<Array1<f64>> {
    check_dims(ds, prec)?;
    let m = RiskMoments::new(ds, beta_hat)?;
    let grad = gradient_from(&m);
    Ok(&beta_hat - &prec.theta.dot(&grad))
}

fn check_dims(ds: &SurvivalDataset, prec: &PrecisionSurrogate) -> Result<()> {
    if prec.p() != ds.p() {
        return Err(CoxError::DimensionMismatch(format!("precision is {0}x{0} but p = {1}", prec.p(), ds.p())));
    }
    Ok(())
}

/// `v_i = Delta_i (X_i - m(Y_i)) - sum_k Delta_k 1(Y_i >= Y_k) exp(X_i' beta) /
/// (n mu0(Y_k)) (X_i - m(Y_k))`, with the compensator accumulated forward in
/// time so the whole matrix costs `O(n p)`.
pub fn score_residuals(ds: &SurvivalDataset, beta: ArrayView1<f64>) -> Result<ScoreResiduals> {
    let m = RiskMoments::new(ds, beta)?;
    let x = ds.centered();
    let c = m.inverse_s0_cumulative();
    let cm = m.mean_over_s0_cumulative();
    let mut v = Array2::zeros((ds.n(), ds.p()));
    let mut event = 0;
    for s in 0..ds.n() {
        let orig = ds.sort_order()[s];
        let mut row = v.row_mut(orig);
        // -w_s (c_s X_s - sum_k m_k / S0_k)
        row.scaled_add(-m.weights[s] * c[s], &x.row(s));
        row.scaled_add(m.weights[s], &cm.row(s));
        if ds.sorted_status()[s] {
            row += &x.row(s);
            row -= &m.mean.row(event);
            event += 1;
        }
    }
    Ok(ScoreResiduals { v_hat: v })
}

/// Robust variances `sigma_hat_j^2 = n^-1 sum_i (Theta_j' v_i(beta))^2`.
pub fn robust_variance(ds: &SurvivalDataset, beta: ArrayView1<f64>, prec: &PrecisionSurrogate) -> Result<Array1<f64>> {
    check_dims(ds, prec)?;
    let v = score_residuals(ds, beta)?.v_hat;
    let proj = v.dot(&prec.theta.t());
    let n = ds.n() as f64;
    let var: Array1<f64> = proj.columns().into_iter().map(|c| c.dot(&c) / n).collect();
    if let Some(j) = var.iter().position(|s| !(*s > 0.0)) {
        return Err(CoxError::ZeroVariance(j));
    }
    Ok(var)
}

/// Model-based variances `sigma_tilde_j^2 = Theta_j' l''_n(beta_hat) Theta_j`.
pub fn model_variance(ds: &SurvivalDataset, beta_hat: ArrayView1<f64>, prec: &PrecisionSurrogate) -> Result<Array1<f64>> {
    check_dims(ds, prec)?;
    let sigma = hessian(ds, beta_hat)?;
    model_variance_from(sigma.view(), prec)
}

pub fn model_variance_from(sigma: ArrayView2<f64>, prec: &PrecisionSurrogate) -> Result<Array1<f64>> {
    let st = sigma.dot(&prec.theta.t());
    let var: Array1<f64> = (0..prec.p()).map(|j| prec.theta.row(j).dot(&st.column(j))).collect();
    if let Some(j) = var.iter().position(|s| !(*s > 0.0)) {
        return Err(CoxError::ZeroVariance(j));
    }
    Ok(var)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Two-sided normal quantile `z_{1 - alpha/2}` for a confidence level.
pub fn normal_quantile(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(standard_normal().inverse_cdf(0.5 + level / 2.0))
}

/// Two-sided p-value of a z statistic.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * standard_normal().sf(z.abs())).min(1.0)
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CoxError::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

/// Wald intervals `b_j +- z sigma_j / sqrt(n)`, z-scores, two-sided p-values
/// and Holm-adjusted p-values, using the selected standard deviations.
pub fn confidence_intervals(
    b_hat: ArrayView1<f64>,
    sigma_robust: ArrayView1<f64>,
    sigma_model: ArrayView1<f64>,
    n: usize,
    level: f64,
    variance: VarianceKind,
) -> Result<InferenceReport> {
    let z = normal_quantile(level)?;
    let p = b_hat.len();
    if sigma_robust.len() != p || sigma_model.len() != p {
        return Err(CoxError::DimensionMismatch("standard deviations and b_hat differ in length".into()));
    }
    let sigma = match variance {
        VarianceKind::Robust => sigma_robust.to_owned(),
        VarianceKind::Model => sigma_model.to_owned(),
    };
    if let Some(j) = sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(CoxError::ZeroVariance(j));
    }
    let root_n = (n as f64).sqrt();
    let half = sigma.mapv(|s| z * s / root_n);
    let z_scores: Array1<f64> = b_hat.iter().zip(sigma.iter()).map(|(b, s)| root_n * b / s).collect();
    let p_values: Array1<f64> = z_scores.mapv(two_sided_p);
    let p_holm = Array1::from(holm_adjust(p_values.as_slice().expect("contiguous"))?);
    Ok(InferenceReport {
        b_hat: b_hat.to_owned(),
        sigma_robust: sigma_robust.to_owned(),
        sigma_model: sigma_model.to_owned(),
        level,
        variance,
        n,
        ci_lower: &b_hat - &half,
        ci_upper: &b_hat + &half,
        z_scores,
        p_values,
        p_holm,
    })
}

/// Full debiasing pipeline from a Lasso fit and a precision surrogate.
pub fn infer(
    ds: &SurvivalDataset,
    fit: &LassoFit,
    prec: &PrecisionSurrogate,
    level: f64,
    variance: VarianceKind,
) -> Result<InferenceReport> {
    let beta = fit.beta_hat.view();
    let b_hat = desparsify(ds, fit, prec)?;
    let robust = robust_variance(ds, beta, prec)?.mapv(f64::sqrt);
    let model = model_variance(ds, beta, prec)?.mapv(f64::sqrt);
    confidence_intervals(b_hat.view(), robust.view(), model.view(), ds.n(), level, variance)
}

/// Holm step-down adjusted p-values, monotone in the sorted order, capped at 1.
pub fn holm_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CoxError::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p_values[i]).min(1.0));
        out[i] = running;
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ReportRow {
    j: usize,
    b_hat: f64,
    sigma_robust: f64,
    sigma_model: f64,
    ci_lo: f64,
    ci_hi: f64,
    z: f64,
    p: f64,
    p_holm: f64,
}

impl InferenceReport {
    pub fn p(&self) -> usize {
        self.b_hat.len()
    }

    fn rows(&self) -> impl Iterator<Item = ReportRow> + '_ {
        (0..self.p()).map(|j| ReportRow {
            j: j + 1,
            b_hat: self.b_hat[j],
            sigma_robust: self.sigma_robust[j],
            sigma_model: self.sigma_model[j],
            ci_lo: self.ci_lower[j],
            ci_hi: self.ci_upper[j],
            z: self.z_scores[j],
            p: self.p_values[j],
            p_holm: self.p_holm[j],
        })
    }

    /// CSV with columns `j, b_hat, sigma_robust, sigma_model, ci_lo, ci_hi, z,
    /// p, p_holm`; `j` is 1-based.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per coordinate with the CSV column names as keys.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for row in self.rows() {
            let line = serde_json::to_string(&row).map_err(|e| CoxError::Io(e.into()))?;
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_obs() -> SurvivalDataset {
        SurvivalDataset::from_parts(&[1.0, 2.0], &[1, 1], array![[1.0], [0.0]]).unwrap()
    }

    fn scalar_prec(theta: f64) -> PrecisionSurrogate {
        PrecisionSurrogate {
            gamma: vec![Array1::zeros(0)],
            tau_sq: array![1.0 / theta],
            theta: array![[theta]],
            lambdas: array![1.0],
        }
    }

    #[test]
    fn hand_values_two_observations() {
        let ds = two_obs();
        let zero = array![0.0];
        let v = score_residuals(&ds, zero.view()).unwrap().v_hat;
        assert!((v[[0, 0]] - 0.25).abs() < 1e-15);
        assert!((v[[1, 0]] - 0.25).abs() < 1e-15);

        let prec = scalar_prec(8.0);
        let b = desparsify_at(&ds, zero.view(), &prec).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-14);
        assert!((robust_variance(&ds, zero.view(), &prec).unwrap()[0] - 4.0).abs() < 1e-13);
        assert!((model_variance(&ds, zero.view(), &prec).unwrap()[0] - 8.0).abs() < 1e-13);
    }

    #[test]
    fn constant_covariate_has_zero_residuals_and_variance_error() {
        let x = array![[1.5], [1.5], [1.5], [1.5]];
        let ds = SurvivalDataset::from_parts(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 1], x).unwrap();
        let v = score_residuals(&ds, array![0.3].view()).unwrap().v_hat;
        assert!(v.iter().all(|x| x.abs() < 1e-14));
        assert!(matches!(
            robust_variance(&ds, array![0.3].view(), &scalar_prec(1.0)),
            Err(CoxError::ZeroVariance(0))
        ));
    }

    #[test]
    fn identity_model_variance() {
        let prec = PrecisionSurrogate {
            gamma: vec![array![0.0], array![0.0]],
            tau_sq: array![1.0, 1.0],
            theta: Array2::eye(2),
            lambdas: array![0.1, 0.1],
        };
        let v = model_variance_from(Array2::eye(2).view(), &prec).unwrap();
        assert_eq!(v, array![1.0, 1.0]);
    }

    #[test]
    fn interval_and_p_value() {
        let rep = confidence_intervals(
            array![0.0, 2.0].view(),
            array![1.0, 1.0].view(),
            array![3.0, 3.0].view(),
            1,
            0.95,
            VarianceKind::Robust,
        )
        .unwrap();
        assert!((rep.ci_lower[0] + 1.959_963_984_540_054).abs() < 1e-9);
        assert!((rep.ci_upper[0] - 1.959_963_984_540_054).abs() < 1e-9);
        assert_eq!(rep.p_values[0], 1.0);
        assert!((rep.p_values[1] - 0.045_500_263_896_358_41).abs() < 1e-9);
        assert!(confidence_intervals(array![0.0].view(), array![1.0].view(), array![1.0].view(), 1, 1.0, VarianceKind::Robust).is_err());
        assert!(confidence_intervals(array![0.0].view(), array![1.0].view(), array![1.0].view(), 1, 0.0, VarianceKind::Model).is_err());
    }

    #[test]
    fn holm_edge_cases() {
        assert_eq!(holm_adjust(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(holm_adjust(&[0.3]).unwrap(), vec![0.3]);
        assert!(holm_adjust(&[0.5, 1.2]).is_err());
        assert!(holm_adjust(&[-0.1]).is_err());
        assert!(holm_adjust(&[]).unwrap().is_empty());
    }

    #[test]
    fn report_serialization_columns() {
        let rep = confidence_intervals(
            array![0.5].view(),
            array![1.0].view(),
            array![1.0].view(),
            4,
            0.9,
            VarianceKind::Model,
        )
        .unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("j,b_hat,sigma_robust,sigma_model,ci_lo,ci_hi,z,p,p_holm\n1,0.5,"));
        let mut buf = Vec::new();
        rep.write_jsonl(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["j"], 1);
        assert_eq!(v["b_hat"], 0.5);
    }
}
