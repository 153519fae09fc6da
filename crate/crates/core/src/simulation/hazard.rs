//! True survival-time generators: the correctly specified Cox model and the
//! misspecified hazards used for the coverage and size experiments.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{CoxError, Result};

/// Seed of the fixed realization of active coefficients `U[0, 2]`.
pub const DEFAULT_COEF_SEED: u64 = 20_190_401;

/// Standard deviation of the log-time noise in the lognormal AFT generator.
pub const AFT_LOG_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hazard {
    /// `exp(x' beta)`
    CoxLinear { beta: Vec<f64> },
    /// `exp(x_1^2)`
    ExpQuadratic,
    /// `exp(x_1^2 + .5 x_2 + x_3)`
    ExpRow1,
    /// `x_1^2 + .5 x_2 + x_3 + 5`
    AdditiveRow2,
    /// `log(x_1^2 + .5 x_2 + x_3 + 6)`
    LogRow3,
    /// `log T = -x_1^2 - .5 x_2 - x_3 + phi`, `phi ~ N(0, 0.5^2)`
    AftLognormalRow4,
    /// `T = exp(-x_1^2 - .5 x_2 - x_3) + eps`, `eps ~ Exp(1)`
    AftExponentialRow5,
}

impl Hazard {
    pub const NAMES: [&'static str; 7] = [
        "cox_linear",
        "exp_quadratic",
        "exp_row1",
        "additive_row2",
        "log_row3",
        "aft_lognormal_row4",
        "aft_exponential_row5",
    ];

    /// Builds a named hazard; `beta` is used only by `cox_linear`.
    pub fn from_name(name: &str, beta: Option<Vec<f64>>) -> Result<Self> {
        Ok(match name {
            "cox_linear" => Self::CoxLinear {
                beta: beta.ok_or_else(|| CoxError::Scenario("cox_linear needs coefficients".into()))?,
            },
            "exp_quadratic" => Self::ExpQuadratic,
            "exp_row1" => Self::ExpRow1,
            "additive_row2" => Self::AdditiveRow2,
            "log_row3" => Self::LogRow3,
            "aft_lognormal_row4" => Self::AftLognormalRow4,
            "aft_exponential_row5" => Self::AftExponentialRow5,
            other => {
                return Err(CoxError::Scenario(format!(
                    "unknown hazard {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::CoxLinear { .. } => "cox_linear",
            Self::ExpQuadratic => "exp_quadratic",
            Self::ExpRow1 => "exp_row1",
            Self::AdditiveRow2 => "additive_row2",
            Self::LogRow3 => "log_row3",
            Self::AftLognormalRow4 => "aft_lognormal_row4",
            Self::AftExponentialRow5 => "aft_exponential_row5",
        }
    }

    /// Number of leading covariates the generator reads.
    pub fn required_dims(&self) -> usize {
        match self {
            Self::CoxLinear { beta } => beta.iter().rposition(|&b| b != 0.0).map_or(0, |k| k + 1),
            Self::ExpQuadratic => 1,
            _ => 3,
        }
    }

    /// Checks dimensions, and that the additive and log hazards stay
    /// positive on the box `[-bound, bound]^p`: their minimum there is
    /// `5 - 1.5 bound` before the link.
    pub fn validate(&self, p: usize, bound: f64) -> Result<()> {
        if let Self::CoxLinear { beta } = self {
            if beta.len() != p {
                return Err(CoxError::Scenario(format!("{} coefficients for p = {p}", beta.len())));
            }
            if beta.iter().any(|b| !b.is_finite()) {
                return Err(CoxError::Scenario("non-finite coefficient".into()));
            }
        }
        if self.required_dims() > p {
            return Err(CoxError::Scenario(format!("hazard {} needs p >= {}", self.name(), self.required_dims())));
        }
        if matches!(self, Self::AdditiveRow2 | Self::LogRow3) && 5.0 - 1.5 * bound <= 0.0 {
            return Err(CoxError::Scenario(format!(
                "hazard {} can be non-positive for truncation bound {bound}; need bound < 10/3",
                self.name()
            )));
        }
        Ok(())
    }

    /// The working-model parameter that coverage is scored against: the
    /// generating coefficients under correct specification, zero otherwise.
    pub fn coverage_truth(&self, p: usize) -> Array1<f64> {
        match self {
            Self::CoxLinear { beta } => Array1::from(beta.clone()),
            _ => Array1::zeros(p),
        }
    }

    /// One survival time for covariate row `x`.
    pub fn sample_time<R: Rng + ?Sized>(&self, x: ArrayView1<f64>, rng: &mut R) -> Result<f64> {
        let quad = || {
            let x1 = x[0];
            x1 * x1 + 0.5 * x[1] + x[2]
        };
        let from_hazard = |h: f64, rng: &mut R| -> Result<f64> {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CoxError::Scenario(format!("hazard {} evaluated to {h}", self.name())));
            }
            let e: f64 = Exp1.sample(rng);
            Ok(e / h)
        };
        match self {
            Self::CoxLinear { beta } => {
                let eta: f64 = beta.iter().zip(x.iter()).map(|(b, v)| b * v).sum();
                from_hazard(eta.exp(), rng)
            }
            Self::ExpQuadratic => from_hazard((x[0] * x[0]).exp(), rng),
            Self::ExpRow1 => from_hazard(quad().exp(), rng),
            Self::AdditiveRow2 => from_hazard(quad() + 5.0, rng),
            Self::LogRow3 => from_hazard((quad() + 6.0).ln(), rng),
            Self::AftLognormalRow4 => {
                let z: f64 = rng.sample(StandardNormal);
                Ok((-quad() + AFT_LOG_SD * z).exp())
            }
            Self::AftExponentialRow5 => {
                let e: f64 = Exp1.sample(rng);
                Ok((-quad()).exp() + e)
            }
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, x: ArrayView2<f64>, rng: &mut R) -> Result<Array1<f64>> {
        if x.ncols() < self.required_dims() {
            return Err(CoxError::DimensionMismatch(format!(
                "hazard {} needs {} columns, got {}",
                self.name(),
                self.required_dims(),
                x.ncols()
            )));
        }
        x.rows().into_iter().map(|row| self.sample_time(row, rng)).collect()
    }
}

/// `p` coefficients: the first `s0` are a fixed `U[0, 2]` realization drawn
/// from `coef_seed`, the rest zero.
pub fn active_coefficients(p: usize, s0: usize, coef_seed: u64) -> Result<Vec<f64>> {
    if s0 > p {
        return Err(CoxError::Scenario(format!("s0 = {s0} exceeds p = {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(coef_seed);
    let u = Uniform::new(0.0, 2.0);
    let mut beta: Vec<f64> = (0..s0).map(|_| u.sample(&mut rng)).collect();
    beta.resize(p, 0.0);
    Ok(beta)
}
