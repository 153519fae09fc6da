//! Scenario configuration: a flat `key = value` TOML file, validated into a
//! ready-to-run [`Scenario`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::censoring::DEFAULT_PILOT_N;
use super::covariance::{build_covariance, CovarianceKind, DesignSampler, Truncation, DEFAULT_RHO};
use super::hazard::{active_coefficients, Hazard, DEFAULT_COEF_SEED};
use crate::error::{CoxError, Result};
use crate::nodewise::DEFAULT_RATE_CONSTANT;

/// Either `"cv"` or a fixed positive value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Fixed(f64),
    Named(PolicyName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Cv,
    Rate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    Cv,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodewisePolicy {
    Cv,
    /// `c sqrt(log p / n)`
    Rate(f64),
    Fixed(f64),
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}
fn default_truncation() -> f64 {
    3.0
}
fn default_truncation_mode() -> String {
    "clamp".into()
}
fn default_coef_seed() -> u64 {
    DEFAULT_COEF_SEED
}
fn default_censoring() -> f64 {
    0.15
}
fn default_level() -> f64 {
    0.95
}
fn default_cv() -> LambdaSetting {
    LambdaSetting::Named(PolicyName::Cv)
}
fn default_nodewise_c() -> f64 {
    DEFAULT_RATE_CONSTANT
}
fn default_folds() -> usize {
    10
}
fn default_pilot_n() -> usize {
    DEFAULT_PILOT_N
}
fn default_s0() -> usize {
    3
}

/// Raw scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub p: usize,
    /// `independent`, `equal_corr`, `block_i` or `block_ii`
    pub covariance: String,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    /// `clamp` or `reject`
    #[serde(default = "default_truncation_mode")]
    pub truncation_mode: String,
    pub hazard: String,
    /// active-set size for `cox_linear`
    #[serde(default = "default_s0")]
    pub s0: usize,
    #[serde(default = "default_coef_seed")]
    pub coef_seed: u64,
    /// explicit `cox_linear` coefficients, overriding `s0`/`coef_seed`
    #[serde(default)]
    pub coefficients: Option<Vec<f64>>,
    #[serde(default = "default_censoring")]
    pub target_censoring: f64,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    /// `"cv"` or a number
    #[serde(default = "default_cv")]
    pub lambda: LambdaSetting,
    /// `"cv"`, `"rate"` or a number
    #[serde(default = "default_cv")]
    pub nodewise_lambda: LambdaSetting,
    #[serde(default = "default_nodewise_c")]
    pub nodewise_c: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_pilot_n")]
    pub pilot_n: usize,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoxError::Scenario(e.message().to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| CoxError::Scenario(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario specs always serialise")
    }

    pub fn validate(&self) -> Result<Scenario> {
        let bad = |msg: String| Err(CoxError::Scenario(msg));
        if self.n < 20 {
            return bad(format!("n must be at least 20, got {}", self.n));
        }
        if self.p < 1 {
            return bad("p must be at least 1".into());
        }
        if !(self.target_censoring > 0.0 && self.target_censoring < 1.0) {
            return bad(format!("target_censoring must lie in (0, 1), got {}", self.target_censoring));
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return bad(format!("ci_level must lie in (0, 1), got {}", self.ci_level));
        }
        if self.folds < 2 || self.folds > self.n {
            return bad(format!("folds must lie in [2, n], got {}", self.folds));
        }
        let covariance = CovarianceKind::from_name(&self.covariance, self.rho)?;
        let sigma = build_covariance(covariance, self.p)?;
        let mode = Truncation::from_name(&self.truncation_mode)?;
        let sampler = DesignSampler::new(sigma.view(), self.truncation, mode)?;

        let beta = if self.hazard == "cox_linear" {
            Some(match &self.coefficients {
                Some(b) => b.clone(),
                None => active_coefficients(self.p, self.s0, self.coef_seed)?,
            })
        } else {
            if self.coefficients.is_some() {
                return bad(format!("coefficients are only used by cox_linear, not {}", self.hazard));
            }
            None
        };
        let hazard = Hazard::from_name(&self.hazard, beta)?;
        hazard.validate(self.p, self.truncation)?;

        let lambda = match self.lambda {
            LambdaSetting::Named(PolicyName::Cv) => LambdaPolicy::Cv,
            LambdaSetting::Fixed(v) if v > 0.0 && v.is_finite() => LambdaPolicy::Fixed(v),
            other => return bad(format!("lambda must be \"cv\" or a positive number, got {other:?}")),
        };
        let nodewise = match self.nodewise_lambda {
            LambdaSetting::Named(PolicyName::Cv) => NodewisePolicy::Cv,
            LambdaSetting::Named(PolicyName::Rate) if self.nodewise_c > 0.0 => NodewisePolicy::Rate(self.nodewise_c),
            LambdaSetting::Fixed(v) if v > 0.0 && v.is_finite() => NodewisePolicy::Fixed(v),
            other => {
                return bad(format!("nodewise_lambda must be \"cv\", \"rate\" or a positive number, got {other:?}"))
            }
        };
        Ok(Scenario {
            spec: self.clone(),
            covariance,
            sampler,
            hazard,
            lambda,
            nodewise,
        })
    }
}

/// A validated scenario with its covariance factored and coefficients drawn.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub covariance: CovarianceKind,
    pub sampler: DesignSampler,
    pub hazard: Hazard,
    pub lambda: LambdaPolicy,
    pub nodewise: NodewisePolicy,
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Self> {
        ScenarioSpec::from_file(path)?.validate()
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn p(&self) -> usize {
        self.spec.p
    }
}
