//! De-sparsified Lasso inference for high-dimensional Cox proportional
//! hazards models, valid when the proportional-hazards working model is
//! misspecified.
//!
//! The pipeline is
//!
//! 1. [`lasso::fit_lasso`] (or [`lasso::fit_cv`]) for `beta_hat`,
//! 2. [`nodewise::build_precision`] on the Hessian at `beta_hat` for `Theta`,
//! 3. [`inference::infer`] for the debiased `b_hat`, robust and model-based
//!    standard errors, Wald intervals and Holm-adjusted p-values.
//!
//! [`simulation`] reproduces the coverage and test-size experiments.
//!
//! ```
//! use hdcox::{inference, lasso, nodewise, partial_likelihood, SurvivalDataset};
//! use ndarray::array;
//!
//! # fn main() -> hdcox::Result<()> {
//! let x = array![[0.3, -1.0], [1.2, 0.4], [-0.7, 0.9], [0.1, -0.2], [2.0, 1.1], [-1.5, 0.0]];
//! let ds = SurvivalDataset::from_parts(&[2.1, 0.4, 3.3, 1.7, 0.2, 5.0], &[1, 1, 0, 1, 1, 1], x)?;
//! let fit = lasso::fit_lasso(&ds, 0.02, None, &lasso::LassoConfig::default())?;
//! let sigma = partial_likelihood::hessian(&ds, fit.beta_hat.view())?;
//! let prec = nodewise::build_precision(sigma.view(), array![0.05, 0.05].view())?;
//! let report = inference::infer(&ds, &fit, &prec, 0.95, inference::VarianceKind::Robust)?;
//! assert_eq!(report.p(), 2);
//! # Ok(())
//! # }
//! ```

pub mod error;
pub mod folds;
mod homotopy;
pub mod inference;
pub mod lasso;
pub mod nodewise;
pub mod partial_likelihood;
pub mod simulation;
pub mod survival;

pub use error::{CoxError, Result, Stage};
pub use inference::{InferenceReport, VarianceKind};
pub use lasso::{CvResult, LassoConfig, LassoFit};
pub use nodewise::PrecisionSurrogate;
pub use survival::{RiskMoments, SurvivalDataset};
