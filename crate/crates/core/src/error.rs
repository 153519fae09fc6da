use ndarray::Array1;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoxError>;

#[derive(Debug, Error)]
pub enum CoxError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no events: at least one uncensored observation is required")]
    NoEvents,

    #[error("observed time at row {row} is not strictly positive ({value})")]
    NonPositiveTime { row: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("risk-set weights overflowed or vanished: {0}")]
    Overflow(String),

    #[error("linear predictor diverged (half-range {spread:.1} > 250); lambda is too small for this data")]
    DivergingPredictor { spread: f64 },

    #[error("solver did not converge after {iterations} iterations (KKT violation {kkt_violation:.3e})")]
    NonConvergence {
        iterations: usize,
        kkt_violation: f64,
        last_iterate: Box<Array1<f64>>,
    },

    #[error("could not form cross-validation folds with events in every training part after {attempts} attempts")]
    FoldAssignment { attempts: usize },

    #[error("tau^2 for coordinate {coordinate} is not positive ({value:.3e}); the Hessian is ill-conditioned or lambda_j is too small")]
    NonPositiveTau { coordinate: usize, value: f64 },

    #[error("relaxed-inverse certificate failed for row {row}: {violation:.3e} > {bound:.3e}")]
    Certificate { row: usize, violation: f64, bound: f64 },

    #[error("zero variance for coordinate {0}")]
    ZeroVariance(usize),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl CoxError {
    /// Coarse pipeline stage of the error, used for process exit codes.
    pub fn stage(&self) -> Stage {
        use CoxError::*;
        match self {
            DimensionMismatch(_) | NonFinite(_) | NoEvents | NonPositiveTime { .. } | Schema(_)
            | Csv(_) => Stage::Schema,
            Overflow(_) | DivergingPredictor { .. } | NonConvergence { .. } | FoldAssignment { .. } => {
                Stage::Solver
            }
            NonPositiveTau { .. } | Certificate { .. } | ZeroVariance(_) => Stage::Precision,
            Scenario(_) | Calibration(_) | NotPositiveDefinite(_) => Stage::Scenario,
            InvalidArgument(_) => Stage::Usage,
            Io(_) => Stage::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Usage,
    Schema,
    Solver,
    Precision,
    Scenario,
    Io,
}
