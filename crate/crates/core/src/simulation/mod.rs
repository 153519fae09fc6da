//! Simulation bench: designs, survival generators, censoring calibration,
//! the replication runner and the pseudo-true-parameter oracle.

pub mod censoring;
pub mod covariance;
pub mod hazard;
pub mod oracle;
pub mod runner;
pub mod scenario;

pub use censoring::{calibrate_censoring, calibrate_constant, Calibration};
pub use covariance::{build_covariance, sample_design, CovarianceKind, DesignSampler, Truncation};
pub use hazard::{active_coefficients, Hazard};
pub use oracle::{pseudo_true_oracle, OracleResult};
pub use runner::{run_replications, CoverageReport, CoverageStats, ReplicateOutcome};
pub use scenario::{LambdaPolicy, NodewisePolicy, Scenario, ScenarioSpec};
