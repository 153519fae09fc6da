//! Replication runner: simulate, fit, debias and score confidence intervals.

use std::fmt;
use std::io::Write;

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::censoring::{calibrate_censoring, Calibration};
use super::scenario::{LambdaPolicy, NodewisePolicy, Scenario};
use crate::error::{CoxError, Result};
use crate::inference::{desparsify_at, model_variance_from, normal_quantile, robust_variance, two_sided_p};
use crate::lasso::{fit_cv, fit_lasso, CvConfig, LassoConfig};
use crate::nodewise::{build_precision, cv_nodewise, default_lambdas};
use crate::partial_likelihood::hessian;
use crate::survival::SurvivalDataset;

/// Nominal level of the test of `beta_01 = 0`.
pub const TEST_LEVEL: f64 = 0.05;

/// Reports with more failed replicates than this fraction are flagged invalid.
pub const MAX_FAILURE_FRACTION: f64 = 0.02;

/// Interval outcomes for one variance estimator in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalOutcome {
    pub covered: Vec<bool>,
    pub length: Vec<f64>,
    pub reject_first: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub censoring_rate: f64,
    pub lambda: f64,
    pub support_size: usize,
    pub b_hat: Vec<f64>,
    pub var_robust: Vec<f64>,
    pub var_model: Vec<f64>,
    pub robust: IntervalOutcome,
    pub model: IntervalOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub error: String,
}

/// Averages over replicates for one variance estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageStats {
    /// `None` when the truth has no non-zero coordinate
    pub avgcov_s0: Option<f64>,
    pub avglength_s0: Option<f64>,
    /// `None` when every coordinate is active
    pub avgcov_s0c: Option<f64>,
    pub avglength_s0c: Option<f64>,
    pub avgcov_all: f64,
    pub avglength_all: f64,
    pub per_coordinate_coverage: Vec<f64>,
    /// rejection rate of `beta_01 = 0`, reported when that null holds
    pub empirical_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub scenario: String,
    pub hazard: String,
    pub covariance: String,
    pub n: usize,
    pub p: usize,
    pub ci_level: f64,
    pub replication_count: usize,
    pub failure_count: usize,
    pub valid: bool,
    pub calibration: Calibration,
    pub mean_censoring_rate: f64,
    pub mean_lambda: f64,
    pub robust: CoverageStats,
    pub model: CoverageStats,
    /// mean of `sigma_hat_j^2 / sigma_tilde_j^2` per coordinate
    pub variance_ratio: Vec<f64>,
    pub failures: Vec<ReplicateFailure>,
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    sum: f64,
    comp: f64,
    count: usize,
}

impl Accumulator {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.sum + self.comp) / self.count as f64)
    }
}

/// Runs every replicate. Replicate `r` draws from stream `r` of a ChaCha8
/// generator seeded with the scenario seed, so results do not depend on the
/// thread count or schedule.
pub fn run_replications(scenario: &Scenario) -> Result<(CoverageReport, Vec<ReplicateOutcome>)> {
    let spec = &scenario.spec;
    let calibration =
        calibrate_censoring(&scenario.hazard, &scenario.sampler, spec.target_censoring, spec.pilot_n, spec.seed)?;
    let results: Vec<std::result::Result<ReplicateOutcome, ReplicateFailure>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            run_replicate(scenario, calibration.constant, r)
                .map_err(|e| ReplicateFailure { index: r, error: e.to_string() })
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(o) => outcomes.push(o),
            Err(f) => failures.push(f),
        }
    }
    if outcomes.is_empty() {
        let first = failures.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(CoxError::Scenario(format!("all {} replicates failed; first error: {first}", spec.replications)));
    }
    let report = aggregate(scenario, calibration, &outcomes, failures);
    Ok((report, outcomes))
}

/// Simulates one dataset for replicate `r` with censoring constant `c`.
pub fn simulate_dataset(scenario: &Scenario, c: f64, r: usize) -> Result<(SurvivalDataset, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.spec.seed);
    rng.set_stream(r as u64);
    let x = scenario.sampler.sample(scenario.n(), &mut rng)?;
    let t = scenario.hazard.generate(x.view(), &mut rng)?;
    let y = t.mapv(|t| t.min(c));
    let status: Vec<bool> = t.iter().map(|&t| t <= c).collect();
    Ok((SurvivalDataset::new(y, status, x)?, rng))
}

pub fn run_replicate(scenario: &Scenario, c: f64, r: usize) -> Result<ReplicateOutcome> {
    let spec = &scenario.spec;
    let (ds, mut rng) = simulate_dataset(scenario, c, r)?;
    let cv_seed: u64 = rng.gen();
    let nodewise_seed: u64 = rng.gen();
    let config = LassoConfig::default();
    let fit = match scenario.lambda {
        LambdaPolicy::Cv => {
            let cv = CvConfig { folds: spec.folds, seed: cv_seed, ..CvConfig::default() };
            fit_cv(&ds, &cv, &config)?.1
        }
        LambdaPolicy::Fixed(l) => fit_lasso(&ds, l, None, &config)?,
    };
    let beta = fit.beta_hat.view();
    let sigma = hessian(&ds, beta)?;
    let lambdas = match scenario.nodewise {
        NodewisePolicy::Cv => cv_nodewise(&ds, beta, spec.folds, nodewise_seed)?,
        NodewisePolicy::Rate(c) => default_lambdas(ds.n(), ds.p(), c),
        NodewisePolicy::Fixed(v) => Array1::from_elem(ds.p(), v),
    };
    let prec = build_precision(sigma.view(), lambdas.view())?;
    let b_hat = desparsify_at(&ds, beta, &prec)?;
    let var_robust = robust_variance(&ds, beta, &prec)?;
    let var_model = model_variance_from(sigma.view(), &prec)?;

    let truth = scenario.hazard.coverage_truth(ds.p());
    let z = normal_quantile(spec.ci_level)?;
    let score = |var: &Array1<f64>| interval_outcome(b_hat.view(), var.view(), truth.view(), ds.n(), z);
    Ok(ReplicateOutcome {
        index: r,
        censoring_rate: ds.censoring_rate(),
        lambda: fit.lambda,
        support_size: fit.support_size(),
        robust: score(&var_robust),
        model: score(&var_model),
        b_hat: b_hat.to_vec(),
        var_robust: var_robust.to_vec(),
        var_model: var_model.to_vec(),
    })
}

fn interval_outcome(
    b_hat: ArrayView1<f64>,
    var: ArrayView1<f64>,
    truth: ArrayView1<f64>,
    n: usize,
    z: f64,
) -> IntervalOutcome {
    let root_n = (n as f64).sqrt();
    let half: Vec<f64> = var.iter().map(|v| z * v.sqrt() / root_n).collect();
    let covered = b_hat.iter().zip(truth.iter()).zip(half.iter()).map(|((b, t), h)| (b - t).abs() <= *h).collect();
    let z_first = root_n * b_hat[0] / var[0].sqrt();
    IntervalOutcome {
        covered,
        length: half.iter().map(|h| 2.0 * h).collect(),
        reject_first: two_sided_p(z_first) < TEST_LEVEL,
    }
}

fn stats(outcomes: &[&IntervalOutcome], truth: ArrayView1<f64>) -> CoverageStats {
    let p = truth.len();
    let mut per_coord = vec![Accumulator::default(); p];
    let (mut cov_s0, mut len_s0, mut cov_s0c, mut len_s0c) =
        (Accumulator::default(), Accumulator::default(), Accumulator::default(), Accumulator::default());
    let (mut cov_all, mut len_all, mut size) = (Accumulator::default(), Accumulator::default(), Accumulator::default());
    for o in outcomes {
        for j in 0..p {
            let c = if o.covered[j] { 1.0 } else { 0.0 };
            per_coord[j].add(c);
            cov_all.add(c);
            len_all.add(o.length[j]);
            if truth[j] != 0.0 {
                cov_s0.add(c);
                len_s0.add(o.length[j]);
            } else {
                cov_s0c.add(c);
                len_s0c.add(o.length[j]);
            }
        }
        size.add(if o.reject_first { 1.0 } else { 0.0 });
    }
    CoverageStats {
        avgcov_s0: cov_s0.mean(),
        avglength_s0: len_s0.mean(),
        avgcov_s0c: cov_s0c.mean(),
        avglength_s0c: len_s0c.mean(),
        avgcov_all: cov_all.mean().unwrap_or(f64::NAN),
        avglength_all: len_all.mean().unwrap_or(f64::NAN),
        per_coordinate_coverage: per_coord.iter().map(|a| a.mean().unwrap_or(f64::NAN)).collect(),
        empirical_size: if truth[0] == 0.0 { size.mean() } else { None },
    }
}

fn aggregate(
    scenario: &Scenario,
    calibration: Calibration,
    outcomes: &[ReplicateOutcome],
    mut failures: Vec<ReplicateFailure>,
) -> CoverageReport {
    let spec = &scenario.spec;
    let p = spec.p;
    let mut sorted: Vec<&ReplicateOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.index);
    failures.sort_by_key(|f| f.index);
    let truth = scenario.hazard.coverage_truth(p);
    let robust: Vec<&IntervalOutcome> = sorted.iter().map(|o| &o.robust).collect();
    let model: Vec<&IntervalOutcome> = sorted.iter().map(|o| &o.model).collect();
    let mut ratio = vec![Accumulator::default(); p];
    let (mut cens, mut lam) = (Accumulator::default(), Accumulator::default());
    for o in &sorted {
        for j in 0..p {
            ratio[j].add(o.var_robust[j] / o.var_model[j]);
        }
        cens.add(o.censoring_rate);
        lam.add(o.lambda);
    }
    let failure_count = failures.len();
    CoverageReport {
        scenario: spec.name.clone(),
        hazard: scenario.hazard.name().into(),
        covariance: scenario.covariance.name().into(),
        n: spec.n,
        p,
        ci_level: spec.ci_level,
        replication_count: spec.replications,
        failure_count,
        valid: (failure_count as f64) <= MAX_FAILURE_FRACTION * spec.replications as f64,
        calibration,
        mean_censoring_rate: cens.mean().unwrap_or(f64::NAN),
        mean_lambda: lam.mean().unwrap_or(f64::NAN),
        robust: stats(&robust, truth.view()),
        model: stats(&model, truth.view()),
        variance_ratio: ratio.iter().map(|a| a.mean().unwrap_or(f64::NAN)).collect(),
        failures,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl CoverageReport {
    pub const CSV_HEADER: [&'static str; 25] = [
        "scenario",
        "hazard",
        "covariance",
        "n",
        "p",
        "ci_level",
        "replications",
        "failures",
        "valid",
        "censoring_constant",
        "mean_censoring_rate",
        "robust_avgcov_s0",
        "robust_avglength_s0",
        "robust_avgcov_s0c",
        "robust_avglength_s0c",
        "robust_avgcov_all",
        "robust_avglength_all",
        "robust_size",
        "model_avgcov_s0",
        "model_avglength_s0",
        "model_avgcov_s0c",
        "model_avglength_s0c",
        "model_avgcov_all",
        "model_avglength_all",
        "model_size",
    ];

    fn csv_record(&self) -> Vec<String> {
        let mut rec = vec![
            self.scenario.clone(),
            self.hazard.clone(),
            self.covariance.clone(),
            self.n.to_string(),
            self.p.to_string(),
            self.ci_level.to_string(),
            self.replication_count.to_string(),
            self.failure_count.to_string(),
            self.valid.to_string(),
            format!("{:.6}", self.calibration.constant),
            format!("{:.6}", self.mean_censoring_rate),
        ];
        for s in [&self.robust, &self.model] {
            rec.extend([
                opt(s.avgcov_s0),
                opt(s.avglength_s0),
                opt(s.avgcov_s0c),
                opt(s.avglength_s0c),
                format!("{:.6}", s.avgcov_all),
                format!("{:.6}", s.avglength_all),
                opt(s.empirical_size),
            ]);
        }
        rec
    }

    /// Header plus one summary row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        w.write_record(self.csv_record())?;
        w.flush()?;
        Ok(())
    }
}

/// One JSON object per replicate, in index order.
pub fn write_replicates_jsonl<W: Write>(outcomes: &[ReplicateOutcome], mut writer: W) -> Result<()> {
    let mut sorted: Vec<&ReplicateOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.index);
    for o in sorted {
        let line = serde_json::to_string(o).map_err(|e| CoxError::Io(e.into()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = if self.scenario.is_empty() { "scenario" } else { &self.scenario };
        writeln!(f, "{name}: hazard {}, covariance {}, n = {}, p = {}", self.hazard, self.covariance, self.n, self.p)?;
        writeln!(
            f,
            "replicates {} ({} failed{}), censoring constant {:.4}, mean censoring rate {:.3}, mean lambda {:.4}",
            self.replication_count,
            self.failure_count,
            if self.valid { "" } else { ", INVALID" },
            self.calibration.constant,
            self.mean_censoring_rate,
            self.mean_lambda
        )?;
        let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        writeln!(f, "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}", "variance", "cov S0", "len S0", "cov S0c", "len S0c", "cov all", "len all", "size")?;
        for (label, s) in [("robust", &self.robust), ("model", &self.model)] {
            writeln!(
                f,
                "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10.3} {:>10.3} {:>8}",
                label,
                show(s.avgcov_s0),
                show(s.avglength_s0),
                show(s.avgcov_s0c),
                show(s.avglength_s0c),
                s.avgcov_all,
                s.avglength_all,
                show(s.empirical_size)
            )?;
        }
        Ok(())
    }
}
