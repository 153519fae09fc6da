//! Constant censoring time calibrated to a target censoring rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::covariance::DesignSampler;
use super::hazard::Hazard;
use crate::error::{CoxError, Result};

pub const DEFAULT_PILOT_N: usize = 200_000;

/// Allowed gap between the target and the rate achieved on the pilot itself,
/// in units of one pilot observation; larger gaps mean an atom in `T`.
const PILOT_SLACK_OBS: f64 = 10.0;
/// Allowed gap on the independent holdout pilot.
const HOLDOUT_SLACK: f64 = 0.01;

/// RNG streams reserved for the pilots; replicate streams count up from 0.
pub const PILOT_STREAM: u64 = u64::MAX;
pub const HOLDOUT_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub constant: f64,
    pub target: f64,
    pub pilot_rate: f64,
    pub holdout_rate: f64,
}

/// Fraction of `sorted` strictly above `c`.
fn survival(sorted: &[f64], c: f64) -> f64 {
    (sorted.len() - sorted.partition_point(|&t| t <= c)) as f64 / sorted.len() as f64
}

/// Bisection for `c` with empirical `P(T > c) = target`, over `[0, max T]`.
pub fn calibrate_constant(times: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(CoxError::Calibration(format!("target rate must lie in (0, 1), got {target}")));
    }
    if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(CoxError::Calibration("pilot times must be finite and non-negative".into()));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = (0.0, *sorted.last().expect("non-empty"));
    if survival(&sorted, lo) < target {
        return Err(CoxError::Calibration(format!(
            "target {target} unreachable: only {:.4} of pilot times are positive",
            survival(&sorted, lo)
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if survival(&sorted, mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let achieved = survival(&sorted, lo);
    if (achieved - target).abs() > PILOT_SLACK_OBS / sorted.len() as f64 {
        return Err(CoxError::Calibration(format!(
            "target {target} not attainable: empirical survival jumps from {achieved:.4} to {:.4} at c = {lo:.6}",
            survival(&sorted, hi)
        )));
    }
    Ok(lo)
}

fn pilot_times(hazard: &Hazard, sampler: &DesignSampler, pilot_n: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let x = sampler.sample_leading(pilot_n, hazard.required_dims().max(1), &mut rng)?;
    Ok(hazard.generate(x.view(), &mut rng)?.to_vec())
}

/// Calibrates on one pilot sample and checks the rate on an independent one.
pub fn calibrate_censoring(
    hazard: &Hazard,
    sampler: &DesignSampler,
    target: f64,
    pilot_n: usize,
    seed: u64,
) -> Result<Calibration> {
    if pilot_n < 100 {
        return Err(CoxError::Calibration(format!("pilot_n = {pilot_n} is too small")));
    }
    let pilot = pilot_times(hazard, sampler, pilot_n, seed, PILOT_STREAM)?;
    let constant = calibrate_constant(&pilot, target)?;
    let pilot_rate = pilot.iter().filter(|&&t| t > constant).count() as f64 / pilot_n as f64;
    let holdout = pilot_times(hazard, sampler, pilot_n, seed, HOLDOUT_STREAM)?;
    let holdout_rate = holdout.iter().filter(|&&t| t > constant).count() as f64 / pilot_n as f64;
    if (holdout_rate - target).abs() > HOLDOUT_SLACK {
        return Err(CoxError::Calibration(format!(
            "holdout censoring rate {holdout_rate:.4} misses target {target} by more than {HOLDOUT_SLACK}"
        )));
    }
    Ok(Calibration { constant, target, pilot_rate, holdout_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::covariance::Truncation;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::Exp1;

    fn exp_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect()
    }

    #[test]
    fn exponential_quantiles() {
        let t = exp_sample(200_000, 9);
        let c30 = calibrate_constant(&t, 0.30).unwrap();
        assert!((c30 - 1.20397).abs() < 0.02, "{c30}");
        let c15 = calibrate_constant(&t, 0.15).unwrap();
        assert!((c15 - 1.8971).abs() < 0.02, "{c15}");
    }

    #[test]
    fn atom_makes_target_unreachable() {
        // T = max(E, 1) puts mass 0.63 on 1: P(T > c) jumps from 1 to 0.37
        let t: Vec<f64> = exp_sample(50_000, 1).into_iter().map(|e| e.max(1.0)).collect();
        assert!(matches!(calibrate_constant(&t, 0.999), Err(CoxError::Calibration(_))));
        assert!(matches!(calibrate_constant(&t, 1.0), Err(CoxError::Calibration(_))));
    }

    #[test]
    fn end_to_end_with_holdout() {
        let sigma = Array2::<f64>::eye(2);
        let sampler = DesignSampler::new(sigma.view(), 3.0, Truncation::Clamp).unwrap();
        let hazard = Hazard::CoxLinear { beta: vec![0.0, 0.0] };
        let cal = calibrate_censoring(&hazard, &sampler, 0.30, 50_000, 1).unwrap();
        assert!((cal.constant - 1.20397).abs() < 0.03);
        assert!((cal.holdout_rate - 0.30).abs() <= 0.01);
    }
}
