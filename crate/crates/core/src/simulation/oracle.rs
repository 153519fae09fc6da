//! Monte Carlo approximation of the pseudo-true parameter: the unpenalised
//! working-model fit on one very large simulated sample.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::covariance::DesignSampler;
use super::hazard::Hazard;
use crate::error::{CoxError, Result};
use crate::partial_likelihood::evaluate;
use crate::survival::SurvivalDataset;

pub const MAX_ORACLE_P: usize = 10;
pub const MIN_ORACLE_N: usize = 100_000;

const MAX_NEWTON: usize = 100;
const GRAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub beta: Array1<f64>,
    /// smallest eigenvalue of the Hessian at the solution
    pub min_eigenvalue: f64,
    pub iterations: usize,
    pub censoring_rate: f64,
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |a, b| m[[a, b]])
}

/// Damped Newton for `argmin l_n(beta)` with no penalty.
pub fn unpenalized_newton(ds: &SurvivalDataset) -> Result<(Array1<f64>, Array2<f64>, usize)> {
    let p = ds.p();
    let mut beta = Array1::<f64>::zeros(p);
    let mut ev = evaluate(ds, beta.view(), true)?;
    for it in 1..=MAX_NEWTON {
        let h = ev.hessian.take().expect("requested");
        let grad_norm = ev.gradient.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if grad_norm < GRAD_TOL {
            return Ok((beta, h, it - 1));
        }
        let chol = to_na(&h).cholesky().ok_or_else(|| {
            CoxError::NotPositiveDefinite("Hessian lost positive definiteness during Newton iterations".into())
        })?;
        let g = DVector::from_iterator(p, ev.gradient.iter().copied());
        let step = chol.solve(&g);
        let step = Array1::from_iter(step.iter().map(|s| -s));
        let mut t = 1.0;
        loop {
            let cand = &beta + &(&step * t);
            let cand_ev = evaluate(ds, cand.view(), true)?;
            if cand_ev.value <= ev.value + 1e-4 * t * ev.gradient.dot(&step) {
                beta = cand;
                ev = cand_ev;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                // no further decrease available: at the optimum up to rounding
                let h = evaluate(ds, beta.view(), true)?.hessian.expect("requested");
                return Ok((beta, h, it));
            }
        }
    }
    let violation = ev.gradient.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    Err(CoxError::NonConvergence { iterations: MAX_NEWTON, kkt_violation: violation, last_iterate: Box::new(beta) })
}

/// Simulates `n_large` rows with constant censoring at `censor_c` and solves
/// the empirical score equation of the working model.
pub fn pseudo_true_oracle(
    hazard: &Hazard,
    sampler: &DesignSampler,
    n_large: usize,
    censor_c: f64,
    seed: u64,
) -> Result<OracleResult> {
    let p = sampler.p();
    if p > MAX_ORACLE_P {
        return Err(CoxError::InvalidArgument(format!("oracle is for p <= {MAX_ORACLE_P}, got {p}")));
    }
    if n_large < MIN_ORACLE_N {
        return Err(CoxError::InvalidArgument(format!("oracle needs n >= {MIN_ORACLE_N}, got {n_large}")));
    }
    if !(censor_c > 0.0) {
        return Err(CoxError::InvalidArgument(format!("censoring constant must be positive, got {censor_c}")));
    }
    hazard.validate(p, sampler.bound())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sampler.sample(n_large, &mut rng)?;
    let t = hazard.generate(x.view(), &mut rng)?;
    let y = t.mapv(|t| t.min(censor_c));
    let status: Vec<bool> = t.iter().map(|&t| t <= censor_c).collect();
    let ds = SurvivalDataset::new(y, status, x)?;
    let (beta, h, iterations) = unpenalized_newton(&ds)?;
    let min_eigenvalue = to_na(&h).symmetric_eigenvalues().min();
    if !(min_eigenvalue > 0.0) {
        return Err(CoxError::NotPositiveDefinite(format!(
            "Hessian at the oracle solution has smallest eigenvalue {min_eigenvalue:.3e}"
        )));
    }
    Ok(OracleResult { beta, min_eigenvalue, iterations, censoring_rate: ds.censoring_rate() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::covariance::Truncation;
    use ndarray::array;

    #[test]
    fn newton_matches_one_dimensional_optimum() {
        // three events, x = (1, 0, 0): l(b) = -(1/3)[b - log(e^b + 2) - log 2]
        // minimiser solves 1 = e^b / (e^b + 2) + ... ; check score is zero
        let ds = SurvivalDataset::from_parts(&[1.0, 2.0, 3.0], &[1, 1, 1], array![[0.0], [1.0], [0.0]]).unwrap();
        let (beta, h, _) = unpenalized_newton(&ds).unwrap();
        let g = crate::partial_likelihood::gradient(&ds, beta.view()).unwrap();
        assert!(g[0].abs() < 1e-10);
        assert!(h[[0, 0]] > 0.0);
    }

    #[test]
    fn rejects_large_p_and_small_n() {
        let sampler = DesignSampler::new(Array2::<f64>::eye(11).view(), 3.0, Truncation::Clamp).unwrap();
        assert!(pseudo_true_oracle(&Hazard::ExpQuadratic, &sampler, 200_000, 1.0, 0).is_err());
        let sampler = DesignSampler::new(Array2::<f64>::eye(2).view(), 3.0, Truncation::Clamp).unwrap();
        assert!(pseudo_true_oracle(&Hazard::ExpQuadratic, &sampler, 1000, 1.0, 0).is_err());
    }
}
