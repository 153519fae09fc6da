//! Lasso-penalised Cox regression, `argmin l_n(beta) + 2 lambda ||beta||_1`.
//!
//! The solver is a proximal Newton method: at each outer step the partial
//! likelihood is replaced by its second-order expansion, the penalised
//! quadratic is minimised by cyclic coordinate descent, and the step is
//! accepted with Armijo backtracking on the true objective. The quadratic is
//! never formed as a `p x p` matrix; coordinate updates read Hessian-vector
//! entries through the risk-set structure in `O(n)` each.
//!
//! Note the factor of two: `lambda` here is half the multiplier other
//! toolkits put in front of `||beta||_1`.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CoxError, Result};
use crate::folds::{assign_folds, split};
use crate::partial_likelihood::{gradient_from, log_partial_likelihood_sum, value_from};
use crate::survival::{RiskMoments, SurvivalDataset};

const MAX_PREDICTOR_SPREAD: f64 = 250.0;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct LassoConfig {
    pub max_outer: usize,
    /// relative objective change for outer convergence
    pub rel_tol: f64,
    /// largest coordinate move for inner convergence
    pub inner_tol: f64,
    pub max_inner_sweeps: usize,
    pub kkt_tol: f64,
    /// fit on unit-variance columns and map back
    pub standardize: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            max_outer: 1000,
            rel_tol: 1e-8,
            inner_tol: 1e-10,
            max_inner_sweeps: 10_000,
            kkt_tol: 1e-6,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LassoFit {
    pub beta_hat: Array1<f64>,
    pub lambda: f64,
    pub n_iterations: usize,
    pub objective_trace: Vec<f64>,
    pub kkt_violation: f64,
}

impl LassoFit {
    pub fn support_size(&self) -> usize {
        self.beta_hat.iter().filter(|b| **b != 0.0).count()
    }
}

/// Largest KKT residual of `l_n + 2 lambda ||.||_1` at `beta` given its gradient.
pub fn kkt_violation(grad: ArrayView1<f64>, beta: ArrayView1<f64>, lambda: f64) -> f64 {
    grad.iter()
        .zip(beta.iter())
        .map(|(&g, &b)| {
            if b != 0.0 {
                (g + 2.0 * lambda * b.signum()).abs()
            } else {
                (g.abs() - 2.0 * lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub fn penalized_objective(value: f64, beta: ArrayView1<f64>, lambda: f64) -> f64 {
    value + 2.0 * lambda * l1(beta)
}

fn l1(beta: ArrayView1<f64>) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Smallest `lambda` with an all-zero solution: `max_j |grad l_n(0)_j| / 2`.
pub fn lambda_max(ds: &SurvivalDataset) -> Result<f64> {
    let m = RiskMoments::new(ds, Array1::zeros(ds.p()).view())?;
    Ok(gradient_from(&m).iter().fold(0.0f64, |a, g| a.max(g.abs())) / 2.0)
}

/// `n_lambda` log-spaced values from `lambda_max` down to `min_ratio * lambda_max`.
pub fn default_grid(ds: &SurvivalDataset, n_lambda: usize, min_ratio: f64) -> Result<Vec<f64>> {
    let top = lambda_max(ds)?;
    if top <= 0.0 {
        return Err(CoxError::InvalidArgument("score at zero vanishes; no penalty grid".into()));
    }
    Ok(log_grid(top, min_ratio, n_lambda))
}

pub(crate) fn log_grid(top: f64, min_ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![top];
    }
    let step = min_ratio.ln() / (len - 1) as f64;
    (0..len).map(|i| if i == 0 { top } else { top * (step * i as f64).exp() }).collect()
}

pub fn fit_lasso(
    ds: &SurvivalDataset,
    lambda: f64,
    warm_start: Option<ArrayView1<f64>>,
    config: &LassoConfig,
) -> Result<LassoFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CoxError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if let Some(w) = warm_start {
        if w.len() != ds.p() {
            return Err(CoxError::DimensionMismatch("warm start length differs from p".into()));
        }
    }
    if !config.standardize {
        let start = warm_start.map(|w| w.to_owned()).unwrap_or_else(|| Array1::zeros(ds.p()));
        return proximal_newton(ds, lambda, start, config);
    }
    let scale = column_scale(ds);
    let scaled = ds.with_scaled_columns(scale.view())?;
    let start = warm_start.map(|w| &w / &scale).unwrap_or_else(|| Array1::zeros(ds.p()));
    let mut fit = proximal_newton(&scaled, lambda, start, config)?;
    fit.beta_hat *= &scale;
    Ok(fit)
}

/// `1 / sd` per column, 1 for constant columns.
fn column_scale(ds: &SurvivalDataset) -> Array1<f64> {
    let x = ds.design();
    let n = ds.n() as f64;
    x.columns()
        .into_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect()
}

fn check_spread(m: &RiskMoments) -> Result<()> {
    let (lo, hi) = m.eta.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let spread = 0.5 * (hi - lo);
    if spread > MAX_PREDICTOR_SPREAD {
        return Err(CoxError::DivergingPredictor { spread });
    }
    Ok(())
}

fn proximal_newton(ds: &SurvivalDataset, lambda: f64, mut beta: Array1<f64>, config: &LassoConfig) -> Result<LassoFit> {
    let mut m = RiskMoments::new(ds, beta.view())?;
    check_spread(&m)?;
    let mut obj = penalized_objective(value_from(&m), beta.view(), lambda);
    let mut grad = gradient_from(&m);
    let mut trace = vec![obj];
    let mut kkt = kkt_violation(grad.view(), beta.view(), lambda);
    let mut iterations = 0;

    let done = |kkt: f64, rel: f64| kkt <= 1e-2 * config.kkt_tol || (kkt <= config.kkt_tol && rel < config.rel_tol);

    if done(kkt, f64::INFINITY) {
        return Ok(LassoFit { beta_hat: beta, lambda, n_iterations: 0, objective_trace: trace, kkt_violation: kkt });
    }

    while iterations < config.max_outer {
        iterations += 1;
        let model = QuadraticModel::new(&m);
        let target = model.minimize(grad.view(), beta.view(), lambda, config);
        let step = &target - &beta;
        let decrease = grad.dot(&step) + 2.0 * lambda * (l1(target.view()) - l1(beta.view()));
        if !(decrease < 0.0) {
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = &beta + &(&step * t);
            if let Ok(mc) = RiskMoments::new(ds, cand.view()) {
                let cand_obj = penalized_objective(value_from(&mc), cand.view(), lambda);
                if cand_obj <= obj + ARMIJO * t * decrease {
                    accepted = Some((cand, mc, cand_obj));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, mc, cand_obj)) = accepted else {
            break;
        };
        check_spread(&mc)?;
        let rel = (obj - cand_obj).abs() / cand_obj.abs().max(1.0);
        beta = cand;
        m = mc;
        obj = cand_obj;
        grad = gradient_from(&m);
        trace.push(obj);
        kkt = kkt_violation(grad.view(), beta.view(), lambda);
        if done(kkt, rel) {
            return Ok(LassoFit { beta_hat: beta, lambda, n_iterations: iterations, objective_trace: trace, kkt_violation: kkt });
        }
    }

    if kkt <= config.kkt_tol {
        Ok(LassoFit { beta_hat: beta, lambda, n_iterations: iterations, objective_trace: trace, kkt_violation: kkt })
    } else {
        Err(CoxError::NonConvergence { iterations, kkt_violation: kkt, last_iterate: Box::new(beta) })
    }
}

/// Second-order model of `l_n` at the moments' `beta`, in the centred and
/// time-sorted coordinates of the dataset.
struct QuadraticModel<'m, 'a> {
    m: &'m RiskMoments<'a>,
    /// `w_j * sum_{i: j in R_i} 1/S0_i`, sorted order
    a: Array1<f64>,
    /// risk-set means, one row per covariate
    mean_t: Array2<f64>,
    diag: Array1<f64>,
}

impl<'m, 'a> QuadraticModel<'m, 'a> {
    fn new(m: &'m RiskMoments<'a>) -> Self {
        let ds = m.dataset();
        let n = ds.n() as f64;
        let a = &m.weights * &m.inverse_s0_cumulative();
        let mean_t = m.mean.t().as_standard_layout().into_owned();
        let xt = ds.centered_t();
        let diag = (0..ds.p())
            .map(|k| {
                let xk = xt.row(k);
                let mk = mean_t.row(k);
                let first: f64 = xk.iter().zip(a.iter()).map(|(x, a)| a * x * x).sum();
                ((first - mk.dot(&mk)) / n).max(0.0)
            })
            .collect();
        Self { m, a, mean_t, diag }
    }

    /// Minimises `g'(z - beta) + (z - beta)' H (z - beta) / 2 + 2 lambda ||z||_1`
    /// over `z` by cyclic coordinate descent with an active-set inner loop.
    fn minimize(&self, grad: ArrayView1<f64>, beta: ArrayView1<f64>, lambda: f64, config: &LassoConfig) -> Array1<f64> {
        let ds = self.m.dataset();
        let xt = ds.centered_t();
        let n = ds.n() as f64;
        let p = ds.p();
        let pen = 2.0 * lambda;
        let mut z = beta.to_owned();
        // u = X d, q = M d for d = z - beta
        let mut u = Array1::<f64>::zeros(ds.n());
        let mut q = Array1::<f64>::zeros(self.m.len());

        let update = |k: usize, z: &mut Array1<f64>, u: &mut Array1<f64>, q: &mut Array1<f64>| -> f64 {
            let h = self.diag[k];
            if h <= 1e-300 {
                return 0.0;
            }
            let xk = xt.row(k);
            let mk = self.mean_t.row(k);
            let hd: f64 = xk.iter().zip(self.a.iter()).zip(u.iter()).map(|((x, a), u)| x * a * u).sum::<f64>()
                - mk.dot(q);
            let gk = grad[k] + hd / n;
            let old = z[k];
            let raw = h * old - gk;
            let new = raw.signum() * (raw.abs() - pen).max(0.0) / h;
            let delta = new - old;
            if delta != 0.0 {
                z[k] = new;
                u.scaled_add(delta, &xk);
                q.scaled_add(delta, &mk);
            }
            delta.abs() * h.sqrt().max(1.0)
        };

        let mut sweeps = 0;
        loop {
            let mut max_move = 0.0f64;
            for k in 0..p {
                max_move = max_move.max(update(k, &mut z, &mut u, &mut q));
            }
            sweeps += 1;
            if max_move < config.inner_tol || sweeps >= config.max_inner_sweeps {
                break;
            }
            loop {
                let mut max_move = 0.0f64;
                for k in 0..p {
                    if z[k] != 0.0 {
                        max_move = max_move.max(update(k, &mut z, &mut u, &mut q));
                    }
                }
                sweeps += 1;
                if max_move < config.inner_tol || sweeps >= config.max_inner_sweeps {
                    break;
                }
            }
        }
        z
    }
}

/// Warm-started fits along a non-increasing grid.
pub fn regularization_path(ds: &SurvivalDataset, grid: &[f64], config: &LassoConfig) -> Result<Vec<LassoFit>> {
    check_grid(grid)?;
    let (fits, err) = path_until_failure(ds, grid, config, false);
    match err {
        Some(e) => Err(e),
        None => Ok(fits),
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(CoxError::InvalidArgument("empty lambda grid".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(CoxError::InvalidArgument("lambda grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(CoxError::InvalidArgument("lambda grid must be non-increasing".into()));
    }
    Ok(())
}

/// Fits along the grid, stopping at the first failure and, if `saturate`,
/// after the first fit whose support reaches the number of events.
fn path_until_failure(
    ds: &SurvivalDataset,
    grid: &[f64],
    config: &LassoConfig,
    saturate: bool,
) -> (Vec<LassoFit>, Option<CoxError>) {
    let mut fits: Vec<LassoFit> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let warm = fits.last().map(|f| f.beta_hat.view());
        match fit_lasso(ds, lambda, warm, config) {
            Ok(f) => {
                let full = f.support_size() >= ds.n_events();
                fits.push(f);
                if saturate && full {
                    break;
                }
            }
            Err(e) => return (fits, Some(e)),
        }
    }
    (fits, None)
}

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub grid: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub min_ratio: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 10, seed: 0, grid: None, n_lambda: 100, min_ratio: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    /// descending; truncated where any fold's path stopped converging or
    /// saturated (support as large as the fold's event count)
    pub lambda_grid: Vec<f64>,
    pub cv_deviance: Vec<f64>,
    pub lambda_selected: f64,
    pub fold_assignment: Vec<usize>,
}

impl CvResult {
    pub fn selected_index(&self) -> usize {
        self.lambda_grid.iter().position(|&l| l == self.lambda_selected).expect("selected lambda is on the grid")
    }
}

/// K-fold cross-validation of `lambda` with the cross-validated partial
/// likelihood deviance `-2 sum_k [pl(beta_{-k}) - pl_{-k}(beta_{-k})]`,
/// full-data minus training-data log partial likelihood at the training fit.
/// Each fold path stops once its support reaches the fold's event count,
/// beyond which the fit interpolates; the grid is cut to the shortest path.
pub fn cross_validate(ds: &SurvivalDataset, cv: &CvConfig, config: &LassoConfig) -> Result<CvResult> {
    let grid = match &cv.grid {
        Some(g) => {
            check_grid(g)?;
            g.clone()
        }
        None => default_grid(ds, cv.n_lambda, cv.min_ratio)?,
    };
    let labels = assign_folds(ds.status(), cv.folds, cv.seed)?;

    let per_fold: Vec<Result<Vec<f64>>> = (0..cv.folds)
        .into_par_iter()
        .map(|k| {
            let (train_rows, _) = split(&labels, k);
            let train = ds.subset(&train_rows)?;
            let (fits, _) = path_until_failure(&train, &grid, config, true);
            fits.iter()
                .map(|f| {
                    let full = log_partial_likelihood_sum(ds, f.beta_hat.view())?;
                    let part = log_partial_likelihood_sum(&train, f.beta_hat.view())?;
                    Ok(-2.0 * (full - part))
                })
                .collect()
        })
        .collect();
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;

    let usable = per_fold.iter().map(Vec::len).min().unwrap_or(0);
    if usable == 0 {
        return Err(CoxError::NonConvergence {
            iterations: 0,
            kkt_violation: f64::NAN,
            last_iterate: Box::new(Array1::zeros(ds.p())),
        });
    }
    let lambda_grid = grid[..usable].to_vec();
    let cv_deviance: Vec<f64> = (0..usable).map(|i| per_fold.iter().map(|d| d[i]).sum()).collect();
    let best = cv_deviance
        .iter()
        .enumerate()
        .fold(0, |best, (i, &d)| if d < cv_deviance[best] { i } else { best });
    Ok(CvResult { lambda_selected: lambda_grid[best], lambda_grid, cv_deviance, fold_assignment: labels })
}

/// Cross-validates, then refits on the full data along the grid up to the
/// selected value.
pub fn fit_cv(ds: &SurvivalDataset, cv: &CvConfig, config: &LassoConfig) -> Result<(CvResult, LassoFit)> {
    let res = cross_validate(ds, cv, config)?;
    let upto = res.selected_index() + 1;
    let mut fits = regularization_path(ds, &res.lambda_grid[..upto], config)?;
    let fit = fits.pop().expect("non-empty path");
    Ok((res, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_obs() -> SurvivalDataset {
        SurvivalDataset::from_parts(&[1.0, 2.0], &[1, 1], array![[1.0], [0.0]]).unwrap()
    }

    #[test]
    fn large_lambda_gives_zero() {
        let ds = two_obs();
        for lambda in [0.125, 0.2, 3.0] {
            let fit = fit_lasso(&ds, lambda, None, &LassoConfig::default()).unwrap();
            assert_eq!(fit.beta_hat[0], 0.0);
            assert_eq!(fit.n_iterations, 0);
        }
        assert!((lambda_max(&ds).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let ds = two_obs();
        assert!(matches!(fit_lasso(&ds, 0.0, None, &LassoConfig::default()), Err(CoxError::InvalidArgument(_))));
        assert!(matches!(fit_lasso(&ds, -1.0, None, &LassoConfig::default()), Err(CoxError::InvalidArgument(_))));
    }

    #[test]
    fn separable_data_gives_large_but_certified_fit() {
        // x perfectly orders the event times: the unpenalised optimum is at
        // infinity, a tiny penalty keeps it finite but far out
        let x = array![[3.0], [2.0], [1.0], [0.0]];
        let ds = SurvivalDataset::from_parts(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 1], x).unwrap();
        let fit = fit_lasso(&ds, 1e-9, None, &LassoConfig::default()).unwrap();
        assert!(fit.beta_hat[0] > 5.0, "{}", fit.beta_hat);
        assert!(fit.kkt_violation <= 1e-6);
    }

    #[test]
    fn huge_spread_is_reported() {
        let x = array![[300.0], [200.0], [100.0], [0.0]];
        let ds = SurvivalDataset::from_parts(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 1], x).unwrap();
        let err = fit_lasso(&ds, 1e-9, Some(array![2.0].view()), &LassoConfig::default()).unwrap_err();
        assert!(matches!(err, CoxError::DivergingPredictor { .. }), "{err}");
    }

    #[test]
    fn kkt_violation_cases() {
        let g = array![0.5, -0.1, -2.0];
        let b = array![-1.0, 0.0, 0.3];
        // lambda = 0.25: 0.5 - 0.5 = 0 ; |0.1| <= 0.5 ; -2 + 0.5 = -1.5
        assert!((kkt_violation(g.view(), b.view(), 0.25) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn grid_validation() {
        let ds = two_obs();
        let cfg = LassoConfig::default();
        assert!(regularization_path(&ds, &[0.1, 0.2], &cfg).is_err());
        assert!(regularization_path(&ds, &[], &cfg).is_err());
        let fits = regularization_path(&ds, &[0.125], &cfg).unwrap();
        assert_eq!(fits.len(), 1);
        assert_eq!(fits[0].beta_hat[0], 0.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 0.01, 100);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 2.0);
        assert!((g[99] - 0.02).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }
}
