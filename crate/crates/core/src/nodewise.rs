//! Nodewise Lasso surrogate for the inverse of the partial-likelihood Hessian.
//!
//! Each row `j` regresses column `j` of the Hessian factor `C` on the others.
//! Because `C'C` is the Hessian, the least-squares part of that regression is
//! the quadratic form `v' Sigma v` with `v = e_j - gamma` (gamma embedded with a
//! zero at `j`), so every regression runs on the `p x p` matrix alone.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CoxError, Result};
use crate::folds::{assign_folds, split};
use crate::homotopy::Homotopy;
use crate::lasso::log_grid;
use crate::partial_likelihood::hessian;
use crate::survival::SurvivalDataset;

/// Absolute slack allowed on the nodewise KKT certificate.
pub const KKT_SLACK: f64 = 1e-8;
/// Default constant in `lambda_j = c sqrt(log p / n)`.
pub const DEFAULT_RATE_CONSTANT: f64 = 0.5;
const MAX_SWEEPS: usize = 100_000;
const GRID_LEN: usize = 25;
const GRID_MIN_RATIO: f64 = 0.01;

#[derive(Debug, Clone, Serialize)]
pub struct PrecisionSurrogate {
    /// row `j` holds the `p - 1` coefficients of regression `j`, column order
    /// skipping `j`
    pub gamma: Vec<Array1<f64>>,
    pub tau_sq: Array1<f64>,
    pub theta: Array2<f64>,
    pub lambdas: Array1<f64>,
}

impl PrecisionSurrogate {
    pub fn p(&self) -> usize {
        self.tau_sq.len()
    }

    /// `G`: ones on the diagonal, `-gamma_{j,k}` off it.
    pub fn g_matrix(&self) -> Array2<f64> {
        let p = self.p();
        let mut g = Array2::eye(p);
        for (j, gamma) in self.gamma.iter().enumerate() {
            g.row_mut(j).assign(&embed(gamma.view(), j).mapv(|v| -v));
            g[[j, j]] = 1.0;
        }
        g
    }

    /// `max_k |(Sigma Theta_j')_k - 1(k = j)|` for each row `j`.
    pub fn inverse_residuals(&self, sigma: ArrayView2<f64>) -> Array1<f64> {
        let prod = sigma.dot(&self.theta.t());
        (0..self.p())
            .map(|j| {
                prod.column(j)
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| (v - if k == j { 1.0 } else { 0.0 }).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Inserts a zero at position `j` of a length `p - 1` vector.
pub fn embed(gamma: ArrayView1<f64>, j: usize) -> Array1<f64> {
    let mut out = Array1::zeros(gamma.len() + 1);
    out.slice_mut(s![..j]).assign(&gamma.slice(s![..j]));
    out.slice_mut(s![j + 1..]).assign(&gamma.slice(s![j..]));
    out
}

fn strip(full: &Array1<f64>, j: usize) -> Array1<f64> {
    full.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, &v)| v).collect()
}

fn check_square(sigma: ArrayView2<f64>) -> Result<usize> {
    let p = sigma.nrows();
    if sigma.ncols() != p || p == 0 {
        return Err(CoxError::DimensionMismatch(format!("sigma must be square, got {:?}", sigma.shape())));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(CoxError::NonFinite("sigma".into()));
    }
    Ok(p)
}

/// Coordinate-descent state for one nodewise problem; `resid` tracks
/// `Sigma gamma - Sigma_{., j}` (entry `j` unused).
struct Nodewise<'s> {
    sigma: ArrayView2<'s, f64>,
    j: usize,
    gamma: Array1<f64>,
    resid: Array1<f64>,
}

impl<'s> Nodewise<'s> {
    fn with_start(sigma: ArrayView2<'s, f64>, j: usize, mut gamma: Array1<f64>) -> Self {
        gamma[j] = 0.0;
        let mut node = Self { sigma, j, resid: Array1::zeros(gamma.len()), gamma };
        node.refresh();
        node
    }

    fn refresh(&mut self) {
        self.resid = self.sigma.dot(&self.gamma) - self.sigma.column(self.j);
    }

    fn kkt_excess(&self, lambda: f64) -> f64 {
        (0..self.gamma.len())
            .filter(|&k| k != self.j)
            .map(|k| {
                let r = self.resid[k];
                if self.gamma[k] != 0.0 {
                    (r + lambda * self.gamma[k].signum()).abs()
                } else {
                    (r.abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Soft-threshold update of coordinate `k`, keeping `resid` exact on
    /// every index when `active` is `None` and on `active` only otherwise.
    fn update(&mut self, k: usize, lambda: f64, active: Option<&[usize]>) -> f64 {
        let h = self.sigma[[k, k]];
        if h <= 0.0 {
            return 0.0;
        }
        let old = self.gamma[k];
        let raw = h * old - self.resid[k];
        let new = raw.signum() * (raw.abs() - lambda).max(0.0) / h;
        let delta = new - old;
        if delta != 0.0 {
            self.gamma[k] = new;
            // Sigma is symmetric: row k is column k, contiguous
            let row = self.sigma.row(k);
            match active {
                None => self.resid.scaled_add(delta, &row),
                Some(set) => set.iter().for_each(|&a| self.resid[a] += delta * row[a]),
            }
        }
        delta.abs()
    }

    /// Sweeps over `active` until no coordinate moves, then brings the
    /// residual entries outside `active` up to date.
    fn active_sweeps(&mut self, active: &[usize], lambda: f64, sweeps: &mut usize) {
        let start: Vec<f64> = active.iter().map(|&k| self.gamma[k]).collect();
        loop {
            let mut inner = 0.0f64;
            for &k in active {
                inner = inner.max(self.update(k, lambda, Some(active)));
            }
            *sweeps += 1;
            if inner < 1e-13 || *sweeps > MAX_SWEEPS {
                break;
            }
        }
        let mut inside = vec![false; self.gamma.len()];
        active.iter().for_each(|&k| inside[k] = true);
        for (&k, &g0) in active.iter().zip(start.iter()) {
            let d = self.gamma[k] - g0;
            if d != 0.0 {
                let row = self.sigma.row(k);
                for (a, r) in self.resid.iter_mut().enumerate() {
                    if !inside[a] {
                        *r += d * row[a];
                    }
                }
            }
        }
    }

    fn solve(&mut self, lambda: f64) -> Result<()> {
        let p = self.gamma.len();
        let j = self.j;
        let mut sweeps = 0;
        let mut active = Vec::new();
        loop {
            let mut moved = 0.0f64;
            for k in (0..p).filter(|&k| k != j) {
                moved = moved.max(self.update(k, lambda, None));
            }
            sweeps += 1;
            active.clear();
            active.extend((0..p).filter(|&k| k != j && self.gamma[k] != 0.0));
            if moved >= 1e-13 && !active.is_empty() {
                self.active_sweeps(&active, lambda, &mut sweeps);
            }
            if moved < 1e-13 || sweeps > MAX_SWEEPS {
                self.refresh();
                let excess = self.kkt_excess(lambda);
                if excess <= 0.5 * KKT_SLACK {
                    return Ok(());
                }
                if sweeps > MAX_SWEEPS {
                    return Err(CoxError::NonConvergence {
                        iterations: sweeps,
                        kkt_violation: excess,
                        last_iterate: Box::new(strip(&self.gamma, self.j)),
                    });
                }
            }
        }
    }
}

/// `argmin_gamma v' Sigma v + 2 lambda_j ||gamma||_1`, `v = e_j - gamma`.
/// Returns the `p - 1` coefficients (skipping `j`).
pub fn nodewise_regression(sigma: ArrayView2<f64>, j: usize, lambda_j: f64) -> Result<Array1<f64>> {
    let p = check_square(sigma)?;
    if j >= p {
        return Err(CoxError::InvalidArgument(format!("coordinate {j} out of range for p = {p}")));
    }
    if !(lambda_j > 0.0 && lambda_j.is_finite()) {
        return Err(CoxError::InvalidArgument(format!("lambda_j must be positive, got {lambda_j}")));
    }
    // the exact path gets close; coordinate descent certifies the KKT bound
    let mut path = Homotopy::new(sigma, j);
    path.advance(lambda_j);
    let mut node = Nodewise::with_start(sigma, j, path.gamma);
    node.solve(lambda_j)?;
    Ok(strip(&node.gamma, j))
}

/// `tau_j^2 = Sigma_jj - Sigma_{j,-j} gamma_j`.
pub fn tau_squared(sigma: ArrayView2<f64>, j: usize, gamma_j: ArrayView1<f64>) -> Result<f64> {
    let p = check_square(sigma)?;
    if gamma_j.len() + 1 != p {
        return Err(CoxError::DimensionMismatch(format!("gamma has length {}, expected {}", gamma_j.len(), p - 1)));
    }
    let full = embed(gamma_j, j);
    let value = sigma[[j, j]] - sigma.row(j).dot(&full);
    if !(value > 0.0) {
        return Err(CoxError::NonPositiveTau { coordinate: j, value });
    }
    Ok(value)
}

/// Runs all `p` nodewise regressions and assembles `Theta = T^-2 G`, checking
/// the relaxed-inverse certificate row by row.
pub fn build_precision(sigma: ArrayView2<f64>, lambdas: ArrayView1<f64>) -> Result<PrecisionSurrogate> {
    let p = check_square(sigma)?;
    if lambdas.len() != p {
        return Err(CoxError::DimensionMismatch(format!("{} lambdas for p = {p}", lambdas.len())));
    }
    let rows: Vec<Result<(Array1<f64>, f64)>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let gamma = if p == 1 { Array1::zeros(0) } else { nodewise_regression(sigma, j, lambdas[j])? };
            let tau = tau_squared(sigma, j, gamma.view())?;
            Ok((gamma, tau))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let mut theta = Array2::zeros((p, p));
    let mut tau_sq = Array1::zeros(p);
    let mut gamma = Vec::with_capacity(p);
    for (j, (g, tau)) in rows.into_iter().enumerate() {
        let mut row = embed(g.view(), j).mapv(|v| -v);
        row[j] = 1.0;
        theta.row_mut(j).assign(&(row / tau));
        tau_sq[j] = tau;
        gamma.push(g);
    }
    let prec = PrecisionSurrogate { gamma, tau_sq, theta, lambdas: lambdas.to_owned() };
    for (j, &res) in prec.inverse_residuals(sigma).iter().enumerate() {
        let bound = prec.lambdas[j] / prec.tau_sq[j] + 1e-6;
        if res > bound {
            return Err(CoxError::Certificate { row: j, violation: res, bound });
        }
    }
    Ok(prec)
}

/// `lambda_j = c sqrt(log p / n)` for every row.
pub fn default_lambdas(n: usize, p: usize, c: f64) -> Array1<f64> {
    let rate = c * ((p as f64).ln() / n as f64).sqrt();
    Array1::from_elem(p, if rate > 0.0 { rate } else { c })
}

/// Largest useful `lambda_j`: above it `gamma_j = 0`.
fn lambda_ceiling(sigma: ArrayView2<f64>, j: usize) -> f64 {
    sigma.column(j).iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| v.abs()).fold(0.0, f64::max)
}

/// Chooses each `lambda_j` by K-fold cross-validation. For every fold the
/// Hessian at `beta_hat` is recomputed on the training rows (fit) and on the
/// held-out rows (loss), and the held-out loss of a fitted `gamma` is the
/// quadratic form `v' Sigma_test v`. The grid for row `j` runs from the
/// largest ceiling over the full data and the training folds (so `gamma = 0`
/// is a candidate everywhere) down by a factor of 100; a fold's path stops early when
/// the support of `gamma` reaches the fold's event count or the path turns
/// singular, and row `j` only considers grid values every fold reached. Fold
/// paths are traced exactly by homotopy rather than by coordinate descent.
/// The selected value follows the one-standard-error rule, which keeps rows
/// of an uncorrelated design empty far more reliably than the raw minimum.
pub fn cv_nodewise(ds: &SurvivalDataset, beta_hat: ArrayView1<f64>, folds: usize, seed: u64) -> Result<Array1<f64>> {
    let p = ds.p();
    if p == 1 {
        return Ok(Array1::from_elem(1, 1.0));
    }
    let full = hessian(ds, beta_hat)?;
    let labels = assign_folds(ds.status(), folds, seed)?;

    let fold_mats: Vec<Result<FoldHessians>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let (train_rows, test_rows) = split(&labels, k);
            let train_ds = ds.subset(&train_rows)?;
            let train = hessian(&train_ds, beta_hat)?;
            let has_events = test_rows.iter().any(|&i| ds.status()[i]);
            // a held-out part with no events contributes nothing
            let test = if has_events && test_rows.len() >= 2 { Some(hessian(&ds.subset(&test_rows)?, beta_hat)?) } else { None };
            Ok(FoldHessians { train, test, train_events: train_ds.n_events() })
        })
        .collect();
    let fold_mats = fold_mats.into_iter().collect::<Result<Vec<_>>>()?;

    let chosen: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| {
            // start where every fold, and the full data, is still empty so the
            // null regression is always a candidate
            let top = fold_mats
                .iter()
                .map(|f| lambda_ceiling(f.train.view(), j))
                .fold(lambda_ceiling(full.view(), j), f64::max);
            if top <= 0.0 {
                return 1e-12;
            }
            let grid = log_grid(top, GRID_MIN_RATIO, GRID_LEN);
            let mut losses: Vec<Vec<f64>> = Vec::with_capacity(fold_mats.len());
            let mut usable = grid.len();
            for fold in &fold_mats {
                let Some(test) = &fold.test else { continue };
                let mut path = Homotopy::new(fold.train.view(), j);
                let mut reached = 0;
                let mut loss = Vec::with_capacity(usable);
                for &lambda in grid.iter().take(usable) {
                    if !path.advance(lambda) {
                        break;
                    }
                    loss.push(held_out_loss(test.view(), &path.gamma, j));
                    reached = loss.len();
                    if path.support() >= fold.train_events {
                        break;
                    }
                }
                usable = usable.min(reached);
                losses.push(loss);
            }
            if usable == 0 || losses.is_empty() {
                return grid[0];
            }
            grid[select_one_se(&losses, usable)]
        })
        .collect();
    Ok(Array1::from(chosen))
}

/// One-standard-error rule: the largest `lambda` whose mean held-out loss is
/// within one standard error of the minimum. `losses[k][m]` is fold `k` at grid
/// index `m`.
fn select_one_se(losses: &[Vec<f64>], usable: usize) -> usize {
    let k = losses.len() as f64;
    let mean: Vec<f64> = (0..usable).map(|m| losses.iter().map(|l| l[m]).sum::<f64>() / k).collect();
    let best = (0..usable).fold(0, |b, i| if mean[i] < mean[b] { i } else { b });
    if losses.len() < 2 {
        return best;
    }
    let var = losses.iter().map(|l| (l[best] - mean[best]).powi(2)).sum::<f64>() / (k - 1.0);
    let bound = mean[best] + (var / k).sqrt();
    (0..=best).find(|&m| mean[m] <= bound).unwrap_or(best)
}

struct FoldHessians {
    train: Array2<f64>,
    test: Option<Array2<f64>>,
    train_events: usize,
}

/// `v' Sigma_test v` for `v = e_j - gamma`, summed over the support of `v`.
fn held_out_loss(test: ArrayView2<f64>, gamma: &Array1<f64>, j: usize) -> f64 {
    let support: Vec<(usize, f64)> = gamma
        .iter()
        .enumerate()
        .filter_map(|(k, &g)| if k == j { Some((k, 1.0)) } else if g != 0.0 { Some((k, -g)) } else { None })
        .collect();
    support
        .iter()
        .map(|&(a, va)| va * support.iter().map(|&(b, vb)| test[[a, b]] * vb).sum::<f64>())
        .sum()
}

/// Nodewise objective `v' Sigma v + 2 lambda ||gamma||_1` for a `p - 1` vector.
pub fn nodewise_objective(sigma: ArrayView2<f64>, j: usize, gamma: ArrayView1<f64>, lambda: f64) -> f64 {
    let mut v = embed(gamma, j).mapv(|g| -g);
    v[j] = 1.0;
    v.dot(&sigma.dot(&v)) + 2.0 * lambda * gamma.iter().map(|g| g.abs()).sum::<f64>()
}

/// `Sigma_{-j,-j}`.
pub fn drop_index(sigma: ArrayView2<f64>, j: usize) -> Array2<f64> {
    let keep: Vec<usize> = (0..sigma.nrows()).filter(|&k| k != j).collect();
    sigma.select(Axis(0), &keep).select(Axis(1), &keep)
}
