//! Naive reference implementations: direct double sums over raw covariates,
//! Breslow risk sets `{j : Y_j >= Y_i}`, no centring, no shift, no sorting.
#![allow(dead_code)]

use hdcox::SurvivalDataset;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

/// Raw survival data as plain vectors.
#[derive(Debug, Clone)]
pub struct Raw {
    pub time: Vec<f64>,
    pub status: Vec<u8>,
    pub x: Array2<f64>,
}

impl Raw {
    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn dataset(&self) -> SurvivalDataset {
        SurvivalDataset::from_parts(&self.time, &self.status, self.x.clone()).unwrap()
    }

    fn at_risk(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let t = self.time[i];
        (0..self.n()).filter(move |&j| self.time[j] >= t)
    }

    fn eta(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|j| (0..self.p()).map(|k| self.x[[j, k]] * beta[k]).sum()).collect()
    }

    /// `mu0(Y_i)`, `mu1(Y_i)` by the defining sums `(1/n) sum_j 1(Y_j >= Y_i) exp(eta_j) X_j^r`.
    pub fn mu(&self, i: usize, beta: &[f64]) -> (f64, Vec<f64>) {
        let eta = self.eta(beta);
        let n = self.n() as f64;
        let mut m0 = 0.0;
        let mut m1 = vec![0.0; self.p()];
        for j in self.at_risk(i) {
            let w = eta[j].exp() / n;
            m0 += w;
            for k in 0..self.p() {
                m1[k] += w * self.x[[j, k]];
            }
        }
        (m0, m1)
    }

    /// Negative log partial likelihood, normalised by `n`.
    pub fn value(&self, beta: &[f64]) -> f64 {
        let eta = self.eta(beta);
        let mut s = 0.0;
        for i in 0..self.n() {
            if self.status[i] == 1 {
                let (m0, _) = self.mu(i, beta);
                s += eta[i] - m0.ln();
            }
        }
        -s / self.n() as f64
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.p();
        let mut g = vec![0.0; p];
        for i in 0..self.n() {
            if self.status[i] == 1 {
                let (m0, m1) = self.mu(i, beta);
                for k in 0..p {
                    g[k] -= self.x[[i, k]] - m1[k] / m0;
                }
            }
        }
        g.iter().map(|v| v / self.n() as f64).collect()
    }

    /// The `n^2 x p` factor `C` with row `(i, j)` equal to
    /// `Delta_i 1(Y_j >= Y_i) sqrt(exp(eta_j) / mu0(Y_i)) (X_j - m(Y_i)) / n`.
    pub fn factor(&self, beta: &[f64]) -> Array2<f64> {
        let (n, p) = (self.n(), self.p());
        let eta = self.eta(beta);
        let mut c = Array2::zeros((n * n, p));
        for i in 0..n {
            if self.status[i] == 0 {
                continue;
            }
            let (m0, m1) = self.mu(i, beta);
            for j in self.at_risk(i) {
                let scale = (eta[j].exp() / m0).sqrt() / n as f64;
                for k in 0..p {
                    c[[i * n + j, k]] = scale * (self.x[[j, k]] - m1[k] / m0);
                }
            }
        }
        c
    }

    pub fn hessian(&self, beta: &[f64]) -> Array2<f64> {
        let c = self.factor(beta);
        c.t().dot(&c)
    }

    /// Score residuals `v_i` by the double sum.
    pub fn score_residuals(&self, beta: &[f64]) -> Array2<f64> {
        let (n, p) = (self.n(), self.p());
        let eta = self.eta(beta);
        let mut v = Array2::zeros((n, p));
        for k in 0..n {
            if self.status[k] == 0 {
                continue;
            }
            let (m0, m1) = self.mu(k, beta);
            for c in 0..p {
                v[[k, c]] += self.x[[k, c]] - m1[c] / m0;
            }
            for i in self.at_risk(k) {
                let w = eta[i].exp() / (n as f64 * m0);
                for c in 0..p {
                    v[[i, c]] -= w * (self.x[[i, c]] - m1[c] / m0);
                }
            }
        }
        v
    }
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs_diff1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Random instance with at least one event. `ties` rounds times to a coarse
/// grid so tied observations occur.
pub fn raw_strategy(n: std::ops::RangeInclusive<usize>, p: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Raw> {
    (n, p, any::<bool>()).prop_flat_map(|(n, p, ties)| {
        (
            prop::collection::vec(0.05f64..5.0, n),
            prop::collection::vec(prop::bool::weighted(0.7), n),
            prop::collection::vec(-2.0f64..2.0, n * p),
            Just((n, p, ties)),
        )
            .prop_map(|(time, status, xs, (n, p, ties))| {
                let time = if ties { time.iter().map(|t| (t * 2.0).ceil() / 2.0).collect() } else { time };
                let mut status: Vec<u8> = status.into_iter().map(u8::from).collect();
                status[0] = 1;
                Raw { time, status, x: Array2::from_shape_vec((n, p), xs).unwrap() }
            })
    })
}

pub fn beta_strategy(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, p)
}

/// Deterministic pseudo-random instance for non-property tests.
pub fn fixed_instance(n: usize, p: usize, seed: u64) -> Raw {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.5..1.5));
    let time = (0..n).map(|_| rng.gen_range(0.1..4.0)).collect();
    let mut status: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.75))).collect();
    status[0] = 1;
    Raw { time, status, x }
}

pub fn to_vec(a: &Array1<f64>) -> Vec<f64> {
    a.to_vec()
}
