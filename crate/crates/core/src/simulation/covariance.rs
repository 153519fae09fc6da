//! Covariance builders and truncated-Gaussian design sampling.

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoxError, Result};

/// Correlation used by the equal-correlation layouts unless overridden.
pub const DEFAULT_RHO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    /// `I_p`
    Independent,
    /// unit diagonal, `rho` everywhere else
    EqualCorrelation { rho: f64 },
    /// `diag(1, S_{p-1})` with `S` equal-correlation
    BlockI { rho: f64 },
    /// `diag(1, S_2, S_{p-3})`
    BlockII { rho: f64 },
}

impl CovarianceKind {
    pub const NAMES: [&'static str; 4] = ["independent", "equal_corr", "block_i", "block_ii"];

    pub fn from_name(name: &str, rho: f64) -> Result<Self> {
        match name {
            "independent" => Ok(Self::Independent),
            "equal_corr" => Ok(Self::EqualCorrelation { rho }),
            "block_i" => Ok(Self::BlockI { rho }),
            "block_ii" => Ok(Self::BlockII { rho }),
            other => Err(CoxError::Scenario(format!(
                "unknown covariance {other:?}; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Independent => "independent",
            Self::EqualCorrelation { .. } => "equal_corr",
            Self::BlockI { .. } => "block_i",
            Self::BlockII { .. } => "block_ii",
        }
    }
}

fn equal_corr_block(out: &mut Array2<f64>, start: usize, len: usize, rho: f64) {
    let mut block = out.slice_mut(s![start..start + len, start..start + len]);
    block.fill(rho);
    block.diag_mut().fill(1.0);
}

pub fn build_covariance(kind: CovarianceKind, p: usize) -> Result<Array2<f64>> {
    if p == 0 {
        return Err(CoxError::Scenario("p must be at least 1".into()));
    }
    let mut sigma = Array2::<f64>::eye(p);
    match kind {
        CovarianceKind::Independent => {}
        CovarianceKind::EqualCorrelation { rho } => {
            check_rho(rho, p)?;
            equal_corr_block(&mut sigma, 0, p, rho);
        }
        CovarianceKind::BlockI { rho } => {
            if p < 2 {
                return Err(CoxError::Scenario("block_i needs p >= 2".into()));
            }
            check_rho(rho, p - 1)?;
            equal_corr_block(&mut sigma, 1, p - 1, rho);
        }
        CovarianceKind::BlockII { rho } => {
            if p < 4 {
                return Err(CoxError::Scenario("block_ii needs p >= 4".into()));
            }
            check_rho(rho, p - 3)?;
            equal_corr_block(&mut sigma, 1, 2, rho);
            equal_corr_block(&mut sigma, 3, p - 3, rho);
        }
    }
    Ok(sigma)
}

/// An equal-correlation block of size `m` is PD iff `-1/(m-1) < rho < 1`.
fn check_rho(rho: f64, m: usize) -> Result<()> {
    let lower = if m > 1 { -1.0 / (m as f64 - 1.0) } else { f64::NEG_INFINITY };
    if !(rho < 1.0 && rho > lower) {
        return Err(CoxError::NotPositiveDefinite(format!("equal correlation {rho} in a block of size {m}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// clamp each entry to `[-bound, bound]`
    Clamp,
    /// redraw a diagonal block until all its entries lie in `[-bound, bound]`
    Reject,
}

impl Truncation {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "clamp" => Ok(Self::Clamp),
            "reject" => Ok(Self::Reject),
            other => Err(CoxError::Scenario(format!("unknown truncation mode {other:?}; expected clamp or reject"))),
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    start: usize,
    /// lower Cholesky factor of the block
    chol: Array2<f64>,
}

/// Draws rows `N(0, Sigma)` truncated to `[-bound, bound]`. Sigma is split into
/// its diagonal blocks, each factored once, so rejection acts per block.
#[derive(Debug, Clone)]
pub struct DesignSampler {
    p: usize,
    bound: f64,
    mode: Truncation,
    blocks: Vec<Block>,
}

const MAX_REJECTIONS: usize = 1_000_000;

impl DesignSampler {
    pub fn new(sigma: ArrayView2<f64>, bound: f64, mode: Truncation) -> Result<Self> {
        let p = sigma.nrows();
        if sigma.ncols() != p || p == 0 {
            return Err(CoxError::DimensionMismatch(format!("covariance must be square, got {:?}", sigma.shape())));
        }
        if !(bound >= 0.0) || bound.is_infinite() {
            return Err(CoxError::Scenario(format!("truncation bound must be finite and >= 0, got {bound}")));
        }
        if mode == Truncation::Reject && bound == 0.0 {
            return Err(CoxError::Scenario("rejection sampling needs a positive bound".into()));
        }
        let blocks = block_ranges(sigma)
            .into_iter()
            .map(|(start, end)| {
                let len = end - start;
                let sub = sigma.slice(s![start..end, start..end]);
                let m = DMatrix::from_fn(len, len, |a, b| sub[[a, b]]);
                let chol = m.cholesky().ok_or_else(|| {
                    CoxError::NotPositiveDefinite(format!("covariance block {start}..{end} has no Cholesky factor"))
                })?;
                let l = chol.l();
                Ok(Block { start, chol: Array2::from_shape_fn((len, len), |(a, b)| l[(a, b)]) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p, bound, mode, blocks })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn mode(&self) -> Truncation {
        self.mode
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        self.sample_leading(n, self.p, rng)
    }

    /// First `k` columns only. In clamp mode only the leading rows of the
    /// triangular factors are used, so this is cheap for small `k`; rejection
    /// needs every block that overlaps the first `k` coordinates in full.
    pub fn sample_leading<R: Rng + ?Sized>(&self, n: usize, k: usize, rng: &mut R) -> Result<Array2<f64>> {
        let k = k.min(self.p);
        let mut x = Array2::zeros((n, k));
        let mut z = Vec::new();
        let mut buf = Vec::new();
        for i in 0..n {
            for block in self.blocks.iter().take_while(|b| b.start < k) {
                let len = block.chol.nrows();
                let used = match self.mode {
                    Truncation::Clamp => len.min(k - block.start),
                    Truncation::Reject => len,
                };
                let mut tries = 0;
                loop {
                    z.clear();
                    z.extend((0..used).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    buf.clear();
                    for a in 0..used {
                        let row = block.chol.row(a);
                        buf.push((0..=a).map(|b| row[b] * z[b]).sum::<f64>());
                    }
                    if self.mode == Truncation::Clamp || buf.iter().all(|v| v.abs() <= self.bound) {
                        break;
                    }
                    tries += 1;
                    if tries >= MAX_REJECTIONS {
                        return Err(CoxError::Scenario(format!(
                            "rejection sampling of block at {} accepted nothing in {MAX_REJECTIONS} draws",
                            block.start
                        )));
                    }
                }
                for (a, &v) in buf.iter().enumerate().take(k - block.start) {
                    x[[i, block.start + a]] = v.clamp(-self.bound, self.bound);
                }
            }
        }
        Ok(x)
    }
}

/// Maximal diagonal blocks `[start, end)`: a block closes at `e` when no
/// entry couples `..e` with `e..`.
fn block_ranges(sigma: ArrayView2<f64>) -> Vec<(usize, usize)> {
    let p = sigma.nrows();
    let mut ranges = Vec::new();
    let mut start = 0;
    // reach = one past the furthest column coupled to anything seen so far
    let mut reach = 0;
    for a in 0..p {
        let far = (0..p).rev().find(|&b| sigma[[a, b]] != 0.0 || sigma[[b, a]] != 0.0).unwrap_or(a);
        reach = reach.max(far + 1).max(a + 1);
        if reach == a + 1 {
            ranges.push((start, a + 1));
            start = a + 1;
        }
    }
    ranges
}

/// Convenience wrapper: rows `N(0, sigma)` clamped to `[-bound, bound]`.
pub fn sample_design<R: Rng + ?Sized>(n: usize, sigma: ArrayView2<f64>, bound: f64, rng: &mut R) -> Result<Array2<f64>> {
    DesignSampler::new(sigma, bound, Truncation::Clamp)?.sample(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builders() {
        assert_eq!(build_covariance(CovarianceKind::Independent, 3).unwrap(), Array2::<f64>::eye(3));
        assert_eq!(
            build_covariance(CovarianceKind::EqualCorrelation { rho: 0.8 }, 2).unwrap(),
            array![[1.0, 0.8], [0.8, 1.0]]
        );
        assert_eq!(
            build_covariance(CovarianceKind::BlockII { rho: 0.8 }, 4).unwrap(),
            array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.8, 0.0], [0.0, 0.8, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
        );
        let b1 = build_covariance(CovarianceKind::BlockI { rho: 0.8 }, 4).unwrap();
        assert_eq!(b1.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(b1[[2, 3]], 0.8);
        assert!(build_covariance(CovarianceKind::BlockII { rho: 0.8 }, 3).is_err());
        assert!(build_covariance(CovarianceKind::EqualCorrelation { rho: 1.0 }, 3).is_err());
    }

    #[test]
    fn block_detection() {
        let s = build_covariance(CovarianceKind::BlockII { rho: 0.8 }, 6).unwrap();
        assert_eq!(block_ranges(s.view()), vec![(0, 1), (1, 3), (3, 6)]);
        assert_eq!(block_ranges(Array2::<f64>::eye(3).view()), vec![(0, 1), (1, 2), (2, 3)]);
        let mut t = Array2::<f64>::eye(3);
        t[[0, 2]] = 0.1;
        t[[2, 0]] = 0.1;
        assert_eq!(block_ranges(t.view()), vec![(0, 3)]);
    }

    #[test]
    fn clamped_design_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = sample_design(100_000, Array2::<f64>::eye(1).view(), 3.0, &mut rng).unwrap();
        assert!(x.iter().all(|v| v.abs() <= 3.0));
        let mean = x.sum() / 1e5;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e5).sqrt();
        assert!(sd > 0.95 && sd < 1.02, "{sd}");

        let zero = sample_design(10, Array2::<f64>::eye(3).view(), 0.0, &mut rng).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_leading_columns_agree() {
        let sigma = build_covariance(CovarianceKind::BlockI { rho: 0.8 }, 6).unwrap();
        let sampler = DesignSampler::new(sigma.view(), 3.0, Truncation::Clamp).unwrap();
        let a = sampler.sample(50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sampler.sample(50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        // the leading draw consumes the same normals for a single-coordinate first block
        let lead = sampler.sample_leading(50, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(lead.shape(), &[50, 1]);
    }

    #[test]
    fn rejection_respects_bound_and_correlation() {
        let sigma = build_covariance(CovarianceKind::EqualCorrelation { rho: 0.8 }, 3).unwrap();
        let sampler = DesignSampler::new(sigma.view(), 1.0, Truncation::Reject).unwrap();
        let x = sampler.sample(20_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(x.iter().all(|v| v.abs() <= 1.0));
        let c01 = x.column(0).dot(&x.column(1)) / 20_000.0;
        assert!(c01 > 0.1);
        assert!(DesignSampler::new(sigma.view(), 0.0, Truncation::Reject).is_err());
    }
}
