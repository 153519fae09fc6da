//! Exact Lasso path for one nodewise problem,
//! `min_gamma 1/2 gamma' A gamma - b' gamma + lambda ||gamma||_1` with
//! `A = Sigma_{-j,-j}` and `b = Sigma_{-j,j}`, by homotopy in `lambda`.
//!
//! Between breakpoints the active coefficients move linearly,
//! `gamma_A(lambda) = A_AA^-1 (b_A - lambda s_A)`. Each breakpoint costs one
//! triangular solve with a Cholesky factor of `A_AA` grown column by column,
//! plus `O(p |A|)` to move the correlations `c = b - A gamma`.

use ndarray::{Array1, ArrayView2};

/// Breakpoints between exact recomputations of the correlations.
const REFRESH_EVERY: usize = 25;

/// Cap on breakpoints, guarding against cycling under rounding.
const STEPS_PER_COORDINATE: usize = 20;

/// Relative pivot below which a new column is treated as linearly dependent.
const PIVOT_TOL: f64 = 1e-10;

/// Lower-triangular factor stored row by row; row `i` has `i + 1` entries.
#[derive(Default)]
struct Cholesky {
    rows: Vec<Vec<f64>>,
}

impl Cholesky {
    /// Appends a column with off-diagonal part `a` and diagonal `alpha`.
    /// Returns `false` (and leaves the factor unchanged) when the extended
    /// matrix is numerically singular.
    fn push(&mut self, a: &[f64], alpha: f64) -> bool {
        let mut row = self.forward(a);
        let d2 = alpha - row.iter().map(|y| y * y).sum::<f64>();
        if !(d2 > PIVOT_TOL * alpha.abs().max(f64::MIN_POSITIVE)) {
            return false;
        }
        row.push(d2.sqrt());
        self.rows.push(row);
        true
    }

    fn forward(&self, a: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(a.len() + 1);
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row[..i].iter().zip(&y).map(|(l, y)| l * y).sum();
            y.push((a[i] - s) / row[i]);
        }
        y
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let y = self.forward(rhs);
        let m = y.len();
        let mut x = vec![0.0; m];
        for i in (0..m).rev() {
            let s: f64 = ((i + 1)..m).map(|l| self.rows[l][i] * x[l]).sum();
            x[i] = (y[i] - s) / self.rows[i][i];
        }
        x
    }
}

/// Path state. Vectors are indexed `0..p` with position `j` unused.
pub(crate) struct Homotopy<'s> {
    sigma: ArrayView2<'s, f64>,
    j: usize,
    lambda: f64,
    pub(crate) gamma: Array1<f64>,
    corr: Array1<f64>,
    active: Vec<usize>,
    in_active: Vec<bool>,
    signs: Vec<f64>,
    steps: usize,
    /// index dropped at the last breakpoint, barred from re-entering at once
    dropped: Option<usize>,
    chol: Cholesky,
    /// set once the path cannot be continued (singular active block)
    stuck: bool,
}

impl<'s> Homotopy<'s> {
    pub(crate) fn new(sigma: ArrayView2<'s, f64>, j: usize) -> Self {
        let p = sigma.nrows();
        let mut corr = sigma.column(j).to_owned();
        corr[j] = 0.0;
        let lambda = corr.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let mut h = Self {
            sigma,
            j,
            lambda,
            gamma: Array1::zeros(p),
            corr,
            active: Vec::new(),
            in_active: vec![false; p],
            signs: Vec::new(),
            steps: 0,
            dropped: None,
            chol: Cholesky::default(),
            stuck: false,
        };
        if lambda > 0.0 {
            let k = h.argmax_inactive().expect("positive correlation exists");
            h.stuck = !h.add(k);
        }
        h
    }

    pub(crate) fn support(&self) -> usize {
        self.active.iter().filter(|&&k| self.gamma[k] != 0.0).count()
    }

    fn argmax_inactive(&self) -> Option<usize> {
        (0..self.gamma.len())
            .filter(|&k| k != self.j && !self.in_active[k])
            .max_by(|&a, &b| self.corr[a].abs().total_cmp(&self.corr[b].abs()))
    }

    fn add(&mut self, k: usize) -> bool {
        let a: Vec<f64> = self.active.iter().map(|&l| self.sigma[[l, k]]).collect();
        if !self.chol.push(&a, self.sigma[[k, k]]) {
            return false;
        }
        self.active.push(k);
        self.in_active[k] = true;
        self.signs.push(if self.corr[k] >= 0.0 { 1.0 } else { -1.0 });
        true
    }

    fn remove(&mut self, pos: usize) -> bool {
        let k = self.active.remove(pos);
        self.in_active[k] = false;
        self.signs.remove(pos);
        self.gamma[k] = 0.0;
        self.chol = Cholesky::default();
        for i in 0..self.active.len() {
            let l = self.active[i];
            let a: Vec<f64> = self.active[..i].iter().map(|&m| self.sigma[[m, l]]).collect();
            if !self.chol.push(&a, self.sigma[[l, l]]) {
                return false;
            }
        }
        true
    }

    /// `c = b - A gamma` from scratch over the active columns.
    fn refresh_corr(&mut self) {
        let mut c = self.sigma.column(self.j).to_owned();
        for &l in &self.active {
            c.scaled_add(-self.gamma[l], &self.sigma.row(l));
        }
        c[self.j] = 0.0;
        self.corr = c;
    }

    /// Moves the path down to `target`, stopping early if the active block
    /// turns singular. Returns `true` when `target` was reached.
    pub(crate) fn advance(&mut self, target: f64) -> bool {
        let p = self.gamma.len();
        while self.lambda > target {
            if self.stuck || self.steps > STEPS_PER_COORDINATE * p {
                return false;
            }
            if self.active.is_empty() {
                self.lambda = target;
                return true;
            }
            let w = self.chol.solve(&self.signs);
            // u = A_{., active} w
            let mut u = Array1::<f64>::zeros(p);
            for (&l, &wl) in self.active.iter().zip(&w) {
                u.scaled_add(wl, &self.sigma.row(l));
            }
            let mut step = self.lambda - target;
            let mut event: Option<(bool, usize)> = None;
            for k in 0..p {
                if k == self.j || self.in_active[k] || self.dropped == Some(k) {
                    continue;
                }
                let (c, uk) = (self.corr[k], u[k]);
                for t in [(self.lambda - c) / (1.0 - uk), (self.lambda + c) / (1.0 + uk)] {
                    if t > 0.0 && t < step {
                        step = t;
                        event = Some((true, k));
                    }
                }
            }
            for (pos, (&l, &wl)) in self.active.iter().zip(&w).enumerate() {
                if wl != 0.0 {
                    let t = -self.gamma[l] / wl;
                    if t > 0.0 && t < step {
                        step = t;
                        event = Some((false, pos));
                    }
                }
            }
            for (&l, &wl) in self.active.iter().zip(&w) {
                self.gamma[l] += step * wl;
            }
            self.lambda -= step;
            self.steps += 1;
            if self.steps % REFRESH_EVERY == 0 {
                self.refresh_corr();
            } else {
                self.corr.scaled_add(-step, &u);
                self.corr[self.j] = 0.0;
            }
            self.dropped = None;
            match event {
                None => {
                    self.lambda = target;
                    return true;
                }
                Some((false, pos)) => {
                    self.dropped = Some(self.active[pos]);
                    if !self.remove(pos) {
                        self.stuck = true;
                    }
                }
                Some((true, k)) => {
                    if !self.add(k) {
                        self.stuck = true;
                    }
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn cholesky_solves() {
        let mut c = Cholesky::default();
        assert!(c.push(&[], 4.0));
        assert!(c.push(&[2.0], 5.0));
        let x = c.solve(&[6.0, 7.0]);
        // [[4, 2], [2, 5]] x = [6, 7] -> x = (1, 1)
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!(!c.push(&[2.0, 5.0], 5.0));
    }

    #[test]
    fn two_dimensional_soft_threshold() {
        let sigma = array![[1.0, 0.5], [0.5, 1.0]];
        let mut h = Homotopy::new(sigma.view(), 0);
        assert!(h.advance(0.1));
        assert!((h.gamma[1] - 0.4).abs() < 1e-14);
    }

    #[test]
    fn kkt_holds_along_the_path() {
        let x = Array2::from_shape_fn((12, 5), |(i, k)| ((i * 7 + k * 3) % 11) as f64 - 5.0 + 0.1 * k as f64);
        let sigma = x.t().dot(&x) / 12.0;
        let mut h = Homotopy::new(sigma.view(), 2);
        for target in [3.0, 1.0, 0.3, 0.05] {
            assert!(h.advance(target));
            let mut full = h.gamma.clone();
            full[2] = 0.0;
            let grad = sigma.dot(&full) - sigma.column(2);
            for k in (0..5).filter(|&k| k != 2) {
                if full[k] != 0.0 {
                    assert!((grad[k] + target * full[k].signum()).abs() < 1e-10);
                } else {
                    assert!(grad[k].abs() <= target + 1e-10);
                }
            }
        }
    }
}
