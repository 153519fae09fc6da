//! Censored survival data and weighted risk-set moments.
//!
//! A [`SurvivalDataset`] keeps the caller's row order for reporting and an
//! internal copy sorted by observed time, which is what every risk-set sweep
//! walks over. The sorted copy of the design is column-centred: the partial
//! likelihood and all of its derivatives only see covariates through
//! differences `X_j - m(t)`, so a global shift of `X` is invisible to them but
//! keeps the cumulative sums well scaled.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{CoxError, Result};

#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    times: Array1<f64>,
    status: Vec<bool>,
    design: Array2<f64>,
    sort_order: Vec<usize>,
    // everything below is indexed by sorted position
    sorted_times: Array1<f64>,
    sorted_status: Vec<bool>,
    centered: Array2<f64>,
    // column-major copy of `centered` for coordinate sweeps
    centered_t: Array2<f64>,
    col_means: Array1<f64>,
    risk_start: Vec<usize>,
    event_pos: Vec<usize>,
}

impl SurvivalDataset {
    pub fn new(times: Array1<f64>, status: Vec<bool>, design: Array2<f64>) -> Result<Self> {
        let n = times.len();
        if status.len() != n {
            return Err(CoxError::DimensionMismatch(format!(
                "{} times but {} status values",
                n,
                status.len()
            )));
        }
        if design.nrows() != n {
            return Err(CoxError::DimensionMismatch(format!(
                "{} times but design has {} rows",
                n,
                design.nrows()
            )));
        }
        if n < 2 {
            return Err(CoxError::DimensionMismatch(format!("need n >= 2 observations, got {n}")));
        }
        if design.ncols() == 0 {
            return Err(CoxError::DimensionMismatch("design has no columns".into()));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(CoxError::NonFinite(format!("time at row {i}")));
        }
        if let Some(((i, j), _)) = design.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CoxError::NonFinite(format!("design entry ({i}, {j})")));
        }
        if let Some((row, &value)) = times.iter().enumerate().find(|(_, &t)| t <= 0.0) {
            return Err(CoxError::NonPositiveTime { row, value });
        }
        if !status.iter().any(|&d| d) {
            return Err(CoxError::NoEvents);
        }

        let mut sort_order: Vec<usize> = (0..n).collect();
        // stable: ties keep their original index order
        sort_order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

        let sorted_times: Array1<f64> = sort_order.iter().map(|&i| times[i]).collect();
        let sorted_status: Vec<bool> = sort_order.iter().map(|&i| status[i]).collect();
        let col_means = design.mean_axis(Axis(0)).expect("n >= 2");
        let mut centered = design.select(Axis(0), &sort_order);
        centered -= &col_means;
        let centered_t = centered.t().as_standard_layout().into_owned();

        let mut risk_start = vec![0usize; n];
        for s in 1..n {
            risk_start[s] = if sorted_times[s] == sorted_times[s - 1] { risk_start[s - 1] } else { s };
        }
        let event_pos = (0..n).filter(|&s| sorted_status[s]).collect();

        Ok(Self {
            times,
            status,
            design,
            sort_order,
            sorted_times,
            sorted_status,
            centered,
            centered_t,
            col_means,
            risk_start,
            event_pos,
        })
    }

    /// Builds a dataset from plain slices; `status` entries must be 0 or 1.
    pub fn from_parts(times: &[f64], status: &[u8], design: Array2<f64>) -> Result<Self> {
        let status = status
            .iter()
            .enumerate()
            .map(|(i, &d)| match d {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(CoxError::Schema(format!("status at row {i} is {other}, expected 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(Array1::from(times.to_vec()), status, design)
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn n_events(&self) -> usize {
        self.event_pos.len()
    }

    pub fn times(&self) -> ArrayView1<'_, f64> {
        self.times.view()
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn design(&self) -> ArrayView2<'_, f64> {
        self.design.view()
    }

    /// Original row indices in ascending time order (stable).
    pub fn sort_order(&self) -> &[usize] {
        &self.sort_order
    }

    /// Observed times of the uncensored observations, ascending.
    pub fn event_times(&self) -> Array1<f64> {
        self.event_pos.iter().map(|&s| self.sorted_times[s]).collect()
    }

    /// Fraction of censored observations.
    pub fn censoring_rate(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.n() as f64
    }

    /// Restricts to the given original rows (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let times = rows.iter().map(|&i| self.times[i]).collect();
        let status = rows.iter().map(|&i| self.status[i]).collect();
        let design = self.design.select(Axis(0), rows);
        Self::new(times, status, design)
    }

    /// Returns a copy with column `j` of the design multiplied by `scale[j]`.
    pub fn with_scaled_columns(&self, scale: ArrayView1<f64>) -> Result<Self> {
        if scale.len() != self.p() {
            return Err(CoxError::DimensionMismatch("scale length differs from p".into()));
        }
        let design = &self.design * &scale;
        Self::new(self.times.clone(), self.status.clone(), design)
    }

    pub(crate) fn sorted_status(&self) -> &[bool] {
        &self.sorted_status
    }

    pub(crate) fn centered(&self) -> ArrayView2<'_, f64> {
        self.centered.view()
    }

    pub(crate) fn centered_t(&self) -> ArrayView2<'_, f64> {
        self.centered_t.view()
    }

    pub(crate) fn col_means(&self) -> ArrayView1<'_, f64> {
        self.col_means.view()
    }

    pub(crate) fn risk_start(&self) -> &[usize] {
        &self.risk_start
    }

    pub(crate) fn event_positions(&self) -> &[usize] {
        &self.event_pos
    }

    /// Reads `time`, `status` and feature columns from CSV with a header row.
    /// Returns the dataset and the feature names in column order.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Self, Vec<String>)> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let time_col = headers
            .iter()
            .position(|h| h == "time")
            .ok_or_else(|| CoxError::Schema("missing `time` column".into()))?;
        let status_col = headers
            .iter()
            .position(|h| h == "status")
            .ok_or_else(|| CoxError::Schema("missing `status` column".into()))?;
        let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != time_col && c != status_col).collect();
        if feature_cols.is_empty() {
            return Err(CoxError::Schema("no feature columns".into()));
        }
        let names = feature_cols.iter().map(|&c| headers[c].to_string()).collect();

        let parse = |rec: &csv::StringRecord, row: usize, col: usize| -> Result<f64> {
            let cell = rec.get(col).unwrap_or("");
            if cell.is_empty() {
                return Err(CoxError::Schema(format!("missing value in row {row}, column `{}`", &headers[col])));
            }
            cell.parse::<f64>().map_err(|_| {
                CoxError::Schema(format!("unparsable value {cell:?} in row {row}, column `{}`", &headers[col]))
            })
        };

        let mut times = Vec::new();
        let mut status = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(CoxError::Schema(format!(
                    "row {row} has {} cells, header has {}",
                    rec.len(),
                    headers.len()
                )));
            }
            times.push(parse(&rec, row, time_col)?);
            let d = parse(&rec, row, status_col)?;
            status.push(match d {
                x if x == 0.0 => false,
                x if x == 1.0 => true,
                other => return Err(CoxError::Schema(format!("status {other} in row {row} is not 0 or 1"))),
            });
            for &c in &feature_cols {
                values.push(parse(&rec, row, c)?);
            }
        }
        let n = times.len();
        let design = Array2::from_shape_vec((n, feature_cols.len()), values)
            .map_err(|e| CoxError::Schema(e.to_string()))?;
        Ok((Self::new(Array1::from(times), status, design)?, names))
    }

    /// Writes the dataset in the layout accepted by [`SurvivalDataset::read_csv`].
    pub fn write_csv<W: Write>(&self, writer: W, feature_names: Option<&[String]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "status".to_string()];
        match feature_names {
            Some(names) if names.len() == self.p() => header.extend(names.iter().cloned()),
            Some(_) => return Err(CoxError::DimensionMismatch("feature name count differs from p".into())),
            None => header.extend((1..=self.p()).map(|j| format!("x{j}"))),
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{}", self.times[i]), if self.status[i] { "1" } else { "0" }.to_string()];
            rec.extend(self.design.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weighted risk-set moments of a dataset at a coefficient vector, evaluated
/// at every event time.
///
/// Internally everything is held in shift-stabilised form: weights are
/// `exp(eta_j - max eta)` on the centred design, and the public accessors undo
/// the shift (and the centring) only when asked for the raw moments.
#[derive(Debug, Clone)]
pub struct RiskMoments<'a> {
    ds: &'a SurvivalDataset,
    beta: Array1<f64>,
    /// centred linear predictor, sorted order
    pub(crate) eta: Array1<f64>,
    pub(crate) shift: f64,
    /// `exp(eta - shift)`, sorted order
    pub(crate) weights: Array1<f64>,
    /// stabilised risk-set weight sum per event
    pub(crate) s0: Array1<f64>,
    /// centred risk-set mean `mu1/mu0 - xbar` per event (rows)
    pub(crate) mean: Array2<f64>,
}

impl<'a> RiskMoments<'a> {
    pub fn new(ds: &'a SurvivalDataset, beta: ArrayView1<f64>) -> Result<Self> {
        let p = ds.p();
        if beta.len() != p {
            return Err(CoxError::DimensionMismatch(format!("beta has length {}, expected {p}", beta.len())));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(CoxError::NonFinite("beta".into()));
        }
        let x = ds.centered();
        let eta = x.dot(&beta);
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights = eta.mapv(|e| (e - shift).exp());

        let events = ds.event_positions();
        let starts = ds.risk_start();
        let n_ev = events.len();
        let mut s0 = Array1::zeros(n_ev);
        let mut mean = Array2::zeros((n_ev, p));

        // reverse sweep; events are visited from the latest risk-set start down
        let mut acc0 = 0.0;
        let mut acc1 = Array1::<f64>::zeros(p);
        let mut e = n_ev;
        for s in (0..ds.n()).rev() {
            acc0 += weights[s];
            acc1.scaled_add(weights[s], &x.row(s));
            while e > 0 && starts[events[e - 1]] == s {
                e -= 1;
                s0[e] = acc0;
                mean.row_mut(e).assign(&(&acc1 / acc0));
            }
        }
        debug_assert_eq!(e, 0);

        if let Some(k) = s0.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CoxError::Overflow(format!("risk-set weight sum at event {k} is {}", s0[k])));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(CoxError::Overflow("non-finite risk-set mean".into()));
        }
        Ok(Self { ds, beta: beta.to_owned(), eta, shift, weights, s0, mean })
    }

    pub fn dataset(&self) -> &'a SurvivalDataset {
        self.ds
    }

    pub fn beta(&self) -> ArrayView1<'_, f64> {
        self.beta.view()
    }

    /// Offset between the centred and raw linear predictor, `xbar' beta`.
    fn centering_offset(&self) -> f64 {
        self.ds.col_means().dot(&self.beta)
    }

    /// `log mu0(Y_i; beta)` at each event time.
    pub fn log_mu0(&self) -> Array1<f64> {
        let off = self.shift + self.centering_offset() - (self.ds.n() as f64).ln();
        self.s0.mapv(|s| s.ln() + off)
    }

    /// `mu0(Y_i; beta)` at each event time. May overflow for extreme `beta`;
    /// prefer [`RiskMoments::log_mu0`] and [`RiskMoments::risk_mean`].
    pub fn mu0(&self) -> Array1<f64> {
        self.log_mu0().mapv(f64::exp)
    }

    /// `mu1(Y_i; beta)`, one row per event time.
    pub fn mu1(&self) -> Array2<f64> {
        let mu0 = self.mu0();
        let mut m = self.risk_mean();
        for (mut row, &z) in m.rows_mut().into_iter().zip(mu0.iter()) {
            row *= z;
        }
        m
    }

    /// `mu1/mu0` at each event time in raw covariate coordinates.
    pub fn risk_mean(&self) -> Array2<f64> {
        &self.mean + &self.ds.col_means()
    }

    /// Quadratic-form action of `mu2(Y_i; beta)` for event `k`: `v' mu2 v`.
    pub fn mu2_quadratic(&self, k: usize, v: ArrayView1<f64>) -> f64 {
        let start = self.ds.risk_start()[self.ds.event_positions()[k]];
        let scale = (self.shift + self.centering_offset()).exp() / self.ds.n() as f64;
        let xbar_v = self.ds.col_means().dot(&v);
        let mut acc = 0.0;
        for s in start..self.ds.n() {
            let xv = self.ds.centered().row(s).dot(&v) + xbar_v;
            acc += self.weights[s] * xv * xv;
        }
        acc * scale
    }

    /// Full `mu2(Y_i; beta)` for event `k`, accumulated on demand.
    pub fn mu2_matrix(&self, k: usize) -> Array2<f64> {
        let p = self.ds.p();
        let start = self.ds.risk_start()[self.ds.event_positions()[k]];
        let scale = (self.shift + self.centering_offset()).exp() / self.ds.n() as f64;
        let mut out = Array2::zeros((p, p));
        for s in start..self.ds.n() {
            let x = &self.ds.centered().row(s) + &self.ds.col_means();
            let w = self.weights[s] * scale;
            for a in 0..p {
                for b in 0..p {
                    out[[a, b]] += w * x[a] * x[b];
                }
            }
        }
        out
    }

    /// Normalised risk-set weights `1(Y_j >= Y_k) exp(X_j' beta) / (n mu0(Y_k))`
    /// of event `k`, indexed by original row. They sum to one.
    pub fn event_weights(&self, k: usize) -> Array1<f64> {
        let start = self.ds.risk_start()[self.ds.event_positions()[k]];
        let mut out = Array1::zeros(self.ds.n());
        for s in start..self.ds.n() {
            out[self.ds.sort_order()[s]] = self.weights[s] / self.s0[k];
        }
        out
    }

    /// Number of events (evaluation points).
    pub fn len(&self) -> usize {
        self.s0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s0.is_empty()
    }

    /// Per sorted position, the sum of `1/S0` over events whose risk set
    /// contains that position (stabilised scale).
    pub(crate) fn inverse_s0_cumulative(&self) -> Array1<f64> {
        let n = self.ds.n();
        let mut add = vec![0.0; n];
        for (e, &pos) in self.ds.event_positions().iter().enumerate() {
            add[self.ds.risk_start()[pos]] += 1.0 / self.s0[e];
        }
        let mut c = Array1::zeros(n);
        let mut run = 0.0;
        for s in 0..n {
            run += add[s];
            c[s] = run;
        }
        c
    }

    /// Per sorted position, `sum_k mean_k / S0_k` over the same events as
    /// [`RiskMoments::inverse_s0_cumulative`].
    pub(crate) fn mean_over_s0_cumulative(&self) -> Array2<f64> {
        let n = self.ds.n();
        let p = self.ds.p();
        let mut add = Array2::<f64>::zeros((n, p));
        for (e, &pos) in self.ds.event_positions().iter().enumerate() {
            add.row_mut(self.ds.risk_start()[pos]).scaled_add(1.0 / self.s0[e], &self.mean.row(e));
        }
        let mut run = Array1::<f64>::zeros(p);
        for s in 0..n {
            run += &add.row(s);
            add.row_mut(s).assign(&run);
        }
        add
    }
}

/// Convenience wrapper for [`RiskMoments::new`].
pub fn risk_moments<'a>(ds: &'a SurvivalDataset, beta: ArrayView1<f64>) -> Result<RiskMoments<'a>> {
    RiskMoments::new(ds, beta)
}
