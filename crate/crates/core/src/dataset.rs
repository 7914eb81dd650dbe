//! Samples, cell masks, standardization, windowing, CSV ingestion and
//! synthetic generators.
//!
//! Every cell of a sample is exactly one of [`CellState::Observed`] (context
//! the model may look at), [`CellState::Masked`] (a hidden target) or
//! [`CellState::Absent`] (missing in the source data, never used anywhere).
//! Absent cells store `NaN` as their value so that a stray read shows up
//! immediately instead of silently contributing a number.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor for per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Observed,
    Masked,
    Absent,
}

impl CellState {
    pub fn is_available(self) -> bool {
        self != CellState::Absent
    }
}

/// One (window of a) multivariate series with normalized stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    pub id: String,
    stamps: Vec<f64>,
    features: Array2<f64>,
    covariates: Vec<f64>,
    mask: Array2<CellState>,
}

impl TimeSeriesSample {
    /// Builds a sample from normalized stamps and per-cell values; `None`
    /// cells become Absent, everything else Observed.
    pub fn new(
        id: impl Into<String>,
        stamps: Vec<f64>,
        values: Array2<Option<f64>>,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        let features = values.mapv(|v| v.unwrap_or(f64::NAN));
        let mask = values.mapv(|v| match v {
            Some(_) => CellState::Observed,
            None => CellState::Absent,
        });
        Self::from_parts(id.into(), stamps, features, covariates, mask)
    }

    /// Fully observed sample from dense values.
    pub fn dense(id: impl Into<String>, stamps: Vec<f64>, values: Array2<f64>, covariates: Vec<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.raw_dim(), CellState::Observed);
        Self::from_parts(id.into(), stamps, values, covariates, mask)
    }

    pub fn from_parts(
        id: String,
        stamps: Vec<f64>,
        mut features: Array2<f64>,
        covariates: Vec<f64>,
        mask: Array2<CellState>,
    ) -> Result<Self> {
        if stamps.len() != features.nrows() || features.dim() != mask.dim() {
            return Err(Error::shape(format!(
                "{} stamps, features {:?}, mask {:?}",
                stamps.len(),
                features.dim(),
                mask.dim()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::shape("a sample needs at least one channel"));
        }
        validate_stamps(&stamps)?;
        for (v, m) in features.iter_mut().zip(mask.iter()) {
            match m {
                CellState::Absent => *v = f64::NAN,
                _ if !v.is_finite() => {
                    return Err(Error::invalid("non-finite value at an available cell"));
                }
                _ => {}
            }
        }
        if covariates.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite covariate"));
        }
        Ok(TimeSeriesSample {
            id,
            stamps,
            features,
            covariates,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.ncols()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn mask(&self) -> &Array2<CellState> {
        &self.mask
    }

    pub fn state(&self, row: usize, channel: usize) -> CellState {
        self.mask[[row, channel]]
    }

    /// Value at an available cell, `None` at Absent ones.
    pub fn value(&self, row: usize, channel: usize) -> Option<f64> {
        self.mask[[row, channel]]
            .is_available()
            .then(|| self.features[[row, channel]])
    }

    pub fn count(&self, state: CellState) -> usize {
        self.mask.iter().filter(|m| **m == state).count()
    }

    /// `|Observed| / (|Observed| + |Masked|)`; 1 when nothing is available.
    pub fn observed_ratio(&self) -> f64 {
        let obs = self.count(CellState::Observed);
        let avail = obs + self.count(CellState::Masked);
        if avail == 0 {
            1.0
        } else {
            obs as f64 / avail as f64
        }
    }

    /// Overwrites the value of an available cell. Used to build perturbation
    /// tests and by standardization.
    pub fn set_value(&mut self, row: usize, channel: usize, value: f64) -> Result<()> {
        if !self.mask[[row, channel]].is_available() {
            return Err(Error::invalid("cannot set a value on an Absent cell"));
        }
        if !value.is_finite() {
            return Err(Error::invalid("non-finite value"));
        }
        self.features[[row, channel]] = value;
        Ok(())
    }

    /// Writes directly into the raw feature grid, including Absent cells.
    /// Nothing downstream may read Absent cells, so this exists to prove it.
    pub fn set_raw(&mut self, row: usize, channel: usize, value: f64) {
        self.features[[row, channel]] = value;
    }

    /// Moves an available cell between Observed and Masked.
    pub fn set_state(&mut self, row: usize, channel: usize, state: CellState) {
        let cur = self.mask[[row, channel]];
        if cur.is_available() && state.is_available() {
            self.mask[[row, channel]] = state;
        }
    }

    /// Resets every Masked cell back to Observed.
    pub fn unmasked(&self) -> Self {
        let mut out = self.clone();
        out.mask.mapv_inplace(|m| match m {
            CellState::Masked => CellState::Observed,
            other => other,
        });
        out
    }

    /// First `len` rows; stamps keep their values.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::invalid(format!("cannot truncate length {} to {len}", self.len())));
        }
        Ok(TimeSeriesSample {
            id: self.id.clone(),
            stamps: self.stamps[..len].to_vec(),
            features: self.features.slice(ndarray::s![..len, ..]).to_owned(),
            covariates: self.covariates.clone(),
            mask: self.mask.slice(ndarray::s![..len, ..]).to_owned(),
        })
    }

    /// Rows with at least one cell accepted by `keep`.
    pub fn rows_where(&self, keep: impl Fn(CellState) -> bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&r| self.mask.row(r).iter().any(|m| keep(*m)))
            .collect()
    }

    /// Checks the cell partition and the value contract.
    pub fn check_invariants(&self) -> Result<()> {
        validate_stamps(&self.stamps)?;
        for (v, m) in self.features.iter().zip(self.mask.iter()) {
            if m.is_available() != v.is_finite() {
                return Err(Error::invalid("value/mask contract violated"));
            }
        }
        Ok(())
    }
}

fn validate_stamps(stamps: &[f64]) -> Result<()> {
    if stamps.iter().any(|t| !t.is_finite() || *t < 0.0 || *t > 1.0) {
        return Err(Error::invalid("stamps must lie in [0, 1]"));
    }
    if stamps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("stamps must be strictly increasing"));
    }
    Ok(())
}

/// Per-channel mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Statistics over the available cells of `rows`. Channels without any
    /// available cell get `μ = 0, σ = 1`.
    pub fn fit_rows(sample: &TimeSeriesSample, rows: std::ops::Range<usize>) -> Self {
        let d = sample.channels();
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        for j in 0..d {
            let vals: Vec<f64> = rows.clone().filter_map(|r| sample.value(r, j)).collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mu = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean[j] = mu;
            std[j] = var.sqrt().max(STD_FLOOR);
        }
        ChannelStats { mean, std }
    }

    pub fn fit(sample: &TimeSeriesSample) -> Self {
        Self::fit_rows(sample, 0..sample.len())
    }

    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, sample: &TimeSeriesSample) -> Result<TimeSeriesSample> {
        if self.mean.len() != sample.channels() {
            return Err(Error::shape("channel statistics do not match the sample"));
        }
        let mut out = sample.clone();
        for ((r, j), v) in out.features.indexed_iter_mut() {
            if sample.mask[[r, j]].is_available() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, channel: usize, standardized: f64) -> f64 {
        standardized * self.std[channel] + self.mean[channel]
    }

    pub fn invert_sample(&self, sample: &TimeSeriesSample) -> TimeSeriesSample {
        let mut out = sample.clone();
        for ((r, j), v) in out.features.indexed_iter_mut() {
            if sample.mask[[r, j]].is_available() {
                *v = self.invert(j, *v);
            }
        }
        out
    }
}

/// Standardizes each channel over its available cells.
pub fn standardize_channels(sample: &TimeSeriesSample) -> (TimeSeriesSample, ChannelStats) {
    let stats = ChannelStats::fit(sample);
    let out = stats.apply(sample).expect("stats fitted on this sample");
    (out, stats)
}

/// Keeps `round(τ·n_avail)` available cells Observed, chosen uniformly without
/// replacement, and marks the rest Masked. Existing Masked cells count as
/// available.
pub fn make_imputation_mask(sample: &TimeSeriesSample, tau: f64, rng: &mut impl Rng) -> Result<TimeSeriesSample> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("observation ratio {tau} outside [0, 1]")));
    }
    let available: Vec<(usize, usize)> = sample
        .mask
        .indexed_iter()
        .filter(|(_, m)| m.is_available())
        .map(|(ix, _)| ix)
        .collect();
    let keep = (tau * available.len() as f64).round() as usize;
    let mut out = sample.clone();
    for &(r, j) in &available {
        out.mask[[r, j]] = CellState::Masked;
    }
    for i in index::sample(rng, available.len(), keep) {
        let (r, j) = available[i];
        out.mask[[r, j]] = CellState::Observed;
    }
    Ok(out)
}

/// History rows keep their status; every available cell from row `history`
/// onward becomes Masked.
pub fn make_forecast_mask(sample: &TimeSeriesSample, history: usize, horizon: usize) -> Result<TimeSeriesSample> {
    if history == 0 || horizon == 0 || history + horizon != sample.len() {
        return Err(Error::InvalidSplit(format!(
            "history {history} + horizon {horizon} must equal length {} with both ≥ 1",
            sample.len()
        )));
    }
    let mut out = sample.clone();
    for mut row in out.mask.rows_mut().into_iter().skip(history) {
        for m in row.iter_mut() {
            if m.is_available() {
                *m = CellState::Masked;
            }
        }
    }
    Ok(out)
}

/// A series with raw (unnormalized) stamps, as read from or written to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRecord {
    pub id: String,
    pub stamps: Vec<f64>,
    /// `NaN` marks an Absent cell.
    pub values: Array2<f64>,
    pub covariates: Vec<f64>,
}

impl SeriesRecord {
    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `start..start+len` as a new record with id `new_id`.
    pub fn window(&self, start: usize, len: usize, new_id: String) -> SeriesRecord {
        SeriesRecord {
            id: new_id,
            stamps: self.stamps[start..start + len].to_vec(),
            values: self.values.slice(ndarray::s![start..start + len, ..]).to_owned(),
            covariates: self.covariates.clone(),
        }
    }

    /// Sample with stamps min-max normalized over this record.
    pub fn to_sample(&self) -> Result<TimeSeriesSample> {
        let Some(&first) = self.stamps.first() else {
            return Err(Error::InsufficientData(format!("series {} is empty", self.id)));
        };
        let span = self.stamps.last().unwrap() - first;
        let stamps = if span > 0.0 {
            self.stamps.iter().map(|t| ((t - first) / span).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; self.len()]
        };
        self.to_sample_with(stamps)
    }

    /// Sample with caller-provided normalized stamps.
    pub fn to_sample_with(&self, stamps: Vec<f64>) -> Result<TimeSeriesSample> {
        let values = self.values.mapv(|v| v.is_finite().then_some(v));
        TimeSeriesSample::new(self.id.clone(), stamps, values, self.covariates.clone())
    }
}

/// Window layout for turning long series into samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub window_len: usize,
    pub stride: usize,
    pub test_windows: usize,
    /// Training windows per validation window (5 for a 5:1 split).
    pub train_per_val: usize,
}

impl SplitPlan {
    pub fn new(window_len: usize, stride: usize, test_windows: usize) -> Self {
        SplitPlan {
            window_len,
            stride,
            test_windows,
            train_per_val: 5,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct WindowSplit {
    pub train: Vec<SeriesRecord>,
    pub val: Vec<SeriesRecord>,
    pub test: Vec<SeriesRecord>,
}

/// Start offsets `(train, val, test)` for a series of `total` points.
pub fn window_starts(total: usize, plan: &SplitPlan) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if plan.window_len == 0 || plan.stride == 0 {
        return Err(Error::invalid("window length and stride must be ≥ 1"));
    }
    let test_span = plan.window_len * plan.test_windows;
    if total < test_span || total < plan.window_len {
        return Err(Error::InsufficientData(format!(
            "series of {total} points cannot hold {} test windows of length {}",
            plan.test_windows, plan.window_len
        )));
    }
    let prefix = total - test_span;
    let test = (0..plan.test_windows).map(|i| prefix + i * plan.window_len).collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    if prefix >= plan.window_len {
        let candidates = (prefix - plan.window_len) / plan.stride + 1;
        for i in 0..candidates {
            let start = i * plan.stride;
            if i % (plan.train_per_val + 1) == 0 {
                val.push(start);
            } else {
                train.push(start);
            }
        }
    }
    Ok((train, val, test))
}

/// Splits a long series into train/val windows from its prefix and
/// non-overlapping test windows from its end.
pub fn window_series(series: &SeriesRecord, plan: &SplitPlan) -> Result<WindowSplit> {
    let (train, val, test) = window_starts(series.len(), plan)?;
    let cut = |starts: Vec<usize>, tag: &str| -> Vec<SeriesRecord> {
        starts
            .into_iter()
            .map(|s| series.window(s, plan.window_len, format!("{}:{tag}{s}", series.id)))
            .collect()
    };
    Ok(WindowSplit {
        train: cut(train, "train"),
        val: cut(val, "val"),
        test: cut(test, "test"),
    })
}

/// Deterministic 5:1 split of ready-made samples (every sixth to validation).
/// With fewer than two samples the validation set mirrors the training set.
pub fn split_train_val<T: Clone>(items: &[T]) -> (Vec<T>, Vec<T>) {
    if items.len() < 2 {
        return (items.to_vec(), items.to_vec());
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if i % 6 == 0 {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, val)
}

/// Parses the series CSV: header `series_id,t,y0[,y1..][,c0..]`, one row per
/// stamp, empty value fields for Absent cells.
pub fn read_csv(path: &Path) -> Result<Vec<SeriesRecord>> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, path)
}

pub fn load_csv(path: &Path) -> Result<Vec<TimeSeriesSample>> {
    read_csv(path)?.iter().map(SeriesRecord::to_sample).collect()
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<SeriesRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(err(1, "missing header".into()));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "series_id" || cols[1] != "t" {
        return Err(err(1, "header must start with series_id,t,y0".into()));
    }
    let mut d = 0;
    let mut k = 0;
    for name in &cols[2..] {
        if *name == format!("y{d}") && k == 0 {
            d += 1;
        } else if *name == format!("c{k}") && d > 0 {
            k += 1;
        } else {
            return Err(err(1, format!("unknown column '{name}'")));
        }
    }
    if d == 0 {
        return Err(err(1, "no value columns".into()));
    }

    struct Building {
        id: String,
        stamps: Vec<f64>,
        values: Vec<f64>,
        covariates: Vec<f64>,
    }
    let finish = |b: Building| SeriesRecord {
        values: Array2::from_shape_vec((b.stamps.len(), d), b.values).unwrap(),
        id: b.id,
        stamps: b.stamps,
        covariates: b.covariates,
    };

    let mut out: Vec<SeriesRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut cur: Option<Building> = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(err(lineno, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(err(lineno, "empty series_id".into()));
        }
        let t: f64 = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("invalid stamp '{}'", fields[1])))?;
        if !t.is_finite() {
            return Err(err(lineno, "non-finite stamp".into()));
        }
        let mut row = Vec::with_capacity(d);
        for f in &fields[2..2 + d] {
            if f.is_empty() {
                row.push(f64::NAN);
            } else {
                let v: f64 = f.parse().map_err(|_| err(lineno, format!("invalid value '{f}'")))?;
                if !v.is_finite() {
                    return Err(err(lineno, format!("non-finite value '{f}'")));
                }
                row.push(v);
            }
        }
        let mut covs = Vec::with_capacity(k);
        for f in &fields[2 + d..] {
            let c: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("invalid covariate '{f}'")))?;
            covs.push(c);
        }

        let same = cur.as_ref().is_some_and(|b| b.id == id);
        if !same {
            if let Some(b) = cur.take() {
                out.push(finish(b));
            }
            if !seen.insert(id.to_string()) {
                return Err(err(lineno, format!("rows of series '{id}' are not contiguous")));
            }
            cur = Some(Building {
                id: id.to_string(),
                stamps: Vec::new(),
                values: Vec::new(),
                covariates: covs.clone(),
            });
        }
        let b = cur.as_mut().unwrap();
        if let Some(&last) = b.stamps.last() {
            if t == last {
                return Err(err(lineno, format!("duplicate stamp {t} in series '{id}'")));
            }
            if t < last {
                return Err(err(lineno, format!("stamps of series '{id}' are not increasing")));
            }
        }
        if b.covariates != covs {
            return Err(err(lineno, format!("covariates of series '{id}' change between rows")));
        }
        b.stamps.push(t);
        b.values.extend(row);
    }
    if let Some(b) = cur.take() {
        out.push(finish(b));
    }
    Ok(out)
}

/// Renders records in the CSV contract. Output is byte-stable for equal input.
pub fn format_csv(records: &[SeriesRecord]) -> Result<String> {
    let Some(first) = records.first() else {
        return Err(Error::invalid("nothing to write"));
    };
    let d = first.channels();
    let k = first.covariates.len();
    if records.iter().any(|r| r.channels() != d || r.covariates.len() != k) {
        return Err(Error::shape("records disagree on channel or covariate count"));
    }
    let mut s = String::from("series_id,t");
    for j in 0..d {
        write!(s, ",y{j}").unwrap();
    }
    for j in 0..k {
        write!(s, ",c{j}").unwrap();
    }
    s.push('\n');
    for r in records {
        for (l, t) in r.stamps.iter().enumerate() {
            write!(s, "{},{}", r.id, t).unwrap();
            for j in 0..d {
                let v = r.values[[l, j]];
                if v.is_finite() {
                    write!(s, ",{v}").unwrap();
                } else {
                    s.push(',');
                }
            }
            for c in &r.covariates {
                write!(s, ",{c}").unwrap();
            }
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn write_csv(path: &Path, records: &[SeriesRecord]) -> Result<()> {
    fs::write(path, format_csv(records)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    SineMix,
    DampedSine,
    TrendSeasonal,
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sine-mix" => Ok(SynthKind::SineMix),
            "damped-sine" => Ok(SynthKind::DampedSine),
            "trend-seasonal" => Ok(SynthKind::TrendSeasonal),
            other => Err(format!("unknown synthetic kind '{other}'")),
        }
    }
}

/// Parameters of the synthetic generators.
///
/// Each channel of each series draws its own parameters:
///
/// * `sine-mix`: offset `U[-1, 1]` plus `components` waves with amplitude
///   `U[0.5, 1.5]`, an integer number of cycles per series in `1..=5` and
///   phase `U[0, 2π)`.
/// * `damped-sine`: offset `U[-1, 1]` plus one wave as above, multiplied by
///   `exp(-λ s)` with decay `λ ~ U[1, 4]`.
/// * `trend-seasonal`: offset `U[-1, 1]`, slope `U[-1, 1]` per series length
///   and one wave with `4..=8` cycles.
///
/// Values are evaluated at `s = l / len` and get additive `N(0, noise²)`
/// noise. Raw stamps are the integer positions `0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_series: usize,
    pub len: usize,
    pub dims: usize,
    pub noise: f64,
    pub components: usize,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n_series: usize, len: usize, dims: usize, noise: f64) -> Self {
        SynthSpec {
            kind,
            n_series,
            len,
            dims,
            noise,
            components: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    pub cycles: f64,
    pub phase: f64,
}

/// Noiseless generating function of one synthetic channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthChannel {
    pub offset: f64,
    pub slope: f64,
    pub decay: f64,
    pub waves: Vec<Wave>,
}

impl SynthChannel {
    /// Value at generator coordinate `s` (the row index divided by the length).
    pub fn eval(&self, s: f64) -> f64 {
        let osc: f64 = self
            .waves
            .iter()
            .map(|w| w.amplitude * (2.0 * std::f64::consts::PI * w.cycles * s + w.phase).sin())
            .sum();
        self.offset + self.slope * s + (-self.decay * s).exp() * osc
    }
}

#[derive(Debug, Clone)]
pub struct SynthSeries {
    pub record: SeriesRecord,
    pub channels: Vec<SynthChannel>,
}

fn draw_channel(spec: &SynthSpec, rng: &mut impl Rng) -> SynthChannel {
    let tau = 2.0 * std::f64::consts::PI;
    let wave = |cycles: std::ops::RangeInclusive<u32>, rng: &mut dyn rand::RngCore| Wave {
        amplitude: rng.random_range(0.5..1.5),
        cycles: rng.random_range(cycles) as f64,
        phase: rng.random_range(0.0..tau),
    };
    let offset = rng.random_range(-1.0..1.0);
    match spec.kind {
        SynthKind::SineMix => SynthChannel {
            offset,
            slope: 0.0,
            decay: 0.0,
            waves: (0..spec.components.max(1)).map(|_| wave(1..=5, rng)).collect(),
        },
        SynthKind::DampedSine => SynthChannel {
            offset,
            slope: 0.0,
            decay: rng.random_range(1.0..4.0),
            waves: vec![wave(1..=5, rng)],
        },
        SynthKind::TrendSeasonal => SynthChannel {
            offset,
            slope: rng.random_range(-1.0..1.0),
            decay: 0.0,
            waves: vec![wave(4..=8, rng)],
        },
    }
}

/// Synthetic series together with their generating parameters.
pub fn synth_series(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Vec<SynthSeries>> {
    if spec.n_series == 0 || spec.len < 2 || spec.dims == 0 {
        return Err(Error::invalid("synthetic data needs ≥1 series, length ≥2 and ≥1 channel"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::invalid("noise must be a finite non-negative number"));
    }
    let noise = Normal::new(0.0, spec.noise.max(0.0)).unwrap();
    let width = spec.n_series.to_string().len();
    let mut out = Vec::with_capacity(spec.n_series);
    for i in 0..spec.n_series {
        let channels: Vec<SynthChannel> = (0..spec.dims).map(|_| draw_channel(spec, rng)).collect();
        let mut values = Array2::zeros((spec.len, spec.dims));
        for l in 0..spec.len {
            let s = l as f64 / spec.len as f64;
            for (j, ch) in channels.iter().enumerate() {
                let eps = if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                values[[l, j]] = ch.eval(s) + eps;
            }
        }
        out.push(SynthSeries {
            record: SeriesRecord {
                id: format!("s{i:0width$}"),
                stamps: (0..spec.len).map(|l| l as f64).collect(),
                values,
                covariates: Vec::new(),
            },
            channels,
        });
    }
    Ok(out)
}

pub fn synth_records(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Vec<SeriesRecord>> {
    Ok(synth_series(spec, rng)?.into_iter().map(|s| s.record).collect())
}

pub fn synth_generate(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Vec<TimeSeriesSample>> {
    synth_records(spec, rng)?.iter().map(SeriesRecord::to_sample).collect()
}
