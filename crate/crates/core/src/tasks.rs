//! Imputation and forecasting inference, error metrics, naive baselines and
//! the Welch test used to compare runs.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::autodiff::Mat;
use crate::dataset::{make_forecast_mask, make_imputation_mask, CellState, ChannelStats, SeriesRecord, TimeSeriesSample};
use crate::encoder::EncoderRole;
use crate::error::{Error, Result};
use crate::training::{stream_rng, Checkpoint, Task};

const STREAM_TEST: u64 = 20;
const STREAM_DRAWS: u64 = 21;

/// Which encoder conditions inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Prior,
    Posterior,
}

impl Route {
    pub fn role(self) -> EncoderRole {
        match self {
            Route::Prior => EncoderRole::Prior,
            Route::Posterior => EncoderRole::Posterior,
        }
    }
}

impl FromStr for Route {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "prior" => Ok(Route::Prior),
            "posterior" => Ok(Route::Posterior),
            other => Err(format!("unknown route '{other}' (expected prior or posterior)")),
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::Prior => "prior",
            Route::Posterior => "posterior",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    /// Encoder used for imputation; forecasting always uses the prior.
    pub imputation_route: Route,
    /// 0 decodes the latent mean; n > 0 averages n latent draws.
    pub samples: usize,
    pub seed: u64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            imputation_route: Route::Prior,
            samples: 0,
            seed: 0,
        }
    }
}

fn require_task(ckpt: &Checkpoint, requested: Task) -> Result<()> {
    if ckpt.task() != requested {
        return Err(Error::TaskMismatch {
            trained: ckpt.task().to_string(),
            requested: requested.to_string(),
        });
    }
    Ok(())
}

/// One predicted cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPrediction {
    pub row: usize,
    pub channel: usize,
    pub t: f64,
    pub prediction: f64,
    pub truth: Option<f64>,
    pub observed: bool,
}

fn predict_rows(
    ckpt: &Checkpoint,
    context: &TimeSeriesSample,
    stamps: &[f64],
    role: EncoderRole,
    opts: &InferenceOptions,
) -> Result<Mat> {
    let mut rng = stream_rng(opts.seed, &[STREAM_DRAWS]);
    ckpt.model.predict(context, stamps, role, opts.samples, &mut rng)
}

/// Predictions at every Masked cell of `sample`, conditioned on its Observed
/// cells.
pub fn impute(ckpt: &Checkpoint, sample: &TimeSeriesSample, opts: &InferenceOptions) -> Result<Vec<CellPrediction>> {
    impute_cells(ckpt, sample, opts, |s| s == CellState::Masked)
}

/// Like [`impute`] but also returns reconstructions of Observed cells.
pub fn impute_with_observed(
    ckpt: &Checkpoint,
    sample: &TimeSeriesSample,
    opts: &InferenceOptions,
) -> Result<Vec<CellPrediction>> {
    impute_cells(ckpt, sample, opts, CellState::is_available)
}

fn impute_cells(
    ckpt: &Checkpoint,
    sample: &TimeSeriesSample,
    opts: &InferenceOptions,
    wanted: impl Fn(CellState) -> bool,
) -> Result<Vec<CellPrediction>> {
    require_task(ckpt, Task::Imputation)?;
    if sample.count(CellState::Observed) == 0 {
        return Err(Error::EmptyContext(format!("sample '{}' has no Observed cell", sample.id)));
    }
    let rows = sample.rows_where(&wanted);
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let stamps: Vec<f64> = rows.iter().map(|&r| sample.stamps()[r]).collect();
    let pred = predict_rows(ckpt, sample, &stamps, opts.imputation_route.role(), opts)?;
    let mut out = Vec::new();
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..sample.channels() {
            let state = sample.state(r, j);
            if wanted(state) {
                out.push(CellPrediction {
                    row: r,
                    channel: j,
                    t: stamps[i],
                    prediction: pred[[i, j]],
                    truth: sample.value(r, j),
                    observed: state == CellState::Observed,
                });
            }
        }
    }
    Ok(out)
}

/// Predictions for every Absent cell given all available cells as context.
pub fn fill_absent(ckpt: &Checkpoint, sample: &TimeSeriesSample, opts: &InferenceOptions) -> Result<Vec<CellPrediction>> {
    require_task(ckpt, Task::Imputation)?;
    let context = sample.unmasked();
    let rows = sample.rows_where(|s| s == CellState::Absent);
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    if context.count(CellState::Observed) == 0 {
        return Err(Error::EmptyContext(format!("sample '{}' has no available cell", sample.id)));
    }
    let stamps: Vec<f64> = rows.iter().map(|&r| sample.stamps()[r]).collect();
    let pred = predict_rows(ckpt, &context, &stamps, opts.imputation_route.role(), opts)?;
    let mut out = Vec::new();
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..sample.channels() {
            if sample.state(r, j) == CellState::Absent {
                out.push(CellPrediction {
                    row: r,
                    channel: j,
                    t: stamps[i],
                    prediction: pred[[i, j]],
                    truth: None,
                    observed: false,
                });
            }
        }
    }
    Ok(out)
}

/// `len(stamps) × d` predictions beyond the history, conditioned on the
/// history's Observed cells through the prior.
pub fn forecast(ckpt: &Checkpoint, history: &TimeSeriesSample, stamps: &[f64], opts: &InferenceOptions) -> Result<Mat> {
    require_task(ckpt, Task::Forecasting)?;
    if history.is_empty() || history.count(CellState::Observed) == 0 {
        return Err(Error::EmptyContext(format!("history '{}' has no Observed cell", history.id)));
    }
    let horizon = history.stamps().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(bad) = stamps.iter().find(|t| !(**t > horizon)) {
        return Err(Error::invalid(format!(
            "forecast stamp {bad} is not beyond the last history stamp {horizon}"
        )));
    }
    if stamps.is_empty() {
        return Ok(Mat::zeros((0, history.channels())));
    }
    predict_rows(ckpt, history, stamps, EncoderRole::Prior, opts)
}

/// Prior reconstruction of the history at its own stamps.
pub fn reconstruct_history(ckpt: &Checkpoint, history: &TimeSeriesSample, opts: &InferenceOptions) -> Result<Mat> {
    require_task(ckpt, Task::Forecasting)?;
    if history.count(CellState::Observed) == 0 {
        return Err(Error::EmptyContext(format!("history '{}' has no Observed cell", history.id)));
    }
    predict_rows(ckpt, history, history.stamps(), EncoderRole::Prior, opts)
}

/// Mean squared and absolute error over the `target` cells.
pub fn mse_mae(pred: &Mat, truth: &Mat, target: &Array2<bool>) -> Result<(f64, f64)> {
    if pred.dim() != truth.dim() || pred.dim() != target.dim() {
        return Err(Error::shape(format!(
            "prediction {:?}, truth {:?}, target {:?}",
            pred.dim(),
            truth.dim(),
            target.dim()
        )));
    }
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for ((p, t), m) in pred.iter().zip(truth).zip(target) {
        if *m {
            let e = p - t;
            se += e * e;
            ae += e.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no target cells to score"));
    }
    Ok((se / n as f64, ae / n as f64))
}

/// Metrics over a list of cell predictions that carry truth.
pub fn cell_metrics(cells: &[CellPrediction]) -> Result<(f64, f64)> {
    let scored: Vec<(f64, f64)> = cells.iter().filter_map(|c| c.truth.map(|t| (c.prediction, t))).collect();
    if scored.is_empty() {
        return Err(Error::invalid("no target cells to score"));
    }
    let pred = Mat::from_shape_fn((scored.len(), 1), |(i, _)| scored[i].0);
    let truth = Mat::from_shape_fn((scored.len(), 1), |(i, _)| scored[i].1);
    mse_mae(&pred, &truth, &Array2::from_elem((scored.len(), 1), true))
}

/// Per-channel mean of the Observed cells, predicted at every Masked cell.
pub fn mean_imputation(sample: &TimeSeriesSample) -> Result<Vec<CellPrediction>> {
    let d = sample.channels();
    let mut means = vec![0.0; d];
    let mut all = (0.0, 0usize);
    for (j, mean) in means.iter_mut().enumerate() {
        let (mut s, mut n) = (0.0, 0usize);
        for r in 0..sample.len() {
            if sample.state(r, j) == CellState::Observed {
                s += sample.features()[[r, j]];
                n += 1;
            }
        }
        all.0 += s;
        all.1 += n;
        *mean = if n > 0 { s / n as f64 } else { f64::NAN };
    }
    if all.1 == 0 {
        return Err(Error::EmptyContext(format!("sample '{}' has no Observed cell", sample.id)));
    }
    // Channels without any Observed cell fall back to the pooled mean.
    let pooled = all.0 / all.1 as f64;
    let mut out = Vec::new();
    for r in 0..sample.len() {
        for (j, mean) in means.iter().enumerate() {
            if sample.state(r, j) == CellState::Masked {
                out.push(CellPrediction {
                    row: r,
                    channel: j,
                    t: sample.stamps()[r],
                    prediction: if mean.is_nan() { pooled } else { *mean },
                    truth: sample.value(r, j),
                    observed: false,
                });
            }
        }
    }
    Ok(out)
}

/// Repeats the last available history value of each channel `horizon` times.
pub fn last_value_forecast(history: &TimeSeriesSample, horizon: usize) -> Result<Mat> {
    let d = history.channels();
    let mut out = Mat::zeros((horizon, d));
    for j in 0..d {
        let last = (0..history.len())
            .rev()
            .find_map(|r| (history.state(r, j) == CellState::Observed).then(|| history.features()[[r, j]]))
            .ok_or_else(|| Error::EmptyContext(format!("history '{}' channel {j} is empty", history.id)))?;
        out.column_mut(j).fill(last);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

impl WelchResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "Welch test needs at least 2 values per list, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::invalid("Welch test inputs must be finite"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(WelchResult {
                t: 0.0,
                df: na + nb - 2.0,
                p: 1.0,
            });
        }
        return Err(Error::invalid("both lists have zero variance but different means"));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(format!("Student t: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}

/// One scored window.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub window: String,
    pub task: Task,
    /// τ for imputation, F for forecasting.
    pub param: f64,
    pub mse: f64,
    pub mae: f64,
}

impl EvalRecord {
    fn key(&self) -> String {
        format!("{}@{}", self.window, format_param(self.task, self.param))
    }
}

fn format_param(task: Task, param: f64) -> String {
    match task {
        Task::Imputation => format!("{param:.2}"),
        Task::Forecasting => format!("{}", param as u64),
    }
}

/// Per-window metrics plus an aggregate footer.
///
/// ```text
/// # tvinr eval v1
/// window,task,param,mse,mae
/// s00:test0,imputation,0.30,0.0123,0.0912
/// # aggregate n=1 mse=0.0123 mae=0.0912
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

const REPORT_HEADER: &str = "# tvinr eval v1";
const REPORT_COLUMNS: &str = "window,task,param,mse,mae";

impl EvalReport {
    pub fn push(&mut self, record: EvalRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean MSE and MAE over records.
    pub fn aggregate(&self) -> (f64, f64) {
        aggregate(self.records.iter())
    }

    /// Aggregate over records with the given τ or F.
    pub fn aggregate_for(&self, param: f64) -> (f64, f64) {
        aggregate(self.records.iter().filter(|r| r.param == param))
    }

    pub fn filter(&self, param: f64) -> EvalReport {
        EvalReport {
            records: self.records.iter().filter(|r| r.param == param).cloned().collect(),
        }
    }

    pub fn format(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n{REPORT_COLUMNS}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.window,
                r.task,
                format_param(r.task, r.param),
                r.mse,
                r.mae
            ));
        }
        let (mse, mae) = self.aggregate();
        out.push_str(&format!("# aggregate n={} mse={mse} mae={mae}\n", self.records.len()));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Parse {
            path: "<report>".into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == REPORT_HEADER => {}
            _ => return Err(bad(1, format!("expected '{REPORT_HEADER}'"))),
        }
        match lines.next() {
            Some((_, l)) if l == REPORT_COLUMNS => {}
            _ => return Err(bad(2, format!("expected '{REPORT_COLUMNS}'"))),
        }
        let mut report = EvalReport::default();
        for (i, line) in lines {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 1, format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| bad(i + 1, format!("bad {what} '{s}'")))
            };
            report.push(EvalRecord {
                window: f[0].to_string(),
                task: f[1].parse().map_err(|e: String| bad(i + 1, e))?,
                param: num(f[2], "param")?,
                mse: num(f[3], "mse")?,
                mae: num(f[4], "mae")?,
            });
        }
        Ok(report)
    }
}

fn aggregate<'a>(records: impl Iterator<Item = &'a EvalRecord>) -> (f64, f64) {
    let (mut mse, mut mae, mut n) = (0.0, 0.0, 0usize);
    for r in records {
        mse += r.mse;
        mae += r.mae;
        n += 1;
    }
    if n == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (mse / n as f64, mae / n as f64)
    }
}

/// Welch tests of two reports over the same windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub mse: WelchResult,
    pub mae: WelchResult,
    pub mean_mse: (f64, f64),
    pub mean_mae: (f64, f64),
}

pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    let keys = |r: &EvalReport| r.records.iter().map(EvalRecord::key).collect::<BTreeSet<_>>();
    let (ka, kb) = (keys(a), keys(b));
    if ka != kb || a.len() != b.len() {
        let only_a: Vec<&String> = ka.difference(&kb).collect();
        let only_b: Vec<&String> = kb.difference(&ka).collect();
        return Err(Error::ReportMismatch(format!(
            "windows only in A: {only_a:?}; windows only in B: {only_b:?}"
        )));
    }
    let mut ra: Vec<&EvalRecord> = a.records.iter().collect();
    let mut rb: Vec<&EvalRecord> = b.records.iter().collect();
    ra.sort_by_key(|r| r.key());
    rb.sort_by_key(|r| r.key());
    let col = |rs: &[&EvalRecord], f: fn(&EvalRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let (a_mse, b_mse) = (col(&ra, |r| r.mse), col(&rb, |r| r.mse));
    let (a_mae, b_mae) = (col(&ra, |r| r.mae), col(&rb, |r| r.mae));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Comparison {
        mse: welch_t_test(&a_mse, &b_mse)?,
        mae: welch_t_test(&a_mae, &b_mae)?,
        mean_mse: (mean(&a_mse), mean(&b_mse)),
        mean_mae: (mean(&a_mae), mean(&b_mae)),
    })
}

/// A standardized window ready for the model, with the statistics needed
/// to map predictions back.
#[derive(Debug, Clone)]
pub struct Window {
    pub record: SeriesRecord,
    pub sample: TimeSeriesSample,
    pub stats: ChannelStats,
}

/// Imputation windows: stamps min-max normalized and channels standardized
/// over every available cell.
pub fn imputation_windows(records: &[SeriesRecord]) -> Result<Vec<Window>> {
    records
        .iter()
        .map(|rec| {
            let raw = rec.to_sample()?;
            let stats = ChannelStats::fit(&raw);
            Ok(Window {
                record: rec.clone(),
                sample: stats.apply(&raw)?,
                stats,
            })
        })
        .collect()
}

/// Forecasting windows of `history + horizon` rows (the horizon may be
/// shorter than the record). Stamps are scaled so that the history spans
/// `[0, (H-1)/(H+F_max-1)]`, which keeps them consistent for every F, and
/// channels are standardized with history statistics only.
pub fn forecast_windows(records: &[SeriesRecord], history: usize, max_horizon: usize) -> Result<Vec<Window>> {
    records
        .iter()
        .map(|rec| {
            if rec.len() < history || history < 2 {
                return Err(Error::InsufficientData(format!(
                    "series '{}' has {} rows, history needs {history} (≥ 2)",
                    rec.id,
                    rec.len()
                )));
            }
            let stamps = forecast_stamps(&rec.stamps, history, max_horizon)?;
            let raw = rec.to_sample_with(stamps)?;
            let stats = ChannelStats::fit_rows(&raw, 0..history);
            Ok(Window {
                record: rec.clone(),
                sample: stats.apply(&raw)?,
                stats,
            })
        })
        .collect()
}

/// Maps raw stamps so that `raw[0] → 0` and `raw[H-1] → (H-1)/(H+F_max-1)`.
pub fn forecast_stamps(raw: &[f64], history: usize, max_horizon: usize) -> Result<Vec<f64>> {
    if history < 2 || raw.len() < history {
        return Err(Error::InsufficientData("history needs at least two stamps".into()));
    }
    let span = raw[history - 1] - raw[0];
    if !(span > 0.0) {
        return Err(Error::invalid("history stamps must increase"));
    }
    let scale = span * (history + max_horizon - 1) as f64 / (history - 1) as f64;
    Ok(raw.iter().map(|t| (t - raw[0]) / scale).collect())
}

/// Scores one checkpoint and the mean-imputation oracle on the same masks:
/// each window is masked once per τ with a seed derived from `seed`, the
/// window index and τ.
pub fn evaluate_imputation(
    ckpt: &Checkpoint,
    windows: &[TimeSeriesSample],
    taus: &[f64],
    seed: u64,
    opts: &InferenceOptions,
) -> Result<(EvalReport, EvalReport)> {
    let mut model = EvalReport::default();
    let mut baseline = EvalReport::default();
    for &tau in taus {
        for (i, w) in windows.iter().enumerate() {
            let masked = test_mask(w, tau, seed, i)?;
            let cells = impute(ckpt, &masked, opts)?;
            if cells.is_empty() {
                continue;
            }
            let (mse, mae) = cell_metrics(&cells)?;
            model.push(record(&w.id, Task::Imputation, tau, mse, mae));
            let (mse, mae) = cell_metrics(&mean_imputation(&masked)?)?;
            baseline.push(record(&w.id, Task::Imputation, tau, mse, mae));
        }
    }
    Ok((model, baseline))
}

/// The held-out mask of window `index` at `tau`.
pub fn test_mask(window: &TimeSeriesSample, tau: f64, seed: u64, index: usize) -> Result<TimeSeriesSample> {
    let mut rng: ChaCha8Rng = stream_rng(seed, &[STREAM_TEST, index as u64, tau.to_bits()]);
    let mut masked = make_imputation_mask(&window.unmasked(), tau, &mut rng)?;
    if masked.count(CellState::Observed) == 0 {
        if let Some(r) = masked.rows_where(|s| s == CellState::Masked).first() {
            let j = (0..masked.channels()).find(|&j| masked.state(*r, j) == CellState::Masked).unwrap();
            masked.set_state(*r, j, CellState::Observed);
        }
    }
    Ok(masked)
}

/// Scores forecasts and last-value carry-forward at each horizon. Windows
/// must hold at least `history + F` rows.
pub fn evaluate_forecast(
    ckpt: &Checkpoint,
    windows: &[TimeSeriesSample],
    history: usize,
    horizons: &[usize],
    opts: &InferenceOptions,
) -> Result<(EvalReport, EvalReport)> {
    let mut model = EvalReport::default();
    let mut baseline = EvalReport::default();
    for &f in horizons {
        for w in windows {
            let split = split_forecast(w, history, f)?;
            let pred = forecast(ckpt, &split.history, &split.stamps, opts)?;
            let (mse, mae) = mse_mae(&pred, &split.truth, &split.target)?;
            model.push(record(&w.id, Task::Forecasting, f as f64, mse, mae));
            let naive = last_value_forecast(&split.history, f)?;
            let (mse, mae) = mse_mae(&naive, &split.truth, &split.target)?;
            baseline.push(record(&w.id, Task::Forecasting, f as f64, mse, mae));
        }
    }
    Ok((model, baseline))
}

/// History sample plus the forecast stamps and targets of one window.
#[derive(Debug, Clone)]
pub struct ForecastSplit {
    pub history: TimeSeriesSample,
    pub stamps: Vec<f64>,
    /// Zero where the target cell is Absent.
    pub truth: Mat,
    pub target: Array2<bool>,
}

pub fn split_forecast(window: &TimeSeriesSample, history: usize, horizon: usize) -> Result<ForecastSplit> {
    let masked = make_forecast_mask(&window.unmasked().truncated(history + horizon)?, history, horizon)?;
    let hist = masked.truncated(history)?;
    let d = window.channels();
    let mut truth = Mat::zeros((horizon, d));
    let mut target = Array2::from_elem((horizon, d), false);
    for i in 0..horizon {
        for j in 0..d {
            if let Some(v) = masked.value(history + i, j) {
                truth[[i, j]] = v;
                target[[i, j]] = true;
            }
        }
    }
    Ok(ForecastSplit {
        history: hist,
        stamps: masked.stamps()[history..].to_vec(),
        truth,
        target,
    })
}

fn record(window: &str, task: Task, param: f64, mse: f64, mae: f64) -> EvalRecord {
    EvalRecord {
        window: window.to_string(),
        task,
        param,
        mse,
        mae,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let all = Array2::from_elem((1, 2), true);
        assert_eq!(mse_mae(&array![[0.0, 2.0]], &array![[1.0, 1.0]], &all).unwrap(), (1.0, 1.0));
        assert_eq!(mse_mae(&array![[1.0, 1.0]], &array![[1.0, 1.0]], &all).unwrap(), (0.0, 0.0));
        assert_eq!(mse_mae(&array![[2.0, 3.0]], &array![[1.0, 2.0]], &all).unwrap(), (1.0, 1.0));
        let none = Array2::from_elem((1, 2), false);
        assert!(mse_mae(&array![[0.0, 2.0]], &array![[1.0, 1.0]], &none).is_err());
        assert!(mse_mae(&array![[0.0]], &array![[1.0, 1.0]], &all).is_err());
    }

    proptest! {
        #[test]
        fn metrics_match_cell_loop(vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, proptest::bool::ANY), 1..40)) {
            let n = vals.len();
            let pred = Mat::from_shape_fn((n, 1), |(i, _)| vals[i].0);
            let truth = Mat::from_shape_fn((n, 1), |(i, _)| vals[i].1);
            let mut target = Array2::from_shape_fn((n, 1), |(i, _)| vals[i].2);
            target[[0, 0]] = true;
            let (mut se, mut ae, mut k) = (0.0, 0.0, 0.0);
            for i in 0..n {
                if target[[i, 0]] {
                    se += (vals[i].0 - vals[i].1).powi(2);
                    ae += (vals[i].0 - vals[i].1).abs();
                    k += 1.0;
                }
            }
            let (mse, mae) = mse_mae(&pred, &truth, &target).unwrap();
            prop_assert_eq!(mse, se / k);
            prop_assert_eq!(mae, ae / k);
        }
    }

    #[test]
    fn welch_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let r = welch_t_test(&a, &b).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        assert!((r.p - 0.346_593_507_087_334).abs() < 1e-10, "{}", r.p);
        let same = welch_t_test(&a, &a).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        let flat = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((flat.t, flat.p), (0.0, 1.0));
        assert!(welch_t_test(&[1.0], &b).is_err());
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn shifted_lists_are_significant() {
        let a = [0.11, 0.09, 0.13, 0.10, 0.12];
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        assert!(welch_t_test(&a, &b).unwrap().significant(0.05));
    }

    #[test]
    fn report_round_trip() {
        let mut r = EvalReport::default();
        r.push(record("s0:test0", Task::Imputation, 0.3, 0.125, 0.25));
        r.push(record("s1:test0", Task::Imputation, 0.3, 1.0 / 3.0, 0.5));
        let text = r.format();
        assert!(text.contains("s0:test0,imputation,0.30,0.125,0.25\n"));
        assert!(text.ends_with(&format!("# aggregate n=2 mse={} mae=0.375\n", (0.125 + 1.0 / 3.0) / 2.0)));
        let back = EvalReport::parse(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.format(), text);
        assert!(EvalReport::parse("window,task\n").is_err());
    }

    #[test]
    fn comparing_reports() {
        let mut a = EvalReport::default();
        for i in 0..5 {
            a.push(record(&format!("w{i}"), Task::Forecasting, 96.0, 0.1 + 0.01 * i as f64, 0.2));
        }
        let same = compare_reports(&a, &a).unwrap();
        assert_eq!(same.mse.p, 1.0);
        let mut b = a.clone();
        b.records.iter_mut().for_each(|r| r.mse += 1.0);
        assert!(compare_reports(&a, &b).unwrap().mse.significant(0.05));
        let mut c = EvalReport::default();
        for i in 0..3 {
            c.push(a.records[i].clone());
        }
        c.push(record("extra", Task::Forecasting, 96.0, 0.1, 0.2));
        let err = compare_reports(&a, &c).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn baselines() {
        let s = TimeSeriesSample::dense("a", vec![0.0, 0.5, 1.0], array![[1.0], [3.0], [8.0]], vec![]).unwrap();
        let mut m = s.clone();
        m.set_state(2, 0, CellState::Masked);
        let cells = mean_imputation(&m).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].prediction, 2.0);
        assert_eq!(cells[0].truth, Some(8.0));
        assert_eq!(last_value_forecast(&s, 2).unwrap(), array![[8.0], [8.0]]);
    }

    #[test]
    fn forecast_stamp_scaling() {
        let raw: Vec<f64> = (0..10).map(|i| 3.0 + 2.0 * i as f64).collect();
        let t = forecast_stamps(&raw, 4, 6).unwrap();
        assert_eq!(t[0], 0.0);
        assert!((t[3] - 3.0 / 9.0).abs() < 1e-15);
        assert!((t[9] - 1.0).abs() < 1e-15);
        assert!(forecast_stamps(&raw[..1], 1, 3).is_err());
    }
}
