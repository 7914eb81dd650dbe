//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 training divergence,
//! 3 checkpoint/task mismatch, 4 gradient check failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{format_csv, read_csv, window_series, SeriesRecord, SplitPlan, SynthKind, SynthSpec};
use crate::error::Error;
use crate::tasks::{
    cell_metrics, forecast, forecast_windows, imputation_windows, last_value_forecast, mean_imputation, mse_mae,
    reconstruct_history, split_forecast, test_mask, compare_reports, fill_absent, impute, impute_with_observed,
    CellPrediction, EvalRecord, EvalReport, InferenceOptions, Route, Window,
};
use crate::training::{grad_check, train, write_atomic, Checkpoint, GradCheckOptions, Task, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

/// Gradient check pass threshold in 64-bit mode.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;
/// Threshold applied when 32-bit precision is requested.
pub const GRADCHECK_THRESHOLD_F32: f64 = 1e-2;

#[derive(Debug, Parser)]
#[command(name = "tvinr", version, about = "Time series imputation and forecasting with variational INRs")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset CSV.
    Synth(SynthArgs),
    /// Print a complete config file.
    Config(ConfigArgs),
    /// Train a checkpoint.
    Train(TrainArgs),
    /// Impute masked or absent cells.
    Impute(ImputeArgs),
    /// Forecast beyond each series' history.
    Forecast(ForecastArgs),
    /// Welch tests between two eval reports.
    Eval(EvalArgs),
    /// Check ELBO gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Split a predictions file into per-window plot series.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "sine-mix")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 8)]
    pub series: usize,
    #[arg(long, default_value_t = 200)]
    pub len: usize,
    #[arg(long, default_value_t = 1)]
    pub dims: usize,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Waves per channel (sine-mix only).
    #[arg(long)]
    pub components: Option<usize>,
    /// Falls back to TVINR_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `small` (desk scale) or `paper` (Electricity L=200).
    #[arg(long, default_value = "small")]
    pub preset: String,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Flags that override config file values.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, value_delimiter = ',')]
    pub tau_set: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    #[arg(long)]
    pub dim_z: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.task {
            c.task = v;
        }
        if let Some(v) = &self.tau_set {
            c.tau_set = v.clone();
        }
        if let Some(v) = &self.horizons {
            c.horizons = v.clone();
        }
        if let Some(v) = self.history {
            c.history = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.kl_weight {
            c.kl_weight = v;
        }
        if let Some(v) = self.dim_z {
            c.dim_z = v;
        }
        if let Some(v) = self.d_model {
            c.d_model = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config; every key required. Without it the small preset is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Cut series into windows of this length (default: whole series for
    /// imputation, history + largest horizon for forecasting).
    #[arg(long)]
    pub window_len: Option<usize>,
    /// Window stride (default: window length).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Non-overlapping windows held out from the end of each series.
    #[arg(long, default_value_t = 0)]
    pub test_windows: usize,
    /// Where to write the held-out windows.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Every series in the file is one window.
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions CSV.
    #[arg(long, short)]
    pub out: PathBuf,
    /// EvalReport path; rows only for windows with ground truth.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// EvalReport of the naive baseline on the same cells.
    #[arg(long)]
    pub baseline_report: Option<PathBuf>,
    /// 0 decodes the latent mean; n averages n draws.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    /// Falls back to TVINR_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub common: InferenceArgs,
    /// Mask each window at this observation ratio and score the masked
    /// cells. Without it, Absent cells are filled.
    #[arg(long)]
    pub tau: Option<f64>,
    /// `prior` (Observed cells only) or `posterior`.
    #[arg(long, default_value = "prior")]
    pub route: Route,
    /// Also write reconstructions of Observed cells.
    #[arg(long)]
    pub include_observed: bool,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub common: InferenceArgs,
    #[arg(long)]
    pub horizon: usize,
    /// Also write reconstructions of the history.
    #[arg(long)]
    pub include_history: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// TOML config (default: the small preset).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Only 64-bit is computed; 32 relaxes the threshold.
    #[arg(long, default_value_t = 64)]
    pub precision: u32,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 120)]
    pub picks: usize,
    /// Scale analytic gradients (negative control).
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub predictions: PathBuf,
    /// One `<window>_y<channel>.csv` per window and channel.
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGED,
            Error::TaskMismatch { .. } => EXIT_MISMATCH,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// What a run consumed and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<TrainConfig>,
    pub dataset: Option<Fingerprint>,
    pub checkpoint: Option<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: usize,
}

impl Fingerprint {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        let mut sha256 = String::with_capacity(64);
        for b in digest.iter() {
            write!(sha256, "{b:02x}").unwrap();
        }
        Ok(Fingerprint {
            path: path.to_path_buf(),
            sha256,
            bytes: bytes.len(),
        })
    }
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(Error::from)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

fn manifest_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    })
}

/// `TVINR_SEED` if set and numeric.
pub fn env_seed() -> Option<u64> {
    std::env::var("TVINR_SEED").ok().and_then(|s| s.trim().parse().ok())
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(env_seed).unwrap_or(0)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be ≥ 1"));
        }
        // Fails harmlessly if a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Config(a) => cmd_config(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Impute(a) => cmd_impute(&a),
        Command::Forecast(a) => cmd_forecast(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Plotdata(a) => cmd_plotdata(&a),
    }
}

fn write_output(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes()).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let mut spec = SynthSpec::new(a.kind, a.series, a.len, a.dims, a.noise);
    if let Some(c) = a.components {
        if a.kind != SynthKind::SineMix {
            return Err(CliError::usage("--components only applies to --kind sine-mix"));
        }
        if c == 0 {
            return Err(CliError::usage("--components must be ≥ 1"));
        }
        spec.components = c;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(a.seed));
    let records = crate::dataset::synth_records(&spec, &mut rng)?;
    write_output(&a.out, &format_csv(&records)?)
}

fn cmd_config(a: &ConfigArgs) -> CliResult<()> {
    let config = match a.preset.as_str() {
        "small" => TrainConfig::small(),
        "paper" => TrainConfig::paper_defaults(),
        other => return Err(CliError::usage(format!("unknown preset '{other}' (expected small or paper)"))),
    };
    match &a.out {
        Some(p) => write_output(p, &config.to_toml()),
        None => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> CliResult<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            Ok(TrainConfig::from_toml(&text)?)
        }
        None => {
            let mut c = TrainConfig::small();
            c.seed = resolve_seed(None);
            Ok(c)
        }
    }
}

fn load_records(path: &Path) -> CliResult<Vec<SeriesRecord>> {
    let records = read_csv(path)?;
    if records.is_empty() {
        return Err(CliError::usage(format!("{} holds no series", path.display())));
    }
    Ok(records)
}

/// Train, validation and held-out records for `config`.
pub fn split_records(
    config: &TrainConfig,
    records: &[SeriesRecord],
    window_len: Option<usize>,
    stride: Option<usize>,
    test_windows: usize,
) -> crate::Result<(Vec<SeriesRecord>, Vec<SeriesRecord>, Vec<SeriesRecord>)> {
    let window_len = match (config.task, window_len) {
        (_, Some(w)) => Some(w),
        (Task::Forecasting, None) => Some(config.history + config.max_horizon()),
        (Task::Imputation, None) => None,
    };
    let Some(window_len) = window_len else {
        if test_windows > 0 {
            return Err(Error::invalid("--test-windows needs --window-len for imputation"));
        }
        let (train, val) = crate::dataset::split_train_val(records);
        return Ok((train, val, Vec::new()));
    };
    let plan = SplitPlan::new(window_len, stride.unwrap_or(window_len), test_windows);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        let split = window_series(r, &plan)?;
        train.extend(split.train);
        val.extend(split.val);
        test.extend(split.test);
    }
    if train.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no training window of length {window_len} fits before the held-out windows"
        )));
    }
    Ok((train, val, test))
}

fn to_windows(config: &TrainConfig, records: &[SeriesRecord]) -> crate::Result<Vec<Window>> {
    match config.task {
        Task::Imputation => imputation_windows(records),
        Task::Forecasting => forecast_windows(records, config.history, config.max_horizon()),
    }
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut config = load_config(&a.config)?;
    a.overrides.apply(&mut config);
    config.validate()?;
    let fingerprint = Fingerprint::of(&a.data)?;
    let records = load_records(&a.data)?;
    let (train_recs, val_recs, test_recs) = split_records(&config, &records, a.window_len, a.stride, a.test_windows)?;
    if let Some(p) = &a.test_out {
        if test_recs.is_empty() {
            return Err(CliError::usage("--test-out given but no window is held out (use --test-windows)"));
        }
        write_output(p, &format_csv(&test_recs)?)?;
    }
    let samples = |recs: &[SeriesRecord]| -> crate::Result<Vec<_>> {
        Ok(to_windows(&config, recs)?.into_iter().map(|w| w.sample).collect())
    };
    let train_set = samples(&train_recs)?;
    let val_set = samples(&val_recs)?;
    let load_s = start.elapsed().as_secs_f64();

    let mut stdout = std::io::stdout();
    let outcome = train(&config, &train_set, &val_set, &mut |e| {
        let _ = writeln!(stdout, "{e}");
        let _ = stdout.flush();
    })?;
    let train_s = start.elapsed().as_secs_f64() - load_s;
    outcome.checkpoint.save(&a.out)?;

    let last = outcome.history.last();
    let mut metrics = BTreeMap::new();
    metrics.insert("best_epoch".into(), outcome.checkpoint.epoch as f64);
    if let Some(v) = outcome.checkpoint.best_val {
        metrics.insert("best_val".into(), v);
    }
    if let Some(e) = last {
        metrics.insert("final_train".into(), e.train_loss);
        metrics.insert("final_val".into(), e.val_loss);
        metrics.insert("final_kl".into(), e.train_kl);
    }
    metrics.insert("train_windows".into(), train_set.len() as f64);
    metrics.insert("val_windows".into(), val_set.len() as f64);
    metrics.insert("test_windows".into(), test_recs.len() as f64);
    let mut timings = BTreeMap::new();
    timings.insert("load".into(), load_s);
    timings.insert("train".into(), train_s);
    timings.insert("total".into(), start.elapsed().as_secs_f64());
    RunManifest {
        command: "train".into(),
        seed: config.seed,
        config: Some(config),
        dataset: Some(fingerprint),
        checkpoint: Some(a.out.clone()),
        metrics,
        timings,
    }
    .save(&manifest_path(&a.manifest, &a.out))
}

/// A row of the predictions CSV, in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub series_id: String,
    pub t: f64,
    pub channel: usize,
    pub prediction: f64,
    pub truth: Option<f64>,
    pub observed: bool,
}

/// Renders `series_id,t,channel,prediction[,truth],observed`; the truth
/// column appears only if some row has a truth value.
pub fn format_predictions(rows: &[PredictionRow]) -> String {
    let with_truth = rows.iter().any(|r| r.truth.is_some());
    let mut s = String::from(if with_truth {
        "series_id,t,channel,prediction,truth,observed\n"
    } else {
        "series_id,t,channel,prediction,observed\n"
    });
    for r in rows {
        write!(s, "{},{},{},{}", r.series_id, r.t, r.channel, r.prediction).unwrap();
        if with_truth {
            match r.truth {
                Some(v) => write!(s, ",{v}").unwrap(),
                None => s.push(','),
            }
        }
        writeln!(s, ",{}", u8::from(r.observed)).unwrap();
    }
    s
}

pub fn parse_predictions(text: &str) -> crate::Result<Vec<PredictionRow>> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "<predictions>".into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let with_truth = match lines.next() {
        Some((_, "series_id,t,channel,prediction,truth,observed")) => true,
        Some((_, "series_id,t,channel,prediction,observed")) => false,
        _ => return Err(bad(1, "unrecognized predictions header".into())),
    };
    let width = if with_truth { 6 } else { 5 };
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(bad(i + 1, format!("expected {width} fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, format!("bad number '{s}'")));
        let truth = if with_truth && !f[4].is_empty() { Some(num(f[4])?) } else { None };
        rows.push(PredictionRow {
            series_id: f[0].to_string(),
            t: num(f[1])?,
            channel: f[2].parse().map_err(|_| bad(i + 1, format!("bad channel '{}'", f[2])))?,
            prediction: num(f[3])?,
            truth,
            observed: match f[width - 1] {
                "1" => true,
                "0" => false,
                other => return Err(bad(i + 1, format!("bad observed flag '{other}'"))),
            },
        });
    }
    Ok(rows)
}

fn cell_rows(w: &Window, cells: &[CellPrediction]) -> Vec<PredictionRow> {
    cells
        .iter()
        .map(|c| PredictionRow {
            series_id: w.record.id.clone(),
            t: w.record.stamps[c.row],
            channel: c.channel,
            prediction: w.stats.invert(c.channel, c.prediction),
            truth: c.truth.map(|v| w.stats.invert(c.channel, v)),
            observed: c.observed,
        })
        .collect()
}

fn load_for(path: &Path, task: Task) -> CliResult<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.task() != task {
        return Err(Error::TaskMismatch {
            trained: ckpt.task().to_string(),
            requested: task.to_string(),
        }
        .into());
    }
    Ok(ckpt)
}

struct InferenceOutput {
    rows: Vec<PredictionRow>,
    model: EvalReport,
    baseline: EvalReport,
}

fn finish_inference(
    command: &str,
    a: &InferenceArgs,
    ckpt: &Checkpoint,
    seed: u64,
    out: InferenceOutput,
    start: Instant,
) -> CliResult<()> {
    write_output(&a.out, &format_predictions(&out.rows))?;
    if let Some(p) = &a.report {
        write_output(p, &out.model.format())?;
    }
    if let Some(p) = &a.baseline_report {
        write_output(p, &out.baseline.format())?;
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("cells".into(), out.rows.len() as f64);
    if !out.model.is_empty() {
        let (mse, mae) = out.model.aggregate();
        let (bmse, bmae) = out.baseline.aggregate();
        metrics.insert("mse".into(), mse);
        metrics.insert("mae".into(), mae);
        metrics.insert("baseline_mse".into(), bmse);
        metrics.insert("baseline_mae".into(), bmae);
        println!("windows={} mse={mse:.6} mae={mae:.6} baseline_mse={bmse:.6} baseline_mae={bmae:.6}", out.model.len());
    }
    let mut timings = BTreeMap::new();
    timings.insert("total".into(), start.elapsed().as_secs_f64());
    RunManifest {
        command: command.into(),
        config: Some(ckpt.model.config.clone()),
        dataset: Some(Fingerprint::of(&a.data)?),
        checkpoint: Some(a.checkpoint.clone()),
        metrics,
        timings,
        seed,
    }
    .save(&manifest_path(&a.manifest, &a.out))
}

fn cmd_impute(a: &ImputeArgs) -> CliResult<()> {
    let start = Instant::now();
    let c = &a.common;
    let ckpt = load_for(&c.checkpoint, Task::Imputation)?;
    if let Some(tau) = a.tau {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(CliError::usage(format!("--tau must lie in (0, 1], got {tau}")));
        }
    }
    let seed = resolve_seed(c.seed);
    let opts = InferenceOptions {
        imputation_route: a.route,
        samples: c.samples,
        seed,
    };
    let windows = imputation_windows(&load_records(&c.data)?)?;
    let mut out = InferenceOutput {
        rows: Vec::new(),
        model: EvalReport::default(),
        baseline: EvalReport::default(),
    };
    for (i, w) in windows.iter().enumerate() {
        let mut cells = match a.tau {
            Some(tau) => {
                let masked = test_mask(&w.sample, tau, seed, i)?;
                let cells = if a.include_observed {
                    impute_with_observed(&ckpt, &masked, &opts)?
                } else {
                    impute(&ckpt, &masked, &opts)?
                };
                let targets: Vec<CellPrediction> = cells.iter().filter(|c| !c.observed).cloned().collect();
                if !targets.is_empty() {
                    let (mse, mae) = cell_metrics(&targets)?;
                    out.model.push(eval_record(&w.record.id, Task::Imputation, tau, mse, mae));
                    let (mse, mae) = cell_metrics(&mean_imputation(&masked)?)?;
                    out.baseline.push(eval_record(&w.record.id, Task::Imputation, tau, mse, mae));
                }
                cells
            }
            None => {
                let mut cells = fill_absent(&ckpt, &w.sample, &opts)?;
                if a.include_observed {
                    cells.extend(impute_with_observed(&ckpt, &w.sample, &opts)?);
                }
                cells
            }
        };
        cells.sort_by_key(|c| (c.row, c.channel));
        out.rows.extend(cell_rows(w, &cells));
    }
    finish_inference("impute", c, &ckpt, seed, out, start)
}

fn eval_record(window: &str, task: Task, param: f64, mse: f64, mae: f64) -> EvalRecord {
    EvalRecord {
        window: window.to_string(),
        task,
        param,
        mse,
        mae,
    }
}

fn cmd_forecast(a: &ForecastArgs) -> CliResult<()> {
    let start = Instant::now();
    let c = &a.common;
    let ckpt = load_for(&c.checkpoint, Task::Forecasting)?;
    let config = &ckpt.model.config;
    let (h, fmax, f) = (config.history, config.max_horizon(), a.horizon);
    if f == 0 || f > fmax {
        return Err(CliError::usage(format!("--horizon must lie in 1..={fmax} for this checkpoint, got {f}")));
    }
    let seed = resolve_seed(c.seed);
    let opts = InferenceOptions {
        seed,
        samples: c.samples,
        ..InferenceOptions::default()
    };
    let records = load_records(&c.data)?;
    let mut out = InferenceOutput {
        rows: Vec::new(),
        model: EvalReport::default(),
        baseline: EvalReport::default(),
    };
    for rec in &records {
        if rec.len() < h {
            return Err(Error::InsufficientData(format!("series '{}' has {} rows, history needs {h}", rec.id, rec.len())).into());
        }
        let (window, raw_stamps, pred, truth) = if rec.len() >= h + f {
            let cut = rec.window(0, h + f, rec.id.clone());
            let w = forecast_windows(std::slice::from_ref(&cut), h, fmax)?.remove(0);
            let split = split_forecast(&w.sample, h, f)?;
            let pred = forecast(&ckpt, &split.history, &split.stamps, &opts)?;
            let (mse, mae) = mse_mae(&pred, &split.truth, &split.target)?;
            out.model.push(eval_record(&rec.id, Task::Forecasting, f as f64, mse, mae));
            let naive = last_value_forecast(&split.history, f)?;
            let (mse, mae) = mse_mae(&naive, &split.truth, &split.target)?;
            out.baseline.push(eval_record(&rec.id, Task::Forecasting, f as f64, mse, mae));
            let truth: Vec<Vec<Option<f64>>> = (0..f)
                .map(|i| (0..rec.channels()).map(|j| split.target[[i, j]].then(|| split.truth[[i, j]])).collect())
                .collect();
            (w, rec.stamps[h..h + f].to_vec(), pred, truth)
        } else {
            // No ground truth: continue the history's mean spacing.
            let hist = rec.window(0, h, rec.id.clone());
            let step = (hist.stamps[h - 1] - hist.stamps[0]) / (h - 1).max(1) as f64;
            let future: Vec<f64> = (1..=f).map(|i| hist.stamps[h - 1] + step * i as f64).collect();
            let w = forecast_windows(std::slice::from_ref(&hist), h, fmax)?.remove(0);
            let mut all = hist.stamps.clone();
            all.extend(&future);
            let scaled = crate::tasks::forecast_stamps(&all, h, fmax)?;
            let pred = forecast(&ckpt, &w.sample, &scaled[h..], &opts)?;
            (w, future, pred, vec![vec![None; rec.channels()]; f])
        };
        let history = window.sample.truncated(h)?;
        if a.include_history {
            let recon = reconstruct_history(&ckpt, &history, &opts)?;
            for i in 0..h {
                for j in 0..rec.channels() {
                    out.rows.push(PredictionRow {
                        series_id: rec.id.clone(),
                        t: rec.stamps[i],
                        channel: j,
                        prediction: window.stats.invert(j, recon[[i, j]]),
                        truth: history.value(i, j).map(|v| window.stats.invert(j, v)),
                        observed: history.value(i, j).is_some(),
                    });
                }
            }
        }
        for (i, t) in raw_stamps.iter().enumerate() {
            for j in 0..rec.channels() {
                out.rows.push(PredictionRow {
                    series_id: rec.id.clone(),
                    t: *t,
                    channel: j,
                    prediction: window.stats.invert(j, pred[[i, j]]),
                    truth: truth[i][j].map(|v| window.stats.invert(j, v)),
                    observed: false,
                });
            }
        }
    }
    finish_inference("forecast", c, &ckpt, seed, out, start)
}

fn read_report(path: &Path) -> CliResult<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    EvalReport::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::usage("--alpha must lie in (0, 1)"));
    }
    let (ra, rb) = (read_report(&a.a)?, read_report(&a.b)?);
    let cmp = compare_reports(&ra, &rb)?;
    println!("windows={}", ra.len());
    for (name, w, means) in [("mse", cmp.mse, cmp.mean_mse), ("mae", cmp.mae, cmp.mean_mae)] {
        let verdict = if w.significant(a.alpha) {
            format!("significant difference at alpha={}", a.alpha)
        } else {
            "no significant difference".to_string()
        };
        println!(
            "{name}: mean_a={:.6} mean_b={:.6} t={:.6} df={:.3} p={:.6} {verdict}",
            means.0, means.1, w.t, w.df, w.p
        );
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let threshold = match a.precision {
        64 => GRADCHECK_THRESHOLD,
        32 => {
            eprintln!(
                "warning: computation is always 64-bit; --precision 32 only relaxes the threshold to {GRADCHECK_THRESHOLD_F32}"
            );
            GRADCHECK_THRESHOLD_F32
        }
        p => return Err(CliError::usage(format!("--precision must be 32 or 64, got {p}"))),
    };
    let mut config = load_config(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let opts = GradCheckOptions {
        picks: a.picks,
        corrupt: a.corrupt,
        ..GradCheckOptions::default()
    };
    let start = Instant::now();
    let report = grad_check(&config, &opts)?;
    let (name, index) = &report.worst;
    println!(
        "max_rel_error={:.3e} threshold={threshold:.0e} checked={} worst={name}[{index}] elapsed={:.2}s",
        report.max_rel_error,
        report.checked,
        start.elapsed().as_secs_f64()
    );
    if report.max_rel_error < threshold {
        println!("gradcheck PASS");
        Ok(())
    } else {
        println!("gradcheck FAIL");
        Err(CliError {
            code: EXIT_GRADCHECK,
            message: format!(
                "gradient check failed: relative error {:.3e} at {name}[{index}]",
                report.max_rel_error
            ),
        })
    }
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-window plot series `t,truth,prediction,observed`, one row per stamp.
pub fn plot_series(rows: &[PredictionRow]) -> Vec<(String, usize, String)> {
    let mut order: Vec<(&str, usize)> = Vec::new();
    let mut groups: BTreeMap<(&str, usize), Vec<&PredictionRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.series_id.as_str(), r.channel);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let mut points = groups.remove(&key).unwrap();
            points.sort_by(|a, b| a.t.total_cmp(&b.t));
            let mut s = String::from("t,truth,prediction,observed\n");
            for p in points {
                writeln!(s, "{},{},{},{}", p.t, fmt_opt(p.truth), p.prediction, u8::from(p.observed)).unwrap();
            }
            (key.0.to_string(), key.1, s)
        })
        .collect()
}

fn cmd_plotdata(a: &PlotArgs) -> CliResult<()> {
    let text =
        std::fs::read_to_string(&a.predictions).map_err(|e| CliError::usage(format!("{}: {e}", a.predictions.display())))?;
    let rows = parse_predictions(&text)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::usage(format!("{}: {e}", a.out_dir.display())))?;
    let series = plot_series(&rows);
    for (id, channel, body) in &series {
        write_output(&a.out_dir.join(format!("{}_y{channel}.csv", safe_name(id))), body)?;
    }
    println!("wrote {} plot series to {}", series.len(), a.out_dir.display());
    Ok(())
}
