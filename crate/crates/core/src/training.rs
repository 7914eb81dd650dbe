//! ELBO optimization, gradient checking and checkpoint persistence.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, ParamId};
use crate::dataset::{make_forecast_mask, make_imputation_mask, CellState, SynthKind, SynthSpec, TimeSeriesSample};
use crate::embedding::FourierBasis;
use crate::error::{Error, Result};
use crate::model::{Prepared, TvInr};
use crate::nn::{Activation, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Imputation,
    Forecasting,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Imputation => "imputation",
            Task::Forecasting => "forecasting",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "imputation" => Ok(Task::Imputation),
            "forecasting" => Ok(Task::Forecasting),
            other => Err(format!("unknown task '{other}' (expected imputation or forecasting)")),
        }
    }
}

/// Every training and architecture setting. All keys are required when read
/// from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub dim_z: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Transformer blocks per encoder.
    pub layers: usize,
    /// Causal attention by original position.
    pub causal: bool,
    pub hyper_layers: Vec<usize>,
    pub hyper_activation: Activation,
    pub generator_layers: Vec<usize>,
    pub generator_activation: Activation,
    pub covariate_layers: Vec<usize>,
    pub covariate_dim: usize,
    pub fourier_m: usize,
    pub fourier_sigma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// β
    pub kl_weight: f64,
    pub tau_set: Vec<f64>,
    pub horizons: Vec<usize>,
    pub history: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// The L = 200 Electricity imputation setting.
    pub fn paper_defaults() -> Self {
        TrainConfig {
            task: Task::Imputation,
            dim_z: 32,
            d_model: 128,
            heads: 2,
            layers: 2,
            causal: false,
            hyper_layers: vec![128, 256],
            hyper_activation: Activation::Gelu,
            generator_layers: vec![64, 64, 64],
            generator_activation: Activation::Relu,
            covariate_layers: vec![8, 8],
            covariate_dim: 4,
            fourier_m: 256,
            fourier_sigma: 2.0,
            lr: 1e-4,
            batch_size: 256,
            epochs: 2000,
            kl_weight: 1.0,
            tau_set: vec![0.05, 0.30, 0.50, 0.75, 0.90, 1.0],
            horizons: vec![96, 192, 336, 720],
            history: 512,
            seed: 0,
        }
    }

    /// Desk-scale model that trains in minutes on one CPU core.
    pub fn small() -> Self {
        TrainConfig {
            dim_z: 4,
            d_model: 16,
            heads: 2,
            layers: 1,
            hyper_layers: vec![32, 64],
            generator_layers: vec![16, 16],
            fourier_m: 16,
            lr: 1e-3,
            batch_size: 16,
            epochs: 200,
            ..Self::paper_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad(format!("kl_weight must be ≥ 0, got {}", self.kl_weight));
        }
        if self.dim_z == 0 || self.d_model == 0 || self.fourier_m == 0 {
            return bad("dim_z, d_model and fourier_m must be ≥ 1".into());
        }
        if !(self.fourier_sigma > 0.0 && self.fourier_sigma.is_finite()) {
            return bad(format!("fourier_sigma must be > 0, got {}", self.fourier_sigma));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.hyper_layers.is_empty() || self.hyper_layers.contains(&0) {
            return bad("hyper_layers needs at least one non-zero width".into());
        }
        if self.generator_layers.contains(&0) || self.covariate_layers.contains(&0) {
            return bad("layer widths must be ≥ 1".into());
        }
        match self.task {
            Task::Imputation => {
                if self.tau_set.is_empty() || self.tau_set.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return bad("tau_set must be a non-empty subset of [0, 1]".into());
                }
            }
            Task::Forecasting => {
                if self.horizons.is_empty() || self.horizons.contains(&0) || self.history == 0 {
                    return bad("forecasting needs history ≥ 1 and non-empty positive horizons".into());
                }
            }
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(config)
    }
}

/// splitmix64 over the seed and a list of stream tags.
pub fn stream_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(seed), |acc, p| mix(acc ^ mix(*p)))
}

pub(crate) fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, parts))
}

const STREAM_SHUFFLE: u64 = 10;
const STREAM_STEP: u64 = 11;
const STREAM_VAL: u64 = 12;
const STREAM_GRADCHECK: u64 = 13;

/// A training sample with its stamp features cached. For forecasting the
/// sample spans `history + max horizon` rows and is truncated per draw.
#[derive(Debug, Clone)]
pub struct Prepped {
    pub sample: TimeSeriesSample,
    pub prepared: Prepared,
}

/// Masks a fully available sample for one training or validation draw.
/// Returns the masked sample and the drawn τ or F.
pub fn draw_masked(config: &TrainConfig, base: &TimeSeriesSample, rng: &mut impl Rng) -> Result<(TimeSeriesSample, f64)> {
    match config.task {
        Task::Imputation => {
            let tau = config.tau_set[rng.random_range(0..config.tau_set.len())];
            let mut masked = make_imputation_mask(base, tau, rng)?;
            ensure_observed(&mut masked, rng);
            Ok((masked, tau))
        }
        Task::Forecasting => {
            let f = config.horizons[rng.random_range(0..config.horizons.len())];
            let len = config.history + f;
            if base.len() < len {
                return Err(Error::InsufficientData(format!(
                    "sample '{}' has {} rows, history {} + horizon {f} needs {len}",
                    base.id,
                    base.len(),
                    config.history
                )));
            }
            let masked = make_forecast_mask(&base.truncated(len)?, config.history, f)?;
            Ok((masked, f as f64))
        }
    }
}

/// Small windows at low τ can round to zero kept cells; keep one.
fn ensure_observed(sample: &mut TimeSeriesSample, rng: &mut impl Rng) {
    if sample.count(CellState::Observed) > 0 {
        return;
    }
    let cells: Vec<(usize, usize)> = sample
        .mask()
        .indexed_iter()
        .filter(|(_, m)| **m == CellState::Masked)
        .map(|(ix, _)| ix)
        .collect();
    if !cells.is_empty() {
        let (r, j) = cells[rng.random_range(0..cells.len())];
        sample.set_state(r, j, CellState::Observed);
    }
}

fn draw_eps(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

impl ElboTerms {
    /// `loss == recon + β·KL` in floating point.
    pub fn identity_holds(&self, beta: f64) -> bool {
        self.loss == self.recon + beta * self.kl
    }
}

/// `(loss, recon, KL)` of a masked sample with fixed noise `eps`.
pub fn elbo_loss(model: &TvInr, sample: &TimeSeriesSample, eps: &[f64]) -> Result<ElboTerms> {
    let prepared = model.prepare(sample.stamps())?;
    let mut g = Graph::new(&model.params);
    let v = model.elbo_graph(&mut g, sample, &prepared, eps)?;
    Ok(ElboTerms {
        loss: g.scalar(v.loss),
        recon: g.scalar(v.recon),
        kl: g.scalar(v.kl),
    })
}

/// Loss terms and parameter gradients.
pub fn elbo_gradients(
    model: &TvInr,
    sample: &TimeSeriesSample,
    prepared: &Prepared,
    eps: &[f64],
) -> Result<(ElboTerms, Gradients)> {
    let mut g = Graph::new(&model.params);
    let v = model.elbo_graph(&mut g, sample, prepared, eps)?;
    let terms = ElboTerms {
        loss: g.scalar(v.loss),
        recon: g.scalar(v.recon),
        kl: g.scalar(v.kl),
    };
    Ok((terms, g.backward(v.loss)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_recon: f64,
    pub train_kl: f64,
    pub val_loss: f64,
    /// Smallest per-sample KL seen during the epoch.
    pub min_kl: f64,
    /// Per-sample evaluations where `loss != recon + β·KL`.
    pub identity_violations: usize,
    pub steps: usize,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train={:.6} val={:.6} kl={:.6}",
            self.epoch, self.train_loss, self.val_loss, self.train_kl
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epoch: usize,
}

/// A model plus the training position it was saved at.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TvInr,
    pub epoch: usize,
    pub best_val: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss.
    pub checkpoint: Checkpoint,
    /// Parameters after the last epoch.
    pub last: TvInr,
    pub history: Vec<EpochStats>,
}

pub fn prep_samples(model: &TvInr, samples: &[TimeSeriesSample]) -> Result<Vec<Prepped>> {
    samples
        .iter()
        .map(|s| {
            Ok(Prepped {
                sample: s.clone(),
                prepared: model.prepare(s.stamps())?,
            })
        })
        .collect()
}

struct Validation {
    samples: Vec<(TimeSeriesSample, Prepared, Vec<f64>)>,
}

impl Validation {
    fn new(model: &TvInr, val: &[TimeSeriesSample]) -> Result<Self> {
        let config = &model.config;
        let samples = val
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = stream_rng(config.seed, &[STREAM_VAL, i as u64]);
                let (masked, _) = draw_masked(config, s, &mut rng)?;
                let eps = draw_eps(config.dim_z, &mut rng);
                let prepared = model.prepare(masked.stamps())?;
                Ok((masked, prepared, eps))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Validation { samples })
    }

    fn loss(&self, model: &TvInr) -> Result<f64> {
        let losses = self
            .samples
            .par_iter()
            .map(|(s, p, eps)| {
                let mut g = Graph::new(&model.params);
                let v = model.elbo_graph(&mut g, s, p, eps)?;
                Ok(g.scalar(v.loss))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

struct StepOut {
    terms: ElboTerms,
    grads: Gradients,
}

/// Trains a fresh model. `train` holds fully available samples (masks are
/// drawn here each epoch); `val` gets one fixed mask per sample. `observer`
/// sees every epoch's statistics.
pub fn train(
    config: &TrainConfig,
    train: &[TimeSeriesSample],
    val: &[TimeSeriesSample],
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let first = train
        .first()
        .ok_or_else(|| Error::InsufficientData("training set is empty".into()))?;
    let model = TvInr::new(config, first.channels(), first.covariates().len())?;
    train_model(model, train, val, observer)
}

pub fn train_model(
    mut model: TvInr,
    train: &[TimeSeriesSample],
    val: &[TimeSeriesSample],
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let config = model.config.clone();
    let val = if val.is_empty() { train } else { val };
    let prepped = prep_samples(&model, train)?;
    let validation = Validation::new(&model, val)?;
    let mut opt = Adam::new(&model.params, config.lr);
    let chunk = (2 * rayon::current_num_threads()).max(1);

    let mut best: Option<(f64, TvInr, usize)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..prepped.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut sum = ElboTerms {
            loss: 0.0,
            recon: 0.0,
            kl: 0.0,
        };
        let mut min_kl = f64::INFINITY;
        let mut violations = 0;
        let mut steps = 0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut acc = Gradients::zeros_like(&model.params);
            for part in batch.chunks(chunk) {
                let outs = part
                    .par_iter()
                    .map(|&i| {
                        let mut rng = stream_rng(config.seed, &[STREAM_STEP, epoch as u64, i as u64]);
                        let (masked, _) = draw_masked(&config, &prepped[i].sample, &mut rng)?;
                        let eps = draw_eps(config.dim_z, &mut rng);
                        let (terms, grads) = elbo_gradients(&model, &masked, &prepped[i].prepared, &eps)?;
                        Ok(StepOut { terms, grads })
                    })
                    .collect::<Result<Vec<_>>>()?;
                for out in outs {
                    let t = out.terms;
                    if !(t.loss.is_finite() && out.grads.is_finite()) {
                        return Err(Error::Divergence {
                            epoch,
                            detail: format!("non-finite loss or gradient (loss={}, recon={}, kl={})", t.loss, t.recon, t.kl),
                        });
                    }
                    if !t.identity_holds(config.kl_weight) {
                        violations += 1;
                    }
                    min_kl = min_kl.min(t.kl);
                    sum.loss += t.loss;
                    sum.recon += t.recon;
                    sum.kl += t.kl;
                    acc.add_scaled(&out.grads, scale);
                }
            }
            opt.step(&mut model.params, &acc);
            steps += 1;
        }
        let n = prepped.len() as f64;
        let val_loss = validation.loss(&model)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("validation loss is {val_loss}"),
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss: sum.loss / n,
            train_recon: sum.recon / n,
            train_kl: sum.kl / n,
            val_loss,
            min_kl,
            identity_violations: violations,
            steps,
        };
        observer(&stats);
        history.push(stats);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, model.clone(), epoch));
        }
    }
    let checkpoint = match best {
        Some((val, m, epoch)) => Checkpoint {
            model: m,
            epoch,
            best_val: Some(val),
        },
        None => Checkpoint {
            model: model.clone(),
            epoch: 0,
            best_val: None,
        },
    };
    Ok(TrainOutcome {
        checkpoint,
        last: model,
        history,
    })
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name and flat index of the worst parameter.
    pub worst: (String, usize),
    pub checked: usize,
    pub groups: Vec<String>,
}

/// `|a − b| / max(1e-8, |a| + |b|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients at the chosen scalar parameters with central
/// differences of `loss`.
pub fn finite_difference_check(
    params: &mut crate::nn::ParamSet,
    picks: &[(ParamId, usize)],
    analytic: &Gradients,
    step: f64,
    loss: &dyn Fn(&crate::nn::ParamSet) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
        groups: Vec::new(),
    };
    for &(id, k) in picks {
        let orig = params.get(id).as_slice().expect("standard layout")[k];
        let up = orig + step;
        let down = orig - step;
        params.get_mut(id).as_slice_mut().unwrap()[k] = up;
        let f_up = loss(params)?;
        params.get_mut(id).as_slice_mut().unwrap()[k] = down;
        let f_down = loss(params)?;
        params.get_mut(id).as_slice_mut().unwrap()[k] = orig;
        let numeric = (f_up - f_down) / (up - down);
        let a = analytic.get(id).map_or(0.0, |g| g.as_slice().unwrap()[k]);
        let err = relative_error(a, numeric);
        if err.is_nan() || err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err.max(report.max_rel_error) };
            report.worst = (params.name(id).to_string(), k);
        }
        report.checked += 1;
        let group = params.group(id).to_string();
        if !report.groups.contains(&group) {
            report.groups.push(group);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub len: usize,
    pub channels: usize,
    pub covariates: usize,
    /// Scalars checked, spread evenly across parameter groups.
    pub picks: usize,
    pub step: f64,
    /// Scales the analytic gradient by 1.1 (negative control).
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            len: 32,
            channels: 2,
            covariates: 2,
            picks: 120,
            step: 1e-5,
            corrupt: false,
        }
    }
}

/// Builds a model from `config`, draws a random masked sine-mix sample and
/// checks ELBO gradients (with fixed ε) against central differences.
pub fn grad_check(config: &TrainConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut config = config.clone();
    config.task = Task::Imputation;
    if config.tau_set.is_empty() {
        config.tau_set = vec![0.5];
    }
    let mut rng = stream_rng(config.seed, &[STREAM_GRADCHECK]);
    let mut spec = SynthSpec::new(SynthKind::SineMix, 1, opts.len, opts.channels, 0.05);
    spec.components = 2;
    let base = crate::dataset::synth_generate(&spec, &mut rng)?.remove(0);
    let covs: Vec<f64> = (0..opts.covariates).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = TimeSeriesSample::from_parts(
        base.id.clone(),
        base.stamps().to_vec(),
        base.features().clone(),
        covs,
        base.mask().clone(),
    )?;
    let mut masked = make_imputation_mask(&base, 0.5, &mut rng)?;
    ensure_observed(&mut masked, &mut rng);

    let model = TvInr::new(&config, opts.channels, opts.covariates)?;
    let eps = draw_eps(config.dim_z, &mut rng);
    let prepared = model.prepare(masked.stamps())?;
    let (_, mut grads) = elbo_gradients(&model, &masked, &prepared, &eps)?;
    if opts.corrupt {
        for id in model.params.ids().collect::<Vec<_>>() {
            if let Some(g) = grads.get_mut(id) {
                g.mapv_inplace(|v| v * 1.1);
            }
        }
    }

    let mut groups: Vec<String> = Vec::new();
    for id in model.params.ids() {
        let g = model.params.group(id).to_string();
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let per_group = opts.picks.div_ceil(groups.len().max(1));
    let mut picks = Vec::new();
    for group in &groups {
        let members: Vec<(ParamId, usize)> = model
            .params
            .ids()
            .filter(|id| model.params.group(*id) == group)
            .flat_map(|id| (0..model.params.get(id).len()).map(move |k| (id, k)))
            .collect();
        let n = per_group.min(members.len());
        for i in rand::seq::index::sample(&mut rng, members.len(), n).into_vec() {
            picks.push(members[i]);
        }
    }

    let loss = |params: &crate::nn::ParamSet| -> Result<f64> {
        let mut g = Graph::new(params);
        let v = model.elbo_graph(&mut g, &masked, &prepared, &eps)?;
        Ok(g.scalar(v.loss))
    };
    // The closure reads a separate parameter copy so the model itself can be
    // borrowed immutably inside it.
    let mut params = model.params.clone();
    finite_difference_check(&mut params, &picks, &grads, opts.step, &loss)
}

const MAGIC: &[u8] = b"TVINR1\n";
const BASIS_TENSOR: &str = "fourier.basis";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    channels: usize,
    covariates: usize,
    epoch: usize,
    best_val: Option<f64>,
    rng: RngState,
    fourier_sigma: f64,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
}

impl Checkpoint {
    pub fn task(&self) -> Task {
        self.model.config.task
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: &str, mat: &crate::autodiff::Mat| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: [mat.nrows(), mat.ncols()],
                offset: payload.len(),
            });
            for v in mat.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        push(BASIS_TENSOR, m.basis.frequencies());
        for id in m.params.ids() {
            push(m.params.name(id), m.params.get(id));
        }
        let header = Header {
            config: m.config.clone(),
            channels: m.channels,
            covariates: m.covariates,
            epoch: self.epoch,
            best_val: self.best_val,
            rng: RngState {
                seed: m.config.seed,
                epoch: self.epoch,
            },
            fourier_sigma: m.basis.scale(),
            tensors,
            payload_bytes: payload.len(),
        };
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing TVINR1 magic"))?;
        let nl = rest.iter().position(|b| *b == b'\n').ok_or_else(|| bad("unterminated header"))?;
        let header: Header =
            serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let payload = &rest[nl + 1..];
        if payload.len() != header.payload_bytes {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, header says {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let mut model = TvInr::new(&header.config, header.channels, header.covariates)?;
        let read = |entry: &TensorEntry| -> Result<crate::autodiff::Mat> {
            let n = entry.shape[0] * entry.shape[1];
            let end = entry.offset + 8 * n;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("tensor '{}' runs past the payload", entry.name)));
            }
            let values = payload[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(crate::autodiff::Mat::from_shape_vec((entry.shape[0], entry.shape[1]), values).unwrap())
        };
        let mut seen = 0;
        for entry in &header.tensors {
            let value = read(entry)?;
            if entry.name == BASIS_TENSOR {
                model.basis = FourierBasis::from_matrix(value, header.fourier_sigma)?;
                continue;
            }
            let id = model
                .params
                .find(&entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor '{}'", entry.name)))?;
            if model.params.get(id).dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' has shape {:?}, model expects {:?}",
                    entry.name,
                    value.dim(),
                    model.params.get(id).dim()
                )));
            }
            *model.params.get_mut(id) = value;
            seen += 1;
        }
        if seen != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {seen} parameter tensors, model needs {}",
                model.params.len()
            )));
        }
        Ok(Checkpoint {
            model,
            epoch: header.epoch,
            best_val: header.best_val,
        })
    }

    /// Written to a temporary sibling and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
