//! Python bindings: configs, training, checkpoints, inference and the
//! evaluation helpers.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tvinr::dataset::{self, SeriesRecord, SynthKind, SynthSpec};
use tvinr::encoder::EncoderRole;
use tvinr::tasks;
use tvinr::training::{self, Task};

fn err(e: tvinr::Error) -> PyErr {
    match e {
        tvinr::Error::Divergence { .. } | tvinr::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    inner: training::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Desk-scale preset.
    #[staticmethod]
    fn small() -> Self {
        PyTrainConfig {
            inner: training::TrainConfig::small(),
        }
    }

    /// Electricity L=200 preset.
    #[staticmethod]
    fn paper_defaults() -> Self {
        PyTrainConfig {
            inner: training::TrainConfig::paper_defaults(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyTrainConfig {
            inner: training::TrainConfig::from_toml(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    /// Trainable scalars for `channels` outputs and `covariates` statics.
    fn param_count(&self, channels: usize, covariates: usize) -> PyResult<usize> {
        Ok(tvinr::TvInr::new(&self.inner, channels, covariates).map_err(err)?.param_count())
    }

    /// Scalars in one generated coordinate network.
    fn inr_param_count(&self, channels: usize) -> PyResult<usize> {
        Ok(tvinr::TvInr::new(&self.inner, channels, 0).map_err(err)?.arch().param_count())
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task.to_string()
    }
    #[setter]
    fn set_task(&mut self, v: &str) -> PyResult<()> {
        self.inner.task = parse(v)?;
        Ok(())
    }
    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }
    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }
    #[getter]
    fn lr(&self) -> f64 {
        self.inner.lr
    }
    #[setter]
    fn set_lr(&mut self, v: f64) {
        self.inner.lr = v;
    }
    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }
    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.batch_size = v;
    }
    #[getter]
    fn kl_weight(&self) -> f64 {
        self.inner.kl_weight
    }
    #[setter]
    fn set_kl_weight(&mut self, v: f64) {
        self.inner.kl_weight = v;
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }
    #[getter]
    fn dim_z(&self) -> usize {
        self.inner.dim_z
    }
    #[setter]
    fn set_dim_z(&mut self, v: usize) {
        self.inner.dim_z = v;
    }
    #[getter]
    fn tau_set(&self) -> Vec<f64> {
        self.inner.tau_set.clone()
    }
    #[setter]
    fn set_tau_set(&mut self, v: Vec<f64>) {
        self.inner.tau_set = v;
    }
    #[getter]
    fn horizons(&self) -> Vec<usize> {
        self.inner.horizons.clone()
    }
    #[setter]
    fn set_horizons(&mut self, v: Vec<usize>) {
        self.inner.horizons = v;
    }
    #[getter]
    fn history(&self) -> usize {
        self.inner.history
    }
    #[setter]
    fn set_history(&mut self, v: usize) {
        self.inner.history = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(task={}, dim_z={}, d_model={}, epochs={}, lr={})",
            self.inner.task, self.inner.dim_z, self.inner.d_model, self.inner.epochs, self.inner.lr
        )
    }
}

#[pyclass(name = "Checkpoint", skip_from_py_object)]
pub struct PyCheckpoint {
    inner: training::Checkpoint,
}

fn record(stamps: Vec<f64>, values: Vec<Vec<Option<f64>>>) -> PyResult<SeriesRecord> {
    if stamps.len() != values.len() {
        return Err(PyValueError::new_err(format!(
            "{} stamps but {} value rows",
            stamps.len(),
            values.len()
        )));
    }
    let d = values.first().map_or(0, Vec::len);
    if d == 0 || values.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("value rows must share a non-zero width"));
    }
    let flat: Vec<f64> = values.iter().flatten().map(|v| v.unwrap_or(f64::NAN)).collect();
    Ok(SeriesRecord {
        id: "py".into(),
        stamps,
        values: ndarray::Array2::from_shape_vec((values.len(), d), flat).unwrap(),
        covariates: Vec::new(),
    })
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCheckpoint {
            inner: training::Checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task().to_string()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn best_val(&self) -> Option<f64> {
        self.inner.best_val
    }

    #[getter]
    fn config(&self) -> PyTrainConfig {
        PyTrainConfig {
            inner: self.inner.model.config.clone(),
        }
    }

    fn param_count(&self) -> usize {
        self.inner.model.param_count()
    }

    /// Predictions at every stamp given the non-None values, in the units of
    /// `values`.
    fn impute(&self, stamps: Vec<f64>, values: Vec<Vec<Option<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        if self.inner.task() != Task::Imputation {
            return Err(PyValueError::new_err(format!("checkpoint was trained for {}", self.inner.task())));
        }
        let rec = record(stamps, values)?;
        let w = tasks::imputation_windows(&[rec]).map_err(err)?.remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = self
            .inner
            .model
            .predict(&w.sample, w.sample.stamps(), EncoderRole::Prior, 0, &mut rng)
            .map_err(err)?;
        Ok(unscale(&w.stats, &pred))
    }

    /// `horizon` predictions continuing the history's mean stamp spacing.
    fn forecast(&self, stamps: Vec<f64>, values: Vec<Vec<Option<f64>>>, horizon: usize) -> PyResult<Vec<Vec<f64>>> {
        if self.inner.task() != Task::Forecasting {
            return Err(PyValueError::new_err(format!("checkpoint was trained for {}", self.inner.task())));
        }
        let config = &self.inner.model.config;
        let (h, fmax) = (config.history, config.max_horizon());
        if stamps.len() != h {
            return Err(PyValueError::new_err(format!("history must hold exactly {h} rows")));
        }
        let rec = record(stamps, values)?;
        let step = (rec.stamps[h - 1] - rec.stamps[0]) / (h - 1).max(1) as f64;
        let mut all = rec.stamps.clone();
        all.extend((1..=horizon).map(|i| rec.stamps[h - 1] + step * i as f64));
        let scaled = tasks::forecast_stamps(&all, h, fmax).map_err(err)?;
        let w = tasks::forecast_windows(&[rec], h, fmax).map_err(err)?.remove(0);
        let opts = tasks::InferenceOptions::default();
        let pred = tasks::forecast(&self.inner, &w.sample, &scaled[h..], &opts).map_err(err)?;
        Ok(unscale(&w.stats, &pred))
    }
}

fn unscale(stats: &dataset::ChannelStats, pred: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    pred.rows()
        .into_iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| stats.invert(j, *v)).collect())
        .collect()
}

/// Trains on a series CSV (each series one sample, every sixth to
/// validation) and returns the best checkpoint plus per-epoch
/// `(train, val, kl)` losses.
#[pyfunction]
fn train(py: Python<'_>, config: PyTrainConfig, data: PathBuf) -> PyResult<(PyCheckpoint, Vec<(f64, f64, f64)>)> {
    let config = config.inner;
    let outcome = py
        .detach(|| -> tvinr::Result<_> {
            let records = dataset::read_csv(&data)?;
            let (tr, va) = dataset::split_train_val(&records);
            let prep = |recs: &[SeriesRecord]| -> tvinr::Result<Vec<_>> {
                let windows = match config.task {
                    Task::Imputation => tasks::imputation_windows(recs)?,
                    Task::Forecasting => tasks::forecast_windows(recs, config.history, config.max_horizon())?,
                };
                Ok(windows.into_iter().map(|w| w.sample).collect())
            };
            training::train(&config, &prep(&tr)?, &prep(&va)?, &mut |_| {})
        })
        .map_err(err)?;
    let history = outcome.history.iter().map(|e| (e.train_loss, e.val_loss, e.train_kl)).collect();
    Ok((PyCheckpoint { inner: outcome.checkpoint }, history))
}

/// Writes a synthetic dataset CSV.
#[pyfunction]
#[pyo3(signature = (path, kind="sine-mix", series=8, length=200, dims=1, noise=0.0, seed=0))]
fn synth(path: PathBuf, kind: &str, series: usize, length: usize, dims: usize, noise: f64, seed: u64) -> PyResult<()> {
    let kind: SynthKind = parse(kind)?;
    let spec = SynthSpec::new(kind, series, length, dims, noise);
    let records = dataset::synth_records(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
    dataset::write_csv(&path, &records).map_err(err)
}

/// Largest relative error between analytic and finite-difference gradients.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn gradcheck(config: Option<PyTrainConfig>) -> PyResult<(f64, String)> {
    let config = config.map_or_else(training::TrainConfig::small, |c| c.inner);
    let report = training::grad_check(&config, &training::GradCheckOptions::default()).map_err(err)?;
    Ok((report.max_rel_error, format!("{}[{}]", report.worst.0, report.worst.1)))
}

/// Two-sided Welch test: `(t, df, p)`.
#[pyfunction]
fn welch_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = tasks::welch_t_test(&a, &b).map_err(err)?;
    Ok((r.t, r.df, r.p))
}

/// KL divergence between diagonal Gaussians `(mu_q, sigma_q)` and `(mu_p, sigma_p)`.
#[pyfunction]
fn kl_divergence(mu_q: Vec<f64>, sigma_q: Vec<f64>, mu_p: Vec<f64>, sigma_p: Vec<f64>) -> PyResult<f64> {
    let q = tvinr::GaussianLatent::new(mu_q, sigma_q).map_err(err)?;
    let p = tvinr::GaussianLatent::new(mu_p, sigma_p).map_err(err)?;
    tvinr::encoder::kl_to_prior(&q, &p).map_err(err)
}

#[pymodule]
fn tvinr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    Ok(())
}
