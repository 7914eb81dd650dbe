//! Per-stamp input embeddings: a mask-aware spatial term plus a Fourier-feature
//! temporal term, summed element-wise.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Mat, Var};
use crate::dataset::{CellState, TimeSeriesSample};
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamSet};

/// Fixed random frequencies for `(time, channel)` coordinate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    /// `m × 2`, drawn once from `N(0, scale²)`.
    freqs: Mat,
    scale: f64,
}

impl FourierBasis {
    pub fn new(m: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, scale).expect("finite Fourier scale");
        let freqs = Array2::from_shape_simple_fn((m, 2), || normal.sample(rng));
        FourierBasis { freqs, scale }
    }

    pub fn from_matrix(freqs: Mat, scale: f64) -> Result<Self> {
        if freqs.ncols() != 2 || freqs.nrows() == 0 {
            return Err(Error::shape(format!("Fourier basis must be m×2, got {:?}", freqs.dim())));
        }
        Ok(FourierBasis { freqs, scale })
    }

    pub fn frequencies(&self) -> &Mat {
        &self.freqs
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn m(&self) -> usize {
        self.freqs.nrows()
    }

    /// Width of the raw `[cos, sin]` vector.
    pub fn raw_width(&self) -> usize {
        2 * self.m()
    }

    /// Adds `weight · [cos(2π B x), sin(2π B x)]` for `x = (t, c)` into `out`.
    fn accumulate(&self, t: f64, c: f64, weight: f64, out: &mut [f64]) {
        let m = self.m();
        for (i, b) in self.freqs.rows().into_iter().enumerate() {
            let phase = 2.0 * PI * (b[0] * t + b[1] * c);
            let (s, co) = phase.sin_cos();
            out[i] += weight * co;
            out[m + i] += weight * s;
        }
    }

    /// Raw features of one coordinate pair.
    pub fn encode_pair(&self, t: f64, c: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.raw_width()];
        self.accumulate(t, c, 1.0, &mut out);
        out
    }

    /// Raw features of each row of a coordinate grid, mean-pooled over the
    /// channel axis: `L × d × 2 → L × 2m`.
    pub fn pooled(&self, grid: &Array3<f64>) -> Mat {
        let (l, d, _) = grid.dim();
        let mut out = Mat::zeros((l, self.raw_width()));
        let w = 1.0 / d as f64;
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            let slice = row.as_slice_mut().expect("standard layout");
            for j in 0..d {
                self.accumulate(grid[[r, j, 0]], grid[[r, j, 1]], w, slice);
            }
        }
        out
    }

    /// Raw features of `(t, 0)` for each stamp; the generator's query encoding.
    pub fn stamps_only(&self, stamps: &[f64]) -> Mat {
        let mut out = Mat::zeros((stamps.len(), self.raw_width()));
        for (t, mut row) in stamps.iter().zip(out.rows_mut()) {
            self.accumulate(*t, 0.0, 1.0, row.as_slice_mut().unwrap());
        }
        out
    }
}

/// `L × d × 2` grid pairing each stamp with the normalized channel index
/// `j / max(d-1, 1)`.
pub fn expand_channels(stamps: &[f64], d: usize) -> Result<Array3<f64>> {
    if d == 0 {
        return Err(Error::shape("channel count must be ≥ 1"));
    }
    let denom = (d - 1).max(1) as f64;
    Ok(Array3::from_shape_fn((stamps.len(), d, 2), |(l, j, k)| {
        if k == 0 {
            stamps[l]
        } else {
            j as f64 / denom
        }
    }))
}

/// Which cells an encoder may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    /// Observed cells only (conditional prior, inference).
    Observed,
    /// Observed and Masked cells (approximate posterior).
    Available,
}

impl Visibility {
    pub fn admits(self, state: CellState) -> bool {
        match self {
            Visibility::Observed => state == CellState::Observed,
            Visibility::Available => state.is_available(),
        }
    }
}

/// `[Ỹ; Ω]` for the selected rows: values at visible cells, zero elsewhere,
/// followed by the binary visibility mask.
pub fn spatial_input(sample: &TimeSeriesSample, visibility: Visibility, rows: &[usize]) -> Mat {
    let d = sample.channels();
    let mut out = Mat::zeros((rows.len(), 2 * d));
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..d {
            if visibility.admits(sample.state(r, j)) {
                out[[i, j]] = sample.features()[[r, j]];
                out[[i, d + j]] = 1.0;
            }
        }
    }
    out
}

/// Learned maps of the input embedding.
#[derive(Debug, Clone)]
pub struct EmbeddingLayer {
    /// `2d → d_model`
    pub spatial: Linear,
    /// `2m → d_model`, shared with the generator's query encoding.
    pub temporal: Linear,
}

impl EmbeddingLayer {
    pub fn new(params: &mut ParamSet, channels: usize, raw_width: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        EmbeddingLayer {
            spatial: Linear::new(params, "embedding.spatial", 2 * channels, d_model, rng),
            temporal: Linear::new(params, "embedding.temporal", raw_width, d_model, rng),
        }
    }

    /// `E = E_spatial + E_temporal` on the graph.
    pub fn forward(&self, g: &mut Graph, spatial_in: Mat, temporal_raw: Mat) -> Var {
        let s = g.constant(spatial_in);
        let t = g.constant(temporal_raw);
        let es = self.spatial.forward(g, s);
        let et = self.temporal.forward(g, t);
        g.add(es, et)
    }
}

/// Projected Fourier features of a coordinate grid.
pub fn fourier_features(grid: &Array3<f64>, basis: &FourierBasis, projection: &Linear, params: &ParamSet) -> Result<Mat> {
    if projection.fan_in != basis.raw_width() {
        return Err(Error::shape("projection width does not match the Fourier basis"));
    }
    Ok(projection.eval(params, &basis.pooled(grid)))
}

/// Affine map of `[Ỹ; Ω]`.
pub fn spatial_embedding(features_zero_filled: &Mat, mask_binary: &Mat, layer: &Linear, params: &ParamSet) -> Result<Mat> {
    if features_zero_filled.dim() != mask_binary.dim() || layer.fan_in != 2 * features_zero_filled.ncols() {
        return Err(Error::shape("spatial embedding input widths disagree"));
    }
    let input = ndarray::concatenate(Axis(1), &[features_zero_filled.view(), mask_binary.view()]).unwrap();
    Ok(layer.eval(params, &input))
}

/// Model-space embedding of one sample plus per-position validity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub e: Mat,
    /// True iff the position has at least one visible channel.
    pub valid: Vec<bool>,
}

impl EmbeddingBatch {
    pub fn valid_rows(&self) -> Vec<usize> {
        self.valid
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.then_some(i))
            .collect()
    }
}

pub fn combine(spatial: &Mat, temporal: &Mat, valid: Vec<bool>) -> Result<EmbeddingBatch> {
    if spatial.dim() != temporal.dim() || valid.len() != spatial.nrows() {
        return Err(Error::shape(format!(
            "spatial {:?}, temporal {:?}, {} validity flags",
            spatial.dim(),
            temporal.dim(),
            valid.len()
        )));
    }
    Ok(EmbeddingBatch {
        e: spatial + temporal,
        valid,
    })
}

/// Validity flags of a sample under a visibility rule.
pub fn validity(sample: &TimeSeriesSample, visibility: Visibility) -> Vec<bool> {
    sample
        .mask()
        .rows()
        .into_iter()
        .map(|row| row.iter().any(|m| visibility.admits(*m)))
        .collect()
}
