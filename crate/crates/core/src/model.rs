//! The assembled model: shared embedding, prior and posterior encoders,
//! covariate encoder and hypernetwork over one parameter set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Mat, Var};
use crate::dataset::{CellState, TimeSeriesSample};
use crate::embedding::{spatial_input, EmbeddingLayer, FourierBasis, Visibility};
use crate::encoder::{kl_graph, latent_from, row_matrix, EncoderRole, GaussianLatent, TransformerEncoder};
use crate::error::{Error, Result};
use crate::hypergenerator::{CovariateEncoder, HyperNetwork, InrArchitecture, InrParameters};
use crate::inr::{inr_graph, predict_series};
use crate::nn::{Activation, ParamSet};
use crate::training::{stream_seed, TrainConfig};

const STREAM_PARAMS: u64 = 1;
const STREAM_BASIS: u64 = 2;

/// Fourier features that depend only on a sample's stamps, computed once and
/// reused across epochs and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// Channel-pooled raw features, `L × 2m`.
    pub temporal: Mat,
    /// Raw features of `(t, 0)`, `L × 2m`.
    pub query: Mat,
}

/// Loss nodes of one ELBO evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ElboVars {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
}

#[derive(Debug, Clone)]
pub struct TvInr {
    pub config: TrainConfig,
    pub channels: usize,
    pub covariates: usize,
    pub basis: FourierBasis,
    pub params: ParamSet,
    pub embedding: EmbeddingLayer,
    pub prior: TransformerEncoder,
    pub posterior: TransformerEncoder,
    pub covariate: CovariateEncoder,
    pub hyper: HyperNetwork,
}

impl TvInr {
    /// Fresh model for `channels` features and `covariates` static inputs.
    pub fn new(config: &TrainConfig, channels: usize, covariates: usize) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(Error::Config("the model needs at least one channel".into()));
        }
        let mut basis_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &[STREAM_BASIS]));
        let basis = FourierBasis::new(config.fourier_m, config.fourier_sigma, &mut basis_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &[STREAM_PARAMS]));
        let mut params = ParamSet::new();
        let embedding = EmbeddingLayer::new(&mut params, channels, basis.raw_width(), config.d_model, &mut rng);
        let encoder = |params: &mut ParamSet, role, rng: &mut ChaCha8Rng| {
            TransformerEncoder::new(
                params,
                role,
                config.d_model,
                config.heads,
                config.layers,
                config.dim_z,
                config.causal,
                rng,
            )
        };
        let prior = encoder(&mut params, EncoderRole::Prior, &mut rng)?;
        let posterior = encoder(&mut params, EncoderRole::Posterior, &mut rng)?;
        let covariate = CovariateEncoder::new(
            &mut params,
            covariates,
            &config.covariate_layers,
            if covariates > 0 { config.covariate_dim } else { 0 },
            Activation::Gelu,
            &mut rng,
        );
        let arch = InrArchitecture::new(
            config.d_model,
            config.generator_layers.clone(),
            channels,
            config.generator_activation,
        )?;
        let hyper = HyperNetwork::new(
            &mut params,
            config.dim_z + covariate.output_width(),
            &config.hyper_layers,
            config.hyper_activation,
            arch,
            &mut rng,
        )?;
        Ok(TvInr {
            config: config.clone(),
            channels,
            covariates,
            basis,
            params,
            embedding,
            prior,
            posterior,
            covariate,
            hyper,
        })
    }

    pub fn arch(&self) -> &InrArchitecture {
        &self.hyper.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn prepare(&self, stamps: &[f64]) -> Result<Prepared> {
        let grid = crate::embedding::expand_channels(stamps, self.channels)?;
        Ok(Prepared {
            temporal: self.basis.pooled(&grid),
            query: self.basis.stamps_only(stamps),
        })
    }

    fn check_sample(&self, sample: &TimeSeriesSample) -> Result<()> {
        if sample.channels() != self.channels {
            return Err(Error::shape(format!(
                "model has {} channels, sample '{}' has {}",
                self.channels,
                sample.id,
                sample.channels()
            )));
        }
        if sample.covariates().len() != self.covariates {
            return Err(Error::shape(format!(
                "model expects {} covariates, sample '{}' has {}",
                self.covariates,
                sample.id,
                sample.covariates().len()
            )));
        }
        Ok(())
    }

    fn encoder(&self, role: EncoderRole) -> &TransformerEncoder {
        match role {
            EncoderRole::Prior => &self.prior,
            EncoderRole::Posterior => &self.posterior,
        }
    }

    /// `(μ, σ)` nodes of one encoder reading the cells admitted by `vis`.
    fn encode_graph(
        &self,
        g: &mut Graph,
        sample: &TimeSeriesSample,
        prepared: &Prepared,
        role: EncoderRole,
        vis: Visibility,
    ) -> Result<(Var, Var)> {
        let rows = sample.rows_where(|s| vis.admits(s));
        if rows.is_empty() {
            return Err(Error::EmptyContext(format!(
                "sample '{}' has no {} cell",
                sample.id,
                match vis {
                    Visibility::Observed => "Observed",
                    Visibility::Available => "non-Absent",
                }
            )));
        }
        let spatial = spatial_input(sample, vis, &rows);
        let temporal = prepared.temporal.select(ndarray::Axis(0), &rows);
        let e = self.embedding.forward(g, spatial, temporal);
        self.encoder(role).forward(g, e, &rows)
    }

    fn decoder_input(&self, g: &mut Graph, z: Var, covariates: &[f64]) -> Result<Var> {
        Ok(match self.covariate.forward(g, covariates)? {
            Some(c) => g.concat_cols(&[z, c]),
            None => z,
        })
    }

    /// Negative ELBO of a masked sample with a fixed reparameterization noise
    /// `eps`. The posterior reads Observed and Masked cells, the prior only
    /// Observed ones; reconstruction averages squared errors over every
    /// non-Absent cell.
    pub fn elbo_graph(
        &self,
        g: &mut Graph,
        sample: &TimeSeriesSample,
        prepared: &Prepared,
        eps: &[f64],
    ) -> Result<ElboVars> {
        self.check_sample(sample)?;
        if prepared.temporal.nrows() < sample.len() {
            return Err(Error::shape("prepared features are shorter than the sample"));
        }
        if eps.len() != self.config.dim_z {
            return Err(Error::shape(format!("ε has {} dims, dim_z is {}", eps.len(), self.config.dim_z)));
        }
        let (p_mu, p_sigma) = self.encode_graph(g, sample, prepared, EncoderRole::Prior, Visibility::Observed)?;
        let (q_mu, q_sigma) = self.encode_graph(g, sample, prepared, EncoderRole::Posterior, Visibility::Available)?;
        let kl = kl_graph(g, q_mu, q_sigma, p_mu, p_sigma);

        let noise = g.constant(row_matrix(eps));
        let spread = g.mul(q_sigma, noise);
        let z = g.add(q_mu, spread);
        let h = self.decoder_input(g, z, sample.covariates())?;
        let flat = self.hyper.forward(g, h);
        let layers = self.hyper.split(g, flat);

        let rows = sample.rows_where(CellState::is_available);
        let d = self.channels;
        let mut target = Mat::zeros((rows.len(), d));
        let mut weight = Mat::zeros((rows.len(), d));
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..d {
                if let Some(v) = sample.value(r, j) {
                    target[[i, j]] = v;
                    weight[[i, j]] = 1.0;
                }
            }
        }
        let count = weight.sum();
        let query_raw = g.constant(prepared.query.select(ndarray::Axis(0), &rows));
        let query = self.embedding.temporal.forward(g, query_raw);
        let y_hat = inr_graph(g, &layers, self.arch().activation, query);
        let target = g.constant(target);
        let weight = g.constant(weight);
        let diff = g.sub(y_hat, target);
        let diff = g.mul(diff, weight);
        let sq = g.square(diff);
        let total = g.sum(sq);
        let recon = g.scale(total, 1.0 / count);
        let weighted_kl = g.scale(kl, self.config.kl_weight);
        let loss = g.add(recon, weighted_kl);
        Ok(ElboVars { loss, recon, kl })
    }

    /// Gaussian produced by `role` reading the Observed cells of `sample`.
    pub fn infer_latent(&self, sample: &TimeSeriesSample, role: EncoderRole) -> Result<GaussianLatent> {
        self.infer_latent_prepared(sample, &self.prepare(sample.stamps())?, role)
    }

    pub fn infer_latent_prepared(
        &self,
        sample: &TimeSeriesSample,
        prepared: &Prepared,
        role: EncoderRole,
    ) -> Result<GaussianLatent> {
        self.check_sample(sample)?;
        let mut g = Graph::new(&self.params);
        let (mu, sigma) = self.encode_graph(&mut g, sample, prepared, role, Visibility::Observed)?;
        latent_from(&g, mu, sigma)
    }

    /// Generator weights for latent `z` and raw covariates `c`.
    pub fn generate(&self, z: &[f64], covariates: &[f64]) -> Result<InrParameters> {
        let c_bar = self.covariate.encode(&self.params, covariates)?;
        self.hyper.generate_params(&self.params, z, &c_bar)
    }

    /// Generator input encodings of arbitrary query stamps.
    pub fn coordinate_encoding(&self, stamps: &[f64]) -> Result<Mat> {
        if stamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("query stamps must be finite"));
        }
        Ok(self.embedding.temporal.eval(&self.params, &self.basis.stamps_only(stamps)))
    }

    /// Point predictions at `stamps` conditioned on the Observed cells of
    /// `context`. With `samples == 0` the latent mean is decoded; otherwise the
    /// predictions of `samples` latent draws are averaged.
    pub fn predict(
        &self,
        context: &TimeSeriesSample,
        stamps: &[f64],
        role: EncoderRole,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<Mat> {
        let latent = self.infer_latent(context, role)?;
        let encodings = self.coordinate_encoding(stamps)?;
        if samples == 0 {
            let theta = self.generate(&latent.mu, context.covariates())?;
            return predict_series(&theta, &encodings);
        }
        let mut acc = Mat::zeros((stamps.len(), self.channels));
        for _ in 0..samples {
            let eps: Vec<f64> = (0..latent.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let theta = self.generate(&latent.reparameterize(&eps), context.covariates())?;
            acc += &predict_series(&theta, &encodings)?;
        }
        Ok(acc / samples as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;

    fn tiny() -> TrainConfig {
        let mut c = TrainConfig::small();
        c.d_model = 8;
        c.heads = 2;
        c.dim_z = 3;
        c.fourier_m = 6;
        c.hyper_layers = vec![8, 8];
        c.generator_layers = vec![8];
        c
    }

    fn sample() -> TimeSeriesSample {
        let stamps: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let values = ndarray::Array2::from_shape_fn((10, 2), |(i, j)| {
            ((i, j) != (3, 1)).then(|| (i as f64 * 0.7 + j as f64).sin())
        });
        let s = TimeSeriesSample::new("a", stamps, values, vec![]).unwrap();
        crate::dataset::make_forecast_mask(&s, 6, 4).unwrap()
    }

    #[test]
    fn loss_decomposes_and_recon_matches_loop() {
        let model = TvInr::new(&tiny(), 2, 0).unwrap();
        let s = sample();
        let prep = model.prepare(s.stamps()).unwrap();
        let eps = [0.3, -1.2, 0.5];
        let mut g = Graph::new(&model.params);
        let v = model.elbo_graph(&mut g, &s, &prep, &eps).unwrap();
        let (loss, recon, kl) = (g.scalar(v.loss), g.scalar(v.recon), g.scalar(v.kl));
        assert_eq!(loss, recon + model.config.kl_weight * kl, "{loss} {recon} {kl}");
        assert!(kl >= 0.0);

        // Oracle: decode with the same z and loop over non-Absent cells.
        let mut gq = Graph::new(&model.params);
        let (mu, sigma) = model
            .encode_graph(&mut gq, &s, &prep, EncoderRole::Posterior, Visibility::Available)
            .unwrap();
        let q = latent_from(&gq, mu, sigma).unwrap();
        let theta = model.generate(&q.reparameterize(&eps), &[]).unwrap();
        let pred = predict_series(&theta, &model.coordinate_encoding(s.stamps()).unwrap()).unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        for r in 0..s.len() {
            for j in 0..2 {
                if let Some(y) = s.value(r, j) {
                    sum += (y - pred[[r, j]]).powi(2);
                    n += 1;
                }
            }
        }
        assert_eq!(n, 19);
        assert!((recon - sum / n as f64).abs() < 1e-12);
    }

    #[test]
    fn empty_context_is_an_error() {
        let model = TvInr::new(&tiny(), 2, 0).unwrap();
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = crate::dataset::make_imputation_mask(&s.unmasked(), 0.0, &mut rng).unwrap();
        let prep = model.prepare(s.stamps()).unwrap();
        let mut g = Graph::new(&model.params);
        assert!(matches!(
            model.elbo_graph(&mut g, &none, &prep, &[0.0; 3]),
            Err(Error::EmptyContext(_))
        ));
    }

    #[test]
    fn same_seed_same_model() {
        let a = TvInr::new(&tiny(), 2, 3).unwrap();
        let b = TvInr::new(&tiny(), 2, 3).unwrap();
        for id in a.params.ids() {
            assert_eq!(a.params.get(id), b.params.get(id));
        }
        assert_eq!(a.basis, b.basis);
        assert_eq!(a.params.group_scalar_count("covariate") > 0, true);
    }
}
