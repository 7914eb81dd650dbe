//! Masked transformer encoders for the conditional prior and the approximate
//! posterior, and the analytic KL between diagonal Gaussians.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Graph, Mat, ParamId, Var};
use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::nn::{uniform_matrix, Activation, LayerNorm, Linear, Mlp, ParamSet};

/// Lower bound added to every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderRole {
    /// Conditional prior, reads Observed cells only.
    Prior,
    /// Approximate posterior, reads every available cell.
    Posterior,
}

impl EncoderRole {
    pub fn group(self) -> &'static str {
        match self {
            EncoderRole::Prior => "prior",
            EncoderRole::Posterior => "posterior",
        }
    }
}

/// Diagonal Gaussian `N(μ, diag(σ²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianLatent {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::shape(format!("μ has {} dims, σ has {}", mu.len(), sigma.len())));
        }
        if mu.iter().any(|m| !m.is_finite()) || sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("Gaussian parameters must be finite with σ > 0"));
        }
        Ok(GaussianLatent { mu, sigma })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianLatent {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `μ + σ ⊙ ε`
    pub fn reparameterize(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(eps)
            .map(|((m, s), e)| m + s * e)
            .collect()
    }
}

/// `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_to_prior(q: &GaussianLatent, p: &GaussianLatent) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::shape(format!("KL between {} and {} dims", q.dim(), p.dim())));
    }
    Ok((0..q.dim())
        .map(|i| {
            let (mq, sq, mp, sp) = (q.mu[i], q.sigma[i], p.mu[i], p.sigma[i]);
            (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
        })
        .sum())
}

/// The same KL on the graph; all arguments are `1 × dim_z`.
pub fn kl_graph(g: &mut Graph, q_mu: Var, q_sigma: Var, p_mu: Var, p_sigma: Var) -> Var {
    let ln_p = g.ln(p_sigma);
    let ln_q = g.ln(q_sigma);
    let log_ratio = g.sub(ln_p, ln_q);
    let var_q = g.square(q_sigma);
    let diff = g.sub(q_mu, p_mu);
    let diff2 = g.square(diff);
    let num = g.add(var_q, diff2);
    let var_p = g.square(p_sigma);
    let den = g.scale(var_p, 2.0);
    let frac = g.div(num, den);
    let terms = g.add(log_ratio, frac);
    let terms = g.offset(terms, -0.5);
    g.sum(terms)
}

#[derive(Debug, Clone)]
struct Block {
    norm_attn: LayerNorm,
    query: Linear,
    /// No bias: a shared offset on every key shifts each score row by a
    /// constant, which the softmax ignores.
    key: ParamId,
    value: Linear,
    out: Linear,
    norm_ff: LayerNorm,
    ff: Mlp,
}

/// Pre-norm transformer encoder with masked mean pooling and a Gaussian head.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub role: EncoderRole,
    pub d_model: usize,
    pub heads: usize,
    pub dim_z: usize,
    pub causal: bool,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    head: Mlp,
}

impl TransformerEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        role: EncoderRole,
        d_model: usize,
        heads: usize,
        layers: usize,
        dim_z: usize,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!("d_model {d_model} is not divisible by {heads} heads")));
        }
        let name = role.group();
        let blocks = (0..layers)
            .map(|i| {
                let p = format!("{name}.block{i}");
                Block {
                    norm_attn: LayerNorm::new(params, &format!("{p}.norm_attn"), d_model),
                    query: Linear::new(params, &format!("{p}.query"), d_model, d_model, rng),
                    key: params.register(
                        format!("{p}.key.weight"),
                        uniform_matrix(d_model, d_model, 1.0 / (d_model as f64).sqrt(), rng),
                    ),
                    value: Linear::new(params, &format!("{p}.value"), d_model, d_model, rng),
                    out: Linear::new(params, &format!("{p}.out"), d_model, d_model, rng),
                    norm_ff: LayerNorm::new(params, &format!("{p}.norm_ff"), d_model),
                    ff: Mlp::new(
                        params,
                        &format!("{p}.ff"),
                        &[d_model, 4 * d_model, d_model],
                        Activation::Gelu,
                        rng,
                    ),
                }
            })
            .collect();
        let final_norm = LayerNorm::new(params, &format!("{name}.final_norm"), d_model);
        let head = Mlp::new(
            params,
            &format!("{name}.head"),
            &[d_model, d_model, 2 * dim_z],
            Activation::Gelu,
            rng,
        );
        Ok(TransformerEncoder {
            role,
            d_model,
            heads,
            dim_z,
            causal,
            blocks,
            final_norm,
            head,
        })
    }

    fn attention_mask(&self, positions: &[usize]) -> Array2<bool> {
        let n = positions.len();
        if self.causal {
            Array2::from_shape_fn((n, n), |(i, j)| positions[j] <= positions[i])
        } else {
            Array2::from_elem((n, n), true)
        }
    }

    fn attend(&self, g: &mut Graph, block: &Block, x: Var, mask: &Array2<bool>) -> Var {
        let q = block.query.forward(g, x);
        let wk = g.param(block.key);
        let k = g.matmul(x, wk);
        let v = block.value.forward(g, x);
        let dh = self.d_model / self.heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let mut ctx = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, a, b);
            let kh = g.slice_cols(k, a, b);
            let vh = g.slice_cols(v, a, b);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, inv);
            let weights = g.masked_softmax(scores, mask);
            ctx.push(g.matmul(weights, vh));
        }
        let joined = if ctx.len() == 1 { ctx[0] } else { g.concat_cols(&ctx) };
        block.out.forward(g, joined)
    }

    /// Encodes the embedding rows of the valid positions (given in increasing
    /// original order). Invalid positions never enter, so they can neither be
    /// attended to nor pooled. Returns `(μ, σ)` as `1 × dim_z` nodes.
    pub fn forward(&self, g: &mut Graph, e: Var, positions: &[usize]) -> Result<(Var, Var)> {
        let (n, width) = g.shape(e);
        if n == 0 || positions.is_empty() {
            return Err(Error::EmptyContext(format!("{:?} encoder has no valid position", self.role)));
        }
        if n != positions.len() || width != self.d_model {
            return Err(Error::shape(format!(
                "encoder input {n}×{width} for {} positions, d_model {}",
                positions.len(),
                self.d_model
            )));
        }
        let mask = self.attention_mask(positions);
        let mut x = e;
        for block in &self.blocks {
            let h = block.norm_attn.forward(g, x);
            let a = self.attend(g, block, h, &mask);
            x = g.add(x, a);
            let h = block.norm_ff.forward(g, x);
            let f = block.ff.forward(g, h);
            x = g.add(x, f);
        }
        let x = self.final_norm.forward(g, x);
        let pooled = g.mean_rows(x);
        let out = self.head.forward(g, pooled);
        let mu = g.slice_cols(out, 0, self.dim_z);
        let pre = g.slice_cols(out, self.dim_z, 2 * self.dim_z);
        let sp = g.softplus(pre);
        let sigma = g.offset(sp, SIGMA_FLOOR);
        Ok((mu, sigma))
    }

    /// Plain inference on a ready-made embedding batch.
    pub fn encode(&self, params: &ParamSet, batch: &EmbeddingBatch) -> Result<GaussianLatent> {
        let rows = batch.valid_rows();
        if rows.is_empty() {
            return Err(Error::EmptyContext("no valid position in the batch".into()));
        }
        let e = batch.e.select(ndarray::Axis(0), &rows);
        let mut g = Graph::new(params);
        let ev = g.constant(e);
        let (mu, sigma) = self.forward(&mut g, ev, &rows)?;
        latent_from(&g, mu, sigma)
    }
}

pub(crate) fn latent_from(g: &Graph, mu: Var, sigma: Var) -> Result<GaussianLatent> {
    let row = |v: Var| -> Vec<f64> { g.value(v).iter().copied().collect() };
    GaussianLatent::new(row(mu), row(sigma))
}

pub(crate) fn row_matrix(v: &[f64]) -> Mat {
    Mat::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}
