//! Parameter storage, dense layers and the Adam optimizer.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{scalar_activation, Gradients, Graph, Mat, ParamId, ScalarFn, Var};

/// Named trainable tensors. Names are dot-separated; the first segment is the
/// parameter group (`embedding`, `prior`, `posterior`, `covariate`, `hyper`).
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Arc<Mat>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Mat> {
        Arc::clone(&self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> &str {
        let name = self.name(id);
        name.split('.').next().unwrap_or(name)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn group_scalar_count(&self, group: &str) -> usize {
        self.ids()
            .filter(|id| self.group(*id) == group)
            .map(|id| self.get(id).len())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "lrelu_01")]
    LeakyRelu01,
    #[serde(rename = "gelu")]
    Gelu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu01 => g.leaky_relu(x, 0.1),
            Activation::Gelu => g.gelu(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        let f = match self {
            Activation::Relu => ScalarFn::Relu,
            Activation::LeakyRelu01 => ScalarFn::LeakyRelu(0.1),
            Activation::Gelu => ScalarFn::Gelu,
        };
        scalar_activation(f, x)
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "lrelu_01" => Ok(Activation::LeakyRelu01),
            "gelu" => Ok(Activation::Gelu),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

pub fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Mat {
    if bound == 0.0 {
        return Mat::zeros((rows, cols));
    }
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

/// Affine map `x W + b` with `W: fan_in × fan_out` and a `1 × fan_out` bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Fan-in scaled uniform init, `U(-1/√fan_in, 1/√fan_in)` for both terms.
    pub fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self::with_bounds(params, name, fan_in, fan_out, bound, bound, rng)
    }

    pub fn with_bounds(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        weight_bound: f64,
        bias_bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.register(format!("{name}.weight"), uniform_matrix(fan_in, fan_out, weight_bound, rng));
        let bias = params.register(format!("{name}.bias"), uniform_matrix(1, fan_out, bias_bound, rng));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    pub fn eval(&self, params: &ParamSet, x: &Mat) -> Mat {
        x.dot(params.get(self.weight)) + params.get(self.bias)
    }
}

/// Stack of [`Linear`] layers with an activation between them; the last
/// layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x);
            if i < last {
                x = self.activation.apply(g, x);
            }
        }
        x
    }
}

/// Layer norm with learned per-feature scale and offset.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: params.register(format!("{name}.gain"), Mat::ones((1, width))),
            offset: params.register(format!("{name}.offset"), Mat::zeros((1, width))),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm(x);
        let gain = g.param(self.gain);
        let offset = g.param(self.offset);
        let scaled = g.mul_row(n, gain);
        g.add_row(scaled, offset)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Mat> = params.ids().map(|id| Mat::zeros(params.get(id).raw_dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = ParamSet::new();
        let id = params.register("x", ndarray::array![[3.0, -2.0]]);
        let mut opt = Adam::new(&params, 0.1);
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&params);
                let x = g.param(id);
                let sq = g.square(x);
                let loss = g.sum(sq);
                g.backward(loss)
            };
            opt.step(&mut params, &grads);
        }
        assert!(params.get(id).iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn mlp_shapes_and_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "hyper.mlp", &[4, 8, 3], Activation::Gelu, &mut rng);
        assert_eq!(params.scalar_count(), 4 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(params.group(mlp.layers[0].weight), "hyper");
        let mut g = Graph::new(&params);
        let x = g.constant(Mat::ones((5, 4)));
        let y = mlp.forward(&mut g, x);
        assert_eq!(g.shape(y), (5, 3));
    }

    #[test]
    fn activation_names_round_trip() {
        for a in [Activation::Relu, Activation::LeakyRelu01, Activation::Gelu] {
            let s = serde_json::to_string(&a).unwrap();
            let back: Activation = s.trim_matches('"').parse().unwrap();
            assert_eq!(a, back);
        }
        assert_eq!(Activation::LeakyRelu01.eval(-1.0), -0.1);
    }
}
