//! Hypernetwork mapping `[z; c̄]` to the full weight vector of the coordinate
//! MLP, plus the covariate encoder feeding it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, Var};
use crate::encoder::row_matrix;
use crate::error::{Error, Result};
use crate::nn::{uniform_matrix, Activation, Linear, Mlp, ParamSet};

/// Layer widths of the generated network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InrArchitecture {
    pub input_width: usize,
    pub hidden: Vec<usize>,
    pub output_width: usize,
    pub activation: Activation,
}

impl InrArchitecture {
    pub fn new(input_width: usize, hidden: Vec<usize>, output_width: usize, activation: Activation) -> Result<Self> {
        if input_width == 0 || output_width == 0 || hidden.contains(&0) {
            return Err(Error::Config("INR widths must be ≥ 1".into()));
        }
        Ok(InrArchitecture {
            input_width,
            hidden,
            output_width,
            activation,
        })
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_width);
        widths.extend(&self.hidden);
        widths.push(self.output_width);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// `Σ fan_in·fan_out + fan_out`
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InrLayer {
    /// `fan_in × fan_out`
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// Concrete weights of one generated network.
#[derive(Debug, Clone, PartialEq)]
pub struct InrParameters {
    pub layers: Vec<InrLayer>,
    pub activation: Activation,
}

impl InrParameters {
    pub fn zeros(arch: &InrArchitecture) -> Self {
        InrParameters {
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| InrLayer {
                    weight: Mat::zeros((i, o)),
                    bias: vec![0.0; o],
                })
                .collect(),
            activation: arch.activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Layer-major; each layer's weight matrix row-major, then its bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(&layer.bias);
        }
        out
    }

    pub fn unflatten(flat: &[f64], arch: &InrArchitecture) -> Result<Self> {
        let expected = arch.param_count();
        if flat.len() != expected {
            return Err(Error::shape(format!("expected {expected} INR parameters, got {}", flat.len())));
        }
        let mut layers = Vec::new();
        let mut at = 0;
        for (i, o) in arch.layer_shapes() {
            let weight = Mat::from_shape_vec((i, o), flat[at..at + i * o].to_vec()).unwrap();
            at += i * o;
            let bias = flat[at..at + o].to_vec();
            at += o;
            layers.push(InrLayer { weight, bias });
        }
        Ok(InrParameters {
            layers,
            activation: arch.activation,
        })
    }
}

/// Feed-forward map of the static covariates, `ℝ^k → ℝ^{d_c}`. With `k = 0`
/// there is nothing to encode and the output is empty.
#[derive(Debug, Clone)]
pub struct CovariateEncoder {
    mlp: Option<Mlp>,
    pub input_width: usize,
}

impl CovariateEncoder {
    pub fn new(
        params: &mut ParamSet,
        input_width: usize,
        hidden: &[usize],
        output_width: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mlp = (input_width > 0 && output_width > 0).then(|| {
            let mut widths = vec![input_width];
            widths.extend(hidden);
            widths.push(output_width);
            Mlp::new(params, "covariate.mlp", &widths, activation, rng)
        });
        CovariateEncoder { mlp, input_width }
    }

    pub fn output_width(&self) -> usize {
        self.mlp.as_ref().map_or(0, Mlp::output_width)
    }

    fn check(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.input_width {
            return Err(Error::shape(format!(
                "covariate encoder expects {} values, got {}",
                self.input_width,
                c.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, c: &[f64]) -> Result<Option<Var>> {
        self.check(c)?;
        Ok(self.mlp.as_ref().map(|mlp| {
            let x = g.constant(row_matrix(c));
            mlp.forward(g, x)
        }))
    }

    pub fn encode(&self, params: &ParamSet, c: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(params);
        Ok(match self.forward(&mut g, c)? {
            Some(v) => g.value(v).iter().copied().collect(),
            None => Vec::new(),
        })
    }
}

/// MLP `g_φ: ℝ^{dim_z + d_c} → ℝ^{N_θ}`.
#[derive(Debug, Clone)]
pub struct HyperNetwork {
    hidden: Mlp,
    output: Linear,
    pub arch: InrArchitecture,
}

impl HyperNetwork {
    /// Hidden layers use the usual fan-in init. The output layer is scaled per
    /// generated layer so that the produced weights start near a standard MLP
    /// init: its bias holds a base network drawn as `U(±1/√fan_in)` and its
    /// weights have std `1/√(h · fan_in)` for the slice of a layer with
    /// `fan_in` inputs, `h` being the last hidden width.
    pub fn new(
        params: &mut ParamSet,
        input_width: usize,
        hidden: &[usize],
        activation: Activation,
        arch: InrArchitecture,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || input_width == 0 {
            return Err(Error::Config("hypernetwork needs ≥1 hidden layer and a non-empty input".into()));
        }
        let mut widths = vec![input_width];
        widths.extend(hidden);
        let h = *hidden.last().unwrap();
        let hidden_mlp = Mlp::new(params, "hyper.hidden", &widths, activation, rng);

        let n = arch.param_count();
        let mut weight = Mat::zeros((h, n));
        let mut bias = Mat::zeros((1, n));
        let mut at = 0;
        for (fan_in, fan_out) in arch.layer_shapes() {
            let count = fan_in * fan_out + fan_out;
            let w_bound = (3.0 / (h * fan_in) as f64).sqrt();
            let b_bound = 1.0 / (fan_in as f64).sqrt();
            let cols = ndarray::s![.., at..at + count];
            weight.slice_mut(cols).assign(&uniform_matrix(h, count, w_bound, rng));
            bias.slice_mut(cols).assign(&uniform_matrix(1, count, b_bound, rng));
            at += count;
        }
        let output = Linear {
            weight: params.register("hyper.output.weight", weight),
            bias: params.register("hyper.output.bias", bias),
            fan_in: h,
            fan_out: n,
        };
        Ok(HyperNetwork {
            hidden: hidden_mlp,
            output,
            arch,
        })
    }

    pub fn input_width(&self) -> usize {
        self.hidden.input_width()
    }

    /// Flat `1 × N_θ` parameter row.
    pub fn forward(&self, g: &mut Graph, h_dec: Var) -> Var {
        let x = self.hidden.forward(g, h_dec);
        let x = self.hidden.activation.apply(g, x);
        self.output.forward(g, x)
    }

    /// Splits the flat row into per-layer `(weight, bias)` nodes.
    pub fn split(&self, g: &mut Graph, flat: Var) -> Vec<(Var, Var)> {
        let mut at = 0;
        self.arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                let w = g.slice_cols(flat, at, at + i * o);
                let w = g.reshape(w, i, o);
                at += i * o;
                let b = g.slice_cols(flat, at, at + o);
                at += o;
                (w, b)
            })
            .collect()
    }

    /// `θ = g_φ([z; c̄])`.
    pub fn generate_params(&self, params: &ParamSet, z: &[f64], c_bar: &[f64]) -> Result<InrParameters> {
        if z.len() + c_bar.len() != self.input_width() {
            return Err(Error::shape(format!(
                "hypernetwork expects {} inputs, got {} + {}",
                self.input_width(),
                z.len(),
                c_bar.len()
            )));
        }
        let mut h = z.to_vec();
        h.extend_from_slice(c_bar);
        let mut g = Graph::new(params);
        let x = g.constant(row_matrix(&h));
        let flat = self.forward(&mut g, x);
        let flat: Vec<f64> = g.value(flat).iter().copied().collect();
        InrParameters::unflatten(&flat, &self.arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch(d_in: usize, hidden: Vec<usize>, d: usize) -> InrArchitecture {
        InrArchitecture::new(d_in, hidden, d, Activation::Relu).unwrap()
    }

    /// Counts parameters by materializing every tensor shape.
    fn brute_force_count(a: &InrArchitecture) -> usize {
        let mut widths = vec![a.input_width];
        widths.extend(&a.hidden);
        widths.push(a.output_width);
        let mut total = 0;
        for w in widths.windows(2) {
            total += Mat::zeros((w[0], w[1])).len();
            total += vec![0.0; w[1]].len();
        }
        total
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(arch(128, vec![64, 64, 64], 1).param_count(), 16641);
        assert_eq!(arch(2, vec![64], 1).param_count(), 257);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..8 {
            let hidden: Vec<usize> = (0..rng.random_range(0..5)).map(|_| rng.random_range(1..40)).collect();
            let a = arch(rng.random_range(1..30), hidden, rng.random_range(1..5));
            assert_eq!(a.param_count(), brute_force_count(&a));
            assert_eq!(InrParameters::zeros(&a).param_count(), a.param_count());
        }
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let a = arch(2, vec![64], 1);
        assert!(InrParameters::unflatten(&vec![0.0; 256], &a).is_err());
        assert!(InrParameters::unflatten(&vec![0.0; 258], &a).is_err());
    }

    #[test]
    fn covariate_encoder_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let har = CovariateEncoder::new(&mut params, 6, &[8, 8], 4, Activation::Gelu, &mut rng);
        let onehot = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let c = har.encode(&params, &onehot).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c, har.encode(&params, &onehot).unwrap());
        assert!(har.encode(&params, &[1.0]).is_err());

        let none = CovariateEncoder::new(&mut params, 0, &[8, 8], 4, Activation::Gelu, &mut rng);
        assert!(none.encode(&params, &[]).unwrap().is_empty());
        assert_eq!(none.output_width(), 0);
    }

    #[test]
    fn generated_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let a = arch(8, vec![16, 16], 2);
        let hyper = HyperNetwork::new(&mut params, 4, &[12, 20], Activation::Gelu, a.clone(), &mut rng).unwrap();
        let t1 = hyper.generate_params(&params, &[0.1, -0.2, 0.3], &[1.0]).unwrap();
        let t2 = hyper.generate_params(&params, &[1.1, 0.5, -0.3], &[1.0]).unwrap();
        assert_eq!(t1.param_count(), a.param_count());
        let diff: f64 = t1.flatten().iter().zip(t2.flatten()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(diff > 0.0);
        assert_eq!(t1, hyper.generate_params(&params, &[0.1, -0.2, 0.3], &[1.0]).unwrap());
        assert!(hyper.generate_params(&params, &[0.1], &[]).is_err());

        for id in params.ids().collect::<Vec<_>>() {
            params.get_mut(id).fill(0.0);
        }
        let zero = hyper.generate_params(&params, &[0.1, -0.2, 0.3], &[1.0]).unwrap();
        assert!(zero.flatten().iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn flatten_round_trip(seed in 0u64..500, d_in in 1usize..6, h in 1usize..7, d in 1usize..3) {
            let a = arch(d_in, vec![h, h + 1], d);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let flat: Vec<f64> = (0..a.param_count()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let theta = InrParameters::unflatten(&flat, &a).unwrap();
            prop_assert_eq!(theta.flatten(), flat.clone());
            prop_assert_eq!(InrParameters::unflatten(&theta.flatten(), &a).unwrap(), theta);
        }
    }
}
