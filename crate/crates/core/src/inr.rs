//! Evaluation of a generated coordinate network `f_θ`.

use crate::autodiff::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::hypergenerator::InrParameters;
use crate::nn::Activation;

/// `ŷ = f_θ(e)` for one encoded coordinate.
pub fn inr_forward(theta: &InrParameters, e: &[f64]) -> Result<Vec<f64>> {
    let first = theta.layers.first().ok_or_else(|| Error::shape("INR has no layers"))?;
    if e.len() != first.weight.nrows() {
        return Err(Error::shape(format!(
            "coordinate encoding has width {}, INR expects {}",
            e.len(),
            first.weight.nrows()
        )));
    }
    let last = theta.layers.len() - 1;
    let mut x = e.to_vec();
    for (i, layer) in theta.layers.iter().enumerate() {
        let mut y = layer.bias.clone();
        for (xi, w_row) in x.iter().zip(layer.weight.rows()) {
            for (yj, w) in y.iter_mut().zip(w_row) {
                *yj += xi * w;
            }
        }
        if i < last {
            y.iter_mut().for_each(|v| *v = theta.activation.eval(*v));
        }
        x = y;
    }
    Ok(x)
}

/// Row-wise [`inr_forward`] over an `L' × d_in` encoding matrix.
pub fn predict_series(theta: &InrParameters, encodings: &Mat) -> Result<Mat> {
    let d = theta.layers.last().map_or(0, |l| l.bias.len());
    let mut out = Mat::zeros((encodings.nrows(), d));
    for (row, mut dst) in encodings.rows().into_iter().zip(out.rows_mut()) {
        let e: Vec<f64> = row.to_vec();
        let y = inr_forward(theta, &e)?;
        dst.assign(&ndarray::ArrayView1::from(&y));
    }
    Ok(out)
}

/// Graph version over generated `(weight, bias)` nodes, for training.
pub fn inr_graph(g: &mut Graph, layers: &[(Var, Var)], activation: Activation, e: Var) -> Var {
    let last = layers.len() - 1;
    let mut x = e;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let xw = g.matmul(x, w);
        x = g.add_row(xw, b);
        if i < last {
            x = activation.apply(g, x);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergenerator::{InrArchitecture, InrLayer};
    use crate::nn::ParamSet;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_theta(arch: &InrArchitecture, seed: u64) -> InrParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        InrParameters::unflatten(&flat, arch).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = InrArchitecture::new(3, vec![5, 4], 2, Activation::Relu).unwrap();
        let theta = InrParameters::zeros(&arch);
        assert_eq!(inr_forward(&theta, &[0.3, -1.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_two_layer() {
        // h = relu(x W1 + b1), y = h W2 + b2
        let theta = InrParameters {
            layers: vec![
                InrLayer {
                    weight: array![[1.0, 0.0, -1.0], [0.0, 1.0, 2.0]],
                    bias: vec![0.0, -0.5, 0.25],
                },
                InrLayer {
                    weight: array![[2.0], [3.0], [-1.0]],
                    bias: vec![0.5],
                },
            ],
            activation: Activation::Relu,
        };
        // x = (1, 2): pre = (1, 1.5, 3.25), relu unchanged, y = 2 + 4.5 - 3.25 + 0.5
        assert_eq!(inr_forward(&theta, &[1.0, 2.0]).unwrap(), vec![3.75]);
        // x = (-1, 0): pre = (-1, -0.5, 1.25) → (0, 0, 1.25), y = -1.25 + 0.5
        assert_eq!(inr_forward(&theta, &[-1.0, 0.0]).unwrap(), vec![-0.75]);
        assert!(inr_forward(&theta, &[1.0]).is_err());
    }

    #[test]
    fn batching_matches_single_queries() {
        let arch = InrArchitecture::new(4, vec![8, 8], 3, Activation::Gelu).unwrap();
        let theta = random_theta(&arch, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = Mat::from_shape_simple_fn((17, 4), || rng.random_range(-2.0..2.0));
        let batch = predict_series(&theta, &e).unwrap();
        for (r, row) in e.rows().into_iter().enumerate() {
            let single = inr_forward(&theta, &row.to_vec()).unwrap();
            assert_eq!(batch.row(r).to_vec(), single);
        }
        assert!(batch.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_and_long_queries() {
        let arch = InrArchitecture::new(6, vec![16], 1, Activation::Relu).unwrap();
        let theta = random_theta(&arch, 5);
        assert_eq!(predict_series(&theta, &Mat::zeros((0, 6))).unwrap().dim(), (0, 1));
        assert_eq!(predict_series(&theta, &Mat::ones((720, 6))).unwrap().dim(), (720, 1));
    }

    #[test]
    fn graph_matches_plain() {
        let arch = InrArchitecture::new(4, vec![6, 5], 2, Activation::LeakyRelu01).unwrap();
        let theta = random_theta(&arch, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let e = Mat::from_shape_simple_fn((7, 4), || rng.random_range(-2.0..2.0));
        let params = ParamSet::new();
        let mut g = Graph::new(&params);
        let layers: Vec<(Var, Var)> = theta
            .layers
            .iter()
            .map(|l| {
                let w = g.constant(l.weight.clone());
                let b = g.constant(Mat::from_shape_vec((1, l.bias.len()), l.bias.clone()).unwrap());
                (w, b)
            })
            .collect();
        let ev = g.constant(e.clone());
        let y = inr_graph(&mut g, &layers, theta.activation, ev);
        let plain = predict_series(&theta, &e).unwrap();
        for (a, b) in g.value(y).iter().zip(plain.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
