//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! the op that produced it. [`Graph::backward`] walks the tape once in reverse
//! and returns gradients for every parameter that was pulled into the graph
//! with [`Graph::param`]. Graphs are cheap and meant to be built per sample and
//! thrown away.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::nn::ParamSet;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a trainable tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a + row`, row broadcast over the rows of `a`
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Ln(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    Softplus(Var),
    Sum(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    LayerNorm(Var),
    /// Row softmax; entries with a `false` mask get zero weight.
    MaskedSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Mat>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

/// Parameter gradients, indexed like the [`ParamSet`] they came from.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.scaled_add(scale, t),
                    None => *mine = Some(t * scale),
                }
            }
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Mat> {
        self.grads[id.0].as_mut()
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn scalar_activation(kind: ScalarFn, x: f64) -> f64 {
    match kind {
        ScalarFn::Relu => x.max(0.0),
        ScalarFn::LeakyRelu(slope) => {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        }
        ScalarFn::Gelu => gelu(x),
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum ScalarFn {
    Relu,
    LeakyRelu(f64),
    Gelu,
}

fn layer_norm_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

fn masked_softmax_rows(x: &Mat, mask: &Array2<bool>) -> Mat {
    let mut out = Mat::zeros(x.raw_dim());
    for ((xr, mr), mut or) in x.rows().into_iter().zip(mask.rows()).zip(out.rows_mut()) {
        let mut max = f64::NEG_INFINITY;
        for (v, &m) in xr.iter().zip(mr.iter()) {
            if m && *v > max {
                max = *v;
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for ((o, v), &m) in or.iter_mut().zip(xr.iter()).zip(mr.iter()) {
            if m {
                *o = (v - max).exp();
                total += *o;
            }
        }
        or.mapv_inplace(|o| o / total);
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: self.params.shared(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulTransB(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a 1×n row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row expects a 1×n row");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::Offset(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self
            .value(a)
            .mapv(|x| scalar_activation(ScalarFn::LeakyRelu(slope), x));
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    /// Column means, `n×m → 1×m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows() as f64;
        let v = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
        self.push(v, Op::MeanRows(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self
            .value(a)
            .slice(ndarray::s![.., start..end])
            .to_owned();
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        let data: Vec<f64> = x.iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), data).expect("reshape: element count differs");
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let v = layer_norm_rows(self.value(a));
        self.push(v, Op::LayerNorm(a), &[a])
    }

    pub fn masked_softmax(&mut self, a: Var, mask: &Array2<bool>) -> Var {
        assert_eq!(self.value(a).dim(), mask.dim());
        let v = masked_softmax_rows(self.value(a), mask);
        self.push(v, Op::MaskedSoftmax(a), &[a])
    }

    /// Gradients of the scalar `loss` with respect to every parameter node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out.grads[id.0] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::MatMulTransB(a, b) => {
                    if self.needs(*a) {
                        let da = g.dot(self.value(*b));
                        self.acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = g.t().dot(self.value(*a));
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, -&g);
                    }
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let da = &g * self.value(*b);
                        self.acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = &g * self.value(*a);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    if self.needs(*a) {
                        let da = &g / bv;
                        self.acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        // d(a/b)/db = -y/b
                        let mut db = &g * &**y;
                        Zip::from(&mut db).and(bv).for_each(|d, &bb| *d = -*d / bb);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, dr);
                    }
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::MulRow(a, row) => {
                    if self.needs(*row) {
                        let dr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, dr);
                    }
                    if self.needs(*a) {
                        let da = &g * self.value(*row);
                        self.acc(&mut grads, *a, da);
                    }
                }
                Op::Scale(a, k) => {
                    let da = &g * *k;
                    self.acc(&mut grads, *a, da);
                }
                Op::Offset(a) => self.acc(&mut grads, *a, g),
                Op::Square(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= 2.0 * x);
                    self.acc(&mut grads, *a, da);
                }
                Op::Ln(a) => {
                    let da = &g / self.value(*a);
                    self.acc(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let mut da = g;
                    Zip::from(&mut da).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    self.acc(&mut grads, *a, da);
                }
                Op::LeakyRelu(a, slope) => {
                    let mut da = g;
                    Zip::from(&mut da).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= *slope
                        }
                    });
                    self.acc(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    self.acc(&mut grads, *a, da);
                }
                Op::Softplus(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= sigmoid(x));
                    self.acc(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let da = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    self.acc(&mut grads, *a, da);
                }
                Op::MeanRows(a) => {
                    let (n, m) = self.value(*a).dim();
                    let row = &g / n as f64;
                    let da = row.broadcast((n, m)).unwrap().to_owned();
                    self.acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.needs(*p) {
                            let dp = g.slice(ndarray::s![.., col..col + w]).to_owned();
                            self.acc(&mut grads, *p, dp);
                        }
                        col += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut da = Mat::zeros(self.value(*a).raw_dim());
                    let w = g.ncols();
                    da.slice_mut(ndarray::s![.., *start..*start + w]).assign(&g);
                    self.acc(&mut grads, *a, da);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).raw_dim();
                    let data: Vec<f64> = g.iter().copied().collect();
                    let da = Mat::from_shape_vec(dim, data).unwrap();
                    self.acc(&mut grads, *a, da);
                }
                Op::LayerNorm(a) => {
                    // dx = r (dy - mean(dy) - x̂ mean(dy ⊙ x̂)) with r = 1/sqrt(var + eps)
                    let x = self.value(*a);
                    let mut da = Mat::zeros(x.raw_dim());
                    for ((xr, (yr, gr)), mut dr) in x
                        .rows()
                        .into_iter()
                        .zip(y.rows().into_iter().zip(g.rows()))
                        .zip(da.rows_mut())
                    {
                        let n = xr.len() as f64;
                        let mean = xr.sum() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let g_mean = gr.sum() / n;
                        let gy_mean = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((d, &gv), &yv) in dr.iter_mut().zip(gr.iter()).zip(yr.iter()) {
                            *d = r * (gv - g_mean - yv * gy_mean);
                        }
                    }
                    self.acc(&mut grads, *a, da);
                }
                Op::MaskedSoftmax(a) => {
                    let mut da = Mat::zeros(y.raw_dim());
                    for ((yr, gr), mut dr) in y.rows().into_iter().zip(g.rows()).zip(da.rows_mut()) {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(p, q)| p * q).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *d = yv * (gv - dot);
                        }
                    }
                    self.acc(&mut grads, *a, da);
                }
            }
        }
        out
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of one op chain against `backward`.
    fn check<F>(init: Mat, build: F)
    where
        F: Fn(&mut Graph, Var) -> Var,
    {
        let mut params = ParamSet::new();
        let id = params.register("x", init.clone());
        let analytic = {
            let mut g = Graph::new(&params);
            let x = g.param(id);
            let out = build(&mut g, x);
            let loss = g.sum(out);
            g.backward(loss).get(id).cloned().unwrap()
        };
        let h = 1e-6;
        for idx in 0..init.len() {
            let r = idx / init.ncols();
            let c = idx % init.ncols();
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.get_mut(id)[[r, c]] += delta;
                let mut g = Graph::new(&p);
                let x = g.param(id);
                let out = build(&mut g, x);
                let loss = g.sum(out);
                g.scalar(loss)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[[r, c]];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + a.abs()),
                "entry ({r},{c}): analytic {a} vs fd {fd}"
            );
        }
    }

    fn sample() -> Mat {
        array![[0.3, -1.2, 0.7], [1.5, 0.1, -0.4]]
    }

    #[test]
    fn elementwise_ops() {
        check(sample(), |g, x| g.gelu(x));
        check(sample(), |g, x| g.softplus(x));
        check(sample(), |g, x| g.leaky_relu(x, 0.1));
        check(sample(), |g, x| {
            let s = g.square(x);
            let o = g.offset(s, 1.0);
            g.ln(o)
        });
        check(sample(), |g, x| {
            let s = g.square(x);
            let o = g.offset(s, 0.5);
            g.div(x, o)
        });
    }

    #[test]
    fn matrix_ops() {
        let w = array![[0.2, -0.5], [1.0, 0.3], [-0.7, 0.9]];
        check(sample(), |g, x| {
            let w = g.constant(w.clone());
            g.matmul(x, w)
        });
        check(sample(), |g, x| g.matmul_t(x, x));
        check(sample(), |g, x| {
            let sq = g.matmul_t(x, x);
            let mask = array![[true, false], [true, true]];
            let sm = g.masked_softmax(sq, &mask);
            let w = g.constant(array![[1.0, -2.0], [0.5, 3.0]]);
            g.mul(sm, w)
        });
        check(sample(), |g, x| {
            let ln = g.layer_norm(x);
            let w = g.constant(array![[1.0, -2.0, 0.5], [0.5, 3.0, -1.0]]);
            g.mul(ln, w)
        });
    }

    #[test]
    fn shape_ops() {
        check(sample(), |g, x| {
            let a = g.slice_cols(x, 1, 3);
            let b = g.reshape(a, 1, 4);
            let c = g.square(b);
            let m = g.mean_rows(x);
            let m2 = g.square(m);
            let r = g.reshape(c, 2, 2);
            let cat = g.concat_cols(&[r, x]);
            let s = g.sum(cat);
            let k = g.sum(m2);
            let both = g.concat_cols(&[s, k]);
            g.scale(both, 0.5)
        });
        check(array![[0.3, -1.2, 0.7]], |g, row| {
            let base = g.constant(sample());
            let a = g.add_row(base, row);
            let b = g.mul_row(a, row);
            g.square(b)
        });
    }

    #[test]
    fn fully_masked_softmax_row_is_zero() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let mask = array![[false, false], [true, true]];
        let y = masked_softmax_rows(&x, &mask);
        assert_eq!(y.row(0).to_vec(), vec![0.0, 0.0]);
        assert!((y.row(1).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut params = ParamSet::new();
        let id = params.register("w", array![[2.0]]);
        let mut g = Graph::new(&params);
        let c = g.constant(array![[3.0]]);
        let w = g.param(id);
        let y = g.mul(c, w);
        let grads = g.backward(y);
        assert_eq!(grads.get(id).unwrap()[[0, 0]], 3.0);
    }
}
