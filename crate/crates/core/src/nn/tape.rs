//! Minimal reverse-mode autodiff over `f64` matrices.
//!
//! The tape records eagerly: every op evaluates immediately and stores its
//! value, so a forward pass and the tape are the same object. `backward`
//! walks the nodes in reverse and produces exact gradients; parameters are
//! registered by name so callers can pull out a gradient map afterwards.

use super::func;
use ndarray::{Array2, Axis};

pub type Arr = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Single-input custom operation with a caller-supplied backward rule.
pub trait CustomOp {
    fn forward(&self, x: &Arr) -> Arr;
    /// Gradient with respect to the input, given the input value, output
    /// value, and upstream gradient.
    fn backward(&self, x: &Arr, y: &Arr, grad_y: &Arr) -> Arr;
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MinElem(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    RowSums(NodeId),
    MeanRows(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    Transpose(NodeId),
    BetaLogProb { a: NodeId, b: NodeId, u: Arr },
    BetaEntropy { a: NodeId, b: NodeId },
    Custom(NodeId, Box<dyn CustomOp>),
}

struct Node {
    op: Op,
    value: Arr,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Arr) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Arr {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    /// Constant input; gradients flow into it but are discarded.
    pub fn constant(&mut self, value: Arr) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant_row(&mut self, row: &[f64]) -> NodeId {
        self.constant(Arr::from_shape_vec((1, row.len()), row.to_vec()).unwrap())
    }

    /// Named parameter leaf; its gradient is collected by [`Tape::param_grads`].
    pub fn param(&mut self, name: &str, value: Arr) -> NodeId {
        let id = self.push(Op::Leaf, value);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    /// Elementwise minimum; gradient routes to the smaller input (ties to
    /// the first).
    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.zip_mut_with(self.value(b), |x, &y| *x = x.min(y));
        self.push(Op::MinElem(a, b), v)
    }

    /// Broadcast-add a `1 x m` bias row onto every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let b = self.value(bias).row(0).to_owned();
        let v = self.value(a) + &b;
        self.push(Op::AddRow(a, bias), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) + c;
        self.push(Op::AddScalar(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(func::softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Arr::from_elem((1, 1), self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a);
        let v = Arr::from_elem((1, 1), value.sum() / value.len() as f64);
        self.push(Op::MeanAll(a), v)
    }

    /// Per-row sum: `n x m` to `n x 1`.
    pub fn row_sums(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::RowSums(a), v)
    }

    /// Mean over rows: `n x m` to `1 x m`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean over zero rows")
            .insert_axis(Axis(0));
        self.push(Op::MeanRows(a), v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        let v = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).unwrap();
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let v = self.value(a).slice(ndarray::s![.., lo..hi]).to_owned();
        self.push(Op::SliceCols(a, lo, hi), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    /// Elementwise Beta log-density of the constant draws `u` under
    /// parameters `(a, b)` (all the same shape).
    pub fn beta_log_prob(&mut self, a: NodeId, b: NodeId, u: Arr) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        debug_assert_eq!(va.dim(), u.dim());
        let mut v = Arr::zeros(va.dim());
        ndarray::Zip::from(&mut v).and(va).and(vb).and(&u).for_each(|out, &a, &b, &u| {
            *out = func::beta_log_pdf(u, a, b);
        });
        self.push(Op::BetaLogProb { a, b, u }, v)
    }

    /// Elementwise Beta differential entropy under parameters `(a, b)`.
    pub fn beta_entropy(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        let mut v = Arr::zeros(va.dim());
        ndarray::Zip::from(&mut v).and(va).and(vb).for_each(|out, &a, &b| {
            *out = func::beta_entropy(a, b);
        });
        self.push(Op::BetaEntropy { a, b }, v)
    }

    pub fn custom(&mut self, a: NodeId, op: Box<dyn CustomOp>) -> NodeId {
        let v = op.forward(self.value(a));
        self.push(Op::Custom(a, op), v)
    }

    /// `x W + bias` with a broadcast bias row.
    pub fn dense(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row(xw, bias)
    }

    /// Reverse-mode gradients of a scalar root with respect to every node.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Arr>> {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Arr>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Arr::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MinElem(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let mut ga = Arr::zeros(g.dim());
                    let mut gb = Arr::zeros(g.dim());
                    ndarray::Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(&g)
                        .and(va)
                        .and(vb)
                        .for_each(|ga, gb, &g, &a, &b| {
                            if a <= b {
                                *ga = g;
                            } else {
                                *gb = g;
                            }
                        });
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, bias) => {
                    let gbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *bias, gbias);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = &g * &self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = &g * &self.nodes[a.0].value.mapv(func::sigmoid);
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &node.value),
                Op::Clamp(a, lo, hi) => {
                    let va = &self.nodes[a.0].value;
                    let mask = va.mapv(|x| if x > *lo && x < *hi { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, &g * &mask);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Arr::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 =
                            (0..y.ncols()).map(|c| g[[r, c]] * y[[r, c]]).sum();
                        for c in 0..y.ncols() {
                            ga[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    acc(&mut grads, *a, Arr::from_elem(shape, g[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    let n = (shape.0 * shape.1) as f64;
                    acc(&mut grads, *a, Arr::from_elem(shape, g[[0, 0]] / n));
                }
                Op::RowSums(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    let mut ga = Arr::zeros(shape);
                    for r in 0..shape.0 {
                        for c in 0..shape.1 {
                            ga[[r, c]] = g[[r, 0]];
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    let inv = 1.0 / shape.0 as f64;
                    let mut ga = Arr::zeros(shape);
                    for r in 0..shape.0 {
                        for c in 0..shape.1 {
                            ga[[r, c]] = g[[0, c]] * inv;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let na = self.nodes[a.0].value.ncols();
                    let ga = g.slice(ndarray::s![.., ..na]).to_owned();
                    let gb = g.slice(ndarray::s![.., na..]).to_owned();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::SliceCols(a, lo, _hi) => {
                    let shape = self.nodes[a.0].value.dim();
                    let mut ga = Arr::zeros(shape);
                    ga.slice_mut(ndarray::s![.., *lo..*lo + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::BetaLogProb { a, b, u } => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let mut ga = Arr::zeros(va.dim());
                    let mut gb = Arr::zeros(vb.dim());
                    ndarray::Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(&g)
                        .and(va)
                        .and(vb)
                        .and(u)
                        .for_each(|ga, gb, &g, &a, &b, &u| {
                            let (da, db) = func::beta_log_pdf_grad(u, a, b);
                            *ga = g * da;
                            *gb = g * db;
                        });
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::BetaEntropy { a, b } => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let mut ga = Arr::zeros(va.dim());
                    let mut gb = Arr::zeros(vb.dim());
                    ndarray::Zip::from(&mut ga).and(&mut gb).and(&g).and(va).and(vb).for_each(
                        |ga, gb, &g, &a, &b| {
                            let (da, db) = func::beta_entropy_grad(a, b);
                            *ga = g * da;
                            *gb = g * db;
                        },
                    );
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Custom(a, op) => {
                    let ga = op.backward(&self.nodes[a.0].value, &node.value, &g);
                    acc(&mut grads, *a, ga);
                }
            }
            grads[i] = Some(g);
        }
        grads
    }

    /// Collects gradients of registered parameters by name, summing repeats.
    pub fn param_grads(&self, grads: &[Option<Arr>]) -> super::GradMap {
        let mut out = super::GradMap::default();
        for (name, id) in &self.params {
            let g = grads[id.0]
                .clone()
                .unwrap_or_else(|| Arr::zeros(self.nodes[id.0].value.dim()));
            out.accumulate(name, g);
        }
        out
    }
}

fn acc(grads: &mut [Option<Arr>], id: NodeId, delta: Arr) {
    match &mut grads[id.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Arr {
        Arr::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_graph() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 2.0, 3.0]]);
        assert_eq!(t.value(x), &array![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn dense_with_zero_weights_returns_bias() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, -2.0]]);
        let w = t.param("w", Arr::zeros((2, 3)));
        let b = t.param("b", array![[0.5, -0.5, 2.0]]);
        let y = t.dense(x, w, b);
        assert_eq!(t.value(y), &array![[0.5, -0.5, 2.0]]);
    }

    #[test]
    fn two_layer_tanh_matches_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_arr(&mut rng, 3, 4);
        let w1 = rand_arr(&mut rng, 4, 5);
        let b1 = rand_arr(&mut rng, 1, 5);
        let w2 = rand_arr(&mut rng, 5, 2);
        let b2 = rand_arr(&mut rng, 1, 2);

        let mut t = Tape::new();
        let xn = t.constant(x.clone());
        let w1n = t.param("w1", w1.clone());
        let b1n = t.param("b1", b1.clone());
        let w2n = t.param("w2", w2.clone());
        let b2n = t.param("b2", b2.clone());
        let h = t.dense(xn, w1n, b1n);
        let h = t.tanh(h);
        let y = t.dense(h, w2n, b2n);

        // straightforward oracle
        let hidden = (x.dot(&w1) + &b1.row(0)).mapv(f64::tanh);
        let expect = hidden.dot(&w2) + &b2.row(0);
        let got = t.value(y);
        for (a, b) in got.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_layer_grad_is_outer_product() {
        let mut t = Tape::new();
        let x = t.constant(array![[2.0, -1.0, 0.5]]);
        let w = t.param("w", Arr::zeros((3, 2)));
        let y = t.matmul(x, w);
        let s = t.sum_all(y);
        let grads = t.backward(s);
        let gw = t.param_grads(&grads);
        // dL/dW = x^T * ones(1,2)
        let expect = array![[2.0, 2.0], [-1.0, -1.0], [0.5, 0.5]];
        assert_eq!(gw.get("w").unwrap(), &expect);
    }

    #[test]
    fn disconnected_param_gets_zero_grad() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0]]);
        let _unused = t.param("unused", array![[5.0, 5.0]]);
        let used = t.param("used", array![[2.0]]);
        let y = t.mul(x, used);
        let s = t.sum_all(y);
        let grads = t.backward(s);
        let gm = t.param_grads(&grads);
        assert_eq!(gm.get("unused").unwrap(), &Arr::zeros((1, 2)));
        assert_eq!(gm.get("used").unwrap(), &array![[1.0]]);
    }

    /// Builds a random scalar-output graph exercising `ops`, returning the
    /// loss as a function of the parameter value.
    fn scalar_graph(which: usize, p: &Arr, x: &Arr) -> f64 {
        let mut t = Tape::new();
        let pn = t.param("p", p.clone());
        let xn = t.constant(x.clone());
        let out = apply_ops(&mut t, which, pn, xn);
        t.scalar(out)
    }

    fn apply_ops(t: &mut Tape, which: usize, p: NodeId, x: NodeId) -> NodeId {
        match which % 12 {
            0 => {
                let xt = t.transpose(x);
                let h = t.matmul(xt, p);
                let h = t.tanh(h);
                t.mean_all(h)
            }
            1 => {
                let h = t.mul(p, p);
                let h = t.softplus(h);
                t.sum_all(h)
            }
            2 => {
                let h = t.sub(p, x);
                let h = t.mul(h, h);
                let r = t.row_sums(h);
                t.mean_all(r)
            }
            3 => {
                let h = t.exp(p);
                let h = t.clamp(h, 0.3, 2.0);
                t.mean_all(h)
            }
            4 => {
                let h = t.softmax_rows(p);
                let h = t.mul(h, x);
                t.sum_all(h)
            }
            5 => {
                let h = t.concat_cols(p, x);
                let h = t.tanh(h);
                t.mean_all(h)
            }
            6 => {
                let n = t.value(p).ncols();
                let h = t.slice_cols(p, 0, n.div_ceil(2));
                let h = t.relu(h);
                t.sum_all(h)
            }
            7 => {
                let ht = t.transpose(p);
                let h = t.matmul(x, ht);
                t.mean_all(h)
            }
            8 => {
                let h = t.min_elem(p, x);
                t.sum_all(h)
            }
            9 => {
                let h = t.mean_rows(p);
                let h = t.mul(h, h);
                t.sum_all(h)
            }
            10 => {
                let h = t.scale(p, 1.7);
                let h = t.add_scalar(h, 0.3);
                let h = t.tanh(h);
                t.mean_all(h)
            }
            _ => {
                let b = t.constant(Arr::from_elem((1, t.value(p).ncols()), 0.2));
                let h = t.add_row(p, b);
                let h = t.softplus(h);
                t.mean_all(h)
            }
        }
    }

    #[test]
    fn gradients_match_central_finite_differences_over_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for case in 0..100 {
            let rows = rng.random_range(1..4);
            let cols = rng.random_range(1..5);
            let p = rand_arr(&mut rng, rows, cols);
            let x = rand_arr(&mut rng, rows, cols);

            let mut t = Tape::new();
            let pn = t.param("p", p.clone());
            let xn = t.constant(x.clone());
            let out = apply_ops(&mut t, case, pn, xn);
            let grads = t.backward(out);
            let analytic = t.param_grads(&grads);
            let ga = analytic.get("p").unwrap();

            let h = 1e-5;
            for r in 0..rows {
                for c in 0..cols {
                    let mut pp = p.clone();
                    pp[[r, c]] += h;
                    let fp = scalar_graph(case, &pp, &x);
                    pp[[r, c]] -= 2.0 * h;
                    let fm = scalar_graph(case, &pp, &x);
                    let fd = (fp - fm) / (2.0 * h);
                    let denom = fd.abs().max(ga[[r, c]].abs()).max(1.0);
                    assert!(
                        (fd - ga[[r, c]]).abs() / denom < 1e-5,
                        "case {case} entry ({r},{c}): analytic {} vs fd {fd}",
                        ga[[r, c]]
                    );
                }
            }
        }
    }

    #[test]
    fn beta_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a0 = rng.random_range(1.1..4.0);
            let b0 = rng.random_range(1.1..4.0);
            let u = rng.random_range(0.05..0.95);

            let mut t = Tape::new();
            let a = t.param("a", array![[a0]]);
            let b = t.param("b", array![[b0]]);
            let lp = t.beta_log_prob(a, b, array![[u]]);
            let ent = t.beta_entropy(a, b);
            let both = t.add(lp, ent);
            let loss = t.sum_all(both);
            let grads = t.backward(loss);
            let gm = t.param_grads(&grads);

            let h = 1e-6;
            let f = |aa: f64| {
                let mut t2 = Tape::new();
                let an = t2.param("a", array![[aa]]);
                let bn = t2.param("b", array![[b0]]);
                let lp = t2.beta_log_prob(an, bn, array![[u]]);
                let ent = t2.beta_entropy(an, bn);
                let both = t2.add(lp, ent);
                let s = t2.sum_all(both);
                t2.scalar(s)
            };
            let fd_a = (f(a0 + h) - f(a0 - h)) / (2.0 * h);
            assert_abs_diff_eq!(gm.get("a").unwrap()[[0, 0]], fd_a, epsilon = 1e-5);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_arr(&mut rng, 2, 3);
        let w = rand_arr(&mut rng, 3, 3);
        let run = || {
            let mut t = Tape::new();
            let xn = t.constant(x.clone());
            let wn = t.param("w", w.clone());
            let h = t.matmul(xn, wn);
            let h = t.tanh(h);
            let s = t.mean_all(h);
            t.scalar(s)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
