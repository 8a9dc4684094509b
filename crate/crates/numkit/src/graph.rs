//! Taped reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! tape is already topologically sorted and [`Graph::backward`] is a single
//! reverse sweep. Graphs are cheap to build; a training step creates one,
//! runs forward and backward, then drops it.
//!
//! ```
//! use numkit::{Graph, Matrix};
//!
//! let mut g = Graph::new();
//! let w = g.param(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
//! let sq = g.hadamard(w, w);
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[2.0, 4.0, 6.0, 8.0]);
//! ```

use crate::matrix::gemm;
use crate::{Matrix, NumError};

/// Variance floor used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Smoothing inside the logarithms of [`Graph::js_rows`].
pub const JS_EPS: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    NormalizeRows(Var),
    LayerNorm {
        input: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Softplus(Var),
    JsRows(Var, Var),
    Sum(Var),
    BceWithLogits {
        logits: Var,
        targets: Matrix,
        mask: Matrix,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Computation tape. Single-writer: one graph belongs to one training step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Matrix {
        self.grads[v.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            Matrix::zeros(r, c)
        })
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> ! {
    panic!(
        "{}",
        NumError::Shape {
            op,
            left: a.shape(),
            right: b.shape()
        }
    )
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Jensen-Shannon divergence (natural log) of two distributions.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        acc += a * ((a + JS_EPS) / (m + JS_EPS)).ln() + b * ((b + JS_EPS) / (m + JS_EPS)).ln();
    }
    0.5 * acc
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Param)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Stop-gradient: same value, cut from backpropagation.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va
            .matmul(vb)
            .unwrap_or_else(|_| shape_err("matmul", va, vb));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va
            .matmul_t(vb)
            .unwrap_or_else(|_| shape_err("matmul_t", va, vb));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va
            .zip_map(vb, |x, y| x + y)
            .unwrap_or_else(|_| shape_err("add", va, vb));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va
            .zip_map(vb, |x, y| x - y)
            .unwrap_or_else(|_| shape_err("sub", va, vb));
        self.push(out, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va
            .hadamard(vb)
            .unwrap_or_else(|_| shape_err("hadamard", va, vb));
        self.push(out, Op::Hadamard(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            shape_err("add_row", va, vr);
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (o, r) in out.row_mut(i).iter_mut().zip(vr.data()) {
                *o += r;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            shape_err("mul_row", va, vr);
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (o, r) in out.row_mut(i).iter_mut().zip(vr.data()) {
                *o *= r;
            }
        }
        self.push(out, Op::MulRow(a, row))
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `r×1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            shape_err("mul_col", va, vc);
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            let s = vc.data()[i];
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        self.push(out, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Divides each row by its sum. Rows must have non-zero sums.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let s: f64 = row.iter().sum();
            for v in row {
                *v /= s;
            }
        }
        self.push(out, Op::NormalizeRows(a))
    }

    /// Per-row standardization (population variance, ε = 1e-5), no affine.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (r, c) = va.shape();
        let mut xhat = va.clone();
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xhat.row_mut(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(
            xhat.clone(),
            Op::LayerNorm {
                input: a,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    /// Row-wise Jensen-Shannon divergence, `r×c, r×c -> r×1`.
    pub fn js_rows(&mut self, p: Var, q: Var) -> Var {
        let (vp, vq) = (self.value(p), self.value(q));
        if vp.shape() != vq.shape() {
            shape_err("js_rows", vp, vq);
        }
        let out: Vec<f64> = (0..vp.rows())
            .map(|i| js_divergence(vp.row(i), vq.row(i)))
            .collect();
        self.push(Matrix::column(&out), Op::JsRows(p, q))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Masked binary cross-entropy on logits (`r×1`), summed over the
    /// entries where `mask` is 1.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Matrix, mask: &Matrix) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), targets.shape(), "bce targets shape");
        assert_eq!(z.shape(), mask.shape(), "bce mask shape");
        let loss: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .zip(mask.data())
            .map(|((&z, &y), &m)| m * (softplus(z) - y * z))
            .sum();
        self.push(
            Matrix::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.clone(),
                mask: mask.clone(),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumError::NotScalar { shape });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param | Op::Constant => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.wants(*a) {
                        let mut ga = Matrix::zeros(va.rows(), va.cols());
                        gemm(&gout, false, vb, true, &mut ga, 0.0);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                        gemm(va, true, &gout, false, &mut gb, 0.0);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.wants(*a) {
                        let mut ga = Matrix::zeros(va.rows(), va.cols());
                        gemm(&gout, false, vb, false, &mut ga, 0.0);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                        gemm(&gout, true, va, false, &mut gb, 0.0);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, gout.clone());
                    }
                    accumulate(&mut grads, *a, gout);
                }
                Op::Sub(a, b) => {
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, gout.scale(-1.0));
                    }
                    accumulate(&mut grads, *a, gout);
                }
                Op::Hadamard(a, b) => {
                    if self.wants(*a) {
                        let ga = gout.hadamard(self.value(*b)).expect("shape");
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = gout.hadamard(self.value(*a)).expect("shape");
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.wants(*row) {
                        accumulate(&mut grads, *row, gout.col_sums());
                    }
                    accumulate(&mut grads, *a, gout);
                }
                Op::MulRow(a, row) => {
                    let (va, vr) = (self.value(*a), self.value(*row));
                    if self.wants(*row) {
                        let gr = gout.hadamard(va).expect("shape").col_sums();
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.wants(*a) {
                        let mut ga = gout;
                        for i in 0..ga.rows() {
                            for (g, r) in ga.row_mut(i).iter_mut().zip(vr.data()) {
                                *g *= r;
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::MulCol(a, col) => {
                    let (va, vc) = (self.value(*a), self.value(*col));
                    if self.wants(*col) {
                        let gc = gout.hadamard(va).expect("shape").row_sums();
                        accumulate(&mut grads, *col, gc);
                    }
                    if self.wants(*a) {
                        let mut ga = gout;
                        for i in 0..ga.rows() {
                            let s = vc.data()[i];
                            for g in ga.row_mut(i) {
                                *g *= s;
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, gout.scale(*s)),
                Op::Transpose(a) => accumulate(&mut grads, *a, gout.transpose()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = gout;
                    for i in 0..ga.rows() {
                        let yr = y.row(i);
                        let dot: f64 = ga.row(i).iter().zip(yr).map(|(g, y)| g * y).sum();
                        for (g, y) in ga.row_mut(i).iter_mut().zip(yr) {
                            *g = y * (*g - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::NormalizeRows(a) => {
                    let y = &node.value;
                    let va = self.value(*a);
                    let mut ga = gout;
                    for i in 0..ga.rows() {
                        let s: f64 = va.row(i).iter().sum();
                        let dot: f64 = ga.row(i).iter().zip(y.row(i)).map(|(g, y)| g * y).sum();
                        for g in ga.row_mut(i) {
                            *g = (*g - dot) / s;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    input,
                    xhat,
                    inv_std,
                } => {
                    let c = xhat.cols() as f64;
                    let mut ga = gout;
                    for i in 0..ga.rows() {
                        let xr = xhat.row(i);
                        let g = ga.row(i);
                        let mean_g = g.iter().sum::<f64>() / c;
                        let mean_gx = g.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>() / c;
                        let is = inv_std[i];
                        let row = ga.row_mut(i);
                        for (gv, x) in row.iter_mut().zip(xr) {
                            *gv = is * (*gv - mean_g - x * mean_gx);
                        }
                    }
                    accumulate(&mut grads, *input, ga);
                }
                Op::Gelu(a) => {
                    let ga = gout
                        .zip_map(self.value(*a), |g, x| g * gelu_grad(x))
                        .expect("shape");
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = gout
                        .zip_map(&node.value, |g, y| g * y * (1.0 - y))
                        .expect("shape");
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = gout.zip_map(&node.value, |g, y| g * y).expect("shape");
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = gout
                        .zip_map(self.value(*a), |g, x| g * sigmoid(x))
                        .expect("shape");
                    accumulate(&mut grads, *a, ga);
                }
                Op::JsRows(p, q) => {
                    let (vp, vq) = (self.value(*p), self.value(*q));
                    let (want_p, want_q) = (self.wants(*p), self.wants(*q));
                    let mut gp = Matrix::zeros(vp.rows(), vp.cols());
                    let mut gq = Matrix::zeros(vq.rows(), vq.cols());
                    for i in 0..vp.rows() {
                        let gi = gout.data()[i];
                        for j in 0..vp.cols() {
                            let (a, b) = (vp.get(i, j), vq.get(i, j));
                            let m = 0.5 * (a + b) + JS_EPS;
                            let shared = -0.25 * (a + b) / m;
                            if want_p {
                                let d = ((a + JS_EPS) / m).ln() + a / (a + JS_EPS) + shared;
                                gp.set(i, j, 0.5 * gi * d);
                            }
                            if want_q {
                                let d = ((b + JS_EPS) / m).ln() + b / (b + JS_EPS) + shared;
                                gq.set(i, j, 0.5 * gi * d);
                            }
                        }
                    }
                    if want_p {
                        accumulate(&mut grads, *p, gp);
                    }
                    if want_q {
                        accumulate(&mut grads, *q, gq);
                    }
                }
                Op::Sum(a) => {
                    let g = gout.data()[0];
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g));
                }
                Op::BceWithLogits {
                    logits,
                    targets,
                    mask,
                } => {
                    let g = gout.data()[0];
                    let z = self.value(*logits);
                    let data = z
                        .data()
                        .iter()
                        .zip(targets.data())
                        .zip(mask.data())
                        .map(|((&z, &y), &m)| g * m * (sigmoid(z) - y))
                        .collect();
                    let gz = Matrix::new(z.rows(), z.cols(), data).expect("shape");
                    accumulate(&mut grads, *logits, gz);
                }
            }
        }

        let shapes = self.nodes[..=loss.0]
            .iter()
            .map(|n| n.value.shape())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
