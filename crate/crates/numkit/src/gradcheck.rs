//! Central finite-difference gradient checking and a generator of random
//! composite graphs that exercises every differentiable op.

use rand::Rng;

use crate::{Graph, Matrix, Var};

/// Largest relative error between backprop and central differences over
/// all `leaves`, where `build` maps leaf vars to a scalar loss.
///
/// Per leaf the error is `‖g_bp − g_fd‖ / max(‖g_bp‖, ‖g_fd‖, 1e-8)`.
pub fn max_relative_error<F>(leaves: &[Matrix], h: f64, build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |vals: &[Matrix]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|m| g.param(m.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).data()[0]
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|m| g.param(m.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).expect("scalar loss");

    let mut worst: f64 = 0.0;
    let mut work: Vec<Matrix> = leaves.to_vec();
    for (li, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut numeric = Matrix::zeros(analytic.rows(), analytic.cols());
        for k in 0..leaves[li].len() {
            let orig = work[li].data()[k];
            work[li].data_mut()[k] = orig + h;
            let up = eval(&work);
            work[li].data_mut()[k] = orig - h;
            let down = eval(&work);
            work[li].data_mut()[k] = orig;
            numeric.data_mut()[k] = (up - down) / (2.0 * h);
        }
        let diff = (&analytic - &numeric).frobenius_norm();
        let denom = analytic
            .frobenius_norm()
            .max(numeric.frobenius_norm())
            .max(1e-8);
        worst = worst.max(diff / denom);
    }
    worst
}

/// Operand of a program step: a leaf or the output of an earlier step.
#[derive(Debug, Clone, Copy)]
enum Ref {
    Leaf(usize),
    Out(usize),
}

#[derive(Debug, Clone, Copy)]
enum Step {
    MatMul(Ref, Ref),
    MatMulT(Ref, Ref),
    Add(Ref, Ref),
    Sub(Ref, Ref),
    Hadamard(Ref, Ref),
    AddRow(Ref, Ref),
    MulRow(Ref, Ref),
    MulCol(Ref, Ref),
    Scale(Ref, f64),
    Transpose(Ref),
    SoftmaxRows(Ref),
    NormalizeSigmoidRows(Ref),
    LayerNorm(Ref),
    Gelu(Ref),
    Sigmoid(Ref),
    ExpSigmoid(Ref),
    Softplus(Ref),
    Js(Ref, Ref),
}

#[derive(Debug, Clone)]
enum Terminal {
    WeightedSum(Ref, Matrix),
    Bce(Ref, Matrix, Matrix),
    JsSum(Ref, Ref),
}

/// A random differentiable program over a set of leaves. Replayable, so the
/// same program can be evaluated on perturbed leaves.
#[derive(Debug, Clone)]
pub struct RandomProgram {
    pub leaves: Vec<Matrix>,
    steps: Vec<Step>,
    terminal: Terminal,
}

struct Builder<'a, R> {
    rng: &'a mut R,
    leaves: Vec<Matrix>,
    out_shapes: Vec<(usize, usize)>,
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, r: usize, c: usize) -> Ref {
        let rng = &mut *self.rng;
        self.leaves
            .push(Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0)));
        Ref::Leaf(self.leaves.len() - 1)
    }

    fn shape(&self, x: Ref) -> (usize, usize) {
        match x {
            Ref::Leaf(i) => self.leaves[i].shape(),
            Ref::Out(i) => self.out_shapes[i],
        }
    }

    fn pick(&mut self) -> Ref {
        let n = self.leaves.len() + self.out_shapes.len();
        let i = self.rng.random_range(0..n);
        if i < self.leaves.len() {
            Ref::Leaf(i)
        } else {
            Ref::Out(i - self.leaves.len())
        }
    }
}

impl RandomProgram {
    pub fn generate<R: Rng>(rng: &mut R) -> Self {
        let mut b = Builder {
            rng,
            leaves: Vec::new(),
            out_shapes: Vec::new(),
        };
        let n_initial = b.rng.random_range(1..=3);
        for _ in 0..n_initial {
            let (r, c) = (b.rng.random_range(1..=4), b.rng.random_range(2..=4));
            b.leaf(r, c);
        }
        let mut steps = Vec::new();
        let n_steps = b.rng.random_range(2..=7);
        for _ in 0..n_steps {
            let a = b.pick();
            let (r, c) = b.shape(a);
            let (step, shape) = match b.rng.random_range(0..18) {
                0 => {
                    let k = b.rng.random_range(1..=4);
                    (Step::MatMul(a, b.leaf(c, k)), (r, k))
                }
                1 => {
                    let k = b.rng.random_range(1..=4);
                    (Step::MatMulT(a, b.leaf(k, c)), (r, k))
                }
                2 => (Step::Add(a, b.leaf(r, c)), (r, c)),
                3 => (Step::Sub(b.leaf(r, c), a), (r, c)),
                4 => (Step::Hadamard(a, b.leaf(r, c)), (r, c)),
                5 => (Step::AddRow(a, b.leaf(1, c)), (r, c)),
                6 => (Step::MulRow(a, b.leaf(1, c)), (r, c)),
                7 => (Step::MulCol(a, b.leaf(r, 1)), (r, c)),
                8 => (Step::Scale(a, b.rng.random_range(-2.0..2.0)), (r, c)),
                9 => (Step::Transpose(a), (c, r)),
                10 => (Step::SoftmaxRows(a), (r, c)),
                11 => (Step::NormalizeSigmoidRows(a), (r, c)),
                12 if c >= 2 => (Step::LayerNorm(a), (r, c)),
                12 | 13 => (Step::Gelu(a), (r, c)),
                14 => (Step::Sigmoid(a), (r, c)),
                15 => (Step::ExpSigmoid(a), (r, c)),
                16 => (Step::Softplus(a), (r, c)),
                _ => (Step::Js(a, b.leaf(r, c)), (r, 1)),
            };
            steps.push(step);
            b.out_shapes.push(shape);
        }
        let last = Ref::Out(steps.len() - 1);
        let (r, c) = b.shape(last);
        let terminal = match b.rng.random_range(0..4) {
            0 if c == 1 => {
                let rng = &mut *b.rng;
                let targets = Matrix::from_fn(r, 1, |_, _| f64::from(rng.random_range(0..2u8)));
                let mask = Matrix::from_fn(r, 1, |i, _| {
                    if i == 0 {
                        1.0
                    } else {
                        f64::from(rng.random_range(0..2u8))
                    }
                });
                Terminal::Bce(last, targets, mask)
            }
            1 => Terminal::JsSum(last, b.leaf(r, c)),
            _ => {
                let rng = &mut *b.rng;
                Terminal::WeightedSum(
                    last,
                    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0)),
                )
            }
        };
        Self {
            leaves: b.leaves,
            steps,
            terminal,
        }
    }

    /// Number of differentiable ops in the program, terminal included.
    pub fn n_ops(&self) -> usize {
        self.steps.len() + 1
    }

    /// Replays the program on `vars` (one per leaf) and returns the loss.
    pub fn build(&self, g: &mut Graph, vars: &[Var]) -> Var {
        assert_eq!(vars.len(), self.leaves.len());
        let mut outs: Vec<Var> = Vec::with_capacity(self.steps.len());
        let get = |x: Ref, outs: &[Var]| match x {
            Ref::Leaf(i) => vars[i],
            Ref::Out(i) => outs[i],
        };
        for step in &self.steps {
            let out = match *step {
                Step::MatMul(a, b) => g.matmul(get(a, &outs), get(b, &outs)),
                Step::MatMulT(a, b) => g.matmul_t(get(a, &outs), get(b, &outs)),
                Step::Add(a, b) => g.add(get(a, &outs), get(b, &outs)),
                Step::Sub(a, b) => g.sub(get(a, &outs), get(b, &outs)),
                Step::Hadamard(a, b) => g.hadamard(get(a, &outs), get(b, &outs)),
                Step::AddRow(a, b) => g.add_row(get(a, &outs), get(b, &outs)),
                Step::MulRow(a, b) => g.mul_row(get(a, &outs), get(b, &outs)),
                Step::MulCol(a, b) => g.mul_col(get(a, &outs), get(b, &outs)),
                Step::Scale(a, s) => g.scale(get(a, &outs), s),
                Step::Transpose(a) => g.transpose(get(a, &outs)),
                Step::SoftmaxRows(a) => g.softmax_rows(get(a, &outs)),
                Step::NormalizeSigmoidRows(a) => {
                    let s = g.sigmoid(get(a, &outs));
                    g.normalize_rows(s)
                }
                Step::LayerNorm(a) => g.layer_norm(get(a, &outs)),
                Step::Gelu(a) => g.gelu(get(a, &outs)),
                Step::Sigmoid(a) => g.sigmoid(get(a, &outs)),
                Step::ExpSigmoid(a) => {
                    // bounded argument keeps exp tame
                    let s = g.sigmoid(get(a, &outs));
                    g.exp(s)
                }
                Step::Softplus(a) => g.softplus(get(a, &outs)),
                Step::Js(a, b) => {
                    let p = g.softmax_rows(get(a, &outs));
                    let q = g.softmax_rows(get(b, &outs));
                    g.js_rows(p, q)
                }
            };
            outs.push(out);
        }
        match &self.terminal {
            Terminal::WeightedSum(a, w) => {
                let w = g.constant(w.clone());
                let prod = g.hadamard(get(*a, &outs), w);
                g.sum(prod)
            }
            Terminal::Bce(a, targets, mask) => g.bce_with_logits(get(*a, &outs), targets, mask),
            Terminal::JsSum(a, b) => {
                let p = g.softmax_rows(get(*a, &outs));
                let q = g.softmax_rows(get(*b, &outs));
                let js = g.js_rows(p, q);
                g.sum(js)
            }
        }
    }

    /// Backprop-vs-finite-difference relative error for this program.
    pub fn check(&self, h: f64) -> f64 {
        max_relative_error(&self.leaves, h, |g, vars| self.build(g, vars))
    }
}
