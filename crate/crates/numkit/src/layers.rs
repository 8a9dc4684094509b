//! Value-level (non-differentiable) versions of the transformer building
//! blocks. The differentiable versions are composed from [`crate::Graph`] ops
//! and are checked against these.

use crate::graph::LAYER_NORM_EPS;
use crate::Matrix;

/// Per-row zero mean / unit variance (population variance, ε = 1e-5).
pub fn layer_norm(x: &Matrix) -> Matrix {
    let c = x.cols() as f64;
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row {
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// [`layer_norm`] followed by a per-column gain and bias (`1×c` rows).
pub fn layer_norm_affine(x: &Matrix, gain: &Matrix, bias: &Matrix) -> Matrix {
    let mut out = layer_norm(x);
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = *v * gain.data()[j] + bias.data()[j];
        }
    }
    out
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

/// Two affine maps with a GELU between them: `gelu(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl FeedForward {
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut h = x * &self.w1;
        add_row_in_place(&mut h, &self.b1);
        let h = h.map(gelu);
        let mut out = &h * &self.w2;
        add_row_in_place(&mut out, &self.b2);
        out
    }
}

pub(crate) fn add_row_in_place(m: &mut Matrix, row: &Matrix) {
    for i in 0..m.rows() {
        for (v, b) in m.row_mut(i).iter_mut().zip(row.data()) {
            *v += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_row_normalizes_to_zero() {
        let y = layer_norm(&Matrix::filled(2, 4, 3.5));
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_is_idempotent_with_identity_affine() {
        let x = Matrix::from_rows(&[[1.0, 4.0, -2.0, 0.5], [10.0, 11.0, 9.0, 10.0]]);
        let once = layer_norm(&x);
        let twice = layer_norm(&once);
        // ε shrinks the second pass by roughly ε/2.
        assert!((&once - &twice).max_abs() < 1e-4);
        let gain = Matrix::filled(1, 4, 1.0);
        let bias = Matrix::zeros(1, 4);
        assert_eq!(layer_norm_affine(&x, &gain, &bias), once);
    }

    #[test]
    fn feed_forward_with_zero_second_layer_returns_bias() {
        let ff = FeedForward {
            w1: Matrix::filled(2, 3, 0.7),
            b1: Matrix::filled(1, 3, 0.1),
            w2: Matrix::zeros(3, 2),
            b2: Matrix::row_vector(&[1.0, -1.0]),
        };
        let out = ff.apply(&Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]));
        for i in 0..3 {
            assert_eq!(out.row(i), &[1.0, -1.0]);
        }
    }
}
