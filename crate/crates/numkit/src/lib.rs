//! Dense `f64` linear algebra and a taped reverse-mode autodiff graph, sized
//! for small filters and toy transformers. Everything is 64-bit and
//! deterministic.

pub mod gradcheck;
mod graph;
pub mod layers;
mod linalg;
mod matrix;

pub use graph::{js_divergence, Gradients, Graph, Var, JS_EPS, LAYER_NORM_EPS};
pub use linalg::Lu;
pub use matrix::Matrix;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {actual} does not match shape ({expected} entries)")]
    Length { expected: usize, actual: usize },
    #[error("expected a 1x1 value, got {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("expected a square matrix, got {shape:?}")]
    NotSquare { shape: (usize, usize) },
    #[error("matrix is singular to working precision")]
    Singular,
}
