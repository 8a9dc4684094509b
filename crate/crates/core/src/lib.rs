//! Quadrotor sensor simulation, false-data-injection attacks, EKF residue
//! generation and residue-based attack detection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod detectors;
pub mod ekf;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod metrics;
pub mod plot;
pub mod quadformer;
pub mod rotation;
pub mod sim;

pub use error::{Error, Result};
