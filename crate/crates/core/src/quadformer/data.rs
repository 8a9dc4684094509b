//! Standardization, windowing and label masking for residue sequences.

use std::ops::Range;

use numkit::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::config("cannot standardize an empty sequence"));
        };
        let m = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; m];
        for r in rows {
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n);
        let mut var = vec![0.0; m];
        for r in rows {
            for ((a, v), mu) in var.iter_mut().zip(r).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(1e-12)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Standardized rows `range` of `rows` as a matrix, zero-padded to
    /// `len` rows.
    pub fn window(&self, rows: &[Vec<f64>], range: Range<usize>, len: usize) -> Matrix {
        let m = self.mean.len();
        let mut out = Matrix::zeros(len, m);
        for (i, r) in rows[range].iter().enumerate() {
            out.row_mut(i).copy_from_slice(&self.apply(r));
        }
        out
    }
}

/// Inference windows of length `l`: non-overlapping from the start, with a
/// final window aligned to the end. Each entry is `(window, fresh)` where
/// `fresh` is the sub-range of the window whose scores are new.
pub fn inference_windows(n: usize, l: usize) -> Vec<(Range<usize>, Range<usize>)> {
    if n == 0 {
        return Vec::new();
    }
    if n <= l {
        return vec![(0..n, 0..n)];
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + l <= n {
        out.push((start..start + l, 0..l));
        start += l;
    }
    if start < n {
        let s = n - l;
        out.push((s..n, (start - s)..l));
    }
    out
}

/// Per-step Bernoulli mask of visible labels.
pub fn label_mask(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6265_6c73);
    (0..n).map(|_| rng.random::<f64>() < fraction).collect()
}

/// Contiguous train/validation/test split by fractions of the length.
pub fn split_ranges(n: usize, train: f64, val: f64) -> [Range<usize>; 3] {
    let a = ((n as f64) * train).round() as usize;
    let b = (a + ((n as f64) * val).round() as usize).min(n);
    [0..a, a..b, b..n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_cover_every_step_once() {
        for (n, l) in [(250, 100), (200, 100), (37, 100), (101, 100), (1, 4)] {
            let mut seen = vec![0; n];
            for (w, fresh) in inference_windows(n, l) {
                assert!(w.len() == l.min(n));
                for i in fresh {
                    seen[w.start + i] += 1;
                }
            }
            assert!(seen.iter().all(|c| *c == 1), "n={n} l={l}");
        }
    }

    #[test]
    fn standardized_columns() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64, 3.0 * i as f64 + 1.0])
            .collect();
        let s = Standardizer::fit(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r)).collect();
        for j in 0..2 {
            let mean: f64 = z.iter().map(|r| r[j]).sum::<f64>() / 50.0;
            let var: f64 = z.iter().map(|r| r[j] * r[j]).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_fraction() {
        let m = label_mask(100_000, 0.1, 4);
        let f = m.iter().filter(|b| **b).count() as f64 / 1e5;
        assert!((f - 0.1).abs() < 0.005);
    }

    #[test]
    fn split_is_contiguous() {
        let [a, b, c] = split_ranges(100, 0.6, 0.2);
        assert_eq!((a, b, c), (0..60, 60..80, 80..100));
    }
}
