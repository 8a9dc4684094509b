use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ModelConfig, ScoreRule};
use super::data::{inference_windows, Standardizer};
use super::model::{forward, Weights};
use crate::error::Result;

/// `softmax(−disparity)` over one window.
pub fn window_scores(disparity: &[f64]) -> Vec<f64> {
    let lo = disparity.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = disparity.iter().map(|d| (lo - d).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-step scores from every output of the model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawScores {
    /// Score under the configured rule.
    pub score: Vec<f64>,
    /// Window-normalized `softmax(−disparity)`.
    pub disparity: Vec<f64>,
    /// Classification-head probability.
    pub probability: Vec<f64>,
}

fn combine(rule: ScoreRule, disparity: &[f64], probability: &[f64]) -> Vec<f64> {
    match rule {
        ScoreRule::Disparity => disparity.to_vec(),
        ScoreRule::Fused => disparity
            .iter()
            .zip(probability)
            .map(|(d, p)| d * p)
            .collect(),
    }
}

/// Scores every step of `rows` with non-overlapping windows. A sequence
/// shorter than the window is zero-padded (the training mean) and the pad
/// steps are dropped.
pub fn score_rows(
    weights: &Weights,
    cfg: &ModelConfig,
    standardizer: &Standardizer,
    rows: &[Vec<f64>],
) -> RawScores {
    let l = cfg.window;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = inference_windows(rows.len(), l)
        .into_par_iter()
        .map(|(range, fresh)| {
            let n = range.len();
            let out = forward(weights, cfg, &standardizer.window(rows, range, l));
            let s = window_scores(&out.disparity[..n]);
            (s[fresh.clone()].to_vec(), out.probability[fresh].to_vec())
        })
        .collect();
    let mut raw = RawScores::default();
    for (s, p) in parts {
        raw.disparity.extend(s);
        raw.probability.extend(p);
    }
    raw.score = combine(cfg.score_rule, &raw.disparity, &raw.probability);
    raw
}

/// Linear-interpolation quantile of `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Scores with timestamps and alarms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSequence {
    pub t: Vec<f64>,
    pub score: Vec<f64>,
    pub alarm: Vec<bool>,
    pub disparity: Vec<f64>,
    pub probability: Vec<f64>,
    pub threshold: f64,
}

impl ScoreSequence {
    pub fn new(t: Vec<f64>, raw: RawScores, threshold: f64) -> Self {
        let alarm = raw.score.iter().map(|s| *s > threshold).collect();
        Self {
            t,
            score: raw.score,
            alarm,
            disparity: raw.disparity,
            probability: raw.probability,
            threshold,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "score", "alarm"])?;
        for ((t, s), a) in self.t.iter().zip(&self.score).zip(&self.alarm) {
            w.write_record([t.to_string(), s.to_string(), (*a as u8).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_disparity_gives_uniform_scores() {
        let s = window_scores(&[0.3; 8]);
        assert!(s.iter().all(|v| (v - 0.125).abs() < 1e-15));
        let seq = ScoreSequence::new(
            vec![0.0; 8],
            RawScores {
                score: s.clone(),
                disparity: s,
                probability: vec![0.5; 8],
            },
            0.2,
        );
        assert!(seq.alarm.iter().all(|a| !a));
    }

    #[test]
    fn outlier_low_disparity_dominates() {
        let mut d = vec![1.0; 10];
        d[4] = 0.0;
        let s = window_scores(&d);
        let seq = ScoreSequence::new(
            vec![0.0; 10],
            RawScores {
                score: s.clone(),
                disparity: s.clone(),
                probability: vec![0.0; 10],
            },
            0.2,
        );
        assert!(s[4] > 0.2 && s[4] == s.iter().cloned().fold(0.0, f64::max));
        assert!(seq.alarm[4]);
        let mut e = vec![0.69; 10];
        e[4] = 0.0;
        let hard = window_scores(&e.iter().map(|v| v * 40.0).collect::<Vec<_>>());
        assert!(hard[4] > 0.999);
    }

    #[test]
    fn positive_rescaling_keeps_ranking() {
        let d = [0.1, 0.5, 0.05, 0.3, 0.2];
        let rank = |s: Vec<f64>| {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|a, b| s[*b].total_cmp(&s[*a]));
            idx
        };
        let a = rank(window_scores(&d));
        let b = rank(window_scores(&d.map(|v| v * 7.5)));
        assert_eq!(a, b);
    }

    #[test]
    fn fused_rule_weights_by_probability() {
        assert_eq!(
            combine(ScoreRule::Fused, &[0.5, 0.5], &[0.2, 1.0]),
            vec![0.1, 0.5]
        );
        assert_eq!(
            combine(ScoreRule::Disparity, &[0.5, 0.5], &[0.2, 1.0]),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[5.0], 0.9), 5.0);
    }
}
