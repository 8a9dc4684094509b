//! Alternating min/max training with Adam.

use std::path::Path;

use numkit::{Graph, Matrix, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::config::{ModelConfig, ThresholdPolicy};
use super::data::{label_mask, Standardizer};
use super::loss::{phase_loss, LossParts, Phase};
use super::model::{forward, forward_on, Weights};
use super::score::{quantile, score_rows, RawScores, ScoreSequence};
use crate::error::{Error, Result};
use crate::metrics::{best_f1_threshold, compute_metrics};

/// Expected attacked share used when a policy needs labels it was not given.
pub const FALLBACK_ATTACK_SHARE: f64 = 0.12;

/// A trained detector: weights plus everything needed to score new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadformer {
    pub config: ModelConfig,
    pub weights: Weights,
    pub standardizer: Standardizer,
    pub threshold: f64,
}

impl Quadformer {
    pub fn raw_scores(&self, rows: &[Vec<f64>]) -> RawScores {
        score_rows(&self.weights, &self.config, &self.standardizer, rows)
    }

    pub fn detect(&self, t: &[f64], rows: &[Vec<f64>]) -> ScoreSequence {
        ScoreSequence::new(t.to_vec(), self.raw_scores(rows), self.threshold)
    }

    /// Sets the threshold from the configured policy on validation data.
    /// Without validation labels a best-F1 policy falls back to the quantile
    /// `1 - FALLBACK_ATTACK_SHARE`.
    pub fn calibrate(&mut self, val_rows: &[Vec<f64>], val_labels: Option<&[bool]>) -> Result<()> {
        if val_rows.is_empty() {
            self.threshold = match self.config.threshold {
                ThresholdPolicy::Fixed(x) => x,
                _ => 1.0 / self.config.window as f64,
            };
            return Ok(());
        }
        let q_fallback = 1.0 - FALLBACK_ATTACK_SHARE;
        self.threshold = match self.config.threshold {
            ThresholdPolicy::Fixed(x) => x,
            ThresholdPolicy::Quantile(q) => quantile(&self.raw_scores(val_rows).score, q),
            ThresholdPolicy::BestF1 => {
                let scores = self.raw_scores(val_rows).score;
                let best = match val_labels {
                    Some(l) => best_f1_threshold(&scores, l)?,
                    None => None,
                };
                best.map(|b| b.0)
                    .unwrap_or_else(|| quantile(&scores, q_fallback))
            }
        };
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Reconstruction error per window after the epoch, on a fixed set of
    /// non-overlapping training windows.
    pub l_recon: f64,
    /// The remaining terms are means over the epoch's training windows.
    pub l_dis: f64,
    pub l_class: f64,
    pub min_objective: f64,
    pub max_objective: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epoch",
            "l_recon",
            "l_dis",
            "l_class",
            "phase_losses",
            "val_f1",
        ])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.l_recon.to_string(),
                e.l_dis.to_string(),
                e.l_class.to_string(),
                format!("min={};max={}", e.min_objective, e.max_objective),
                e.val_f1.map(|f| f.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Adam over a list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = shapes
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                *w -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Loss parts and parameter gradients for one window.
pub fn window_gradients(
    weights: &Weights,
    cfg: &ModelConfig,
    window: &Matrix,
    labels: &[bool],
    mask: &[bool],
    phase: Phase,
) -> Result<(LossParts, Vec<Matrix>)> {
    let mut g = Graph::new();
    let params: Vec<Var> = weights
        .tensors()
        .into_iter()
        .map(|t| g.param(t.clone()))
        .collect();
    let fwd = forward_on(&mut g, cfg, &params, window, phase.routing());
    let loss = phase_loss(&mut g, &fwd, window, labels, mask, phase, cfg);
    let parts = LossParts {
        recon: g.value(loss.recon).data()[0],
        disparity: g.value(loss.disparity).data()[0],
        class: loss.class.map(|c| g.value(c).data()[0]).unwrap_or(0.0),
        labeled: mask.iter().filter(|m| **m).count(),
    };
    let mut grads = g.backward(loss.total)?;
    Ok((parts, params.into_iter().map(|p| grads.take(p)).collect()))
}

const PROBE_WINDOWS: usize = 64;

/// Evenly spaced non-overlapping windows of `data`, at most `PROBE_WINDOWS`.
fn probe_windows(data: &[Vec<f64>], l: usize) -> Vec<Matrix> {
    let total = data.len() / l;
    let n = total.min(PROBE_WINDOWS);
    (0..n)
        .map(|i| {
            let s = i * total / n * l;
            Matrix::from_fn(l, data[0].len(), |r, c| data[s + r][c])
        })
        .collect()
}

fn probe_recon(weights: &Weights, cfg: &ModelConfig, windows: &[Matrix]) -> f64 {
    let total: f64 = windows
        .par_iter()
        .map(|w| {
            (&forward(weights, cfg, w).recon - w)
                .data()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        })
        .sum();
    total / windows.len() as f64
}

/// Validation data for per-epoch monitoring and threshold calibration.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [bool],
}

/// Trains on `rows` (raw residues) with per-step `labels`, of which only a
/// random `label_fraction` is visible. On a non-finite loss the last good
/// weights are written to `abort_path` and a numeric error is returned.
pub fn train(
    cfg: &ModelConfig,
    rows: &[Vec<f64>],
    labels: &[bool],
    val: Option<Validation<'_>>,
    abort_path: Option<&Path>,
) -> Result<(Quadformer, TrainingLog)> {
    cfg.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.len() < cfg.window {
        return Err(Error::config(format!(
            "training sequence has {} steps, shorter than the window {}",
            rows.len(),
            cfg.window
        )));
    }
    if let Some(v) = val {
        if v.rows.len() != v.labels.len() {
            return Err(Error::contract(
                "validation rows and labels differ in length",
            ));
        }
    }
    if rows[0].len() != cfg.input_dim {
        return Err(Error::config(format!(
            "rows have {} columns, model expects {}",
            rows[0].len(),
            cfg.input_dim
        )));
    }

    let standardizer = Standardizer::fit(rows)?;
    let data: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
    let visible = label_mask(rows.len(), cfg.label_fraction, cfg.seed);
    if cfg.label_fraction > 0.0 && !visible.iter().any(|m| *m) {
        log::warn!("no labels visible; classification term is skipped");
    }

    let mut model = Quadformer {
        config: cfg.clone(),
        weights: Weights::init(cfg),
        standardizer,
        threshold: 1.0 / cfg.window as f64,
    };
    let mut adam = Adam::new(cfg.learning_rate, &model.weights.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let l = cfg.window;
    let per_epoch = ((cfg.windows_per_epoch * rows.len() as f64 / l as f64).ceil() as usize).max(1);
    let mut log = TrainingLog::default();
    let mut step = 0usize;
    let probe = probe_windows(&data, l);

    for epoch in 1..=cfg.epochs {
        let starts: Vec<usize> = (0..per_epoch)
            .map(|_| rng.random_range(0..=rows.len() - l))
            .collect();
        let mut sums = [0.0f64; 4];
        let mut counts = [0usize; 2];
        for batch in starts.chunks(cfg.batch_size) {
            let phase = Phase::for_step(step);
            let results: Vec<Result<(LossParts, Vec<Matrix>)>> = batch
                .par_iter()
                .map(|&s| {
                    let w = Matrix::from_fn(l, cfg.input_dim, |i, j| data[s + i][j]);
                    window_gradients(
                        &model.weights,
                        cfg,
                        &w,
                        &labels[s..s + l],
                        &visible[s..s + l],
                        phase,
                    )
                })
                .collect();
            let mut total: Option<Vec<Matrix>> = None;
            for r in results {
                let (parts, grads) = r?;
                let obj = parts.objective(phase, cfg);
                let finite =
                    obj.is_finite() && grads.iter().all(|g| g.data().iter().all(|v| v.is_finite()));
                if !finite {
                    if let Some(p) = abort_path {
                        checkpoint::save(&model, p)?;
                    }
                    return Err(Error::numeric(format!(
                        "training diverged at epoch {epoch}, step {step}: objective {obj}"
                    )));
                }
                sums[0] += parts.disparity;
                sums[1] += parts.class;
                let k = if phase == Phase::Min { 2 } else { 3 };
                sums[k] += obj;
                counts[k - 2] += 1;
                total = Some(match total {
                    None => grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            *a += g;
                        }
                        acc
                    }
                });
            }
            let mut grads = total.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g = g.scale(inv));
            if cfg.grad_clip > 0.0 {
                let norm = grads
                    .iter()
                    .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    grads.iter_mut().for_each(|g| *g = g.scale(s));
                }
            }
            adam.update(model.weights.tensors_mut(), &grads);
            step += 1;
        }

        let n = per_epoch as f64;
        let val_f1 = match val.filter(|v| !v.rows.is_empty()) {
            Some(v) => {
                model.calibrate(v.rows, Some(v.labels))?;
                let seq = model.detect(&vec![0.0; v.rows.len()], v.rows);
                Some(compute_metrics(&seq.alarm, v.labels)?.f1)
            }
            None => None,
        };
        let entry = EpochLog {
            epoch,
            l_recon: probe_recon(&model.weights, cfg, &probe),
            l_dis: sums[0] / n,
            l_class: sums[1] / n,
            min_objective: sums[2] / counts[0].max(1) as f64,
            max_objective: sums[3] / counts[1].max(1) as f64,
            val_f1,
        };
        log::info!(
            "epoch {epoch}: recon {:.4} dis {:.4} class {:.4} val_f1 {:?}",
            entry.l_recon,
            entry.l_dis,
            entry.l_class,
            entry.val_f1
        );
        log.epochs.push(entry);
        adam.lr *= cfg.lr_decay;
    }

    match val {
        Some(v) => model.calibrate(v.rows, Some(v.labels))?,
        None => model.calibrate(&[], None)?,
    }
    Ok((model, log))
}
