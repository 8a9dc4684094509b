//! Classic residue detectors: CUSUM, SPRT and a chi-squared ellipsoid test.

mod bht;
mod cusum;
mod sprt;

use std::path::Path;

use numkit::Matrix;
use serde::{Deserialize, Serialize};

pub use bht::{bht_detect, chi_squared_threshold};
pub use cusum::cusum_detect;
pub use sprt::sprt_detect;

use crate::error::{Error, Result};
use crate::metrics::compute_metrics;

/// Whether a detector works on the squared norm of the standardized
/// residue or on each axis separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Norm,
    PerAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    Cusum {
        drift: f64,
        threshold: f64,
        /// 1 is the textbook chart; smaller values forget old evidence.
        forgetting: f64,
        #[serde(default)]
        mode: Mode,
    },
    Sprt {
        /// Mean of the per-step statistic when clean.
        mu0: f64,
        /// Mean under attack.
        mu1: f64,
        sigma: f64,
        alpha: f64,
        beta: f64,
        #[serde(default)]
        mode: Mode,
    },
    Bht {
        confidence: f64,
        /// Defaults to the residue dimension.
        #[serde(default)]
        dof: Option<usize>,
        #[serde(default)]
        mode: Mode,
    },
}

impl DetectorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorConfig::Cusum { .. } => "CUSUM",
            DetectorConfig::Sprt { .. } => "SPRT",
            DetectorConfig::Bht { .. } => "BHT",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DetectorConfig::Cusum {
                drift,
                threshold,
                forgetting,
                ..
            } => threshold > 0.0 && drift.is_finite() && forgetting > 0.0 && forgetting <= 1.0,
            DetectorConfig::Sprt {
                mu0,
                mu1,
                sigma,
                alpha,
                beta,
                ..
            } => {
                if mu0 == mu1 {
                    return Err(Error::config("SPRT needs mu0 != mu1"));
                }
                sigma > 0.0 && alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0
            }
            DetectorConfig::Bht {
                confidence, dof, ..
            } => confidence > 0.0 && confidence < 1.0 && dof != Some(0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "invalid detector parameters: {self:?}"
            )))
        }
    }

    /// Default parameters for `m`-dimensional residues.
    pub fn default_cusum(m: usize) -> Self {
        DetectorConfig::Cusum {
            drift: 1.5 * m as f64,
            threshold: 20.0,
            forgetting: 1.0,
            mode: Mode::Norm,
        }
    }

    pub fn default_sprt(m: usize) -> Self {
        let m = m as f64;
        DetectorConfig::Sprt {
            mu0: m,
            mu1: 2.0 * m,
            sigma: (2.0 * m).sqrt(),
            alpha: 0.01,
            beta: 0.01,
            mode: Mode::Norm,
        }
    }

    pub fn default_bht() -> Self {
        DetectorConfig::Bht {
            confidence: 0.99,
            dof: None,
            mode: Mode::Norm,
        }
    }
}

/// Clean-run residue statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub covariance: Matrix,
}

impl Calibration {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::config("calibration needs at least two residues"));
        }
        let m = rows[0].len();
        let mut mean = vec![0.0; m];
        for r in rows {
            for (a, b) in mean.iter_mut().zip(r) {
                *a += b;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n as f64);
        let mut cov = Matrix::zeros(m, m);
        for r in rows {
            for i in 0..m {
                for j in 0..m {
                    let v = cov.get(i, j) + (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1) as f64;
                    cov.set(i, j, v);
                }
            }
        }
        let std: Vec<f64> = (0..m).map(|i| cov.get(i, i).sqrt().max(1e-12)).collect();
        Ok(Self {
            mean,
            std,
            covariance: cov,
        })
    }

    /// Fits on the first `fraction` of `rows`.
    pub fn fit_prefix(rows: &[Vec<f64>], fraction: f64) -> Result<Self> {
        let n = ((rows.len() as f64 * fraction).round() as usize).min(rows.len());
        Self::fit(&rows[..n])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    fn check_dim(&self, rows: &[Vec<f64>]) -> Result<()> {
        match rows.iter().find(|r| r.len() != self.dim()) {
            Some(r) => Err(Error::contract(format!(
                "residue of dimension {} against calibration of dimension {}",
                r.len(),
                self.dim()
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlarmSequence {
    pub t: Vec<f64>,
    pub statistic: Vec<f64>,
    pub alarm: Vec<bool>,
}

impl AlarmSequence {
    pub fn len(&self) -> usize {
        self.alarm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alarm.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "statistic", "alarm"])?;
        for k in 0..self.len() {
            w.write_record([
                self.t[k].to_string(),
                self.statistic[k].to_string(),
                u8::from(self.alarm[k]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Self::default();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::config(format!(
                    "{}: expected t,statistic,alarm",
                    path.display()
                )));
            }
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("{}: {e}", path.display())))
            };
            out.t.push(num(0)?);
            out.statistic.push(num(1)?);
            out.alarm.push(&rec[2] == "1");
        }
        Ok(out)
    }
}

/// Runs `cfg` on `rows` (one residue per entry, times in `t`).
pub fn run_detector(
    cfg: &DetectorConfig,
    calib: Option<&Calibration>,
    t: &[f64],
    rows: &[Vec<f64>],
) -> Result<AlarmSequence> {
    match cfg {
        DetectorConfig::Cusum { .. } => cusum_detect(cfg, calib, t, rows),
        DetectorConfig::Sprt { .. } => sprt_detect(cfg, calib, t, rows),
        DetectorConfig::Bht { .. } => bht_detect(cfg, calib, t, rows),
    }
}

fn require<'a>(
    calib: Option<&'a Calibration>,
    name: &str,
    rows: &[Vec<f64>],
) -> Result<&'a Calibration> {
    let c = calib.ok_or_else(|| Error::config(format!("{name} needs calibration statistics")))?;
    c.check_dim(rows)?;
    Ok(c)
}

fn check_times(t: &[f64], rows: &[Vec<f64>]) -> Result<()> {
    if t.len() != rows.len() {
        return Err(Error::contract("times and residues differ in length"));
    }
    Ok(())
}

/// The detector's alarm knob set to `value`.
pub fn with_threshold(cfg: &DetectorConfig, value: f64) -> DetectorConfig {
    let mut out = cfg.clone();
    match &mut out {
        DetectorConfig::Cusum { threshold, .. } => *threshold = value,
        DetectorConfig::Sprt { mu1, mu0, .. } => *mu1 = *mu0 + value,
        DetectorConfig::Bht { confidence, .. } => *confidence = value,
    }
    out
}

/// Candidate knob values for the F1 sweep.
pub fn threshold_grid(cfg: &DetectorConfig) -> Vec<f64> {
    match cfg {
        DetectorConfig::Cusum { .. } => (0..40).map(|i| 1.0 * 1.25_f64.powi(i)).collect(),
        DetectorConfig::Sprt { mu0, .. } => (1..40)
            .map(|i| mu0.abs().max(1.0) * 0.1 * 1.15_f64.powi(i))
            .collect(),
        DetectorConfig::Bht { .. } => (1..40)
            .map(|i| 1.0 - 0.5 * 0.7_f64.powi(i))
            .chain([0.999_9, 0.999_99])
            .collect(),
    }
}

/// Every configuration the F1 sweep tries. CUSUM also varies its drift
/// (as multiples of the residue dimension) since the right drift depends on
/// how heavy the clean tail is.
pub fn tuning_candidates(cfg: &DetectorConfig, dim: usize) -> Vec<DetectorConfig> {
    let bases = match cfg {
        DetectorConfig::Cusum { drift, .. } => {
            let mut drifts = vec![*drift];
            for k in [1.25, 1.5, 2.0, 3.0, 5.0, 8.0] {
                let d = k * dim as f64;
                if !drifts.iter().any(|x| (x - d).abs() < 1e-12) {
                    drifts.push(d);
                }
            }
            drifts
                .into_iter()
                .map(|d| {
                    let mut c = cfg.clone();
                    if let DetectorConfig::Cusum { drift, .. } = &mut c {
                        *drift = d;
                    }
                    c
                })
                .collect()
        }
        _ => vec![cfg.clone()],
    };
    bases
        .iter()
        .flat_map(|b| {
            threshold_grid(b)
                .into_iter()
                .map(move |v| with_threshold(b, v))
        })
        .collect()
}

/// Picks the candidate with the best F1 on labeled validation residues.
pub fn tune_for_f1(
    cfg: &DetectorConfig,
    calib: &Calibration,
    t: &[f64],
    rows: &[Vec<f64>],
    labels: &[bool],
) -> Result<(DetectorConfig, f64)> {
    let mut best: Option<(DetectorConfig, f64)> = None;
    for c in tuning_candidates(cfg, calib.dim()) {
        let alarms = run_detector(&c, Some(calib), t, rows)?;
        let f1 = compute_metrics(&alarms.alarm, labels)?.f1;
        if best.as_ref().is_none_or(|b| f1 > b.1) {
            best = Some((c, f1));
        }
    }
    best.ok_or_else(|| Error::config("empty threshold grid"))
}
