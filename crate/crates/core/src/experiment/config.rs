use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::attack_preset;
use crate::detectors::DetectorConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::quadformer::ModelConfig;
use crate::sim::{ModelId, NoiseFamily, NoiseModel, SensorRates, TrajectorySpec};

/// Flight time per data split, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Durations {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Attack-free lead-in of every split.
    pub warmup: f64,
}

impl Default for Durations {
    /// 20,000 / 5,000 / 5,000 GPS residues at 10 Hz.
    fn default() -> Self {
        Self {
            train: 2000.0,
            val: 500.0,
            test: 500.0,
            warmup: 10.0,
        }
    }
}

impl Durations {
    /// 83,700 training and 18,700 test residues.
    pub fn full_scale() -> Self {
        Self {
            train: 8370.0,
            val: 1870.0,
            test: 1870.0,
            warmup: 10.0,
        }
    }
}

/// One experiment grid. Every cell is determined by this file plus its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub models: Vec<ModelId>,
    pub noises: Vec<NoiseFamily>,
    /// Attack preset names, e.g. "Attack I" or "Attack II (sparse)".
    pub attacks: Vec<String>,
    pub seeds: Vec<u64>,
    pub durations: Durations,
    /// Leading share of a clean training flight used for detector calibration.
    pub calibration_fraction: f64,
    /// Flight path; its duration is replaced per split.
    pub trajectory: TrajectorySpec,
    /// Channel magnitudes; the family is replaced per cell.
    pub noise: NoiseModel,
    pub rates: SensorRates,
    pub detectors: Vec<DetectorConfig>,
    /// Sweep each classic detector's threshold for F1 on the validation split.
    pub tune_detectors: bool,
    pub model: ModelConfig,
    pub fusion: FusionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            models: vec![ModelId::ModelI, ModelId::ModelII],
            noises: vec![NoiseFamily::Exponential, NoiseFamily::Laplacian],
            attacks: vec!["Attack I".into(), "Attack II".into()],
            seeds: (0..5).collect(),
            durations: Durations::default(),
            calibration_fraction: 0.2,
            trajectory: TrajectorySpec::figure_eight(60.0),
            noise: NoiseModel::default(),
            rates: SensorRates::default(),
            detectors: vec![
                DetectorConfig::default_cusum(6),
                DetectorConfig::default_sprt(6),
                DetectorConfig::default_bht(),
            ],
            tune_detectors: true,
            model: ModelConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn full_scale(mut self) -> Self {
        self.durations = Durations::full_scale();
        self
    }

    /// Replaces the seed list with `seed` alone.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self.model.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty()
            || self.noises.is_empty()
            || self.attacks.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::config(
                "the grid needs at least one model, noise, attack and seed",
            ));
        }
        for a in &self.attacks {
            attack_preset(a)?;
        }
        let d = &self.durations;
        for (name, v) in [("train", d.train), ("val", d.val), ("test", d.test)] {
            if !(v > d.warmup && v.is_finite()) {
                return Err(Error::config(format!(
                    "{name} duration must exceed the warmup"
                )));
            }
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction <= 1.0) {
            return Err(Error::config("calibration_fraction must lie in (0, 1]"));
        }
        let mut probe = self.trajectory.clone();
        probe.duration = d.train;
        probe.validate()?;
        self.noise.validate()?;
        self.rates.validate()?;
        for det in &self.detectors {
            det.validate()?;
        }
        self.model.validate()?;
        if !(self.fusion.latency >= 0.0) {
            return Err(Error::config("fusion latency must be >= 0"));
        }
        Ok(())
    }
}
