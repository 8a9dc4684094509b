//! Resilient-fusion comparison on one attacked flight: no switching,
//! switching on true labels, and switching on detector alarms.

use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::data::{attack_intervals, filter_config, make_split, CellKey, ResidueSet, Split};
use crate::attack::LabeledStream;
use crate::ekf::generate_residues;
use crate::error::{Error, Result};
use crate::fusion::{resilient_estimate, FusionConfig, FusionRun};
use crate::quadformer::{Quadformer, ScoreSequence};
use crate::sim::{Pose, Truth};

/// Position RMSE over every frame inside one of `intervals`.
pub fn rmse_over(t: &[f64], poses: &[Pose], truth: &Truth, intervals: &[[f64; 2]]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, (tk, p)) in t.iter().zip(poses).enumerate() {
        if intervals.iter().any(|w| w[0] <= *tk && *tk <= w[1]) {
            let e = truth.states[k].position();
            sum += (0..3).map(|i| (p.position[i] - e[i]).powi(2)).sum::<f64>();
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FusionSummary {
    pub plain_rmse: f64,
    pub oracle_rmse: f64,
    pub detector_rmse: Option<f64>,
}

pub struct FusionStudy {
    pub truth: Truth,
    pub intervals: Vec<[f64; 2]>,
    /// The same flight without the attack.
    pub clean: FusionRun,
    pub plain: FusionRun,
    pub oracle: FusionRun,
    pub detected: Option<FusionRun>,
    pub scores: Option<ScoreSequence>,
    pub summary: FusionSummary,
}

/// Flies `key`'s test scenario for `duration` seconds. The oracle switches
/// on the attack labels without delay; the detector run uses `detector`'s
/// alarms on the unswitched residues, delayed by the configured latency.
pub fn fusion_study(
    cfg: &ExperimentConfig,
    key: &CellKey,
    duration: f64,
    detector: Option<&Quadformer>,
) -> Result<FusionStudy> {
    let mut cfg = cfg.clone();
    cfg.durations.test = duration;
    let split = make_split(&cfg, key, Split::Test)?;
    let filter = filter_config(&cfg, key.noise);
    let stream = &split.attacked;
    let gps_labels: Vec<bool> = stream
        .stream
        .frames
        .iter()
        .zip(&stream.labels)
        .filter(|(f, _)| f.gps.is_some())
        .map(|(_, l)| *l)
        .collect();
    let intervals = attack_intervals(&split.schedule);
    if intervals.is_empty() {
        return Err(Error::config("fusion study needs a persistent attack"));
    }
    let no_alarms = vec![false; gps_labels.len()];
    let clean = resilient_estimate(
        &LabeledStream::clean(split.clean),
        &no_alarms,
        key.model,
        &filter,
        &cfg.fusion,
    )?;
    let plain = resilient_estimate(stream, &no_alarms, key.model, &filter, &cfg.fusion)?;
    let instant = FusionConfig {
        latency: 0.0,
        ..cfg.fusion.clone()
    };
    let oracle = resilient_estimate(stream, &gps_labels, key.model, &filter, &instant)?;
    let (detected, scores) = match detector {
        Some(qf) => {
            let res = ResidueSet::gps(&generate_residues(stream, key.model, &filter)?);
            let s = qf.detect(&res.t, &res.rows);
            let run = resilient_estimate(stream, &s.alarm, key.model, &filter, &cfg.fusion)?;
            (Some(run), Some(s))
        }
        None => (None, None),
    };
    let rmse = |r: &FusionRun| {
        rmse_over(&r.t, &r.poses, &split.truth, &intervals)
            .ok_or_else(|| Error::numeric("no frames inside attack windows"))
    };
    let summary = FusionSummary {
        plain_rmse: rmse(&plain)?,
        oracle_rmse: rmse(&oracle)?,
        detector_rmse: detected.as_ref().map(rmse).transpose()?,
    };
    Ok(FusionStudy {
        truth: split.truth,
        intervals,
        clean,
        plain,
        oracle,
        detected,
        scores,
        summary,
    })
}

impl FusionStudy {
    /// Writes `truth.csv`, one pose CSV and mode log per run, the detector
    /// scores and `fusion_summary.json` (with the attack windows).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.truth.write_csv(&dir.join("truth.csv"))?;
        let runs = [
            ("clean", Some(&self.clean)),
            ("attacked", Some(&self.plain)),
            ("oracle", Some(&self.oracle)),
            ("detected", self.detected.as_ref()),
        ];
        for (name, run) in runs {
            if let Some(r) = run {
                r.write_csv(&dir.join(format!("estimate_{name}.csv")))?;
                r.write_mode_log(&dir.join(format!("modes_{name}.json")))?;
            }
        }
        if let Some(s) = &self.scores {
            s.write_csv(&dir.join("detector_scores.csv"))?;
        }
        let summary =
            serde_json::json!({ "summary": self.summary, "attack_windows": self.intervals });
        std::fs::write(
            dir.join("fusion_summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ModelId, NoiseFamily};

    #[test]
    fn oracle_switching_beats_plain_on_model_two() {
        let cfg = ExperimentConfig::default();
        let key = CellKey {
            model: ModelId::ModelII,
            noise: NoiseFamily::Exponential,
            attack: "Attack I".into(),
            seed: 0,
        };
        let s = fusion_study(&cfg, &key, 120.0, None).unwrap();
        assert!(s.summary.oracle_rmse < s.summary.plain_rmse);
        assert!(s.detected.is_none());
        assert_eq!(s.plain.gps_updates, 1201);
        assert!(s.oracle.gps_updates < 1201);
    }
}
