//! Alarm-driven sensor switching: GPS is dropped from the filter's
//! measurement set while the detector reports an attack, and re-admitted
//! once the alarms have stayed clear for a while.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::LabeledStream;
use crate::ekf::{run_filter, FilterConfig, RunOptions};
use crate::error::{Error, Result};
use crate::rotation::Vec3;
use crate::sim::{ModelId, Pose, Truth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Seconds between a residue and the moment its alarm can act.
    pub latency: f64,
    /// Consecutive clear alarm steps needed before GPS is trusted again.
    pub clear_steps: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            latency: 1.0,
            clear_steps: 10,
        }
    }
}

/// Active measurement set. The IMU always drives the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    /// GPS, VO (Model II) and IMU.
    All,
    /// GPS excluded.
    WithoutGps,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::All => "gps+vo+imu",
            FusionMode::WithoutGps => "vo+imu",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchCause {
    AlarmRaised,
    AlarmsCleared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    /// Time of the first GPS frame handled in the new mode.
    pub t: f64,
    pub mode: FusionMode,
    pub cause: SwitchCause,
}

/// Exclusion state after each alarm step: the step's own alarm counts, and
/// GPS returns after `clear_steps` clear steps in a row.
fn exclusion_states(alarms: &[bool], clear_steps: usize) -> Vec<bool> {
    let mut excluded = false;
    let mut clear = 0usize;
    alarms
        .iter()
        .map(|&a| {
            if a {
                excluded = true;
                clear = 0;
            } else {
                clear += 1;
                if excluded && clear >= clear_steps {
                    excluded = false;
                }
            }
            excluded
        })
        .collect()
}

/// Which GPS frames may update the filter, plus the mode-change log.
///
/// `alarm_t`/`alarms` hold one decision per GPS residue; `gps_t` are the
/// GPS frame times. A frame at `t` is governed by the latest alarm step
/// whose time plus the latency is at most `t`. An alarm computed from a
/// residue exists before that residue's update, so with zero latency it
/// gates its own frame.
pub fn gps_admission(
    alarm_t: &[f64],
    alarms: &[bool],
    gps_t: &[f64],
    cfg: &FusionConfig,
) -> Result<(Vec<bool>, Vec<ModeChange>)> {
    if alarm_t.len() != alarms.len() {
        return Err(Error::contract(
            "alarm times and alarm bits differ in length",
        ));
    }
    if !(cfg.latency >= 0.0) {
        return Err(Error::config("fusion latency must be >= 0"));
    }
    let state = exclusion_states(alarms, cfg.clear_steps);
    let mut admitted = Vec::with_capacity(gps_t.len());
    let mut log = Vec::new();
    let mut mode = FusionMode::All;
    let mut j = 0usize;
    for &t in gps_t {
        while j < alarm_t.len() && alarm_t[j] + cfg.latency <= t + 1e-9 {
            j += 1;
        }
        let excluded = j > 0 && state[j - 1];
        let next = if excluded {
            FusionMode::WithoutGps
        } else {
            FusionMode::All
        };
        if next != mode {
            log.push(ModeChange {
                t,
                mode: next,
                cause: if excluded {
                    SwitchCause::AlarmRaised
                } else {
                    SwitchCause::AlarmsCleared
                },
            });
            mode = next;
        }
        admitted.push(!excluded);
    }
    Ok((admitted, log))
}

/// Filtered poses with the mode in force at each frame.
#[derive(Debug, Clone)]
pub struct FusionRun {
    pub t: Vec<f64>,
    pub poses: Vec<Pose>,
    pub modes: Vec<FusionMode>,
    pub changes: Vec<ModeChange>,
    pub gps_updates: usize,
    pub covariance_traces: Vec<f64>,
}

impl FusionRun {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "px", "py", "pz", "qx", "qy", "qz", "mode"])?;
        for ((t, p), m) in self.t.iter().zip(&self.poses).zip(&self.modes) {
            let mut rec = vec![t.to_string()];
            rec.extend(p.to_array().iter().map(|v| v.to_string()));
            rec.push(m.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_mode_log(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.changes)?)?;
        Ok(())
    }
}

/// Runs the filter on `stream`, excluding GPS whenever the alarms say so.
/// `alarms` carries one bit per GPS frame, in order.
pub fn resilient_estimate(
    stream: &LabeledStream,
    alarms: &[bool],
    model: ModelId,
    filter: &FilterConfig,
    cfg: &FusionConfig,
) -> Result<FusionRun> {
    let frames = &stream.stream.frames;
    let gps_idx: Vec<usize> = frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.gps.is_some())
        .map(|(k, _)| k)
        .collect();
    if alarms.len() != gps_idx.len() {
        return Err(Error::contract(format!(
            "{} alarm bits for {} GPS frames",
            alarms.len(),
            gps_idx.len()
        )));
    }
    let gps_t: Vec<f64> = gps_idx.iter().map(|&k| frames[k].t).collect();
    let (admitted, changes) = gps_admission(&gps_t, alarms, &gps_t, cfg)?;
    let mut mask = vec![true; frames.len()];
    for (&k, &ok) in gps_idx.iter().zip(&admitted) {
        mask[k] = ok;
    }
    let run = run_filter(
        &stream.stream,
        &stream.labels,
        model,
        filter,
        &RunOptions {
            gps_mask: Some(&mask),
            log_lemma: false,
        },
    )?;
    let mut modes = Vec::with_capacity(frames.len());
    let mut current = FusionMode::All;
    let mut next_gps = 0usize;
    for k in 0..frames.len() {
        if next_gps < gps_idx.len() && gps_idx[next_gps] == k {
            current = if admitted[next_gps] {
                FusionMode::All
            } else {
                FusionMode::WithoutGps
            };
            next_gps += 1;
        }
        modes.push(current);
    }
    Ok(FusionRun {
        t: frames.iter().map(|f| f.t).collect(),
        poses: run.poses,
        modes,
        changes,
        gps_updates: run.gps_updates,
        covariance_traces: run.covariance_traces,
    })
}

/// Delays every alarm bit by `steps` entries (zeros shift in).
pub fn delay_alarms(alarms: &[bool], steps: usize) -> Vec<bool> {
    (0..alarms.len())
        .map(|i| i >= steps && alarms[i - steps])
        .collect()
}

/// Position RMSE against `truth` over frames with `from <= t < to`.
pub fn position_rmse(t: &[f64], poses: &[Pose], truth: &Truth, from: f64, to: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, (tk, p)) in t.iter().zip(poses).enumerate() {
        if *tk >= from && *tk < to {
            let e: Vec3 = truth.states[k].position();
            sum += (0..3).map(|i| (p.position[i] - e[i]).powi(2)).sum::<f64>();
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hysteresis_waits_for_clear_steps() {
        let a = [
            false, true, false, false, false, true, false, false, false, false,
        ];
        assert_eq!(
            exclusion_states(&a, 3),
            vec![false, true, true, true, false, true, true, true, false, false]
        );
    }

    #[test]
    fn latency_shifts_admission() {
        let t: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let alarms = [false, true, false, false, false, false];
        let cfg = FusionConfig {
            latency: 0.2,
            clear_steps: 2,
        };
        let (adm, log) = gps_admission(&t, &alarms, &t, &cfg).unwrap();
        // Alarm at 0.1 acts from 0.3; clear steps at 0.2, 0.3 act from 0.5.
        assert_eq!(adm, vec![true, true, true, false, false, true]);
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].cause, SwitchCause::AlarmRaised);
        assert!((log[0].t - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_latency_gates_own_frame() {
        let t = [0.0, 0.1, 0.2];
        let (adm, _) = gps_admission(
            &t,
            &[true; 3],
            &t,
            &FusionConfig {
                latency: 0.0,
                clear_steps: 10,
            },
        )
        .unwrap();
        assert_eq!(adm, vec![false; 3]);
    }

    #[test]
    fn delay_shifts_bits() {
        assert_eq!(
            delay_alarms(&[true, false, true], 1),
            vec![false, true, false]
        );
    }
}
