//! Runs the filter over a sensor stream and collects one residue per GPS
//! or VO measurement.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::filter::EkfState;
use super::lemma::LemmaLog;
use super::uav::{clone_keyframe, FilterConfig, GpsObservation, UavDynamics, VoObservation};
use crate::attack::LabeledStream;
use crate::error::{Error, Result};
use crate::sim::{ModelId, NoiseModel, Pose, SensorStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gps,
    Vo,
}

impl Source {
    pub fn label(self) -> &'static str {
        match self {
            Source::Gps => "gps",
            Source::Vo => "vo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidueRecord {
    pub t: f64,
    /// Position (m) then orientation (rad).
    pub r: [f64; 6],
    pub source: Source,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ResidueMeta {
    pub seed: u64,
    pub scenario_hash: String,
    pub noise: Option<NoiseModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidueSequence {
    pub model: ModelId,
    pub records: Vec<ResidueRecord>,
    pub meta: ResidueMeta,
}

impl ResidueSequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records from one sensor, in time order.
    pub fn from_source(&self, source: Source) -> Vec<ResidueRecord> {
        self.records
            .iter()
            .filter(|r| r.source == source)
            .copied()
            .collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Sub-sequence of records with `t_from <= t < t_to`.
    pub fn slice_time(&self, t_from: f64, t_to: f64) -> Self {
        Self {
            model: self.model,
            records: self
                .records
                .iter()
                .filter(|r| r.t >= t_from && r.t < t_to)
                .copied()
                .collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Extra switches for [`run_filter`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Per-frame permission to apply GPS updates. Masked GPS frames still
    /// yield a residue.
    pub gps_mask: Option<&'a [bool]>,
    /// Track Jacobian norms and covariance spectra (slow).
    pub log_lemma: bool,
}

/// Everything a filter pass produces.
#[derive(Debug, Clone)]
pub struct EkfRun {
    pub residues: ResidueSequence,
    /// `trace(S)` for each residue record.
    pub innovation_traces: Vec<f64>,
    /// Posterior pose per frame.
    pub poses: Vec<Pose>,
    /// `trace(P)` per frame after updates.
    pub covariance_traces: Vec<f64>,
    pub gps_updates: usize,
    pub vo_updates: usize,
    pub lemma: Option<LemmaLog>,
}

/// Checks that frame times increase and returns the step before each frame.
/// Simulated clocks share the IMU base, so nearest-step association is the
/// identity here.
pub fn timestamp_alignment(stream: &SensorStream) -> Result<Vec<f64>> {
    let mut steps = Vec::with_capacity(stream.len());
    for (k, f) in stream.frames.iter().enumerate() {
        if !f.t.is_finite() {
            return Err(Error::contract(format!("frame {k} has a non-finite time")));
        }
        if k == 0 {
            steps.push(0.0);
        } else {
            let dt = f.t - stream.frames[k - 1].t;
            if dt <= 0.0 {
                return Err(Error::contract(format!(
                    "frame times not increasing at frame {k}"
                )));
            }
            steps.push(dt);
        }
    }
    Ok(steps)
}

/// Maps a measured pose into the world (ENU) frame. Simulated sensors
/// already report world poses.
pub fn coordinate_transformation(pose: Pose) -> Pose {
    pose
}

/// Filters `stream` with the given model. Model I ignores VO frames.
pub fn run_filter(
    stream: &SensorStream,
    labels: &[bool],
    model: ModelId,
    cfg: &FilterConfig,
    opts: &RunOptions,
) -> Result<EkfRun> {
    if labels.len() != stream.len() {
        return Err(Error::contract("labels and frames differ in length"));
    }
    if let Some(mask) = opts.gps_mask {
        if mask.len() != stream.len() {
            return Err(Error::contract(format!(
                "GPS mask has {} entries for {} frames",
                mask.len(),
                stream.len()
            )));
        }
    }
    let steps = timestamp_alignment(stream)?;
    let dynamics = UavDynamics::new(model, cfg.clone());
    let gps_obs = GpsObservation::new(model, cfg);
    let vo_obs = VoObservation::new(cfg);
    let mut state = EkfState::new(
        stream.initial.with_model(model).into_vec(),
        cfg.initial_covariance(model),
    );
    let mut lemma = opts.log_lemma.then(LemmaLog::default);
    let mut run = EkfRun {
        residues: ResidueSequence {
            model,
            records: Vec::new(),
            meta: ResidueMeta::default(),
        },
        innovation_traces: Vec::new(),
        poses: Vec::with_capacity(stream.len()),
        covariance_traces: Vec::with_capacity(stream.len()),
        gps_updates: 0,
        vo_updates: 0,
        lemma: None,
    };
    let mut keyframe: Option<usize> = None;
    for (k, frame) in stream.frames.iter().enumerate() {
        if k > 0 {
            let imu = stream.frames[k - 1].imu;
            let f = state.predict(&dynamics, &imu, steps[k])?;
            if let Some(log) = lemma.as_mut() {
                log.record_transition(&f);
            }
        }
        if model == ModelId::ModelII {
            if let Some(vo) = frame.vo {
                if keyframe != Some(vo.keyframe) {
                    state.p = clone_keyframe(&mut state.x, &state.p);
                    keyframe = Some(vo.keyframe);
                }
                let y = coordinate_transformation(vo.pose).to_array();
                let inn = state.update(&vo_obs, &y)?;
                run.vo_updates += 1;
                if let Some(log) = lemma.as_mut() {
                    log.record_observation(&inn.jacobian);
                }
                run.innovation_traces.push(inn.covariance.trace());
                run.residues.records.push(ResidueRecord {
                    t: frame.t,
                    r: to6(&inn.residue),
                    source: Source::Vo,
                    label: labels[k],
                });
            }
        }
        if let Some(gps) = frame.gps {
            let y = coordinate_transformation(gps).to_array();
            let allowed = opts.gps_mask.is_none_or(|m| m[k]);
            let (residue, s_trace, h) = if allowed {
                let inn = state.update(&gps_obs, &y)?;
                run.gps_updates += 1;
                (inn.residue, inn.covariance.trace(), inn.jacobian)
            } else {
                let (r, s, h) = state.innovation(&gps_obs, &y)?;
                (r, s.trace(), h)
            };
            if let Some(log) = lemma.as_mut() {
                log.record_observation(&h);
            }
            run.innovation_traces.push(s_trace);
            run.residues.records.push(ResidueRecord {
                t: frame.t,
                r: to6(&residue),
                source: Source::Gps,
                label: labels[k],
            });
        }
        if let Some(log) = lemma.as_mut() {
            log.record_covariance(&state.p, &state.x);
        }
        if !state.x.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!(
                "state estimate became non-finite at t = {}",
                frame.t
            )));
        }
        run.poses.push(Pose::from_slice(&state.x[..6]));
        run.covariance_traces.push(state.p.trace());
    }
    run.lemma = lemma;
    Ok(run)
}

fn to6(v: &[f64]) -> [f64; 6] {
    [v[0], v[1], v[2], v[3], v[4], v[5]]
}

/// Residues for a labeled stream (filter configured from `noise`).
pub fn generate_residues(
    stream: &LabeledStream,
    model: ModelId,
    cfg: &FilterConfig,
) -> Result<ResidueSequence> {
    if stream.stream.is_empty() {
        return Ok(ResidueSequence {
            model,
            records: Vec::new(),
            meta: ResidueMeta::default(),
        });
    }
    Ok(run_filter(
        &stream.stream,
        &stream.labels,
        model,
        cfg,
        &RunOptions::default(),
    )?
    .residues)
}

pub const RESIDUE_HEADER: [&str; 9] = ["t", "r1", "r2", "r3", "r4", "r5", "r6", "source", "label"];

#[derive(Debug, Serialize, Deserialize)]
struct SequenceMeta {
    model: ModelId,
    #[serde(flatten)]
    meta: ResidueMeta,
}

fn meta_path(csv: &Path) -> std::path::PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    name.into()
}

pub fn write_residue_csv(path: &Path, seq: &ResidueSequence) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESIDUE_HEADER)?;
    for rec in &seq.records {
        let mut row: Vec<String> = Vec::with_capacity(9);
        row.push(rec.t.to_string());
        row.extend(rec.r.iter().map(f64::to_string));
        row.push(rec.source.label().to_string());
        row.push(u8::from(rec.label).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    let meta = SequenceMeta {
        model: seq.model,
        meta: seq.meta.clone(),
    };
    std::fs::write(meta_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_residue_csv(path: &Path) -> Result<ResidueSequence> {
    let meta: SequenceMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESIDUE_HEADER {
        return Err(Error::config(format!(
            "{}: unexpected residue header {header:?}",
            path.display()
        )));
    }
    let bad = |what: &str| Error::config(format!("{}: bad {what}", path.display()));
    let mut records = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(RESIDUE_HEADER[i]));
        let source = match &rec[7] {
            "gps" => Source::Gps,
            "vo" => Source::Vo,
            _ => return Err(bad("source")),
        };
        records.push(ResidueRecord {
            t: num(0)?,
            r: [num(1)?, num(2)?, num(3)?, num(4)?, num(5)?, num(6)?],
            source,
            label: &rec[8] == "1",
        });
    }
    Ok(ResidueSequence {
        model: meta.model,
        records,
        meta: meta.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Scenario, TrajectorySpec};

    fn scenario(seconds: f64) -> Scenario {
        Scenario {
            trajectory: TrajectorySpec::figure_eight(seconds),
            noise: NoiseModel::default(),
            rates: Default::default(),
            seed: 11,
        }
    }

    #[test]
    fn one_record_per_measurement_in_time_order() {
        let sc = scenario(20.0);
        let (_, stream) = sc.simulate().unwrap();
        let ls = LabeledStream::clean(stream);
        let cfg = FilterConfig::matched(&sc.noise);
        let one = generate_residues(&ls, ModelId::ModelI, &cfg).unwrap();
        assert_eq!(
            one.len(),
            ls.stream.frames.iter().filter(|f| f.gps.is_some()).count()
        );
        let two = generate_residues(&ls, ModelId::ModelII, &cfg).unwrap();
        let n_meas: usize = ls
            .stream
            .frames
            .iter()
            .map(|f| usize::from(f.gps.is_some()) + usize::from(f.vo.is_some()))
            .sum();
        assert_eq!(two.len(), n_meas);
        assert!(two.records.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(two, generate_residues(&ls, ModelId::ModelII, &cfg).unwrap());
    }

    #[test]
    fn empty_stream_gives_empty_sequence() {
        let (_, mut stream) = scenario(1.0).simulate().unwrap();
        stream.frames.clear();
        let seq = generate_residues(
            &LabeledStream::clean(stream),
            ModelId::ModelI,
            &FilterConfig::default(),
        )
        .unwrap();
        assert!(seq.is_empty());
    }

    #[test]
    fn masked_gps_is_never_applied() {
        let sc = scenario(10.0);
        let (_, stream) = sc.simulate().unwrap();
        let labels = vec![false; stream.len()];
        let mask = vec![false; stream.len()];
        let cfg = FilterConfig::matched(&sc.noise);
        let opts = RunOptions {
            gps_mask: Some(&mask),
            log_lemma: false,
        };
        let run = run_filter(&stream, &labels, ModelId::ModelII, &cfg, &opts).unwrap();
        assert_eq!(run.gps_updates, 0);
        assert!(run.vo_updates > 0);
        let short = vec![true; 3];
        let bad = RunOptions {
            gps_mask: Some(&short),
            log_lemma: false,
        };
        assert!(matches!(
            run_filter(&stream, &labels, ModelId::ModelII, &cfg, &bad),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let sc = scenario(5.0);
        let (_, stream) = sc.simulate().unwrap();
        let mut seq = generate_residues(
            &LabeledStream::clean(stream),
            ModelId::ModelII,
            &FilterConfig::matched(&sc.noise),
        )
        .unwrap();
        seq.records[3].label = true;
        seq.meta.seed = 11;
        seq.meta.noise = Some(sc.noise.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_residue_csv(&path, &seq).unwrap();
        assert_eq!(read_residue_csv(&path).unwrap(), seq);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,r1,r2,r3,r4,r5,r6,source,label\n"));
    }
}
