//! IMU, GPS and visual-odometry synthesis from ground truth.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{NoiseKind, NoiseModel, NoiseTarget};
use super::state::StateVector;
use super::trajectory::Truth;
use crate::error::{Error, Result};
use crate::rotation::{apply, apply_t, euler_from_matrix, rotation, sub3, wrap3, Vec3};

pub const GRAVITY: Vec3 = [0.0, 0.0, -9.81];

/// Sensor rates in Hz. GPS and VO rates must divide the IMU rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorRates {
    pub imu_hz: f64,
    pub gps_hz: f64,
    pub vo_hz: f64,
    /// IMU steps by which VO frames lag GPS frames.
    pub vo_offset: usize,
    /// VO frames per keyframe.
    pub keyframe_every: usize,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            imu_hz: 100.0,
            gps_hz: 10.0,
            vo_hz: 10.0,
            vo_offset: 5,
            keyframe_every: 50,
        }
    }
}

impl SensorRates {
    fn divisor(&self, hz: f64, name: &str) -> Result<usize> {
        let ratio = self.imu_hz / hz;
        let n = ratio.round();
        if !(hz > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(Error::config(format!(
                "{name} rate {hz} Hz must divide the IMU rate {} Hz",
                self.imu_hz
            )));
        }
        Ok(n as usize)
    }

    /// IMU steps between GPS fixes.
    pub fn gps_every(&self) -> Result<usize> {
        self.divisor(self.gps_hz, "GPS")
    }

    /// IMU steps between VO frames.
    pub fn vo_every(&self) -> Result<usize> {
        self.divisor(self.vo_hz, "VO")
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.imu_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.imu_hz > 0.0) {
            return Err(Error::config("IMU rate must be > 0"));
        }
        self.gps_every()?;
        let vo = self.vo_every()?;
        if self.vo_offset >= vo {
            return Err(Error::config(
                "VO offset must be smaller than the VO period",
            ));
        }
        // GPS and VO must never share a frame so residue times stay distinct
        let (mut a, mut b) = (self.gps_every()?, vo);
        while b != 0 {
            (a, b) = (b, a % b);
        }
        if self.vo_offset.is_multiple_of(a) {
            return Err(Error::config(
                "VO offset makes VO frames coincide with GPS frames",
            ));
        }
        if self.keyframe_every == 0 {
            return Err(Error::config("keyframe_every must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuReading {
    /// Body angular rate, rad/s.
    pub gyro: Vec3,
    /// Body specific force, m/s².
    pub accel: Vec3,
}

/// Position and Euler orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Vec3,
}

impl Pose {
    pub fn to_array(&self) -> [f64; 6] {
        let (p, q) = (self.position, self.orientation);
        [p[0], p[1], p[2], q[0], q[1], q[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            position: [v[0], v[1], v[2]],
            orientation: [v[3], v[4], v[5]],
        }
    }
}

/// Pose relative to the current keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoReading {
    pub pose: Pose,
    pub keyframe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    pub imu: ImuReading,
    pub gps: Option<Pose>,
    pub vo: Option<VoReading>,
}

/// A sensor recording plus what an estimator needs to start on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStream {
    pub dt: f64,
    pub keyframe_every: usize,
    /// True 15-dim state at the first frame.
    pub initial: StateVector,
    pub frames: Vec<SensorFrame>,
}

impl SensorStream {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Keyframe-relative pose: `(R_Fᵀ(p − p_F), Euler(R_Fᵀ·R))`.
pub fn relative_pose(pose: &Pose, keyframe: &Pose) -> Pose {
    let rf = rotation(keyframe.orientation);
    let r = rotation(pose.orientation);
    let rel = rf.t_matmul(&r).expect("3x3");
    Pose {
        position: apply_t(&rf, sub3(pose.position, keyframe.position)),
        orientation: euler_from_matrix(&rel),
    }
}

fn draw3(kind: &NoiseKind, rng: &mut ChaCha8Rng) -> Vec3 {
    [
        kind.sample_centered(rng),
        kind.sample_centered(rng),
        kind.sample_centered(rng),
    ]
}

/// IMU every step, GPS every `gps_every` steps starting at 0, VO every
/// `vo_every` steps starting at `vo_offset`.
pub fn synthesize_sensors(
    truth: &Truth,
    noise: &NoiseModel,
    rates: &SensorRates,
    seed: u64,
) -> Result<SensorStream> {
    if truth.is_empty() {
        return Err(Error::contract("truth is empty"));
    }
    noise.validate()?;
    rates.validate()?;
    if (rates.dt() - truth.dt).abs() > 1e-12 {
        return Err(Error::config(format!(
            "IMU period {} s does not match trajectory dt {} s",
            rates.dt(),
            truth.dt
        )));
    }
    let gps_every = rates.gps_every()?;
    let vo_every = rates.vo_every()?;
    let kind = |t| noise.spec(t).kind;
    let (n_g, n_a) = (kind(NoiseTarget::Gyro), kind(NoiseTarget::Accel));
    let (n_gp, n_gq) = (
        kind(NoiseTarget::GpsPosition),
        kind(NoiseTarget::GpsOrientation),
    );
    let (n_vp, n_vq) = (
        kind(NoiseTarget::VoPosition),
        kind(NoiseTarget::VoOrientation),
    );

    let mut imu_rng = ChaCha8Rng::seed_from_u64(seed);
    imu_rng.set_stream(2);
    let mut gps_rng = ChaCha8Rng::seed_from_u64(seed);
    gps_rng.set_stream(3);
    let mut vo_rng = ChaCha8Rng::seed_from_u64(seed);
    vo_rng.set_stream(4);

    let mut frames = Vec::with_capacity(truth.len());
    let mut vo_count = 0usize;
    let mut keyframe = Pose {
        position: [0.0; 3],
        orientation: [0.0; 3],
    };
    for (k, s) in truth.states.iter().enumerate() {
        let q = s.orientation();
        let r = rotation(q);
        let body_rate = apply(&crate::rotation::euler_rate_map(q), truth.euler_rates[k]);
        let specific = apply_t(&r, sub3(truth.accel[k], GRAVITY));
        let gn = draw3(&n_g, &mut imu_rng);
        let an = draw3(&n_a, &mut imu_rng);
        let (bg, ba) = (s.gyro_bias(), s.accel_bias());
        let imu = ImuReading {
            gyro: [0, 1, 2].map(|i| body_rate[i] + bg[i] + gn[i]),
            accel: [0, 1, 2].map(|i| specific[i] + ba[i] + an[i]),
        };
        let pose = Pose {
            position: s.position(),
            orientation: q,
        };
        let gps = (k % gps_every == 0).then(|| {
            let pn = draw3(&n_gp, &mut gps_rng);
            let qn = draw3(&n_gq, &mut gps_rng);
            Pose {
                position: [0, 1, 2].map(|i| pose.position[i] + pn[i]),
                orientation: wrap3([0, 1, 2].map(|i| q[i] + qn[i])),
            }
        });
        let vo = (k % vo_every == rates.vo_offset).then(|| {
            let id = vo_count / rates.keyframe_every;
            if vo_count.is_multiple_of(rates.keyframe_every) {
                keyframe = pose;
            }
            vo_count += 1;
            let rel = relative_pose(&pose, &keyframe);
            let pn = draw3(&n_vp, &mut vo_rng);
            let qn = draw3(&n_vq, &mut vo_rng);
            VoReading {
                pose: Pose {
                    position: [0, 1, 2].map(|i| rel.position[i] + pn[i]),
                    orientation: wrap3([0, 1, 2].map(|i| rel.orientation[i] + qn[i])),
                },
                keyframe: id,
            }
        });
        frames.push(SensorFrame {
            t: truth.time(k),
            imu,
            gps,
            vo,
        });
    }
    Ok(SensorStream {
        dt: truth.dt,
        keyframe_every: rates.keyframe_every,
        initial: truth.states[0].clone(),
        frames,
    })
}

pub const SENSOR_HEADER: [&str; 21] = [
    "t", "wx", "wy", "wz", "ax", "ay", "az", "gps_px", "gps_py", "gps_pz", "gps_qx", "gps_qy",
    "gps_qz", "vo_px", "vo_py", "vo_pz", "vo_qx", "vo_qy", "vo_qz", "has_gps", "has_vo",
];

/// Stream metadata kept next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StreamMeta {
    dt: f64,
    keyframe_every: usize,
    initial: StateVector,
}

fn meta_path(csv: &Path) -> std::path::PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    name.into()
}

/// Writes `stream` as CSV (plus a `.meta.json` sidecar). With `labels`,
/// a trailing `label` column is added.
pub fn write_sensor_csv(path: &Path, stream: &SensorStream, labels: Option<&[bool]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != stream.len() {
            return Err(Error::contract("label count differs from frame count"));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = SENSOR_HEADER.to_vec();
    if labels.is_some() {
        header.push("label");
    }
    w.write_record(&header)?;
    let blank = || vec![String::new(); 6];
    for (k, f) in stream.frames.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        row.push(f.t.to_string());
        row.extend(f.imu.gyro.iter().chain(&f.imu.accel).map(f64::to_string));
        row.extend(
            f.gps
                .map_or_else(blank, |g| g.to_array().map(|v| v.to_string()).to_vec()),
        );
        row.extend(f.vo.map_or_else(blank, |v| v.pose.to_array().map(|v| v.to_string()).to_vec()));
        row.push(u8::from(f.gps.is_some()).to_string());
        row.push(u8::from(f.vo.is_some()).to_string());
        if let Some(l) = labels {
            row.push(u8::from(l[k]).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    let meta = StreamMeta {
        dt: stream.dt,
        keyframe_every: stream.keyframe_every,
        initial: stream.initial.clone(),
    };
    std::fs::write(meta_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a stream written by [`write_sensor_csv`]; labels come back when
/// the file has a `label` column.
pub fn read_sensor_csv(path: &Path) -> Result<(SensorStream, Option<Vec<bool>>)> {
    let meta: StreamMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::config(format!("{}: missing column {name}", path.display())))
    };
    let idx: Vec<usize> = SENSOR_HEADER
        .iter()
        .map(|h| col(h))
        .collect::<Result<_>>()?;
    let label_idx = header.iter().position(|h| h == "label");
    let mut frames = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    let mut vo_count = 0usize;
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[idx[i]].parse::<f64>().map_err(|e| {
                Error::config(format!(
                    "{}: bad number in {}: {e}",
                    path.display(),
                    SENSOR_HEADER[i]
                ))
            })
        };
        let flag = |i: usize| &rec[idx[i]] == "1";
        let six = |start: usize| -> Result<[f64; 6]> {
            let mut out = [0.0; 6];
            for (j, o) in out.iter_mut().enumerate() {
                *o = num(start + j)?;
            }
            Ok(out)
        };
        let gps = if flag(19) {
            Some(Pose::from_slice(&six(7)?))
        } else {
            None
        };
        let vo = if flag(20) {
            let id = vo_count / meta.keyframe_every;
            vo_count += 1;
            Some(VoReading {
                pose: Pose::from_slice(&six(13)?),
                keyframe: id,
            })
        } else {
            None
        };
        frames.push(SensorFrame {
            t: num(0)?,
            imu: ImuReading {
                gyro: [num(1)?, num(2)?, num(3)?],
                accel: [num(4)?, num(5)?, num(6)?],
            },
            gps,
            vo,
        });
        if let (Some(i), Some(l)) = (label_idx, labels.as_mut()) {
            l.push(&rec[i] == "1");
        }
    }
    Ok((
        SensorStream {
            dt: meta.dt,
            keyframe_every: meta.keyframe_every,
            initial: meta.initial,
            frames,
        },
        labels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{norm3, scale3};
    use crate::sim::trajectory::{generate_truth, AttitudeProfile, TrajectorySpec};

    fn hover_tilted() -> TrajectorySpec {
        let mut spec = TrajectorySpec::hover(2.0);
        spec.attitude = AttitudeProfile {
            yaw_offset: 0.4,
            ..AttitudeProfile::level()
        };
        spec
    }

    #[test]
    fn hover_accelerometer_reads_gravity_only() {
        let noise = NoiseModel::noiseless();
        let truth = generate_truth(&hover_tilted(), &noise, 0).unwrap();
        let stream = synthesize_sensors(&truth, &noise, &SensorRates::default(), 0).unwrap();
        for (f, s) in stream.frames.iter().zip(&truth.states) {
            let expect = apply_t(&rotation(s.orientation()), scale3(GRAVITY, -1.0));
            assert!(norm3(sub3(f.imu.accel, expect)) < 1e-12);
            assert_eq!(f.imu.gyro, [0.0; 3]);
        }
    }

    #[test]
    fn measurement_cadence() {
        let noise = NoiseModel::noiseless();
        let truth = generate_truth(&TrajectorySpec::figure_eight(12.0), &noise, 0).unwrap();
        let stream = synthesize_sensors(&truth, &noise, &SensorRates::default(), 0).unwrap();
        for (k, f) in stream.frames.iter().enumerate() {
            assert_eq!(f.gps.is_some(), k % 10 == 0);
            assert_eq!(f.vo.is_some(), k % 10 == 5);
        }
        let ids: Vec<usize> = stream
            .frames
            .iter()
            .filter_map(|f| f.vo.map(|v| v.keyframe))
            .collect();
        assert_eq!(ids[49], 0);
        assert_eq!(ids[50], 1);
        // the first frame of a keyframe is the keyframe itself
        let first = stream.frames.iter().find_map(|f| f.vo).unwrap();
        assert!(first.pose.to_array().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn noiseless_gps_reads_truth() {
        let noise = NoiseModel::noiseless();
        let truth = generate_truth(&TrajectorySpec::figure_eight(3.0), &noise, 0).unwrap();
        let stream = synthesize_sensors(&truth, &noise, &SensorRates::default(), 0).unwrap();
        for (f, s) in stream.frames.iter().zip(&truth.states) {
            if let Some(g) = f.gps {
                assert_eq!(g.position, s.position());
                assert!(norm3(sub3(g.orientation, s.orientation())) < 1e-15);
            }
        }
    }

    #[test]
    fn relative_pose_of_composed_rotation() {
        let kf = Pose {
            position: [1.0, 2.0, 3.0],
            orientation: [0.1, -0.2, 0.3],
        };
        let pose = Pose {
            position: [4.0, 0.0, 3.5],
            orientation: [-0.05, 0.1, 1.0],
        };
        let rel = relative_pose(&pose, &kf);
        let back_r = &rotation(kf.orientation) * &rotation(rel.orientation);
        assert!((&back_r - &rotation(pose.orientation)).max_abs() < 1e-12);
        let back_p = apply(&rotation(kf.orientation), rel.position);
        assert!(norm3(sub3(back_p, sub3(pose.position, kf.position))) < 1e-12);
    }

    #[test]
    fn rate_mismatch_is_config_error() {
        let noise = NoiseModel::noiseless();
        let truth = generate_truth(&TrajectorySpec::hover(1.0), &noise, 0).unwrap();
        let rates = SensorRates {
            gps_hz: 7.0,
            ..SensorRates::default()
        };
        assert!(matches!(
            synthesize_sensors(&truth, &noise, &rates, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let noise = NoiseModel::with_family(crate::sim::noise::NoiseFamily::Laplacian);
        let truth = generate_truth(&TrajectorySpec::figure_eight(7.0), &noise, 3).unwrap();
        let stream = synthesize_sensors(&truth, &noise, &SensorRates::default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let labels: Vec<bool> = (0..stream.len()).map(|k| k % 7 == 0).collect();
        write_sensor_csv(&path, &stream, Some(&labels)).unwrap();
        let (back, back_labels) = read_sensor_csv(&path).unwrap();
        assert_eq!(back, stream);
        assert_eq!(back_labels.unwrap(), labels);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("t,wx,wy,wz,ax,ay,az,gps_px,"));
    }
}
