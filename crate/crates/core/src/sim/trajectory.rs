//! Analytic reference trajectories. Position, velocity and acceleration are
//! evaluated in closed form, so the truth is exact at every sample time.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{NoiseModel, NoiseTarget};
use super::state::{ModelId, StateVector};
use crate::error::{Error, Result};
use crate::rotation::{add3, scale3, sub3, Vec3};

/// Path followed by the vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Hover {
        position: Vec3,
    },
    /// Lemniscate of Gerono: `x = A·sin ωt`, `y = (A/2)·sin 2ωt`.
    FigureEight {
        amplitude: f64,
        period: f64,
        altitude: f64,
    },
    /// Counter-clockwise square starting and ending at the origin corner.
    Square {
        side: f64,
        leg_time: f64,
        altitude: f64,
    },
    Diagonal {
        from: Vec3,
        to: Vec3,
        leg_time: f64,
    },
    /// Straight legs between waypoints with quintic time scaling (rest at
    /// every waypoint).
    Waypoints {
        points: Vec<Vec3>,
        leg_time: f64,
    },
}

/// Smooth attitude excursions layered on top of the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttitudeProfile {
    pub roll_amplitude: f64,
    pub pitch_amplitude: f64,
    pub yaw_amplitude: f64,
    pub roll_period: f64,
    pub pitch_period: f64,
    pub yaw_period: f64,
    pub yaw_offset: f64,
}

impl Default for AttitudeProfile {
    fn default() -> Self {
        Self {
            roll_amplitude: 0.15,
            pitch_amplitude: 0.15,
            yaw_amplitude: 0.6,
            roll_period: 7.0,
            pitch_period: 11.0,
            yaw_period: 23.0,
            yaw_offset: 0.0,
        }
    }
}

impl AttitudeProfile {
    pub fn level() -> Self {
        Self {
            roll_amplitude: 0.0,
            pitch_amplitude: 0.0,
            yaw_amplitude: 0.0,
            ..Self::default()
        }
    }

    /// `(angles, angle rates)` at time `t`.
    pub fn eval(&self, t: f64) -> (Vec3, Vec3) {
        let wave = |amp: f64, period: f64, phase: f64| {
            let w = 2.0 * PI / period;
            ((w * t + phase).sin() * amp, (w * t + phase).cos() * amp * w)
        };
        let (r, dr) = wave(self.roll_amplitude, self.roll_period, 0.0);
        let (p, dp) = wave(self.pitch_amplitude, self.pitch_period, 0.7);
        let (y, dy) = wave(self.yaw_amplitude, self.yaw_period, 0.0);
        ([r, p, y + self.yaw_offset], [dr, dp, dy])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub shape: Shape,
    /// s
    pub duration: f64,
    /// s
    pub dt: f64,
    #[serde(default)]
    pub attitude: AttitudeProfile,
}

impl TrajectorySpec {
    pub fn figure_eight(duration: f64) -> Self {
        Self {
            shape: Shape::FigureEight {
                amplitude: 30.0,
                period: 60.0,
                altitude: 10.0,
            },
            duration,
            dt: 0.01,
            attitude: AttitudeProfile::default(),
        }
    }

    pub fn hover(duration: f64) -> Self {
        Self {
            shape: Shape::Hover {
                position: [0.0, 0.0, 5.0],
            },
            duration,
            dt: 0.01,
            attitude: AttitudeProfile::level(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration must be finite and >= 0"));
        }
        if self.attitude.pitch_amplitude.abs() >= FRAC_PI_2 - 0.1 {
            return Err(Error::config("pitch amplitude must stay below pi/2 - 0.1"));
        }
        let a = &self.attitude;
        for period in [a.roll_period, a.pitch_period, a.yaw_period] {
            if !(period > 0.0) {
                return Err(Error::config("attitude periods must be > 0"));
            }
        }
        match &self.shape {
            Shape::FigureEight { period, .. } if !(*period > 0.0) => {
                Err(Error::config("figure-eight period must be > 0"))
            }
            Shape::Square { leg_time, .. } | Shape::Diagonal { leg_time, .. }
                if !(*leg_time > 0.0) =>
            {
                Err(Error::config("leg_time must be > 0"))
            }
            Shape::Waypoints { points, leg_time } if points.is_empty() || !(*leg_time > 0.0) => {
                Err(Error::config(
                    "waypoints need at least one point and leg_time > 0",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize + 1
    }

    /// Position, velocity and acceleration at time `t`.
    pub fn kinematics(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        match &self.shape {
            Shape::Hover { position } => (*position, [0.0; 3], [0.0; 3]),
            Shape::FigureEight {
                amplitude,
                period,
                altitude,
            } => {
                let w = 2.0 * PI / period;
                let a = *amplitude;
                let (s1, c1) = (w * t).sin_cos();
                let (s2, c2) = (2.0 * w * t).sin_cos();
                (
                    [a * s1, 0.5 * a * s2, *altitude],
                    [a * w * c1, a * w * c2, 0.0],
                    [-a * w * w * s1, -2.0 * a * w * w * s2, 0.0],
                )
            }
            Shape::Square {
                side,
                leg_time,
                altitude,
            } => {
                let h = *altitude;
                let pts = [
                    [0.0, 0.0, h],
                    [*side, 0.0, h],
                    [*side, *side, h],
                    [0.0, *side, h],
                    [0.0, 0.0, h],
                ];
                polyline(&pts, *leg_time, t)
            }
            Shape::Diagonal { from, to, leg_time } => polyline(&[*from, *to], *leg_time, t),
            Shape::Waypoints { points, leg_time } => polyline(points, *leg_time, t),
        }
    }
}

fn polyline(points: &[Vec3], leg_time: f64, t: f64) -> (Vec3, Vec3, Vec3) {
    if points.len() == 1 {
        return (points[0], [0.0; 3], [0.0; 3]);
    }
    let legs = points.len() - 1;
    let leg = ((t / leg_time).floor().max(0.0) as usize).min(legs);
    if leg == legs {
        return (points[legs], [0.0; 3], [0.0; 3]);
    }
    let u = ((t - leg as f64 * leg_time) / leg_time).clamp(0.0, 1.0);
    // quintic smoothstep: zero velocity and acceleration at both ends
    let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / leg_time;
    let dds = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (leg_time * leg_time);
    let delta = sub3(points[leg + 1], points[leg]);
    (
        add3(points[leg], scale3(delta, s)),
        scale3(delta, ds),
        scale3(delta, dds),
    )
}

/// Ground-truth samples on the IMU clock.
#[derive(Debug, Clone)]
pub struct Truth {
    pub dt: f64,
    /// 15-dim states (keyframe fields belong to the estimator only).
    pub states: Vec<StateVector>,
    /// World-frame acceleration `v̇`.
    pub accel: Vec<Vec3>,
    /// Euler-angle rates `q̇`.
    pub euler_rates: Vec<Vec3>,
}

impl Truth {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Columns `t,px,py,pz,qx,qy,qz`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "px", "py", "pz", "qx", "qy", "qz"])?;
        for (k, s) in self.states.iter().enumerate() {
            let mut rec = vec![self.time(k).to_string()];
            rec.extend(
                s.position()
                    .iter()
                    .chain(s.orientation().iter())
                    .map(|v| v.to_string()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples the trajectory at `k·dt`; sensor biases follow random walks
/// driven by the configured bias-walk noise.
pub fn generate_truth(spec: &TrajectorySpec, noise: &NoiseModel, seed: u64) -> Result<Truth> {
    spec.validate()?;
    let n = spec.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let bg_walk = noise.spec(NoiseTarget::GyroBiasWalk).kind;
    let ba_walk = noise.spec(NoiseTarget::AccelBiasWalk).kind;
    let mut bg = [0.0; 3];
    let mut ba = [0.0; 3];
    let mut states = Vec::with_capacity(n);
    let mut accel = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * spec.dt;
        let (p, v, a) = spec.kinematics(t);
        let (q, dq) = spec.attitude.eval(t);
        let mut s = StateVector::zeros(ModelId::ModelI);
        s.set_position(p);
        s.set_orientation(q);
        s.set_velocity(v);
        s.set_gyro_bias(bg);
        s.set_accel_bias(ba);
        states.push(s);
        accel.push(a);
        rates.push(dq);
        for i in 0..3 {
            bg[i] += bg_walk.sample_centered(&mut rng);
            ba[i] += ba_walk.sample_centered(&mut rng);
        }
    }
    Ok(Truth {
        dt: spec.dt,
        states,
        accel,
        euler_rates: rates,
    })
}
