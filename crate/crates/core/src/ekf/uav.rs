//! Quadrotor process and measurement models for the 15-state (GPS + IMU)
//! and 21-state (GPS + IMU + keyframe VO) filters.

use std::f64::consts::FRAC_PI_2;

use numkit::Matrix;
use serde::{Deserialize, Serialize};

use super::filter::{Dynamics, Observation};
use crate::rotation::{
    apply, euler_directional_derivative, euler_from_matrix, euler_rate_map_inv,
    euler_rate_map_inv_jacobian, rotate_jacobian, rotation, rotation_partials, wrap_angle, Vec3,
};
use crate::sim::state::{ACCEL_BIAS, GYRO_BIAS, KF_ORI, KF_POS, ORI, POS, VEL};
use crate::sim::{ImuReading, ModelId, NoiseModel, NoiseTarget, GRAVITY};

/// Pitch beyond which the Euler rate map is treated as singular.
pub const PITCH_LIMIT: f64 = FRAC_PI_2 - 0.05;

/// Noise levels the filter assumes. Built from the simulator's second
/// moments so the filter is matched in variance but not in shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub gyro_std: f64,
    pub accel_std: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    pub gps_pos_std: f64,
    pub gps_rot_std: f64,
    pub vo_pos_std: f64,
    pub vo_rot_std: f64,
    /// Per-step slack on position, velocity and attitude for integration
    /// error.
    pub model_pos_std: f64,
    pub model_vel_std: f64,
    pub model_rot_std: f64,
    /// Initial standard deviations.
    pub init_pos_std: f64,
    pub init_rot_std: f64,
    pub init_vel_std: f64,
    pub init_gyro_bias_std: f64,
    pub init_accel_bias_std: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::matched(&NoiseModel::default())
    }
}

impl FilterConfig {
    pub fn matched(noise: &NoiseModel) -> Self {
        // a noiseless simulation still needs a well-posed filter
        let floor = |target: NoiseTarget, min: f64| noise.spec(target).kind.std().max(min);
        Self {
            gyro_std: floor(NoiseTarget::Gyro, 1e-4),
            accel_std: floor(NoiseTarget::Accel, 1e-3),
            gyro_bias_walk: floor(NoiseTarget::GyroBiasWalk, 1e-7),
            accel_bias_walk: floor(NoiseTarget::AccelBiasWalk, 1e-6),
            gps_pos_std: floor(NoiseTarget::GpsPosition, 1e-3),
            gps_rot_std: floor(NoiseTarget::GpsOrientation, 1e-4),
            vo_pos_std: floor(NoiseTarget::VoPosition, 1e-3),
            vo_rot_std: floor(NoiseTarget::VoOrientation, 1e-4),
            model_pos_std: 1e-3,
            model_vel_std: 1e-3,
            model_rot_std: 1e-4,
            init_pos_std: 0.5,
            init_rot_std: 0.05,
            init_vel_std: 0.5,
            init_gyro_bias_std: 0.01,
            init_accel_bias_std: 0.1,
        }
    }

    pub fn initial_covariance(&self, model: ModelId) -> Matrix {
        let n = model.state_dim();
        let mut d = vec![0.0; n];
        let mut fill = |at: usize, std: f64| d[at..at + 3].iter_mut().for_each(|v| *v = std * std);
        fill(POS, self.init_pos_std);
        fill(ORI, self.init_rot_std);
        fill(VEL, self.init_vel_std);
        fill(GYRO_BIAS, self.init_gyro_bias_std);
        fill(ACCEL_BIAS, self.init_accel_bias_std);
        if model == ModelId::ModelII {
            fill(KF_POS, self.init_pos_std);
            fill(KF_ORI, self.init_rot_std);
        }
        Matrix::diagonal(&d)
    }
}

fn get3(x: &[f64], at: usize) -> Vec3 {
    [x[at], x[at + 1], x[at + 2]]
}

fn set_block3(m: &mut Matrix, r0: usize, c0: usize, b: &Matrix) {
    m.set_block(r0, c0, b);
}

/// Strapdown kinematics driven by IMU readings. Keyframe states (if any)
/// are constant.
#[derive(Debug, Clone)]
pub struct UavDynamics {
    pub model: ModelId,
    pub cfg: FilterConfig,
}

impl UavDynamics {
    pub fn new(model: ModelId, cfg: FilterConfig) -> Self {
        Self { model, cfg }
    }

    fn clamped_attitude(x: &[f64]) -> Vec3 {
        let q = get3(x, ORI);
        if q[1].abs() > PITCH_LIMIT {
            log::warn!("pitch {:.4} rad near the Euler singularity, clamping", q[1]);
            [q[0], q[1].clamp(-PITCH_LIMIT, PITCH_LIMIT), q[2]]
        } else {
            q
        }
    }

    fn corrected(x: &[f64], u: &ImuReading) -> (Vec3, Vec3) {
        let bg = get3(x, GYRO_BIAS);
        let ba = get3(x, ACCEL_BIAS);
        (
            [0, 1, 2].map(|i| u.gyro[i] - bg[i]),
            [0, 1, 2].map(|i| u.accel[i] - ba[i]),
        )
    }
}

impl Dynamics for UavDynamics {
    type Input = ImuReading;

    fn transition(&self, x: &[f64], u: &ImuReading, dt: f64) -> Vec<f64> {
        let q = Self::clamped_attitude(x);
        let (w, f) = Self::corrected(x, u);
        let q_dot = apply(&euler_rate_map_inv(q), w);
        let acc = apply(&rotation(q), f);
        let mut out = x.to_vec();
        for i in 0..3 {
            out[POS + i] = x[POS + i] + dt * x[VEL + i];
            out[ORI + i] = wrap_angle(q[i] + dt * q_dot[i]);
            out[VEL + i] = x[VEL + i] + dt * (GRAVITY[i] + acc[i]);
        }
        out
    }

    fn jacobian(&self, x: &[f64], u: &ImuReading, dt: f64) -> Matrix {
        let n = x.len();
        let q = Self::clamped_attitude(x);
        let (w, f) = Self::corrected(x, u);
        let mut jac = Matrix::identity(n);
        let dt_i = Matrix::diagonal(&[dt; 3]);
        set_block3(&mut jac, POS, VEL, &dt_i);
        let dq = euler_rate_map_inv_jacobian(q, w).scale(dt);
        set_block3(&mut jac, ORI, ORI, &(&Matrix::identity(3) + &dq));
        set_block3(&mut jac, ORI, GYRO_BIAS, &euler_rate_map_inv(q).scale(-dt));
        set_block3(&mut jac, VEL, ORI, &rotate_jacobian(q, f).scale(dt));
        set_block3(&mut jac, VEL, ACCEL_BIAS, &rotation(q).scale(-dt));
        jac
    }

    fn process_noise(&self, x: &[f64], _u: &ImuReading, dt: f64) -> Matrix {
        let n = x.len();
        let q = Self::clamped_attitude(x);
        let c = &self.cfg;
        let ginv = euler_rate_map_inv(q);
        let rot = rotation(q);
        let mut out = Matrix::zeros(n, n);
        // gyro and accel noise enter through −dt·G⁻¹ and −dt·R
        let qq = ginv
            .matmul_t(&ginv)
            .expect("3x3")
            .scale(dt * dt * c.gyro_std * c.gyro_std);
        let vv = rot
            .matmul_t(&rot)
            .expect("3x3")
            .scale(dt * dt * c.accel_std * c.accel_std);
        let sq = |s: f64| s * s;
        set_block3(
            &mut out,
            ORI,
            ORI,
            &(&qq + &Matrix::diagonal(&[sq(c.model_rot_std); 3])),
        );
        set_block3(
            &mut out,
            VEL,
            VEL,
            &(&vv + &Matrix::diagonal(&[sq(c.model_vel_std); 3])),
        );
        set_block3(
            &mut out,
            POS,
            POS,
            &Matrix::diagonal(&[sq(c.model_pos_std); 3]),
        );
        set_block3(
            &mut out,
            GYRO_BIAS,
            GYRO_BIAS,
            &Matrix::diagonal(&[sq(c.gyro_bias_walk); 3]),
        );
        set_block3(
            &mut out,
            ACCEL_BIAS,
            ACCEL_BIAS,
            &Matrix::diagonal(&[sq(c.accel_bias_walk); 3]),
        );
        out
    }
}

fn wrapped_difference(y: &[f64], predicted: &[f64]) -> Vec<f64> {
    (0..6)
        .map(|i| {
            let d = y[i] - predicted[i];
            if i >= 3 {
                wrap_angle(d)
            } else {
                d
            }
        })
        .collect()
}

/// Absolute pose `(p, q)`.
#[derive(Debug, Clone)]
pub struct GpsObservation {
    n: usize,
    r: Matrix,
}

impl GpsObservation {
    pub fn new(model: ModelId, cfg: &FilterConfig) -> Self {
        let (p, q) = (cfg.gps_pos_std.powi(2), cfg.gps_rot_std.powi(2));
        Self {
            n: model.state_dim(),
            r: Matrix::diagonal(&[p, p, p, q, q, q]),
        }
    }
}

impl Observation for GpsObservation {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        x[POS..ORI + 3].to_vec()
    }

    fn jacobian(&self, _x: &[f64]) -> Matrix {
        Matrix::from_fn(6, self.n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    fn noise(&self) -> &Matrix {
        &self.r
    }

    fn difference(&self, y: &[f64], predicted: &[f64]) -> Vec<f64> {
        wrapped_difference(y, predicted)
    }
}

/// Pose relative to the keyframe: `(R_Fᵀ(p − p_F), Euler(R_Fᵀ·R))`.
#[derive(Debug, Clone)]
pub struct VoObservation {
    r: Matrix,
}

impl VoObservation {
    pub fn new(cfg: &FilterConfig) -> Self {
        let (p, q) = (cfg.vo_pos_std.powi(2), cfg.vo_rot_std.powi(2));
        Self {
            r: Matrix::diagonal(&[p, p, p, q, q, q]),
        }
    }
}

impl Observation for VoObservation {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let rf = rotation(get3(x, KF_ORI));
        let r = rotation(get3(x, ORI));
        let dp = [0, 1, 2].map(|i| x[POS + i] - x[KF_POS + i]);
        let rel_p = crate::rotation::apply_t(&rf, dp);
        let rel_q = euler_from_matrix(&rf.t_matmul(&r).expect("3x3"));
        vec![rel_p[0], rel_p[1], rel_p[2], rel_q[0], rel_q[1], rel_q[2]]
    }

    fn jacobian(&self, x: &[f64]) -> Matrix {
        let qf = get3(x, KF_ORI);
        let rf = rotation(qf);
        let r = rotation(get3(x, ORI));
        let dr = rotation_partials(get3(x, ORI));
        let drf = rotation_partials(qf);
        let m = rf.t_matmul(&r).expect("3x3");
        let dp = [0, 1, 2].map(|i| x[POS + i] - x[KF_POS + i]);
        let mut h = Matrix::zeros(6, x.len());
        let rft = rf.transpose();
        set_block3(&mut h, 0, POS, &rft);
        set_block3(&mut h, 0, KF_POS, &rft.scale(-1.0));
        for j in 0..3 {
            let col = crate::rotation::apply_t(&drf[j], dp);
            for i in 0..3 {
                h.set(i, KF_ORI + j, col[i]);
            }
            let dm_q = rf.t_matmul(&dr[j]).expect("3x3");
            let dm_qf = drf[j].t_matmul(&r).expect("3x3");
            let eq = euler_directional_derivative(&m, &dm_q);
            let eqf = euler_directional_derivative(&m, &dm_qf);
            for i in 0..3 {
                h.set(3 + i, ORI + j, eq[i]);
                h.set(3 + i, KF_ORI + j, eqf[i]);
            }
        }
        h
    }

    fn noise(&self) -> &Matrix {
        &self.r
    }

    fn difference(&self, y: &[f64], predicted: &[f64]) -> Vec<f64> {
        wrapped_difference(y, predicted)
    }
}

/// Keyframe switch by stochastic cloning: `x_F ← (p, q)`, `P ← J·P·Jᵀ`.
pub fn clone_keyframe(x: &mut [f64], p: &Matrix) -> Matrix {
    let n = x.len();
    let mut j = Matrix::identity(n);
    for i in 0..3 {
        j.set(KF_POS + i, KF_POS + i, 0.0);
        j.set(KF_ORI + i, KF_ORI + i, 0.0);
        j.set(KF_POS + i, POS + i, 1.0);
        j.set(KF_ORI + i, ORI + i, 1.0);
        x[KF_POS + i] = x[POS + i];
        x[KF_ORI + i] = x[ORI + i];
    }
    let mut out = j.matmul(p).and_then(|jp| jp.matmul_t(&j)).expect("square");
    out.symmetrize();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(model: ModelId) -> Vec<f64> {
        let mut x: Vec<f64> = (0..model.state_dim())
            .map(|i| 0.1 * ((i * 7 % 11) as f64 - 5.0))
            .collect();
        x[ORI + 1] = 0.3;
        x
    }

    fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], wrap_rows: &[usize]) -> Matrix {
        let h = 1e-6;
        let m = f(x).len();
        let mut out = Matrix::zeros(m, x.len());
        for j in 0..x.len() {
            let mut up = x.to_vec();
            up[j] += h;
            let mut dn = x.to_vec();
            dn[j] -= h;
            let (a, b) = (f(&up), f(&dn));
            for i in 0..m {
                let mut d = a[i] - b[i];
                if wrap_rows.contains(&i) {
                    d = wrap_angle(d);
                }
                out.set(i, j, d / (2.0 * h));
            }
        }
        out
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(1e-12)
    }

    #[test]
    fn transition_jacobian_matches_finite_differences() {
        let u = ImuReading {
            gyro: [0.3, -0.2, 0.5],
            accel: [0.4, 0.1, 9.7],
        };
        for model in [ModelId::ModelI, ModelId::ModelII] {
            let dynm = UavDynamics::new(model, FilterConfig::default());
            let x = state(model);
            let analytic = dynm.jacobian(&x, &u, 0.01);
            let numeric = fd_jacobian(|x| dynm.transition(x, &u, 0.01), &x, &[3, 4, 5]);
            assert!(rel_err(&analytic, &numeric) < 1e-5, "{model:?}");
        }
    }

    #[test]
    fn vo_jacobian_matches_finite_differences() {
        let obs = VoObservation::new(&FilterConfig::default());
        let mut x = state(ModelId::ModelII);
        x[KF_ORI..KF_ORI + 3].copy_from_slice(&[0.2, -0.1, 0.7]);
        let analytic = obs.jacobian(&x);
        let numeric = fd_jacobian(|x| obs.predict(x), &x, &[3, 4, 5]);
        assert!(rel_err(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn gps_jacobian_selects_pose() {
        let obs = GpsObservation::new(ModelId::ModelII, &FilterConfig::default());
        let x = state(ModelId::ModelII);
        let numeric = fd_jacobian(|x| obs.predict(x), &x, &[]);
        assert!((&obs.jacobian(&x) - &numeric).max_abs() < 1e-9);
    }

    #[test]
    fn hover_prediction_keeps_state_and_grows_covariance() {
        let mut x = vec![0.0; 15];
        x[POS + 2] = 5.0;
        let u = ImuReading {
            gyro: [0.0; 3],
            accel: [0.0, 0.0, 9.81],
        };
        let dynm = UavDynamics::new(ModelId::ModelI, FilterConfig::default());
        let mut s = super::super::filter::EkfState::new(x.clone(), Matrix::zeros(15, 15));
        s.predict(&dynm, &u, 0.01).unwrap();
        assert!(s.x.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-15));
        let q = dynm.process_noise(&x, &u, 0.01);
        assert!((&s.p - &q).max_abs() < 1e-18);
    }

    #[test]
    fn cloning_copies_pose_and_correlation() {
        let mut x = state(ModelId::ModelII);
        let n = x.len();
        let p = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 + i as f64
            } else {
                0.01 * (i + j) as f64
            }
        });
        let p2 = clone_keyframe(&mut x, &p);
        assert_eq!(x[KF_POS..KF_POS + 6], x[POS..POS + 6]);
        for i in 0..6 {
            for j in 0..n {
                assert!((p2.get(KF_POS + i, j) - p2.get(POS + i, j)).abs() < 1e-12);
            }
        }
    }
}
