use serde::{Deserialize, Serialize};

use crate::rotation::{wrap_angle, Vec3};

pub const POS: usize = 0;
pub const ORI: usize = 3;
pub const VEL: usize = 6;
pub const GYRO_BIAS: usize = 9;
pub const ACCEL_BIAS: usize = 12;
pub const KF_POS: usize = 15;
pub const KF_ORI: usize = 18;

/// Which estimator layout is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    /// GPS + IMU, 15 states.
    #[serde(rename = "I", alias = "ModelI", alias = "1")]
    ModelI,
    /// GPS + IMU + keyframe visual odometry, 21 states.
    #[serde(rename = "II", alias = "ModelII", alias = "2")]
    ModelII,
}

impl ModelId {
    pub fn state_dim(self) -> usize {
        match self {
            ModelId::ModelI => 15,
            ModelId::ModelII => 21,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelId::ModelI => "Model I",
            ModelId::ModelII => "Model II",
        }
    }
}

/// UAV state: position, Euler orientation, velocity, gyro and accel biases,
/// and for Model II the keyframe position and orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    data: Vec<f64>,
}

impl StateVector {
    pub fn zeros(model: ModelId) -> Self {
        Self {
            data: vec![0.0; model.state_dim()],
        }
    }

    /// Panics unless `data` has 15 or 21 entries.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(
            data.len() == 15 || data.len() == 21,
            "state must have 15 or 21 entries, got {}",
            data.len()
        );
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn get3(&self, at: usize) -> Vec3 {
        [self.data[at], self.data[at + 1], self.data[at + 2]]
    }

    fn set3(&mut self, at: usize, v: Vec3) {
        self.data[at..at + 3].copy_from_slice(&v);
    }

    pub fn position(&self) -> Vec3 {
        self.get3(POS)
    }

    pub fn orientation(&self) -> Vec3 {
        self.get3(ORI)
    }

    pub fn velocity(&self) -> Vec3 {
        self.get3(VEL)
    }

    pub fn gyro_bias(&self) -> Vec3 {
        self.get3(GYRO_BIAS)
    }

    pub fn accel_bias(&self) -> Vec3 {
        self.get3(ACCEL_BIAS)
    }

    pub fn keyframe_position(&self) -> Option<Vec3> {
        (self.dim() == 21).then(|| self.get3(KF_POS))
    }

    pub fn keyframe_orientation(&self) -> Option<Vec3> {
        (self.dim() == 21).then(|| self.get3(KF_ORI))
    }

    pub fn set_position(&mut self, v: Vec3) {
        self.set3(POS, v);
    }

    pub fn set_orientation(&mut self, v: Vec3) {
        self.set3(ORI, v);
    }

    pub fn set_velocity(&mut self, v: Vec3) {
        self.set3(VEL, v);
    }

    pub fn set_gyro_bias(&mut self, v: Vec3) {
        self.set3(GYRO_BIAS, v);
    }

    pub fn set_accel_bias(&mut self, v: Vec3) {
        self.set3(ACCEL_BIAS, v);
    }

    pub fn set_keyframe(&mut self, p: Vec3, q: Vec3) {
        assert_eq!(self.dim(), 21, "keyframe states exist only in Model II");
        self.set3(KF_POS, p);
        self.set3(KF_ORI, q);
    }

    /// Wraps every Euler-angle component to `(-π, π]`.
    pub fn wrap_angles(&mut self) {
        for i in ORI..ORI + 3 {
            self.data[i] = wrap_angle(self.data[i]);
        }
        if self.dim() == 21 {
            for i in KF_ORI..KF_ORI + 3 {
                self.data[i] = wrap_angle(self.data[i]);
            }
        }
    }

    /// Same state with the layout of `model`; keyframe fields are dropped or
    /// zero-filled.
    pub fn with_model(&self, model: ModelId) -> Self {
        let mut out = Self::zeros(model);
        out.data[..15].copy_from_slice(&self.data[..15]);
        out
    }
}
