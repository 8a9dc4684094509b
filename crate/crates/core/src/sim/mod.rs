//! Ground truth and sensor synthesis.

pub mod noise;
pub mod sensors;
pub mod state;
pub mod trajectory;

use serde::{Deserialize, Serialize};

pub use noise::{sample_noise, NoiseFamily, NoiseKind, NoiseModel, NoiseSpec, NoiseTarget};
pub use sensors::{
    read_sensor_csv, relative_pose, synthesize_sensors, write_sensor_csv, ImuReading, Pose,
    SensorFrame, SensorRates, SensorStream, VoReading, GRAVITY,
};
pub use state::{ModelId, StateVector};
pub use trajectory::{generate_truth, AttitudeProfile, Shape, TrajectorySpec, Truth};

use crate::error::Result;

/// Everything needed to reproduce a clean sensor recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub rates: SensorRates,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn simulate(&self) -> Result<(Truth, SensorStream)> {
        let truth = generate_truth(&self.trajectory, &self.noise, self.seed)?;
        let stream = synthesize_sensors(&truth, &self.noise, &self.rates, self.seed)?;
        Ok((truth, stream))
    }
}
