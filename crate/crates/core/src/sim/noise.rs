//! Noise generators. Exponential and Laplacian draws use the inverse-CDF
//! transform of a uniform variate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A univariate noise distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian {
        std: f64,
    },
    /// `f(x) = κ·exp(−κx)`, `x ≥ 0`.
    Exponential {
        rate: f64,
    },
    /// `f(x) = exp(−|x − μ|/b) / 2b`.
    Laplacian {
        location: f64,
        scale: f64,
    },
}

impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseKind::None => true,
            NoiseKind::Gaussian { std } => std.is_finite() && std >= 0.0,
            NoiseKind::Exponential { rate } => rate.is_finite() && rate > 0.0,
            NoiseKind::Laplacian { location, scale } => {
                location.is_finite() && scale.is_finite() && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid noise parameters: {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NoiseKind::None | NoiseKind::Gaussian { .. } => 0.0,
            NoiseKind::Exponential { rate } => 1.0 / rate,
            NoiseKind::Laplacian { location, .. } => location,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian { std } => std * std,
            NoiseKind::Exponential { rate } => 1.0 / (rate * rate),
            NoiseKind::Laplacian { scale, .. } => 2.0 * scale * scale,
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// One draw from the distribution as written.
    pub fn sample_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian { std } => std * rng.sample::<f64, _>(StandardNormal),
            NoiseKind::Exponential { rate } => {
                let u: f64 = rng.random();
                -(1.0 - u).ln() / rate
            }
            NoiseKind::Laplacian { location, scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                location - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }

    /// One zero-mean draw: the raw sample minus the distribution mean. The
    /// exponential case stays skewed but stops acting as a constant bias.
    pub fn sample_centered<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_raw(rng) - self.mean()
    }
}

/// `n` i.i.d. raw draws, deterministic in `seed`.
pub fn sample_noise(kind: &NoiseKind, n: usize, seed: u64) -> Result<Vec<f64>> {
    kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| kind.sample_raw(&mut rng)).collect())
}

/// Distribution family shared by every noise channel of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    None,
    Gaussian,
    Exponential,
    Laplacian,
}

impl NoiseFamily {
    /// Member of the family with standard deviation `std` (location 0).
    pub fn with_std(self, std: f64) -> NoiseKind {
        if std == 0.0 {
            return NoiseKind::None;
        }
        match self {
            NoiseFamily::None => NoiseKind::None,
            NoiseFamily::Gaussian => NoiseKind::Gaussian { std },
            NoiseFamily::Exponential => NoiseKind::Exponential { rate: 1.0 / std },
            NoiseFamily::Laplacian => NoiseKind::Laplacian {
                location: 0.0,
                scale: std / std::f64::consts::SQRT_2,
            },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NoiseFamily::None => "None",
            NoiseFamily::Gaussian => "Gaussian",
            NoiseFamily::Exponential => "Exponential",
            NoiseFamily::Laplacian => "Laplacian",
        }
    }
}

/// Where a noise source enters the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    Gyro,
    Accel,
    GyroBiasWalk,
    AccelBiasWalk,
    GpsPosition,
    GpsOrientation,
    VoPosition,
    VoOrientation,
}

/// A noise distribution bound to its entry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub applied_to: NoiseTarget,
}

/// Per-channel standard deviations (per sample) and the shared family.
/// Defaults describe a good IMU and a metre-level GPS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    /// rad/s
    pub gyro_std: f64,
    /// m/s²
    pub accel_std: f64,
    /// rad/s per IMU step
    pub gyro_bias_walk: f64,
    /// m/s² per IMU step
    pub accel_bias_walk: f64,
    /// m
    pub gps_pos_std: f64,
    /// rad
    pub gps_rot_std: f64,
    /// m
    pub vo_pos_std: f64,
    /// rad
    pub vo_rot_std: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Gaussian,
            gyro_std: 0.003,
            accel_std: 0.03,
            gyro_bias_walk: 2e-6,
            accel_bias_walk: 2e-5,
            gps_pos_std: 0.5,
            gps_rot_std: 0.02,
            vo_pos_std: 0.25,
            vo_rot_std: 0.01,
        }
    }
}

impl NoiseModel {
    pub fn with_family(family: NoiseFamily) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    /// Every channel silent.
    pub fn noiseless() -> Self {
        Self {
            family: NoiseFamily::None,
            gyro_std: 0.0,
            accel_std: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            ..Self::default()
        }
    }

    pub fn std_of(&self, target: NoiseTarget) -> f64 {
        match target {
            NoiseTarget::Gyro => self.gyro_std,
            NoiseTarget::Accel => self.accel_std,
            NoiseTarget::GyroBiasWalk => self.gyro_bias_walk,
            NoiseTarget::AccelBiasWalk => self.accel_bias_walk,
            NoiseTarget::GpsPosition => self.gps_pos_std,
            NoiseTarget::GpsOrientation => self.gps_rot_std,
            NoiseTarget::VoPosition => self.vo_pos_std,
            NoiseTarget::VoOrientation => self.vo_rot_std,
        }
    }

    pub fn spec(&self, target: NoiseTarget) -> NoiseSpec {
        NoiseSpec {
            kind: self.family.with_std(self.std_of(target)),
            applied_to: target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        use NoiseTarget::*;
        for t in [
            Gyro,
            Accel,
            GyroBiasWalk,
            AccelBiasWalk,
            GpsPosition,
            GpsOrientation,
            VoPosition,
            VoOrientation,
        ] {
            let s = self.std_of(t);
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::config(format!(
                    "noise std for {t:?} must be finite and >= 0"
                )));
            }
            self.spec(t).kind.validate()?;
        }
        // Measurement noise feeds R, which has to stay invertible.
        if self.gps_pos_std <= 0.0
            || self.gps_rot_std <= 0.0
            || self.vo_pos_std <= 0.0
            || self.vo_rot_std <= 0.0
        {
            return Err(Error::config("measurement noise std must be > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_samples_is_empty() {
        assert!(sample_noise(&NoiseKind::Exponential { rate: 1.0 }, 0, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        for bad in [
            NoiseKind::Exponential { rate: 0.0 },
            NoiseKind::Exponential { rate: -1.0 },
            NoiseKind::Laplacian {
                location: 0.0,
                scale: 0.0,
            },
            NoiseKind::Gaussian { std: f64::NAN },
        ] {
            assert!(
                matches!(sample_noise(&bad, 3, 0), Err(Error::Config(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let k = NoiseKind::Laplacian {
            location: 0.0,
            scale: 1.0,
        };
        assert_eq!(
            sample_noise(&k, 100, 9).unwrap(),
            sample_noise(&k, 100, 9).unwrap()
        );
        assert_ne!(
            sample_noise(&k, 100, 9).unwrap(),
            sample_noise(&k, 100, 10).unwrap()
        );
    }

    #[test]
    fn exponential_draws_are_non_negative() {
        let x = sample_noise(&NoiseKind::Exponential { rate: 3.0 }, 10_000, 4).unwrap();
        assert!(x.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn family_std_matches_requested() {
        for fam in [
            NoiseFamily::Gaussian,
            NoiseFamily::Exponential,
            NoiseFamily::Laplacian,
        ] {
            assert!((fam.with_std(0.7).std() - 0.7).abs() < 1e-12);
        }
    }
}
