use numkit::{Lu, Matrix};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{check_times, require, AlarmSequence, Calibration, DetectorConfig, Mode};
use crate::error::{Error, Result};

/// Upper `confidence` quantile of the chi-squared law with `dof` degrees of
/// freedom.
pub fn chi_squared_threshold(dof: usize, confidence: f64) -> Result<f64> {
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::config(format!("chi-squared dof {dof}: {e}")))?;
    Ok(dist.inverse_cdf(confidence))
}

/// Alarm when `(r − μ)ᵀ Σ⁻¹ (r − μ)` leaves the clean ellipsoid. Per-axis
/// mode tests each standardized axis against the one-dimensional quantile.
pub fn bht_detect(
    cfg: &DetectorConfig,
    calib: Option<&Calibration>,
    t: &[f64],
    rows: &[Vec<f64>],
) -> Result<AlarmSequence> {
    let DetectorConfig::Bht {
        confidence,
        dof,
        mode,
    } = *cfg
    else {
        unreachable!("bht_detect called with {cfg:?}");
    };
    cfg.validate()?;
    check_times(t, rows)?;
    let calib = require(calib, "BHT", rows)?;
    let m = calib.dim();
    let mut out = AlarmSequence {
        t: t.to_vec(),
        ..Default::default()
    };
    match mode {
        Mode::Norm => {
            let threshold = chi_squared_threshold(dof.unwrap_or(m), confidence)?;
            let lu = match Lu::factor(&calib.covariance) {
                Ok(lu) => lu,
                Err(_) => {
                    log::warn!("residue covariance is singular, regularizing with 1e-9·I");
                    Lu::factor(&(&calib.covariance + &Matrix::identity(m).scale(1e-9)))?
                }
            };
            for r in rows {
                let d: Vec<f64> = r.iter().zip(&calib.mean).map(|(x, mu)| x - mu).collect();
                let w = lu.solve(&Matrix::column(&d))?;
                let stat: f64 = d.iter().zip(w.data()).map(|(a, b)| a * b).sum();
                out.statistic.push(stat);
                out.alarm.push(stat > threshold);
            }
        }
        Mode::PerAxis => {
            let threshold = chi_squared_threshold(1, confidence)?;
            for r in rows {
                let stat = calib
                    .standardize(r)
                    .iter()
                    .map(|v| v * v)
                    .fold(0.0, f64::max);
                out.statistic.push(stat);
                out.alarm.push(stat > threshold);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Regularized lower incomplete gamma by its power series.
    fn lower_gamma_p(a: f64, x: f64) -> f64 {
        let mut term = 1.0 / a;
        let mut sum = term;
        for n in 1..500 {
            term *= x / (a + n as f64);
            sum += term;
        }
        let ln_gamma_a = statrs::function::gamma::ln_gamma(a);
        (sum.ln() + a * x.ln() - x - ln_gamma_a).exp()
    }

    /// Newton inversion of the chi-squared CDF.
    fn chi2_quantile(dof: f64, p: f64) -> f64 {
        let a = dof / 2.0;
        let mut x = dof;
        for _ in 0..100 {
            let cdf = lower_gamma_p(a, x / 2.0);
            let pdf = ((a - 1.0) * (x / 2.0).ln() - x / 2.0 - statrs::function::gamma::ln_gamma(a))
                .exp()
                / 2.0;
            x -= (cdf - p) / pdf;
        }
        x
    }

    #[test]
    fn threshold_matches_series_inversion() {
        let t = chi_squared_threshold(6, 0.99).unwrap();
        assert!((t - chi2_quantile(6.0, 0.99)).abs() < 1e-8);
        assert!((t - 16.81).abs() < 5e-3);
    }

    #[test]
    fn zero_residue_is_inside() {
        let c = Calibration::fit(&[vec![1.0, 0.0], vec![-1.0, 0.5], vec![0.0, -0.5]]).unwrap();
        let a = bht_detect(
            &DetectorConfig::default_bht(),
            Some(&c),
            &[0.0],
            &[c.mean.clone()],
        )
        .unwrap();
        assert_eq!(a.statistic[0], 0.0);
        assert!(!a.alarm[0]);
    }

    #[test]
    fn clean_gaussian_false_alarm_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                (0..6)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let calib = Calibration {
            mean: vec![0.0; 6],
            std: vec![1.0; 6],
            covariance: Matrix::identity(6),
        };
        let t: Vec<f64> = (0..rows.len()).map(|k| k as f64).collect();
        let a = bht_detect(&DetectorConfig::default_bht(), Some(&calib), &t, &rows).unwrap();
        let rate = a.alarm.iter().filter(|x| **x).count() as f64 / rows.len() as f64;
        assert!((rate - 0.01).abs() <= 0.005, "rate {rate}");
    }

    #[test]
    fn singular_covariance_is_regularized() {
        let calib = Calibration {
            mean: vec![0.0; 2],
            std: vec![1.0; 2],
            covariance: Matrix::zeros(2, 2),
        };
        let a = bht_detect(
            &DetectorConfig::default_bht(),
            Some(&calib),
            &[0.0],
            &[vec![1e-6, 0.0]],
        )
        .unwrap();
        assert!(a.statistic[0].is_finite());
    }
}
