use super::{check_times, require, AlarmSequence, Calibration, DetectorConfig, Mode};
use crate::error::Result;

/// `S_k = max(0, ρ·S_{k−1} + ‖r̃_k‖² − ν)`, alarm when `S_k > h`. In
/// per-axis mode each axis keeps its own sum and the largest is reported.
pub fn cusum_detect(
    cfg: &DetectorConfig,
    calib: Option<&Calibration>,
    t: &[f64],
    rows: &[Vec<f64>],
) -> Result<AlarmSequence> {
    let DetectorConfig::Cusum {
        drift,
        threshold,
        forgetting,
        mode,
    } = *cfg
    else {
        unreachable!("cusum_detect called with {cfg:?}");
    };
    cfg.validate()?;
    check_times(t, rows)?;
    let calib = require(calib, "CUSUM", rows)?;
    let lanes = match mode {
        Mode::Norm => 1,
        Mode::PerAxis => calib.dim(),
    };
    let mut sums = vec![0.0; lanes];
    let mut out = AlarmSequence {
        t: t.to_vec(),
        ..Default::default()
    };
    for r in rows {
        let z = calib.standardize(r);
        let inc: Vec<f64> = match mode {
            Mode::Norm => vec![z.iter().map(|v| v * v).sum()],
            Mode::PerAxis => z.iter().map(|v| v * v).collect(),
        };
        for (s, x) in sums.iter_mut().zip(&inc) {
            *s = (forgetting * *s + x - drift).max(0.0);
        }
        let stat = sums.iter().copied().fold(0.0, f64::max);
        out.statistic.push(stat);
        out.alarm.push(stat > threshold);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_calibration(m: usize) -> Calibration {
        Calibration {
            mean: vec![0.0; m],
            std: vec![1.0; m],
            covariance: numkit::Matrix::identity(m),
        }
    }

    fn cfg(drift: f64, threshold: f64, forgetting: f64) -> DetectorConfig {
        DetectorConfig::Cusum {
            drift,
            threshold,
            forgetting,
            mode: Mode::Norm,
        }
    }

    #[test]
    fn zero_residues_never_alarm() {
        let rows = vec![vec![0.0; 6]; 50];
        let t: Vec<f64> = (0..50).map(f64::from).collect();
        let a = cusum_detect(&cfg(1.0, 5.0, 1.0), Some(&unit_calibration(6)), &t, &rows).unwrap();
        assert!(a.statistic.iter().all(|s| *s == 0.0));
        assert!(a.alarm.iter().all(|x| !x));
    }

    #[test]
    fn first_alarm_follows_arithmetic_series() {
        // ‖r̃‖² = c each step, so S_k = k·(c − ν)
        let (c, nu, h): (f64, f64, f64) = (4.0, 1.5, 17.0);
        let rows = vec![vec![c.sqrt()]; 40];
        let t: Vec<f64> = (0..40).map(f64::from).collect();
        let a = cusum_detect(&cfg(nu, h, 1.0), Some(&unit_calibration(1)), &t, &rows).unwrap();
        let first = a.alarm.iter().position(|x| *x).unwrap() + 1;
        let expect = (h / (c - nu)).ceil() as usize;
        // S_k > h is strict, so an exact hit needs one more step
        let expect = if (expect as f64) * (c - nu) == h {
            expect + 1
        } else {
            expect
        };
        assert_eq!(first, expect);
    }
}
