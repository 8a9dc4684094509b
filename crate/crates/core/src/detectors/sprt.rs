use super::{check_times, require, AlarmSequence, Calibration, DetectorConfig, Mode};
use crate::error::Result;

/// Wald's test between `N(μ₀, σ²)` and `N(μ₁, σ²)` on a per-step
/// statistic: `‖r̃‖²` in norm mode, each standardized axis otherwise. The
/// log-likelihood ratio restarts after every decision; a step is alarmed
/// while the latest decision is H₁. The reported statistic is the running
/// ratio (largest lane in per-axis mode).
pub fn sprt_detect(
    cfg: &DetectorConfig,
    calib: Option<&Calibration>,
    t: &[f64],
    rows: &[Vec<f64>],
) -> Result<AlarmSequence> {
    let DetectorConfig::Sprt {
        mu0,
        mu1,
        sigma,
        alpha,
        beta,
        mode,
    } = *cfg
    else {
        unreachable!("sprt_detect called with {cfg:?}");
    };
    cfg.validate()?;
    check_times(t, rows)?;
    let calib = require(calib, "SPRT", rows)?;
    let upper = ((1.0 - beta) / alpha).ln();
    let lower = (beta / (1.0 - alpha)).ln();
    let lanes = match mode {
        Mode::Norm => 1,
        Mode::PerAxis => calib.dim(),
    };
    let mut llr = vec![0.0; lanes];
    let mut decided_h1 = vec![false; lanes];
    let mut out = AlarmSequence {
        t: t.to_vec(),
        ..Default::default()
    };
    let var2 = 2.0 * sigma * sigma;
    for r in rows {
        let z = calib.standardize(r);
        let obs: Vec<f64> = match mode {
            Mode::Norm => vec![z.iter().map(|v| v * v).sum()],
            Mode::PerAxis => z,
        };
        let mut stat = f64::NEG_INFINITY;
        for i in 0..lanes {
            let x = obs[i];
            llr[i] += ((x - mu0).powi(2) - (x - mu1).powi(2)) / var2;
            stat = stat.max(llr[i]);
            if llr[i] >= upper {
                decided_h1[i] = true;
                llr[i] = 0.0;
            } else if llr[i] <= lower {
                decided_h1[i] = false;
                llr[i] = 0.0;
            }
        }
        out.statistic.push(stat);
        out.alarm.push(decided_h1.iter().any(|d| *d));
    }
    Ok(out)
}
