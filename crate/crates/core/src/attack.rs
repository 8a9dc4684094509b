//! False-data injection on GPS channels with sparse or persistent timing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{wrap3, Vec3};
use crate::sim::SensorStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    GpsPosition,
    GpsOrientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Pattern {
    /// Each GPS frame starts a hit with probability `p_hit`; a hit covers
    /// `burst` consecutive GPS frames.
    Sparse {
        p_hit: f64,
        #[serde(default = "one")]
        burst: usize,
    },
    /// Attack active on every GPS frame with `t_start <= t <= t_end`.
    Persistent { intervals: Vec<[f64; 2]> },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackShape {
    ConstantOffset,
    /// Linear ramp over the first 10% of each interval.
    Ramp,
    /// Sign drawn per GPS frame.
    RandomSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub target: AttackTarget,
    pub pattern: Pattern,
    /// m or rad.
    pub magnitude: f64,
    pub shape: AttackShape,
    /// Offset direction. `None` draws a random horizontal unit vector per
    /// interval (persistent) or per hit (sparse).
    #[serde(default)]
    pub direction: Option<Vec3>,
}

impl AttackSchedule {
    pub fn validate(&self, duration: f64) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::config("attack magnitude must be finite and >= 0"));
        }
        if let Some(d) = self.direction {
            if !d.iter().all(|v| v.is_finite()) || d.iter().all(|v| *v == 0.0) {
                return Err(Error::config(
                    "attack direction must be finite and non-zero",
                ));
            }
        }
        match &self.pattern {
            Pattern::Sparse { p_hit, burst } => {
                if !(0.0..=1.0).contains(p_hit) || *burst == 0 {
                    return Err(Error::config(
                        "sparse attack needs 0 <= p_hit <= 1 and burst >= 1",
                    ));
                }
            }
            Pattern::Persistent { intervals } => {
                let mut sorted = intervals.clone();
                sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
                for w in &sorted {
                    if !(w[0] <= w[1] && w[0] >= 0.0 && w[1] <= duration + 1e-9) {
                        return Err(Error::config(format!(
                            "attack interval {w:?} outside [0, {duration}]"
                        )));
                    }
                }
                if sorted.windows(2).any(|p| p[1][0] <= p[0][1]) {
                    return Err(Error::config("attack intervals overlap"));
                }
            }
        }
        Ok(())
    }

    /// Schedule with the same timing and no effect.
    pub fn silenced(&self) -> Self {
        Self {
            magnitude: 0.0,
            ..self.clone()
        }
    }
}

/// Disjoint intervals covering about `fraction` of `[start, duration]`,
/// each lasting between `min_len` and `max_len` seconds and separated by
/// at least `min_gap`.
pub fn random_intervals(
    duration: f64,
    start: f64,
    fraction: f64,
    min_len: f64,
    max_len: f64,
    min_gap: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    if !(0.0..1.0).contains(&fraction) || !(0.0 < min_len && min_len <= max_len) || min_gap < 0.0 {
        return Err(Error::config("invalid interval generator parameters"));
    }
    let span = duration - start;
    if span <= 0.0 || fraction == 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mean_len = 0.5 * (min_len + max_len);
    let mut n = (fraction * span / mean_len).round().max(1.0) as usize;
    let mut lens: Vec<f64>;
    loop {
        lens = (0..n)
            .map(|_| rng.random_range(min_len..=max_len))
            .collect();
        // rescale toward the requested coverage, staying inside the length band
        let want = fraction * span;
        let total: f64 = lens.iter().sum();
        for l in &mut lens {
            *l = (*l * want / total).clamp(min_len, max_len);
        }
        let slack = span - lens.iter().sum::<f64>() - (n + 1) as f64 * min_gap;
        if slack >= 0.0 {
            break;
        }
        if n == 1 {
            return Err(Error::config(
                "run too short for the requested attack intervals",
            ));
        }
        n -= 1;
    }
    let slack = span - lens.iter().sum::<f64>() - (n + 1) as f64 * min_gap;
    let weights: Vec<f64> = (0..=n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let wsum: f64 = weights.iter().sum();
    let mut t = start;
    let mut out = Vec::with_capacity(n);
    for (i, len) in lens.iter().enumerate() {
        t += min_gap + slack * weights[i] / wsum;
        out.push([t, t + len]);
        t += len;
    }
    Ok(out)
}

/// A sensor stream after injection, with one label per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub stream: SensorStream,
    /// `true` iff a non-zero offset was added at that frame.
    pub labels: Vec<bool>,
}

impl LabeledStream {
    pub fn clean(stream: SensorStream) -> Self {
        let labels = vec![false; stream.len()];
        Self { stream, labels }
    }

    pub fn attacked_fraction_of_gps(&self) -> f64 {
        let gps: Vec<bool> = self
            .stream
            .frames
            .iter()
            .zip(&self.labels)
            .filter(|(f, _)| f.gps.is_some())
            .map(|(_, l)| *l)
            .collect();
        gps.iter().filter(|l| **l).count() as f64 / gps.len().max(1) as f64
    }
}

fn random_horizontal(rng: &mut ChaCha8Rng) -> Vec3 {
    let a = rng.random_range(-PI..PI);
    [a.cos(), a.sin(), 0.0]
}

fn unit(d: Vec3) -> Vec3 {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    d.map(|v| v / n)
}

/// Adds the scheduled offsets to the targeted GPS channel. Every other
/// field of every frame is left untouched.
pub fn inject(
    stream: &SensorStream,
    schedule: &AttackSchedule,
    seed: u64,
) -> Result<LabeledStream> {
    if !stream.frames.iter().any(|f| f.gps.is_some()) {
        return Err(Error::config(
            "attack targets GPS but the stream has no GPS frames",
        ));
    }
    let duration = stream.frames.last().map_or(0.0, |f| f.t);
    schedule.validate(duration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(8);
    let mut out = stream.clone();
    let mut labels = vec![false; stream.len()];
    let fixed_dir = schedule.direction.map(unit);

    // (scale, direction) for each GPS frame
    let mut burst_left = 0usize;
    let mut burst_dir = [1.0, 0.0, 0.0];
    let mut interval_dirs: Vec<Vec3> = Vec::new();
    if let Pattern::Persistent { intervals } = &schedule.pattern {
        interval_dirs = intervals
            .iter()
            .map(|_| fixed_dir.unwrap_or_else(|| random_horizontal(&mut rng)))
            .collect();
    }
    for (k, frame) in out.frames.iter_mut().enumerate() {
        let Some(gps) = frame.gps.as_mut() else {
            continue;
        };
        let t = frame.t;
        let (mut scale, dir) = match &schedule.pattern {
            Pattern::Sparse { p_hit, burst } => {
                if burst_left == 0 && rng.random::<f64>() < *p_hit {
                    burst_left = *burst;
                    burst_dir = fixed_dir.unwrap_or_else(|| random_horizontal(&mut rng));
                }
                if burst_left > 0 {
                    burst_left -= 1;
                    (1.0, burst_dir)
                } else {
                    (0.0, burst_dir)
                }
            }
            Pattern::Persistent { intervals } => {
                match intervals.iter().position(|w| w[0] <= t && t <= w[1]) {
                    Some(i) => {
                        let w = intervals[i];
                        let s = match schedule.shape {
                            AttackShape::Ramp if w[1] > w[0] => {
                                ((t - w[0]) / (0.1 * (w[1] - w[0]))).min(1.0)
                            }
                            _ => 1.0,
                        };
                        (s, interval_dirs[i])
                    }
                    None => (0.0, [0.0; 3]),
                }
            }
        };
        if scale > 0.0 && schedule.shape == AttackShape::RandomSign && rng.random::<bool>() {
            scale = -scale;
        }
        let d = dir.map(|v| v * scale * schedule.magnitude);
        if d.iter().all(|v| *v == 0.0) {
            continue;
        }
        labels[k] = true;
        match schedule.target {
            AttackTarget::GpsPosition => {
                for i in 0..3 {
                    gps.position[i] += d[i];
                }
            }
            AttackTarget::GpsOrientation => {
                gps.orientation = wrap3([0, 1, 2].map(|i| gps.orientation[i] + d[i]));
            }
        }
    }
    Ok(LabeledStream {
        stream: out,
        labels,
    })
}

/// A named attack configuration; timing is generated per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPreset {
    pub name: String,
    pub magnitude: f64,
    pub persistent: bool,
    /// Attacked share of GPS frames.
    pub fraction: f64,
    /// s
    pub min_len: f64,
    /// s
    pub max_len: f64,
}

impl AttackPreset {
    /// Schedule for a run of `duration` seconds. The first `warmup`
    /// seconds stay clean.
    pub fn schedule(&self, duration: f64, warmup: f64, seed: u64) -> Result<AttackSchedule> {
        let pattern = if self.persistent {
            Pattern::Persistent {
                intervals: random_intervals(
                    duration,
                    warmup,
                    self.fraction,
                    self.min_len,
                    self.max_len,
                    3.0,
                    seed,
                )?,
            }
        } else {
            Pattern::Sparse {
                p_hit: self.fraction,
                burst: 1,
            }
        };
        Ok(AttackSchedule {
            target: AttackTarget::GpsPosition,
            pattern,
            magnitude: self.magnitude,
            shape: AttackShape::ConstantOffset,
            direction: None,
        })
    }

    /// Same magnitude with the other timing pattern.
    pub fn sparse(&self) -> Self {
        Self {
            name: format!("{} (sparse)", self.name),
            persistent: false,
            ..self.clone()
        }
    }
}

/// Named presets: "Attack I" (5 m bursts) and "Attack II" (1 m bursts), each
/// also in a sparse variant.
pub fn attack_catalog() -> Vec<AttackPreset> {
    let base = |name: &str, magnitude: f64| AttackPreset {
        name: name.to_string(),
        magnitude,
        persistent: true,
        fraction: 0.12,
        min_len: 2.0,
        max_len: 5.0,
    };
    let one = base("Attack I", 5.0);
    let two = base("Attack II", 1.0);
    vec![one.sparse(), two.sparse(), one, two]
}

pub fn attack_preset(name: &str) -> Result<AttackPreset> {
    attack_catalog()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name.trim()))
        .ok_or_else(|| Error::config(format!("unknown attack preset '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{NoiseModel, Scenario, TrajectorySpec};

    fn clean(duration: f64) -> SensorStream {
        Scenario {
            trajectory: TrajectorySpec::figure_eight(duration),
            noise: NoiseModel::default(),
            rates: Default::default(),
            seed: 5,
        }
        .simulate()
        .unwrap()
        .1
    }

    fn x_offset(intervals: Vec<[f64; 2]>, magnitude: f64) -> AttackSchedule {
        AttackSchedule {
            target: AttackTarget::GpsPosition,
            pattern: Pattern::Persistent { intervals },
            magnitude,
            shape: AttackShape::ConstantOffset,
            direction: Some([1.0, 0.0, 0.0]),
        }
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let s = clean(10.0);
        let out = inject(&s, &x_offset(vec![[2.0, 4.0]], 0.0), 1).unwrap();
        assert_eq!(out.stream, s);
        assert!(out.labels.iter().all(|l| !l));
    }

    #[test]
    fn persistent_window_offsets_gps_x_exactly() {
        let s = clean(10.0);
        let out = inject(&s, &x_offset(vec![[2.0, 4.0]], 5.0), 1).unwrap();
        let mut expected = 0;
        for (k, (a, b)) in s.frames.iter().zip(&out.stream.frames).enumerate() {
            assert_eq!(a.imu, b.imu);
            assert_eq!(a.vo, b.vo);
            match (a.gps, b.gps) {
                (Some(ga), Some(gb)) if (2.0..=4.0).contains(&a.t) => {
                    expected += 1;
                    assert_eq!(gb.position[0], ga.position[0] + 5.0);
                    assert_eq!(gb.position[1], ga.position[1]);
                    assert_eq!(gb.orientation, ga.orientation);
                    assert!(out.labels[k]);
                }
                (ga, gb) => {
                    assert_eq!(ga, gb);
                    assert!(!out.labels[k]);
                }
            }
        }
        // GPS at 10 Hz: t = 2.0, 2.1, ..., 4.0
        assert_eq!(expected, 21);
        assert_eq!(out.labels.iter().filter(|l| **l).count(), expected);
    }

    #[test]
    fn ramp_reaches_full_offset_after_tenth_of_interval() {
        let s = clean(10.0);
        let mut sched = x_offset(vec![[2.0, 7.0]], 2.0);
        sched.shape = AttackShape::Ramp;
        let out = inject(&s, &sched, 1).unwrap();
        for (a, b) in s.frames.iter().zip(&out.stream.frames) {
            if let (Some(ga), Some(gb)) = (a.gps, b.gps) {
                let d = gb.position[0] - ga.position[0];
                if (2.0..=7.0).contains(&a.t) {
                    let want = 2.0 * ((a.t - 2.0) / 0.5).min(1.0);
                    assert!((d - want).abs() < 1e-9, "t={} d={d}", a.t);
                }
            }
        }
    }

    #[test]
    fn overlapping_intervals_are_rejected() {
        let s = clean(10.0);
        let bad = x_offset(vec![[1.0, 3.0], [2.5, 4.0]], 1.0);
        assert!(matches!(inject(&s, &bad, 0), Err(Error::Config(_))));
        let outside = x_offset(vec![[8.0, 12.0]], 1.0);
        assert!(inject(&s, &outside, 0).is_err());
    }

    #[test]
    fn catalog_lookup() {
        let one = attack_preset("Attack I").unwrap();
        assert!(one.persistent);
        assert_eq!(one.magnitude, 5.0);
        let two = attack_preset("attack ii").unwrap();
        assert!(two.persistent);
        assert_eq!(two.magnitude, 1.0);
        assert!(!attack_preset("Attack II (sparse)").unwrap().persistent);
        assert!(matches!(attack_preset("Attack III"), Err(Error::Config(_))));
    }

    #[test]
    fn generated_intervals_hit_the_requested_fraction() {
        for seed in 0..20 {
            let iv = random_intervals(600.0, 10.0, 0.12, 2.0, 5.0, 3.0, seed).unwrap();
            let covered: f64 = iv.iter().map(|w| w[1] - w[0]).sum();
            assert!(
                (covered / 590.0 - 0.12).abs() < 0.01,
                "seed {seed}: {covered}"
            );
            assert!(iv.windows(2).all(|p| p[1][0] - p[0][1] >= 3.0 - 1e-9));
            assert!(iv
                .iter()
                .all(|w| w[1] - w[0] >= 2.0 - 1e-9 && w[1] - w[0] <= 5.0 + 1e-9));
            assert!(iv.first().unwrap()[0] >= 10.0 && iv.last().unwrap()[1] <= 600.0);
        }
    }
}
