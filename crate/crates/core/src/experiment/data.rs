//! Seeded train / validation / test flights and their GPS residues.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::attack::{attack_preset, inject, AttackSchedule, LabeledStream, Pattern};
use crate::ekf::{generate_residues, FilterConfig, ResidueSequence, Source};
use crate::error::Result;
use crate::sim::{ModelId, NoiseFamily, NoiseModel, Scenario, SensorStream, Truth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn text_tag(s: &str) -> u64 {
    // FNV-1a
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn noise_tag(noise: NoiseFamily) -> u64 {
    match noise {
        NoiseFamily::None => 10,
        NoiseFamily::Gaussian => 11,
        NoiseFamily::Exponential => 12,
        NoiseFamily::Laplacian => 13,
    }
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model: ModelId,
    pub noise: NoiseFamily,
    pub attack: String,
    pub seed: u64,
}

impl CellKey {
    /// File-system friendly name.
    pub fn slug(&self) -> String {
        let model = match self.model {
            ModelId::ModelI => "model1",
            ModelId::ModelII => "model2",
        };
        let attack: String = self
            .attack
            .to_lowercase()
            .chars()
            .filter_map(|c| match c {
                'a'..='z' | '0'..='9' => Some(c),
                ' ' => Some('_'),
                _ => None,
            })
            .collect();
        format!("{model}_{:?}_{attack}_s{}", self.noise, self.seed).to_lowercase()
    }
}

pub fn noise_model(cfg: &ExperimentConfig, noise: NoiseFamily) -> NoiseModel {
    NoiseModel {
        family: noise,
        ..cfg.noise.clone()
    }
}

/// Clean flight for a split. It depends on noise and seed only, so every
/// model and attack of a seed flies the same path with the same noise.
pub fn scenario(cfg: &ExperimentConfig, noise: NoiseFamily, seed: u64, split: Split) -> Scenario {
    let mut trajectory = cfg.trajectory.clone();
    trajectory.duration = match split {
        Split::Train => cfg.durations.train,
        Split::Val => cfg.durations.val,
        Split::Test => cfg.durations.test,
    };
    Scenario {
        trajectory,
        noise: noise_model(cfg, noise),
        rates: cfg.rates.clone(),
        seed: mix(mix(seed, noise_tag(noise)), split.tag()),
    }
}

pub struct SplitData {
    pub truth: Truth,
    pub clean: SensorStream,
    pub attacked: LabeledStream,
    pub schedule: AttackSchedule,
}

pub fn attack_schedule(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    attack: &str,
) -> Result<AttackSchedule> {
    let preset = attack_preset(attack)?;
    preset.schedule(
        scenario.trajectory.duration,
        cfg.durations.warmup,
        mix(scenario.seed, text_tag(&preset.name)),
    )
}

pub fn make_split(cfg: &ExperimentConfig, key: &CellKey, split: Split) -> Result<SplitData> {
    let sc = scenario(cfg, key.noise, key.seed, split);
    let (truth, clean) = sc.simulate()?;
    let schedule = attack_schedule(cfg, &sc, &key.attack)?;
    let attacked = inject(&clean, &schedule, mix(sc.seed, text_tag(&key.attack) ^ 1))?;
    Ok(SplitData {
        truth,
        clean,
        attacked,
        schedule,
    })
}

/// Attack intervals of a persistent schedule, empty for sparse ones.
pub fn attack_intervals(schedule: &AttackSchedule) -> Vec<[f64; 2]> {
    match &schedule.pattern {
        Pattern::Persistent { intervals } => intervals.clone(),
        Pattern::Sparse { .. } => Vec::new(),
    }
}

/// GPS residues as detector input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidueSet {
    pub t: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl ResidueSet {
    pub fn gps(seq: &ResidueSequence) -> Self {
        let mut out = Self::default();
        for r in seq.records.iter().filter(|r| r.source == Source::Gps) {
            out.t.push(r.t);
            out.rows.push(r.r.to_vec());
            out.labels.push(r.label);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn attacked_share(&self) -> f64 {
        self.labels.iter().filter(|l| **l).count() as f64 / self.len().max(1) as f64
    }
}

/// Everything the detectors of one cell consume.
pub struct CellData {
    pub train: ResidueSet,
    pub val: ResidueSet,
    pub test: ResidueSet,
    /// Residues of the training flight without the attack.
    pub clean_train: ResidueSet,
}

pub fn filter_config(cfg: &ExperimentConfig, noise: NoiseFamily) -> FilterConfig {
    FilterConfig::matched(&noise_model(cfg, noise))
}

pub fn cell_data(cfg: &ExperimentConfig, key: &CellKey) -> Result<CellData> {
    let filter = filter_config(cfg, key.noise);
    let residues = |stream: &LabeledStream| -> Result<ResidueSet> {
        Ok(ResidueSet::gps(&generate_residues(
            stream, key.model, &filter,
        )?))
    };
    let train = make_split(cfg, key, Split::Train)?;
    let clean_train = residues(&LabeledStream::clean(train.clean))?;
    let train_set = residues(&train.attacked)?;
    let val = residues(&make_split(cfg, key, Split::Val)?.attacked)?;
    let test = residues(&make_split(cfg, key, Split::Test)?.attacked)?;
    Ok(CellData {
        train: train_set,
        val,
        test,
        clean_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.durations.train = 60.0;
        cfg.durations.val = 40.0;
        cfg.durations.test = 40.0;
        cfg
    }

    fn key(attack: &str) -> CellKey {
        CellKey {
            model: ModelId::ModelI,
            noise: NoiseFamily::Exponential,
            attack: attack.into(),
            seed: 3,
        }
    }

    #[test]
    fn seeds_differ_by_split_and_noise() {
        let cfg = small();
        let a = scenario(&cfg, NoiseFamily::Exponential, 0, Split::Train).seed;
        let b = scenario(&cfg, NoiseFamily::Exponential, 0, Split::Test).seed;
        let c = scenario(&cfg, NoiseFamily::Laplacian, 0, Split::Train).seed;
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn splits_are_reproducible_and_sized() {
        let cfg = small();
        let d1 = cell_data(&cfg, &key("Attack I")).unwrap();
        let d2 = cell_data(&cfg, &key("Attack I")).unwrap();
        assert_eq!(d1.test, d2.test);
        assert_eq!(d1.train.len(), 601);
        assert!(d1.clean_train.labels.iter().all(|l| !l));
        assert!(d1.train.attacked_share() > 0.0);
    }

    #[test]
    fn attacks_share_the_clean_flight() {
        let cfg = small();
        let a = make_split(&cfg, &key("Attack I"), Split::Val).unwrap();
        let b = make_split(&cfg, &key("Attack II"), Split::Val).unwrap();
        assert_eq!(a.clean, b.clean);
        assert_ne!(a.attacked.stream, b.attacked.stream);
    }

    #[test]
    fn slug_is_plain() {
        let k = key("Attack II (sparse)");
        assert_eq!(k.slug(), "model1_exponential_attack_ii_sparse_s3");
    }
}
