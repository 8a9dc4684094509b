//! Grid cells: calibrate and tune the classic detectors, train the
//! transformer detector, score everything on the test split.

use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::{cell_data, mix, CellData, CellKey};
use super::reference::{reference, ReferencePrf};
use crate::detectors::{run_detector, tune_for_f1, AlarmSequence, Calibration, DetectorConfig};
use crate::error::{Error, Result};
use crate::metrics::{best_f1_threshold, MetricsReport, Roc};
use crate::quadformer::{
    quantile, train, ModelConfig, Quadformer, ScoreSequence, ThresholdPolicy, TrainingLog,
    Validation,
};
use crate::sim::{ModelId, NoiseFamily};

pub const QUADFORMER: &str = "QUADFormer";
/// The transformer scored by temporal-contextual disparity alone.
pub const QUADFORMER_TCD: &str = "QUADFormer (TCD only)";

/// ROC curves kept in reports are thinned to this many points.
pub const ROC_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    #[serde(flatten)]
    pub key: CellKey,
    #[serde(flatten)]
    pub status: CellStatus,
    pub reports: Vec<MetricsReport>,
    /// Classic detectors after threshold tuning.
    pub tuned: Vec<DetectorConfig>,
    pub quadformer_threshold: Option<f64>,
    pub training: Option<TrainingLog>,
    pub seconds: f64,
}

impl CellResult {
    pub fn report(&self, detector: &str) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.detector == detector)
    }

    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }
}

/// Test-split outputs kept for plotting.
pub struct CellArtifacts {
    pub data: CellData,
    pub detector: Quadformer,
    pub scores: ScoreSequence,
    pub alarms: Vec<(String, AlarmSequence)>,
}

fn thin(roc: &mut Option<Roc>) {
    if let Some(r) = roc.as_mut() {
        let n = r.points.len();
        if n > ROC_POINTS {
            let step = (n - 1) as f64 / (ROC_POINTS - 1) as f64;
            r.points = (0..ROC_POINTS)
                .map(|i| r.points[((i as f64 * step).round() as usize).min(n - 1)])
                .collect();
        }
    }
}

fn at<T>(stage: &str, r: Result<T>) -> Result<T, (String, Error)> {
    r.map_err(|e| (stage.to_string(), e))
}

/// Transformer settings for one cell; the seed follows the cell seed.
pub fn cell_model_config(cfg: &ExperimentConfig, key: &CellKey) -> ModelConfig {
    ModelConfig {
        seed: mix(cfg.model.seed, key.seed),
        ..cfg.model.clone()
    }
}

fn run_cell_inner(
    cfg: &ExperimentConfig,
    key: &CellKey,
    abort_dir: Option<&Path>,
    partial: &mut CellResult,
) -> Result<CellArtifacts, (String, Error)> {
    let data = at("data", cell_data(cfg, key))?;
    let calib = at(
        "calibration",
        Calibration::fit_prefix(&data.clean_train.rows, cfg.calibration_fraction),
    )?;
    let mut alarms = Vec::new();
    for det in &cfg.detectors {
        let tuned = if cfg.tune_detectors {
            at(
                "tuning",
                tune_for_f1(det, &calib, &data.val.t, &data.val.rows, &data.val.labels),
            )?
            .0
        } else {
            det.clone()
        };
        let a = at(
            "detection",
            run_detector(&tuned, Some(&calib), &data.test.t, &data.test.rows),
        )?;
        let mut rep = at(
            "metrics",
            MetricsReport::new(
                tuned.name(),
                &a.alarm,
                Some(&a.statistic),
                &data.test.labels,
            ),
        )?;
        thin(&mut rep.roc);
        partial.reports.push(rep);
        partial.tuned.push(tuned.clone());
        alarms.push((tuned.name().to_string(), a));
    }

    let mc = cell_model_config(cfg, key);
    let abort = abort_dir.map(|d| d.join(format!("{}_abort.qdfm", key.slug())));
    let (detector, log) = at(
        "training",
        train(
            &mc,
            &data.train.rows,
            &data.train.labels,
            Some(Validation {
                rows: &data.val.rows,
                labels: &data.val.labels,
            }),
            abort.as_deref(),
        ),
    )?;
    partial.training = Some(log);
    partial.quadformer_threshold = Some(detector.threshold);
    let scores = detector.detect(&data.test.t, &data.test.rows);
    let mut rep = at(
        "metrics",
        MetricsReport::new(
            QUADFORMER,
            &scores.alarm,
            Some(&scores.score),
            &data.test.labels,
        ),
    )?;
    thin(&mut rep.roc);
    partial.reports.push(rep);

    let val_disparity = detector.raw_scores(&data.val.rows).disparity;
    let tcd_threshold = match mc.threshold {
        ThresholdPolicy::Quantile(q) => quantile(&val_disparity, q),
        ThresholdPolicy::BestF1 => at(
            "metrics",
            best_f1_threshold(&val_disparity, &data.val.labels),
        )?
        .map(|b| b.0)
        .unwrap_or_else(|| quantile(&val_disparity, 1.0 - data.val.attacked_share())),
        ThresholdPolicy::Fixed(_) => quantile(&val_disparity, 1.0 - data.val.attacked_share()),
    };
    let tcd_alarm: Vec<bool> = scores
        .disparity
        .iter()
        .map(|s| *s > tcd_threshold)
        .collect();
    let mut rep = at(
        "metrics",
        MetricsReport::new(
            QUADFORMER_TCD,
            &tcd_alarm,
            Some(&scores.disparity),
            &data.test.labels,
        ),
    )?;
    thin(&mut rep.roc);
    partial.reports.push(rep);

    Ok(CellArtifacts {
        data,
        detector,
        scores,
        alarms,
    })
}

/// Runs one cell. Failures are recorded in the result with the failing
/// stage; reports finished before the failure are kept.
pub fn run_cell(
    cfg: &ExperimentConfig,
    key: &CellKey,
    abort_dir: Option<&Path>,
) -> (CellResult, Option<CellArtifacts>) {
    let start = Instant::now();
    let mut result = CellResult {
        key: key.clone(),
        status: CellStatus::Ok,
        reports: Vec::new(),
        tuned: Vec::new(),
        quadformer_threshold: None,
        training: None,
        seconds: 0.0,
    };
    let artifacts = match run_cell_inner(cfg, key, abort_dir, &mut result) {
        Ok(a) => Some(a),
        Err((stage, e)) => {
            warn!("cell {} failed at {stage}: {e}", key.slug());
            result.status = CellStatus::Failed {
                stage,
                error: e.to_string(),
            };
            None
        }
    };
    result.seconds = start.elapsed().as_secs_f64();
    (result, artifacts)
}

pub fn grid_keys(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for &model in &cfg.models {
        for &noise in &cfg.noises {
            for attack in &cfg.attacks {
                for &seed in &cfg.seeds {
                    keys.push(CellKey {
                        model,
                        noise,
                        attack: attack.clone(),
                        seed,
                    });
                }
            }
        }
    }
    keys
}

/// Median over seeds for one detector in one (model, noise, attack) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelId,
    pub noise: NoiseFamily,
    pub attack: String,
    pub detector: String,
    pub seeds: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub reference_precision: Option<f64>,
    pub reference_recall: Option<f64>,
    pub reference_f1: Option<f64>,
}

/// Transformer against the best classic detector in one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub model: ModelId,
    pub noise: NoiseFamily,
    pub attack: String,
    pub seeds: usize,
    pub quadformer_f1: f64,
    pub best_baseline_f1: f64,
    /// Median over seeds of the per-seed F1 gap.
    pub median_margin: f64,
    /// Seeds where the transformer's F1 is strictly higher.
    pub wins: usize,
}

impl Dominance {
    /// Median F1 above the best baseline's, with the median per-seed gap at
    /// least `margin`.
    pub fn holds(&self, margin: f64) -> bool {
        self.seeds > 0 && self.quadformer_f1 > self.best_baseline_f1 && self.median_margin >= margin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
    pub dominance: Vec<Dominance>,
    pub failed_cells: usize,
    pub seconds: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

type Group = (ModelId, NoiseFamily, String);

fn groups(cells: &[CellResult]) -> Vec<(Group, Vec<&CellResult>)> {
    let mut out: Vec<(Group, Vec<&CellResult>)> = Vec::new();
    for c in cells {
        let g = (c.key.model, c.key.noise, c.key.attack.clone());
        match out.iter_mut().find(|(k, _)| *k == g) {
            Some((_, v)) => v.push(c),
            None => out.push((g, vec![c])),
        }
    }
    out
}

pub fn summarize(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for ((model, noise, attack), members) in groups(cells) {
        let mut names: Vec<&str> = Vec::new();
        for c in &members {
            for r in &c.reports {
                if !names.contains(&r.detector.as_str()) {
                    names.push(&r.detector);
                }
            }
        }
        for name in names {
            let reps: Vec<&MetricsReport> = members.iter().filter_map(|c| c.report(name)).collect();
            let pick = |f: &dyn Fn(&MetricsReport) -> f64| {
                median(&mut reps.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let aucs: Vec<f64> = reps.iter().filter_map(|r| r.auc()).collect();
            let refp: Option<ReferencePrf> = reference(model, noise, &attack, name);
            rows.push(SummaryRow {
                model,
                noise,
                attack: attack.clone(),
                detector: name.to_string(),
                seeds: reps.len(),
                precision: pick(&|r| r.prf.precision),
                recall: pick(&|r| r.prf.recall),
                f1: pick(&|r| r.prf.f1),
                auc: (!aucs.is_empty()).then(|| median(&mut aucs.clone())),
                reference_precision: refp.map(|p| p.precision),
                reference_recall: refp.map(|p| p.recall),
                reference_f1: refp.map(|p| p.f1),
            });
        }
    }
    rows
}

pub fn dominance(cells: &[CellResult], baselines: &[&str]) -> Vec<Dominance> {
    groups(cells)
        .into_iter()
        .map(|((model, noise, attack), members)| {
            let mut q = Vec::new();
            let mut b = Vec::new();
            let mut gaps = Vec::new();
            let mut wins = 0;
            for c in members.iter().filter(|c| c.is_ok()) {
                let Some(qf) = c.report(QUADFORMER) else {
                    continue;
                };
                let best = baselines
                    .iter()
                    .filter_map(|n| c.report(n))
                    .map(|r| r.prf.f1)
                    .fold(0.0, f64::max);
                q.push(qf.prf.f1);
                b.push(best);
                gaps.push(qf.prf.f1 - best);
                if qf.prf.f1 > best {
                    wins += 1;
                }
            }
            Dominance {
                model,
                noise,
                attack,
                seeds: q.len(),
                quadformer_f1: median(&mut q),
                best_baseline_f1: median(&mut b),
                median_margin: median(&mut gaps),
                wins,
            }
        })
        .collect()
}

/// Runs every cell (in parallel) and merges the results in grid order.
/// With `out_dir`, per-cell artifacts are written under `cells/`.
pub fn run_grid(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<GridReport> {
    cfg.validate()?;
    let start = Instant::now();
    let keys = grid_keys(cfg);
    let cell_dir = out_dir.map(|d| d.join("cells"));
    if let Some(d) = &cell_dir {
        std::fs::create_dir_all(d)?;
    }
    let cells: Vec<CellResult> = keys
        .par_iter()
        .map(|key| {
            let (res, art) = run_cell(cfg, key, cell_dir.as_deref());
            info!(
                "{}: {:.1}s{}",
                key.slug(),
                res.seconds,
                res.report(QUADFORMER)
                    .map_or(String::new(), |r| format!(", F1 {:.3}", r.prf.f1))
            );
            if let (Some(dir), Some(art)) = (&cell_dir, art) {
                if let Err(e) = write_cell_artifacts(&dir.join(key.slug()), &res, &art) {
                    warn!("could not write artifacts for {}: {e}", key.slug());
                }
            }
            res
        })
        .collect();
    let names: Vec<&str> = cfg.detectors.iter().map(|d| d.name()).collect();
    let report = GridReport {
        config: cfg.clone(),
        summary: summarize(&cells),
        dominance: dominance(&cells, &names),
        failed_cells: cells.iter().filter(|c| !c.is_ok()).count(),
        cells,
        seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(d) = out_dir {
        report.write(d)?;
    }
    Ok(report)
}

pub fn write_cell_artifacts(dir: &Path, res: &CellResult, art: &CellArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    art.scores.write_csv(&dir.join("quadformer_scores.csv"))?;
    for (name, a) in &art.alarms {
        a.write_csv(&dir.join(format!("{}_alarms.csv", name.to_lowercase())))?;
    }
    if let Some(log) = &res.training {
        log.write_csv(&dir.join("training_log.csv"))?;
    }
    let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
    w.write_record(["t", "label"])?;
    for (t, l) in art.data.test.t.iter().zip(&art.data.test.labels) {
        w.write_record([t.to_string(), u8::from(*l).to_string()])?;
    }
    w.flush()?;
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&res.reports)?,
    )?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.4}"))
}

impl GridReport {
    /// Writes `manifest.json`, `grid_table.csv` (medians with reference
    /// values) and `grid_cells.csv` (one row per cell and detector).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        let mut w = csv::Writer::from_path(dir.join("grid_table.csv"))?;
        w.write_record([
            "model",
            "noise",
            "attack",
            "detector",
            "seeds",
            "precision",
            "recall",
            "f1",
            "auc",
            "reference_precision",
            "reference_recall",
            "reference_f1",
        ])?;
        for r in &self.summary {
            w.write_record([
                format!("{:?}", r.model),
                format!("{:?}", r.noise),
                r.attack.clone(),
                r.detector.clone(),
                r.seeds.to_string(),
                format!("{:.4}", r.precision),
                format!("{:.4}", r.recall),
                format!("{:.4}", r.f1),
                opt(r.auc),
                opt(r.reference_precision),
                opt(r.reference_recall),
                opt(r.reference_f1),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("grid_cells.csv"))?;
        w.write_record([
            "model",
            "noise",
            "attack",
            "seed",
            "status",
            "detector",
            "precision",
            "recall",
            "f1",
            "auc",
            "tp",
            "fp",
            "tn",
            "fn",
        ])?;
        for c in &self.cells {
            let status = match &c.status {
                CellStatus::Ok => "ok".to_string(),
                CellStatus::Failed { stage, .. } => format!("failed:{stage}"),
            };
            for r in &c.reports {
                let k = &r.prf.confusion;
                w.write_record([
                    format!("{:?}", c.key.model),
                    format!("{:?}", c.key.noise),
                    c.key.attack.clone(),
                    c.key.seed.to_string(),
                    status.clone(),
                    r.detector.clone(),
                    format!("{:.4}", r.prf.precision),
                    format!("{:.4}", r.prf.recall),
                    format!("{:.4}", r.prf.f1),
                    opt(r.auc()),
                    k.tp.to_string(),
                    k.fp.to_string(),
                    k.tn.to_string(),
                    k.fn_.to_string(),
                ])?;
            }
            if c.reports.is_empty() {
                w.write_record([
                    format!("{:?}", c.key.model),
                    format!("{:?}", c.key.noise),
                    c.key.attack.clone(),
                    c.key.seed.to_string(),
                    status.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Plain-text table for the terminal.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<4} {:<12} {:<20} {:<22} {:>6} {:>6} {:>6} {:>6} {:>8}\n",
            "UAV", "noise", "attack", "detector", "P", "R", "F1", "AUC", "ref F1"
        );
        for r in &self.summary {
            s += &format!(
                "{:<4} {:<12} {:<20} {:<22} {:>6.3} {:>6.3} {:>6.3} {:>6} {:>8}\n",
                match r.model {
                    ModelId::ModelI => "I",
                    ModelId::ModelII => "II",
                },
                format!("{:?}", r.noise),
                r.attack,
                r.detector,
                r.precision,
                r.recall,
                r.f1,
                r.auc.map_or("-".into(), |a| format!("{a:.3}")),
                r.reference_f1.map_or("-".into(), |a| format!("{a:.2}")),
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::compute_metrics;

    fn cell(seed: u64, qf: f64, cusum: f64) -> CellResult {
        let rep = |name: &str, f1: f64| {
            let mut r = MetricsReport::new(name, &[true], None, &[true]).unwrap();
            r.prf.f1 = f1;
            r
        };
        CellResult {
            key: CellKey {
                model: ModelId::ModelI,
                noise: NoiseFamily::Exponential,
                attack: "Attack I".into(),
                seed,
            },
            status: CellStatus::Ok,
            reports: vec![rep("CUSUM", cusum), rep(QUADFORMER, qf)],
            tuned: vec![],
            quadformer_threshold: None,
            training: None,
            seconds: 0.0,
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn dominance_counts_wins() {
        let cells = vec![cell(0, 0.9, 0.7), cell(1, 0.8, 0.85), cell(2, 0.9, 0.8)];
        let d = &dominance(&cells, &["CUSUM"])[0];
        assert_eq!(d.wins, 2);
        assert!((d.median_margin - 0.1).abs() < 1e-12);
        assert!(d.holds(0.05));
        assert!(!d.holds(0.15));
        let behind = vec![cell(0, 0.6, 0.7), cell(1, 0.8, 0.7), cell(2, 0.6, 0.7)];
        assert!(!dominance(&behind, &["CUSUM"])[0].holds(0.0));
    }

    #[test]
    fn summary_carries_reference() {
        let rows = summarize(&[cell(0, 0.9, 0.7)]);
        let q = rows.iter().find(|r| r.detector == QUADFORMER).unwrap();
        assert_eq!(q.reference_f1, Some(0.93));
        assert_eq!(q.f1, 0.9);
    }

    #[test]
    fn thinning_keeps_endpoints() {
        let scores: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let labels: Vec<bool> = (0..2000).map(|i| i % 3 == 0).collect();
        let mut roc = Some(crate::metrics::roc_auc(&scores, &labels).unwrap());
        let auc = roc.as_ref().unwrap().auc;
        thin(&mut roc);
        let r = roc.unwrap();
        assert_eq!(r.points.len(), ROC_POINTS);
        assert_eq!(r.points[0], (0.0, 0.0));
        assert_eq!(*r.points.last().unwrap(), (1.0, 1.0));
        assert_eq!(r.auc, auc);
        assert_eq!(compute_metrics(&[true], &[true]).unwrap().f1, 1.0);
    }

    #[test]
    fn tiny_grid_runs_and_writes() {
        let mut cfg = ExperimentConfig::default();
        cfg.models = vec![ModelId::ModelII];
        cfg.noises = vec![NoiseFamily::Laplacian];
        cfg.attacks = vec!["Attack I".into()];
        cfg.seeds = vec![0];
        cfg.durations.train = 120.0;
        cfg.durations.val = 60.0;
        cfg.durations.test = 60.0;
        cfg.model.window = 20;
        cfg.model.d_model = 8;
        cfg.model.ff_dim = 16;
        cfg.model.layers = 1;
        cfg.model.epochs = 1;
        let dir = tempfile::tempdir().unwrap();
        let rep = run_grid(&cfg, Some(dir.path())).unwrap();
        assert_eq!(rep.cells.len(), 1);
        assert_eq!(rep.failed_cells, 0);
        assert_eq!(rep.cells[0].reports.len(), 5);
        for f in ["manifest.json", "grid_table.csv", "grid_cells.csv"] {
            assert!(dir.path().join(f).exists());
        }
        let back = GridReport::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back.cells.len(), 1);
        assert!(dir
            .path()
            .join("cells")
            .join(cfg_slug(&rep))
            .join("quadformer_scores.csv")
            .exists());
    }

    fn cfg_slug(rep: &GridReport) -> String {
        rep.cells[0].key.slug()
    }
}
