//! SVG figures from the files written by a grid run or a fusion study.
//! Missing inputs are skipped with a note.

use std::path::{Path, PathBuf};

use super::grid::GridReport;
use crate::error::{Error, Result};
use crate::plot::{label_bands, roc_plot, LinePlot, Series};

#[derive(Debug, Default)]
pub struct PlotOutcome {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<String>,
}

/// Reads the named numeric columns of a CSV file.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::config(format!("{}: no column '{n}'", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        for (c, &i) in cols.iter_mut().zip(&idx) {
            let v = &rec[i];
            c.push(match v {
                "true" => 1.0,
                "false" => 0.0,
                _ => v
                    .parse()
                    .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
            });
        }
    }
    Ok(cols)
}

fn window_text(intervals: &[[f64; 2]]) -> String {
    match intervals.first() {
        Some(w) => format!("shaded: attack windows (first {:.1}-{:.1} s)", w[0], w[1]),
        None => "no attack windows".into(),
    }
}

/// Trajectory overlays (truth against estimate, top view) for the clean,
/// attacked and switched runs of a fusion study directory, plus the
/// position error over time.
fn fusion_plots(dir: &Path, out: &Path, outcome: &mut PlotOutcome) -> Result<()> {
    let truth_path = dir.join("truth.csv");
    if !truth_path.exists() {
        outcome.skipped.push(format!(
            "{}: no truth.csv, trajectory plots skipped",
            dir.display()
        ));
        return Ok(());
    }
    let truth = read_columns(&truth_path, &["t", "px", "py", "pz"])?;
    let intervals: Vec<[f64; 2]> = std::fs::read_to_string(dir.join("fusion_summary.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| serde_json::from_value(v["attack_windows"].clone()).ok())
        .unwrap_or_default();
    let bands: Vec<(f64, f64)> = intervals.iter().map(|w| (w[0], w[1])).collect();
    let in_attack = |t: f64| intervals.iter().any(|w| w[0] <= t && t <= w[1]);
    let mut error_plot = LinePlot::new("Position error", "t (s)", "|p - p_true| (m)");
    error_plot.bands = bands.clone();
    error_plot.notes.push(window_text(&intervals));
    let cases = [
        ("clean", "No attack"),
        ("attacked", "Under attack, no detection"),
        ("oracle", "Under attack, switching on true labels"),
        ("detected", "Under attack, switching on detector alarms"),
    ];
    for (name, title) in cases {
        let path = dir.join(format!("estimate_{name}.csv"));
        if !path.exists() {
            outcome.skipped.push(format!(
                "{}: missing, '{name}' overlay skipped",
                path.display()
            ));
            continue;
        }
        let est = read_columns(&path, &["t", "px", "py", "pz"])?;
        let n = est[0].len().min(truth[0].len());
        let err: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let e = (1..4)
                    .map(|c| (est[c][k] - truth[c][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (est[0][k], e)
            })
            .collect();
        let rmse = |sel: &dyn Fn(f64) -> bool| {
            let v: Vec<f64> = err
                .iter()
                .filter(|(t, _)| sel(*t))
                .map(|(_, e)| e * e)
                .collect();
            (!v.is_empty()).then(|| (v.iter().sum::<f64>() / v.len() as f64).sqrt())
        };
        let mut p = LinePlot::new(title, "x (m)", "y (m)");
        p.equal_aspect = true;
        p.series.push(Series::new(
            "truth",
            (0..n).map(|k| (truth[1][k], truth[2][k])).collect(),
        ));
        p.series.push(
            Series::new("estimate", (0..n).map(|k| (est[1][k], est[2][k])).collect()).dashed(),
        );
        if let Some(r) = rmse(&|_| true) {
            p.notes.push(format!("position RMSE {r:.3} m"));
        }
        if let Some(r) = rmse(&in_attack) {
            p.notes.push(format!("RMSE inside attack windows {r:.3} m"));
        }
        let file = out.join(format!("trajectory_{name}.svg"));
        p.save(&file)?;
        outcome.written.push(file);
        error_plot.series.push(Series::new(name, err));
    }
    if !error_plot.series.is_empty() {
        let file = out.join("position_error.svg");
        error_plot.save(&file)?;
        outcome.written.push(file);
    }
    Ok(())
}

/// Statistic trace of one detector with the attack windows shaded.
fn trace_plot(
    cell_dir: &Path,
    detector: &str,
    threshold: Option<f64>,
    out: &Path,
    outcome: &mut PlotOutcome,
) -> Result<()> {
    let alarms = cell_dir.join(format!("{}_alarms.csv", detector.to_lowercase()));
    let labels = cell_dir.join("labels.csv");
    if !alarms.exists() || !labels.exists() {
        outcome.skipped.push(format!(
            "{}: no {detector} alarms or labels, trace skipped",
            cell_dir.display()
        ));
        return Ok(());
    }
    let a = read_columns(&alarms, &["t", "statistic", "alarm"])?;
    let l = read_columns(&labels, &["t", "label"])?;
    let labels: Vec<bool> = l[1].iter().map(|v| *v > 0.5).collect();
    let alarm_bits: Vec<bool> = a[2].iter().map(|v| *v > 0.5).collect();
    let name = cell_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut p = LinePlot::new(
        format!("{detector} statistic, {name}"),
        "t (s)",
        "statistic",
    );
    let t_end = a[0].first().copied().unwrap_or(0.0) + 200.0;
    let keep: Vec<usize> = (0..a[0].len()).filter(|&k| a[0][k] <= t_end).collect();
    p.series.push(Series::new(
        detector,
        keep.iter().map(|&k| (a[0][k], a[1][k])).collect(),
    ));
    p.bands = label_bands(&l[0], &labels)
        .into_iter()
        .filter(|b| b.0 <= t_end)
        .collect();
    if let Some(h) = threshold {
        p.hlines.push((h, "threshold".into()));
    }
    let tail: usize = alarm_bits
        .iter()
        .zip(&labels)
        .filter(|(a, l)| **a && !**l)
        .count();
    p.notes.push(format!(
        "shaded: attacked steps; alarms outside attacks: {tail}"
    ));
    let file = out.join(format!("{}_trace_{name}.svg", detector.to_lowercase()));
    p.save(&file)?;
    outcome.written.push(file);
    Ok(())
}

/// Writes every figure that the files under `artifacts` allow into `out`.
pub fn emit_plots(artifacts: &Path, out: &Path) -> Result<PlotOutcome> {
    if !artifacts.is_dir() {
        return Err(Error::config(format!(
            "{} is not a directory",
            artifacts.display()
        )));
    }
    std::fs::create_dir_all(out)?;
    let mut outcome = PlotOutcome::default();
    let manifest = artifacts.join("manifest.json");
    let report = if manifest.exists() {
        Some(GridReport::load(&manifest)?)
    } else {
        None
    };
    match &report {
        Some(rep) => {
            let first_seed = rep.config.seeds.first().copied();
            for cell in rep.cells.iter().filter(|c| Some(c.key.seed) == first_seed) {
                let curves: Vec<_> = cell
                    .reports
                    .iter()
                    .filter_map(|r| {
                        r.roc
                            .as_ref()
                            .map(|roc| (r.detector.clone(), roc.points.clone(), roc.auc))
                    })
                    .collect();
                if curves.is_empty() {
                    outcome
                        .skipped
                        .push(format!("{}: no ROC data", cell.key.slug()));
                    continue;
                }
                let p = roc_plot(&format!("ROC, {}", cell.key.slug()), &curves);
                let file = out.join(format!("roc_{}.svg", cell.key.slug()));
                p.save(&file)?;
                outcome.written.push(file);
                let cusum_threshold = cell.tuned.iter().find_map(|d| match d {
                    crate::detectors::DetectorConfig::Cusum { threshold, .. } => Some(*threshold),
                    _ => None,
                });
                trace_plot(
                    &artifacts.join("cells").join(cell.key.slug()),
                    "CUSUM",
                    cusum_threshold,
                    out,
                    &mut outcome,
                )?;
            }
        }
        None => outcome.skipped.push(format!(
            "{}: no manifest.json, ROC plots skipped",
            artifacts.display()
        )),
    }
    for dir in [artifacts.to_path_buf(), artifacts.join("fusion")] {
        if dir.join("truth.csv").exists() {
            fusion_plots(&dir, out, &mut outcome)?;
        }
    }
    if !artifacts.join("truth.csv").exists() && !artifacts.join("fusion").join("truth.csv").exists()
    {
        outcome
            .skipped
            .push("no fusion study found, trajectory plots skipped".into());
    }
    Ok(outcome)
}
