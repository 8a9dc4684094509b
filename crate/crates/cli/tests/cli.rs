use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run(out: &Path, args: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_quadformer"))
        .arg("--config")
        .arg(smoke_config())
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs");
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn step_by_step_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (sim, clean, att, res, model, alarms) = (
        d.join("sim"),
        d.join("clean"),
        d.join("att"),
        d.join("res"),
        d.join("model"),
        d.join("alarms"),
    );
    assert!(run(&sim, &["simulate", "--duration", "120"])
        .status
        .success());
    assert!(sim.join("truth.csv").exists() && sim.join("sensors.csv").exists());

    assert!(run(
        &att,
        &[
            "inject",
            "--input",
            &p(&sim, "sensors.csv"),
            "--attack",
            "Attack I"
        ]
    )
    .status
    .success());
    assert!(run(
        &clean,
        &[
            "residues",
            "--input",
            &p(&sim, "sensors.csv"),
            "--model",
            "II"
        ]
    )
    .status
    .success());
    assert!(run(
        &res,
        &[
            "residues",
            "--input",
            &p(&att, "attacked.csv"),
            "--model",
            "II"
        ]
    )
    .status
    .success());

    assert!(run(
        &model,
        &[
            "train",
            "--input",
            &p(&res, "residues.csv"),
            "--val",
            &p(&res, "residues.csv")
        ]
    )
    .status
    .success());
    assert!(model.join("quadformer.qdfm").exists());
    assert!(model.join("training_log.csv").exists());

    let qf = alarms.join("qf");
    assert!(run(
        &qf,
        &[
            "detect",
            "--input",
            &p(&res, "residues.csv"),
            "--checkpoint",
            &p(&model, "quadformer.qdfm")
        ]
    )
    .status
    .success());
    let cusum = alarms.join("cusum");
    assert!(run(
        &cusum,
        &[
            "detect",
            "--detector",
            "cusum",
            "--input",
            &p(&res, "residues.csv"),
            "--calibration",
            &p(&clean, "residues.csv")
        ]
    )
    .status
    .success());

    let eval = d.join("eval");
    let o = run(
        &eval,
        &[
            "evaluate",
            "--alarms",
            &p(&qf, "alarms.csv"),
            "--alarms",
            &p(&cusum, "alarms.csv"),
            "--labels",
            &p(&res, "residues.csv"),
        ],
    );
    assert!(o.status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.as_array().unwrap().len(), 2);
}

#[test]
fn missing_checkpoint_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["detect", "--input", "nope.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "attacks = [\"Attack IX\"]\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_quadformer"))
        .args([
            "--config",
            &cfg.to_string_lossy(),
            "--out-dir",
            &p(dir.path(), "o"),
            "grid",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_quadformer"))
        .args(["grid", "--no-such-flag"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grid_then_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let o = run(&out, &["grid"]);
    assert!(o.status.success());
    for f in ["manifest.json", "grid_table.csv", "grid_cells.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("QUADFormer"));

    assert!(run(&out, &["plot"]).status.success());
    let plots: Vec<_> = std::fs::read_dir(out.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(plots
        .iter()
        .any(|f| f.to_string_lossy().starts_with("roc_")));
    assert!(plots
        .iter()
        .any(|f| f.to_string_lossy().starts_with("cusum_trace_")));
}

#[test]
fn single_cell_evaluation_with_fusion() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cell");
    let o = run(&out, &["--seed", "3", "evaluate"]);
    assert!(o.status.success());
    assert!(out.join("cell.json").exists());
    assert!(out.join("fusion").join("estimate_detected.csv").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("attack-window position RMSE"));

    assert!(run(&out, &["plot"]).status.success());
    for f in [
        "trajectory_clean.svg",
        "trajectory_attacked.svg",
        "trajectory_detected.svg",
        "position_error.svg",
    ] {
        assert!(out.join("plots").join(f).exists(), "{f}");
    }
}
