use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use quadformer::attack::{inject, LabeledStream};
use quadformer::detectors::{run_detector, AlarmSequence, Calibration, DetectorConfig};
use quadformer::ekf::{generate_residues, read_residue_csv, write_residue_csv};
use quadformer::experiment::data::{attack_schedule, filter_config};
use quadformer::experiment::{
    emit_plots, fusion_study, run_cell, run_grid, scenario, write_cell_artifacts, CellKey,
    ExperimentConfig, ResidueSet, Split, QUADFORMER,
};
use quadformer::metrics::MetricsReport;
use quadformer::quadformer::{checkpoint, train, Validation};
use quadformer::sim::{read_sensor_csv, write_sensor_csv, ModelId, NoiseFamily};
use quadformer::{Error, Result};

/// Exit code when a requested acceptance check does not hold.
const CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "quadformer",
    version,
    about = "UAV attack detection on EKF residues"
)]
struct Cli {
    /// Experiment file (TOML). Defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed list with one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Full-size datasets (about four times the default).
    #[arg(long, global = true)]
    full_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Exponential,
    Laplacian,
    Gaussian,
}

impl From<Noise> for NoiseFamily {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Exponential => NoiseFamily::Exponential,
            Noise::Laplacian => NoiseFamily::Laplacian,
            Noise::Gaussian => NoiseFamily::Gaussian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    #[value(name = "I", alias = "1")]
    One,
    #[value(name = "II", alias = "2")]
    Two,
}

impl From<Model> for ModelId {
    fn from(m: Model) -> Self {
        match m {
            Model::One => ModelId::ModelI,
            Model::Two => ModelId::ModelII,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Detector {
    Cusum,
    Sprt,
    Bht,
    Quadformer,
}

#[derive(Subcommand)]
enum Command {
    /// Fly the configured trajectory: truth.csv and sensors.csv.
    Simulate {
        #[arg(long, value_enum)]
        noise: Option<Noise>,
        /// Seconds; defaults to the test-split duration.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Add an attack preset to a sensor recording: attacked.csv plus schedule.json.
    Inject {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "Attack I")]
        attack: String,
    },
    /// Run the EKF over a recording: residues.csv.
    Residues {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "II")]
        model: Model,
        /// Noise family the filter is matched to.
        #[arg(long, value_enum)]
        noise: Option<Noise>,
    },
    /// Train the transformer detector on labeled residues.
    Train {
        #[arg(long)]
        input: PathBuf,
        /// Residues for threshold calibration and per-epoch F1.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Score residues: alarms.csv with columns t,statistic,alarm.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "quadformer")]
        detector: Detector,
        /// Trained model (transformer detector).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Clean-run residues (classic detectors).
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Metrics for alarm files against residue labels, or with no alarm
    /// files a single grid cell end to end plus the fusion comparison.
    Evaluate {
        #[arg(long)]
        alarms: Vec<PathBuf>,
        /// Residue CSV holding the labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Exit with code 4 unless the transformer beats every classic
        /// detector and detector-driven switching lowers the attack RMSE.
        #[arg(long)]
        check: bool,
    },
    /// SVG figures from a run directory.
    Plot {
        /// Directory written by `grid` or `evaluate`; defaults to --out-dir.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// The full model × noise × attack × seed grid.
    Grid {
        /// Exit with code 4 unless the transformer beats the best classic
        /// detector on every seed of every cell with median margin 0.05.
        #[arg(long)]
        check: bool,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.full_scale {
        cfg = cfg.full_scale();
    }
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn noise_or_default(cfg: &ExperimentConfig, noise: Option<Noise>) -> NoiseFamily {
    noise.map(NoiseFamily::from).unwrap_or(cfg.noises[0])
}

/// Missing inputs are usage errors, not I/O failures.
fn existing(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::config(format!("{} does not exist", path.display())))
    }
}

fn gps_set(path: &Path) -> Result<ResidueSet> {
    Ok(ResidueSet::gps(&read_residue_csv(existing(path)?)?))
}

fn first_key(cfg: &ExperimentConfig) -> CellKey {
    CellKey {
        model: cfg.models[0],
        noise: cfg.noises[0],
        attack: cfg.attacks[0].clone(),
        seed: cfg.seeds[0],
    }
}

fn print_reports(reports: &[MetricsReport]) {
    println!(
        "{:<24} {:>7} {:>7} {:>7} {:>7}",
        "detector", "P", "R", "F1", "AUC"
    );
    for r in reports {
        println!(
            "{:<24} {:>7.3} {:>7.3} {:>7.3} {:>7}",
            r.detector,
            r.prf.precision,
            r.prf.recall,
            r.prf.f1,
            r.auc().map_or("-".into(), |a| format!("{a:.3}"))
        );
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let cfg = load_config(cli)?;
    let out = &cli.out_dir;
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::Simulate { noise, duration } => {
            let family = noise_or_default(&cfg, *noise);
            let mut sc = scenario(&cfg, family, cfg.seeds[0], Split::Test);
            if let Some(d) = duration {
                sc.trajectory.duration = *d;
            }
            let (truth, stream) = sc.simulate()?;
            truth.write_csv(&out.join("truth.csv"))?;
            write_sensor_csv(&out.join("sensors.csv"), &stream, None)?;
            std::fs::write(
                out.join("scenario.json"),
                serde_json::to_string_pretty(&sc)?,
            )?;
            info!("{} frames written to {}", stream.len(), out.display());
        }
        Command::Inject { input, attack } => {
            let (stream, _) = read_sensor_csv(existing(input)?)?;
            let duration = stream.frames.last().map_or(0.0, |f| f.t);
            let mut sc = scenario(&cfg, cfg.noises[0], cfg.seeds[0], Split::Test);
            sc.trajectory.duration = duration;
            let schedule = attack_schedule(&cfg, &sc, attack)?;
            let labeled = inject(&stream, &schedule, cfg.seeds[0])?;
            write_sensor_csv(
                &out.join("attacked.csv"),
                &labeled.stream,
                Some(&labeled.labels),
            )?;
            std::fs::write(
                out.join("schedule.json"),
                serde_json::to_string_pretty(&schedule)?,
            )?;
            info!(
                "attacked share of GPS frames: {:.3}",
                labeled.attacked_fraction_of_gps()
            );
        }
        Command::Residues {
            input,
            model,
            noise,
        } => {
            let (stream, labels) = read_sensor_csv(existing(input)?)?;
            let labeled = match labels {
                Some(labels) => LabeledStream { stream, labels },
                None => LabeledStream::clean(stream),
            };
            let filter = filter_config(&cfg, noise_or_default(&cfg, *noise));
            let seq = generate_residues(&labeled, (*model).into(), &filter)?;
            write_residue_csv(&out.join("residues.csv"), &seq)?;
            info!("{} residues written", seq.len());
        }
        Command::Train { input, val } => {
            let data = gps_set(input)?;
            let val = val.as_deref().map(gps_set).transpose()?;
            let mut mc = cfg.model.clone();
            if let Some(s) = cli.seed {
                mc.seed = s;
            }
            let (model, log) = train(
                &mc,
                &data.rows,
                &data.labels,
                val.as_ref().map(|v| Validation {
                    rows: &v.rows,
                    labels: &v.labels,
                }),
                Some(&out.join("quadformer_abort.qdfm")),
            )?;
            checkpoint::save(&model, &out.join("quadformer.qdfm"))?;
            log.write_csv(&out.join("training_log.csv"))?;
            info!("threshold {:.6}", model.threshold);
        }
        Command::Detect {
            input,
            detector,
            checkpoint: ckpt,
            calibration,
        } => {
            let data = gps_set(input)?;
            let alarms = match detector {
                Detector::Quadformer => {
                    let path = ckpt
                        .as_deref()
                        .ok_or_else(|| Error::config("--checkpoint is required"))?;
                    let s = checkpoint::load(existing(path)?)?.detect(&data.t, &data.rows);
                    AlarmSequence {
                        t: s.t,
                        statistic: s.score,
                        alarm: s.alarm,
                    }
                }
                classic => {
                    let name = match classic {
                        Detector::Cusum => "CUSUM",
                        Detector::Sprt => "SPRT",
                        _ => "BHT",
                    };
                    let det: &DetectorConfig = cfg
                        .detectors
                        .iter()
                        .find(|d| d.name() == name)
                        .ok_or_else(|| {
                            Error::config(format!("{name} is not in the detector list"))
                        })?;
                    let path = calibration
                        .as_deref()
                        .ok_or_else(|| Error::config("--calibration is required"))?;
                    let calib =
                        Calibration::fit_prefix(&gps_set(path)?.rows, cfg.calibration_fraction)?;
                    run_detector(det, Some(&calib), &data.t, &data.rows)?
                }
            };
            alarms.write_csv(&out.join("alarms.csv"))?;
            info!(
                "{} of {} steps alarmed",
                alarms.alarm.iter().filter(|a| **a).count(),
                alarms.len()
            );
        }
        Command::Evaluate {
            alarms,
            labels,
            check,
        } => {
            if !alarms.is_empty() {
                let path = labels
                    .as_deref()
                    .ok_or_else(|| Error::config("--labels is required with --alarms"))?;
                let labels = gps_set(path)?.labels;
                let mut reports = Vec::new();
                for a in alarms {
                    let seq = AlarmSequence::read_csv(existing(a)?)?;
                    let name = a
                        .file_stem()
                        .map_or("alarms".into(), |s| s.to_string_lossy().into_owned());
                    reports.push(MetricsReport::new(
                        &name,
                        &seq.alarm,
                        Some(&seq.statistic),
                        &labels,
                    )?);
                }
                std::fs::write(
                    out.join("metrics.json"),
                    serde_json::to_string_pretty(&reports)?,
                )?;
                print_reports(&reports);
                return Ok(0);
            }
            let key = first_key(&cfg);
            let (res, art) = run_cell(&cfg, &key, Some(out));
            let art = match (&res.status, art) {
                (_, Some(a)) => a,
                (status, None) => {
                    std::fs::write(out.join("cell.json"), serde_json::to_string_pretty(&res)?)?;
                    return Err(Error::numeric(format!("cell failed: {status:?}")));
                }
            };
            write_cell_artifacts(&out.join("cells").join(key.slug()), &res, &art)?;
            std::fs::write(out.join("cell.json"), serde_json::to_string_pretty(&res)?)?;
            print_reports(&res.reports);
            let study = fusion_study(&cfg, &key, cfg.durations.test, Some(&art.detector))?;
            study.write(&out.join("fusion"))?;
            let s = study.summary;
            println!(
                "attack-window position RMSE: no switching {:.3} m, label switching {:.3} m, detector switching {}",
                s.plain_rmse,
                s.oracle_rmse,
                s.detector_rmse.map_or("-".into(), |r| format!("{r:.3} m"))
            );
            if *check {
                let qf = res.report(QUADFORMER).map_or(0.0, |r| r.prf.f1);
                let best = res
                    .reports
                    .iter()
                    .filter(|r| cfg.detectors.iter().any(|d| d.name() == r.detector))
                    .map(|r| r.prf.f1)
                    .fold(0.0, f64::max);
                let fusion_ok = s.detector_rmse.is_some_and(|r| r < s.plain_rmse);
                if qf <= best || !fusion_ok {
                    warn!("check failed: F1 {qf:.3} vs best classic {best:.3}, fusion improvement {fusion_ok}");
                    return Ok(CHECK_FAILED);
                }
            }
        }
        Command::Plot { from } => {
            let src = from.as_deref().unwrap_or(out);
            let outcome = emit_plots(src, &out.join("plots"))?;
            for note in &outcome.skipped {
                warn!("{note}");
            }
            for f in &outcome.written {
                println!("{}", f.display());
            }
        }
        Command::Grid { check } => {
            let rep = run_grid(&cfg, Some(out))?;
            print!("{}", rep.render());
            println!(
                "grid finished in {:.0} s, {} failed cells",
                rep.seconds, rep.failed_cells
            );
            let mut ok = rep.failed_cells == 0;
            for d in &rep.dominance {
                let holds = d.holds(0.05);
                ok &= holds;
                println!(
                    "{:?} {:?} {}: transformer F1 {:.3}, best classic {:.3}, median margin {:.3}, wins {}/{} {}",
                    d.model,
                    d.noise,
                    d.attack,
                    d.quadformer_f1,
                    d.best_baseline_f1,
                    d.median_margin,
                    d.wins,
                    d.seeds,
                    if holds { "ok" } else { "FAIL" }
                );
            }
            if *check && !ok {
                return Ok(CHECK_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
