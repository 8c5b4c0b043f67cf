//! Command-line front end for the full pipeline: dataset synthesis, fault
//! injection, training, evaluation, single-image detection, and the
//! gradient self-check.
//!
//! Exit codes: 0 success, 2 usage or malformed input files, 3 I/O,
//! 4 data problems, 5 model/checkpoint problems.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use glitchkit::augment::{self, PaletteMode, RegionConstraints, Rule};
use glitchkit::checkpoint;
use glitchkit::gradcheck;
use glitchkit::manifest::Label;
use glitchkit::metrics;
use glitchkit::rendersim::{self, SceneBundle};
use glitchkit::saliency;
use glitchkit::train::{self, TrainConfig};
use glitchkit::{DatasetManifest, Error, ImageRGB, ModelConfig};

#[derive(Parser)]
#[command(
    name = "glitchkit",
    about = "Synthesize GUI-glitch datasets, train a detector, and localize glitches",
    version
)]
struct Cli {
    /// Master seed; every random decision derives from it.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Output directory for generated files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Verbosity: error, warn, info, or debug.
    #[arg(long, global = true, default_value = "info")]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Clone, Copy, ValueEnum)]
enum PaletteArg {
    Random,
    Fixed,
}

#[derive(Subcommand)]
enum Command {
    /// Generate rule-based glitch images from a manifest of normal screenshots.
    SynthRules {
        /// Manifest (JSON Lines) of normal screenshots.
        #[arg(long)]
        normals: PathBuf,
        /// Comma-separated rules; defaults to all four.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<String>,
        /// Block colors: arbitrary RGB or the fixed four-color palette.
        #[arg(long, value_enum, default_value = "random")]
        palette: PaletteArg,
    },
    /// Render scene files and inject their faults into the pipeline.
    SynthInject {
        /// Directory of scene JSON files (schema: {"scene": ..., "faults": [...]}).
        #[arg(long)]
        scenes: PathBuf,
    },
    /// Train the detector on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Model config JSON; defaults to the full-scale architecture.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.001)]
        learning_rate: f64,
        /// Per-epoch multiplicative learning-rate decay (1.0 = constant).
        #[arg(long, default_value_t = 1.0)]
        lr_decay: f64,
        /// Optional validation manifest; keeps the best-validation epoch.
        #[arg(long)]
        val_manifest: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Classify one screenshot, optionally writing a saliency heatmap.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Write a heatmap overlay PNG here.
        #[arg(long)]
        saliency: Option<PathBuf>,
        /// Also dump raw saliency (f32 little-endian + JSON sidecar).
        #[arg(long)]
        raw_saliency: Option<PathBuf>,
    },
    /// Run the finite-difference gradient checks.
    Gradcheck,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Json { .. } => 2,
        Error::Io { .. } | Error::Image { .. } => 3,
        Error::NotACheckpoint
        | Error::UnsupportedCheckpointVersion(_)
        | Error::TruncatedCheckpoint
        | Error::CorruptCheckpoint(_)
        | Error::ModelMismatch(_) => 5,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn log(cli: &Cli, level: LogLevel, msg: &str) {
    if level <= cli.log_level {
        eprintln!("{msg}");
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    match &cli.command {
        Command::SynthRules { normals, rules, palette } => {
            let rule_list: Vec<Rule> = if rules.is_empty() {
                Rule::ALL.to_vec()
            } else {
                rules.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
            };
            let palette_mode = match palette {
                PaletteArg::Random => PaletteMode::RandomRgb,
                PaletteArg::Fixed => PaletteMode::FixedPalette,
            };
            let normals = DatasetManifest::load(normals)?;
            let manifest = augment::generate_rule_dataset(
                &normals,
                &rule_list,
                palette_mode,
                cli.seed,
                &cli.out,
                &RegionConstraints::default(),
            )?;
            let glitches = manifest.count_label(Label::Glitch);
            let normals_n = manifest.count_label(Label::Normal);
            println!("wrote {normals_n} normal + {glitches} glitch samples to {}", cli.out.display());
            for rule in &rule_list {
                let n = manifest
                    .records
                    .iter()
                    .filter(|r| r.label == Label::Glitch && r.image_path.contains(&rule.to_string()))
                    .count();
                println!("  {rule}: {n}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SynthInject { scenes } => {
            let bundles = load_scene_dir(scenes)?;
            log(cli, LogLevel::Info, &format!("loaded {} scene files", bundles.len()));
            let manifest = rendersim::generate_injection_dataset(&bundles, cli.seed, &cli.out)?;
            println!(
                "wrote {} normal + {} glitch samples to {}",
                manifest.count_label(Label::Normal),
                manifest.count_label(Label::Glitch),
                cli.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            manifest,
            config,
            epochs,
            batch_size,
            learning_rate,
            lr_decay,
            val_manifest,
        } => {
            let model_cfg = match config {
                Some(path) => load_model_config(path)?,
                None => ModelConfig::default(),
            };
            let manifest = DatasetManifest::load(manifest)?;
            let val = val_manifest.as_ref().map(DatasetManifest::load).transpose()?;
            let train_cfg = TrainConfig {
                batch_size: *batch_size,
                learning_rate: *learning_rate,
                epochs: *epochs,
                seed: cli.seed,
                shuffle: true,
                lr_decay: *lr_decay,
            };
            let outcome = train::train(&manifest, &model_cfg, &train_cfg, val.as_ref())?;
            std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
            let ckpt_path = cli.out.join("model.ckpt");
            checkpoint::save_checkpoint(&outcome.model, &ckpt_path)?;
            train::save_log(&outcome.log, cli.out.join("train_log.jsonl"))?;
            for entry in &outcome.log {
                let val_part = entry
                    .val_acc
                    .map(|a| format!(" val_acc={a:.4}"))
                    .unwrap_or_default();
                println!(
                    "epoch {:>3}: loss={:.5} train_acc={:.4}{val_part}",
                    entry.epoch, entry.loss, entry.train_acc
                );
            }
            println!("checkpoint: {}", ckpt_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { checkpoint: ckpt, manifest } => {
            let model = checkpoint::load_checkpoint(ckpt)?;
            let manifest = DatasetManifest::load(manifest)?;
            let eval = metrics::evaluate(&model, &manifest)?;
            println!("{}", eval.metrics.table());
            std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
            let metrics_path = cli.out.join("metrics.json");
            let json = serde_json::to_string_pretty(&eval.metrics)
                .map_err(|e| Error::json(&metrics_path, e.to_string()))?;
            std::fs::write(&metrics_path, json).map_err(|e| Error::io(&metrics_path, e))?;
            let verdict_path = cli.out.join("verdicts.jsonl");
            let mut lines = String::new();
            for v in &eval.verdicts {
                lines.push_str(
                    &serde_json::to_string(v)
                        .map_err(|e| Error::json(&verdict_path, e.to_string()))?,
                );
                lines.push('\n');
            }
            std::fs::write(&verdict_path, lines).map_err(|e| Error::io(&verdict_path, e))?;
            log(
                cli,
                LogLevel::Info,
                &format!("wrote {} and {}", metrics_path.display(), verdict_path.display()),
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Detect { checkpoint: ckpt, image, saliency: heatmap_out, raw_saliency } => {
            let model = checkpoint::load_checkpoint(ckpt)?;
            let img = ImageRGB::load_png(image)?;
            let (label, probs) = model.predict(&img)?;
            println!("{label} {:.6} {:.6}", probs[0], probs[1]);
            if heatmap_out.is_some() || raw_saliency.is_some() {
                let sal = saliency::compute_saliency(&model, &img, None)?;
                if let Some(path) = heatmap_out {
                    let overlay = saliency::render_heatmap(&sal, &img, 0.5)?;
                    overlay.save_png(path)?;
                    log(cli, LogLevel::Info, &format!("wrote {}", path.display()));
                }
                if let Some(path) = raw_saliency {
                    saliency::write_raw(&sal, path)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck => {
            let reports = gradcheck::run_full_suite(cli.seed)?;
            let mut all_ok = true;
            for r in &reports {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!(
                    "{status} {} (instances={}, max_rel_err={:.3e}, tol={:.0e})",
                    r.name, r.instances, r.max_rel_err, r.tolerance
                );
                all_ok &= r.passed;
            }
            if all_ok {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn load_model_config(path: &Path) -> Result<ModelConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ModelConfig =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads every `.json` in the directory, sorted by file name so output
/// ordering never depends on directory iteration order.
fn load_scene_dir(dir: &Path) -> Result<Vec<SceneBundle>, Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no scene JSON files in {}", dir.display())));
    }
    let mut bundles = Vec::with_capacity(paths.len());
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bundle: SceneBundle = serde_json::from_str(&text).map_err(|e| {
            Error::json(&path, format!("{e} (line {}, column {})", e.line(), e.column()))
        })?;
        bundle.scene.validate().map_err(|err| match err {
            Error::Scene(msg) => Error::json(&path, msg),
            other => other,
        })?;
        for fault in &bundle.faults {
            bundle.scene.validate_fault(fault).map_err(|err| match err {
                Error::Scene(msg) => Error::json(&path, msg),
                other => other,
            })?;
        }
        bundles.push(bundle);
    }
    Ok(bundles)
}
