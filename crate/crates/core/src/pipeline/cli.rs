//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or contract errors, 2 when the root
//! cause is a filesystem failure.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use image::{GrayImage, Luma};
use serde::Serialize;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{preset_loss, RunConfig};
use super::data::{image_batch, load_dataset, DatasetSpec, Split};
use super::eval::{evaluate, write_reports, ConstantScorer, ModelScorer, OracleScorer, Scorer};
use super::report::{merge, write_merged};
use super::synth::{synth_dataset, SynthConfig};
use super::train::{encode_samples, train, TrainLogs};
use crate::diagnostics::{encoder_grn_active, erf_map, feature_entropy, feature_variance, theoretical_receptive_field};
use crate::losses::LossMode;
use crate::model::{load_archive, Model};
use crate::{Error, Result};

pub const DEVICE_ENV: &str = "MINIMAXAD_DEVICE";

#[derive(Debug, Parser)]
#[command(name = "minimaxad", version, about = "Large-kernel reverse-distillation anomaly detection")]
struct Cli {
    /// TOML run configuration ([model], [train], [eval], [diagnostics]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data synthesis, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, env = DEVICE_ENV, default_value = "cpu")]
    device: String,
    /// Output directory (for `report`, the merged CSV path).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScorerKind {
    Model,
    Oracle,
    Constant,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a procedural texture dataset.
    Synth {
        #[arg(long, default_value_t = 5)]
        categories: usize,
        #[arg(long, default_value_t = 20)]
        normals: usize,
        #[arg(long, default_value_t = 10)]
        anomalies: usize,
        #[arg(long, default_value_t = 10)]
        good_test: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Train the student on a dataset root and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// global | local | local_hm | adc
        #[arg(long)]
        loss_mode: Option<String>,
        /// fr (adc loss) or fp (global loss).
        #[arg(long, conflicts_with = "loss_mode")]
        preset: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Encoder-only weight archive to load before training.
        #[arg(long)]
        encoder_weights: Option<PathBuf>,
        /// Also write per-epoch variance/entropy to diagnostics.jsonl.
        #[arg(long)]
        log_diagnostics: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        scorer: ScorerKind,
        /// Value used by the constant scorer.
        #[arg(long, default_value_t = 0.5)]
        constant: f64,
        /// Gaussian sigma for map smoothing; 0 disables it.
        #[arg(long)]
        sigma: Option<f64>,
        /// Resolution used when no checkpoint fixes it.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        save_maps: bool,
    },
    /// Feature variance/entropy and the effective receptive field.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Number of images used for variance and entropy.
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
    /// Merge per-category CSV tables and append the Mean row.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn dispatch(cli: Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(Error::Config(format!("device `{}` is not available; use cpu", cli.device)));
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));

    match cli.command {
        Command::Synth {
            categories,
            normals,
            anomalies,
            good_test,
            resolution,
        } => {
            let synth = SynthConfig {
                seed: cli.seed.unwrap_or(0),
                categories,
                normals_per_cat: normals,
                anomalies_per_cat: anomalies,
                good_test_per_cat: good_test,
                resolution,
            };
            let root = out("data");
            let summary = synth_dataset(&synth, &root)?;
            println!("wrote {} categories to {}", summary.categories.len(), root.display());
        }
        Command::Train {
            data,
            epochs,
            loss_mode,
            preset,
            batch_size,
            encoder_weights,
            log_diagnostics,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(m) = loss_mode {
                cfg.train.loss_mode = m.parse::<LossMode>()?;
            }
            if let Some(p) = preset {
                cfg.train.loss_mode = preset_loss(&p)?;
            }
            cfg.train.log_diagnostics |= log_diagnostics;
            cfg.validate()?;

            let dir = out("run");
            mkdir(&dir)?;
            fs::write(dir.join("config.toml"), cfg.to_toml()?).map_err(|e| Error::io(dir.join("config.toml"), e))?;
            let mut model = Model::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
            if let Some(w) = encoder_weights {
                load_archive(&w, &mut model.encoder)?;
            }
            let spec = DatasetSpec::new(&data, Split::Train, cfg.model.input_resolution.0);
            let spec = DatasetSpec {
                resolution: cfg.model.input_resolution,
                ..spec
            };
            let samples = load_dataset(&spec)?;
            let mut step_log = create_file(&dir.join("train_log.jsonl"))?;
            let mut diag_log = if cfg.train.log_diagnostics {
                Some(create_file(&dir.join("diagnostics.jsonl"))?)
            } else {
                None
            };
            let mut logs = TrainLogs {
                steps: &mut step_log,
                diagnostics: diag_log.as_mut().map(|w| (w as &mut dyn std::io::Write, cfg.diagnostics)),
            };
            let summary = train(&mut model, &samples, &cfg.train, &mut logs)?;
            if let Some(mut w) = diag_log {
                std::io::Write::flush(&mut w).map_err(|e| Error::io(dir.join("diagnostics.jsonl"), e))?;
            }
            save_checkpoint(&dir.join("checkpoint"), &model)?;
            write_json(&dir.join("train_summary.json"), &summary)?;
            println!(
                "trained {} steps over {} epochs, final loss {:.6}",
                summary.steps, summary.epochs, summary.final_loss
            );
        }
        Command::Eval {
            data,
            checkpoint,
            scorer,
            constant,
            sigma,
            resolution,
            save_maps,
        } => {
            if let Some(s) = sigma {
                cfg.eval.smoothing_sigma = s;
            }
            cfg.eval.save_maps |= save_maps;
            let model = checkpoint.as_deref().map(load_checkpoint::<f32>).transpose()?;
            let res = model.as_ref().map(|m| m.config.input_resolution).unwrap_or((resolution, resolution));
            let spec = DatasetSpec {
                resolution: res,
                ..DatasetSpec::new(&data, Split::Test, res.0)
            };
            let samples = load_dataset(&spec)?;
            let scorer: Box<dyn Scorer + '_> = match scorer {
                ScorerKind::Model => Box::new(ModelScorer {
                    model: model
                        .as_ref()
                        .ok_or_else(|| Error::Config("the model scorer needs --checkpoint".into()))?,
                    smoothing_sigma: cfg.eval.smoothing_sigma,
                }),
                ScorerKind::Oracle => Box::new(OracleScorer),
                ScorerKind::Constant => Box::new(ConstantScorer(constant)),
            };
            let dir = out("eval");
            mkdir(&dir)?;
            let maps = cfg.eval.save_maps.then(|| dir.join("maps"));
            let result = evaluate(scorer.as_ref(), &samples, &cfg.eval, &spec.identity(), maps.as_deref())?;
            write_reports(&dir, &result)?;
            let row = result.mean.percent_row();
            println!("I-AUROC {} AUPRO {} mAD {}", row[0], row[6], row[7]);
        }
        Command::Diagnose {
            data,
            checkpoint,
            split,
            limit,
        } => {
            cfg.diagnostics.validate()?;
            let model = load_checkpoint::<f32>(&checkpoint)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let res = model.config.input_resolution;
            let spec = DatasetSpec {
                resolution: res,
                ..DatasetSpec::new(&data, split, res.0)
            };
            let samples = load_dataset(&spec)?;
            let probe = &samples[..samples.len().min(limit.max(1))];
            let enc = encode_samples(&model, probe, cfg.train.batch_size)?;
            let dec = crate::model::Reconstructor::infer(&model.student, &enc);

            let erf_size = cfg.diagnostics.erf_input_size;
            let erf_spec = DatasetSpec {
                resolution: (erf_size, erf_size),
                ..spec.clone()
            };
            let erf_sample = load_dataset(&erf_spec)?.swap_remove(0);
            let erf = erf_map(&model, &image_batch::<f32>(&[&erf_sample]))?;

            let dir = out("diagnose");
            mkdir(&dir)?;
            let (h, w) = erf.dim();
            let png = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                Luma([(erf[[y as usize, x as usize]] * 255.0).round() as u8])
            });
            let erf_path = dir.join("erf.png");
            png.save(&erf_path).map_err(|e| Error::Image {
                path: erf_path.clone(),
                source: e,
            })?;

            #[derive(Serialize)]
            struct Report {
                images: usize,
                encoder_variance: f64,
                decoder_variance: f64,
                encoder_entropy: f64,
                decoder_entropy: f64,
                erf_input_size: usize,
                theoretical_receptive_field: [(isize, isize); 2],
                encoder_grn_active: bool,
            }
            let report = Report {
                images: probe.len(),
                encoder_variance: feature_variance(&enc),
                decoder_variance: feature_variance(&dec),
                encoder_entropy: feature_entropy(&enc, &cfg.diagnostics)?,
                decoder_entropy: feature_entropy(&dec, &cfg.diagnostics)?,
                erf_input_size: erf_size,
                theoretical_receptive_field: theoretical_receptive_field(&model.encoder, (erf_size, erf_size)),
                encoder_grn_active: encoder_grn_active(&model.encoder),
            };
            write_json(&dir.join("diagnostics.json"), &report)?;
            println!(
                "encoder variance {:.3e} entropy {:.3}; decoder variance {:.3e} entropy {:.3}",
                report.encoder_variance, report.encoder_entropy, report.decoder_variance, report.decoder_entropy
            );
        }
        Command::Report { inputs } => {
            let target = out("report.csv");
            let target = if target.extension().is_some_and(|e| e == "csv") {
                target
            } else {
                mkdir(&target)?;
                target.join("report.csv")
            };
            let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            let rows = merge(&refs)?;
            write_merged(&target, &rows)?;
            println!("wrote {} rows to {}", rows.len(), target.display());
        }
    }
    Ok(())
}
