//! `mee` subcommands.

use std::fs::{self, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mee_core::data::{gen_synthetic, SynthConfig, SynthModality};
use mee_core::eval::{multiple_choice_eval, text_to_video_eval, video_to_text_eval};
use mee_core::gradcheck::{self, Fault};
use serde_json::json;

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{self, Dataset};
use crate::embed;
use crate::error::{Error, Result};
use crate::report::{MultipleChoiceJson, RetrievalJson};
use crate::trainer::{self, Trainer};

pub const DEFAULT_POOL: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "mee", version, about = "Mixture-of-embedding-experts text/video retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    T2v,
    V2t,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    GeuSign,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes last.ckpt, best.ckpt and train_log.jsonl into --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON config; keys override the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base preset when no config file names one.
        #[arg(long, value_parser = TrainConfig::PRESETS)]
        preset: Option<String>,
        /// Image-caption dataset mixed in when alpha > 0.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint; prints a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        /// Retrieval pool size; defaults to min(1000, dataset size).
        #[arg(long)]
        pool: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export text and video joint embeddings as MEEB matrices.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
    /// Write a synthetic latent-factor dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Missing rate per modality, e.g. `audio=0.3`. Repeatable.
        #[arg(long = "missing", value_parser = parse_rate)]
        missing: Vec<(String, f64)>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Datasets with the same world seed share one latent space.
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        /// Emit single-frame appearance-only image samples.
        #[arg(long)]
        images: bool,
        /// Attach 5-way multiple-choice items.
        #[arg(long)]
        mc: bool,
        /// Comma-separated `name:dim` list; defaults to appearance:24,motion:16,audio:12.
        #[arg(long)]
        modalities: Option<String>,
        #[arg(long)]
        word_dim: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
}

fn parse_rate(s: &str) -> std::result::Result<(String, f64), String> {
    let (name, rate) = s.split_once('=').ok_or_else(|| format!("expected name=rate, got {s:?}"))?;
    let rate: f64 = rate.parse().map_err(|e| format!("{rate:?}: {e}"))?;
    Ok((name.to_string(), rate))
}

fn parse_modalities(s: &str) -> Result<Vec<SynthModality>> {
    s.split(',')
        .map(|item| {
            let (name, dim) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected name:dim, got {item:?}")))?;
            let dim = dim
                .parse()
                .map_err(|e| Error::Config(format!("{dim:?}: {e}")))?;
            Ok(SynthModality {
                name: name.to_string(),
                dim,
                missing_rate: 0.0,
            })
        })
        .collect()
}

fn warn(message: &str) {
    eprintln!("{}", json!({ "warning": message }));
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train {
            data,
            out,
            config,
            preset,
            images,
            resume,
            epochs,
            seed,
        } => {
            let mut cfg = match (&config, &preset) {
                (Some(path), _) => {
                    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    let mut value: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
                    if let (Some(p), Some(obj)) = (&preset, value.as_object_mut()) {
                        obj.entry("preset").or_insert_with(|| json!(p));
                    }
                    TrainConfig::from_json(&value.to_string())?
                }
                (None, Some(p)) => TrainConfig::preset(p)?,
                (None, None) => TrainConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            train(&cfg, &data, images.as_deref(), &out, resume.as_deref(), stdout)
        }
        Command::Eval {
            checkpoint,
            data,
            task,
            pool,
            seed,
        } => {
            let report = evaluate(&checkpoint, &data, task, pool, seed)?;
            writeln!(stdout, "{report}").map_err(|e| Error::io("<stdout>", e))
        }
        Command::Embed { checkpoint, data, out } => {
            let ck = checkpoint::load(&checkpoint)?;
            let ds = Dataset::open(&data)?;
            for m in ds.unused_modalities(ck.params.config()) {
                warn(&format!("dataset modality {m:?} is not used by the checkpoint"));
            }
            let e = embed::compute(&ck.params, &ds)?;
            embed::write(&out, &e)?;
            writeln!(stdout, "{}", json!({ "n": e.ids.len(), "dim": ck.params.joint_dim() }))
                .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Gradcheck {
            seed,
            seeds,
            inject_fault,
        } => {
            let fault = inject_fault.map(|FaultArg::GeuSign| Fault::GeuSignFlip);
            let report = gradcheck::run_all(seed, seeds.max(1), fault)?;
            let w = |e| Error::io("<stdout>", e);
            writeln!(stdout, "{:<10} {:<40} {:>12} {:>8}  status", "layer", "slot", "max_rel_err", "checked").map_err(w)?;
            // One row per (layer, slot), worst case over seeds.
            let mut rows: Vec<(&str, &str, f64, usize)> = Vec::new();
            for s in &report.slots {
                match rows.iter_mut().find(|r| r.0 == s.layer && r.1 == s.slot) {
                    Some(r) => {
                        r.2 = r.2.max(s.max_rel_error);
                        r.3 += s.checked;
                    }
                    None => rows.push((s.layer, &s.slot, s.max_rel_error, s.checked)),
                }
            }
            for (layer, slot, err, checked) in &rows {
                let status = if *err <= gradcheck::REL_TOLERANCE { "pass" } else { "FAIL" };
                writeln!(stdout, "{layer:<10} {slot:<40} {err:>12.3e} {checked:>8}  {status}").map_err(w)?;
            }
            let failed = rows.iter().filter(|r| r.2 > gradcheck::REL_TOLERANCE).count();
            if failed > 0 {
                return Err(Error::GradcheckFailed { failed });
            }
            Ok(())
        }
        Command::Synth {
            out,
            n,
            missing,
            seed,
            world_seed,
            images,
            mc,
            modalities,
            word_dim,
            noise,
        } => {
            let mut cfg = SynthConfig {
                n_pairs: n,
                seed,
                world_seed,
                images,
                id_prefix: if images { "img".into() } else { "vid".into() },
                ..SynthConfig::default()
            };
            if let Some(m) = modalities {
                cfg.modalities = parse_modalities(&m)?;
            }
            if let Some(d) = word_dim {
                cfg.word_dim = d;
            }
            if let Some(x) = noise {
                cfg.noise = x;
            }
            for (name, rate) in &missing {
                let m = cfg
                    .modalities
                    .iter_mut()
                    .find(|m| &m.name == name)
                    .ok_or_else(|| Error::Config(format!("--missing names unknown modality {name:?}")))?;
                m.missing_rate = *rate;
            }
            let anchor = cfg.anchor_modality();
            if cfg.modalities[anchor].missing_rate > 0.0 {
                warn(&format!(
                    "modality {:?} anchors every sample and is never dropped",
                    cfg.modalities[anchor].name
                ));
            }
            let ds = gen_synthetic(&cfg)?;
            let contents = dataset::synthetic_contents(&ds, mc.then_some(seed));
            dataset::write_dataset(&out, &contents)?;
            writeln!(stdout, "{}", json!({ "n": ds.pairs.len(), "out": out.display().to_string() }))
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn train(
    cfg: &TrainConfig,
    data: &Path,
    images: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut ds = Dataset::open(data)?;
    ds.set_caption_cap(cfg.caption_cap)?;
    let model = cfg.model_config(ds.meta())?;
    for m in ds.unused_modalities(&model) {
        warn(&format!("dataset modality {m:?} is not used by the model"));
    }
    let pairs = ds.pairs_for(&model)?;
    let image_pairs = match (cfg.alpha > 0.0, images) {
        (true, Some(dir)) => {
            let mut img = Dataset::open(dir)?;
            img.set_caption_cap(cfg.caption_cap)?;
            img.pairs_for(&model)?
        }
        (true, None) => return Err(Error::Config("alpha > 0 needs --images".into())),
        (false, Some(_)) => {
            warn("alpha is 0; --images is ignored");
            Vec::new()
        }
        (false, None) => Vec::new(),
    };
    let trainer = Trainer::new(cfg, out);
    let resumed = resume.map(checkpoint::load).transpose()?;
    let start = trainer.initial(model, resumed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(trainer::LOG);
    let log_file = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let outcome = trainer.run(start, &pairs, &image_pairs, &mut log)?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let last = outcome.log.last();
    writeln!(
        stdout,
        "{}",
        json!({
            "epochs": outcome.state.epoch,
            "steps": outcome.state.step,
            "final_loss": last.map(|l| l.loss),
            "best_epoch": outcome.state.best_epoch,
        })
    )
    .map_err(|e| Error::io("<stdout>", e))
}

/// Report JSON for `task`.
pub fn evaluate(checkpoint_path: &Path, data: &Path, task: Task, pool: Option<usize>, seed: u64) -> Result<String> {
    let ck = checkpoint::load(checkpoint_path)?;
    let ds = Dataset::open(data)?;
    let config = ck.params.config();
    for m in ds.unused_modalities(config) {
        warn(&format!("dataset modality {m:?} is not used by the checkpoint"));
    }
    let text = match task {
        Task::Mc => {
            let items = ds.multiple_choice_for(config)?;
            let r = multiple_choice_eval(&ck.params, &items)?;
            serde_json::to_string(&MultipleChoiceJson::from(&r))
        }
        Task::T2v | Task::V2t => {
            let pairs = ds.pairs_for(config)?;
            let n_pool = pool.unwrap_or(DEFAULT_POOL.min(pairs.len()));
            let r = if task == Task::T2v {
                text_to_video_eval(&ck.params, &pairs, n_pool, seed)?
            } else {
                video_to_text_eval(&ck.params, &pairs, n_pool, seed)?
            };
            serde_json::to_string(&RetrievalJson::from(&r))
        }
    };
    Ok(text.expect("report serializes"))
}

/// Parses arguments, runs the command and reports errors as JSON on stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("{}", json!({ "error": e.code(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
