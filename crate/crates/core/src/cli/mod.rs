//! Command-line orchestration: configuration, training, inference,
//! evaluation, receptive-field analysis and synthetic data generation.

mod config;
mod infer;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{DatasetMode, RunConfig};
pub use infer::{
    evaluate_files, infer_corpus, infer_sequence, load_ground_truth, video_results, window_to_video,
};
pub use train::{
    load_model, train, training_samples, Sample, StepRecord, TrainOutput, CHECKPOINT_DIR, LOG_FILE,
};

use crate::data::{
    load_manifest, synthetic_corpus, write_corpus, Manifest, ManifestEntry, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::MetricConfig;
use crate::inference::{load_proposals, save_proposals};
use crate::rfanalyze::{long_path_stack, model_stack, Analysis};

/// Entries of `subset`, plus entries that carry no subset at all.
pub fn select_subset<'a>(
    manifest: &'a Manifest,
    subset: &str,
) -> Vec<(&'a String, &'a ManifestEntry)> {
    manifest
        .iter()
        .filter(|(_, e)| e.subset.as_deref().is_none_or(|s| s == subset))
        .collect()
}

/// Process exit status for an error: 3 for numeric failures, 2 for bad
/// configuration or inputs, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numeric(_) => 3,
        Error::Config(_)
        | Error::Dimension(_)
        | Error::Format(_)
        | Error::Io(_)
        | Error::Json(_) => 2,
        Error::Contract(_) | Error::SkipTerm(_) => 1,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dcan",
    version,
    about = "Temporal action proposals with dual context aggregation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    GenData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a corpus and write checkpoints plus a JSON-lines loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Corpus directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate proposals for the evaluation subset of a corpus.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory or manifest file.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a proposal file against ground truth.
    Eval {
        #[arg(long)]
        proposals: PathBuf,
        /// Annotation JSON, or a corpus directory / manifest.
        #[arg(long)]
        annotations: PathBuf,
        /// Run configuration supplying the metric settings and subset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the receptive field of the configured network.
    AnalyzeRf {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn gen_data(spec: &SyntheticSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    write_corpus(out, &synthetic_corpus(spec)?)
}

pub fn analyze_rf(cfg: &RunConfig) -> Result<String> {
    let full = Analysis::new(&model_stack(&cfg.model))?;
    let long = Analysis::new(&long_path_stack(&cfg.model.schedule()))?;
    Ok(format!(
        "base network + context blocks\n{full}\nlong (dilated) paths only\n{long}"
    ))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out, seed } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let manifest = gen_data(&spec, &out)?;
            println!("wrote {} videos to {}", manifest.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            seed,
        } => {
            let cfg = run_config(&config, seed)?;
            let (manifest, root) = load_manifest(&data)?;
            let samples = training_samples(&cfg, &manifest, &root)?;
            log::info!("{} training samples", samples.len());
            let out = TrainOutput { dir: out };
            let model = train(&cfg, &samples, Some(&out), |r| {
                log::debug!("step {} loss {:.5}", r.step, r.loss.total);
            })?;
            println!(
                "checkpoint {} ({})",
                out.checkpoint().display(),
                model.params().fingerprint()
            );
        }
        Command::Infer {
            config,
            checkpoint,
            features,
            out,
            seed,
        } => {
            let cfg = run_config(&config, seed)?;
            let model = load_model(&cfg, &checkpoint)?;
            let (manifest, root) = load_manifest(&features)?;
            let proposals = infer_corpus(&model, &cfg, &manifest, &root)?;
            save_proposals(&out, &proposals)?;
            println!(
                "wrote proposals for {} videos to {}",
                proposals.len(),
                out.display()
            );
        }
        Command::Eval {
            proposals,
            annotations,
            config,
            out,
        } => {
            let (metric, subset) = match config {
                Some(p) => {
                    let cfg = RunConfig::load(&p)?;
                    (cfg.metric, Some(cfg.eval_subset))
                }
                None => (MetricConfig::default(), None),
            };
            let proposals = load_proposals(&proposals)?;
            let gt = load_ground_truth(&annotations, subset.as_deref())?;
            let (metrics, _) = evaluate_files(&proposals, &gt, &metric)?;
            if let Some(out) = out {
                write_json(&out, &metrics)?;
            }
            print!("{metrics}");
        }
        Command::AnalyzeRf { config } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            print!("{}", analyze_rf(&cfg)?);
        }
    }
    Ok(())
}
