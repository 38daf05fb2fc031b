//! Argument parsing and subcommand routing for the `wrinkleforge` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wrinkleforge::fusion;
use wrinkleforge::image::{self, BinaryMask};
use wrinkleforge::metrics::{self, EvalResult};
use wrinkleforge::micronet::load_checkpoint;
use wrinkleforge::synth::{self, SynthSpec};
use wrinkleforge::texture::{self, GaussianKernel};
use wrinkleforge::trainer::{
    self, ExperimentConfig, InputMode, SplitManifest, TrainConfig, CHECKPOINT_FILE, JOURNAL_FILE,
};
use wrinkleforge::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Outcome of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandResult {
    pub exit_code: i32,
    /// Main JSON artifact written by the command, if any.
    pub report_path: Option<PathBuf>,
}

#[derive(Parser, Debug)]
#[command(
    name = "wrinkleforge",
    version,
    about = "Texture-map weak supervision and micro U-Net training for facial wrinkle segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Clone)]
struct Jobs {
    /// Worker threads for batch work (default: logical cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Jobs {
    fn get(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

#[derive(Args, Debug, Clone)]
struct Seed {
    /// Seed for all randomness; overrides the config seed.
    #[arg(long, env = "WRINKLEFORGE_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic wrinkle corpus.
    Synth {
        /// Generator spec (JSON); defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the number of images.
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        jobs: Jobs,
        #[command(flatten)]
        common: Common,
    },
    /// Compute masked texture maps (weak labels) for a directory of images.
    GenWeakLabels {
        /// Dataset root; supplies images/, face_masks/ and weak_labels/ defaults.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Image directory.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Face mask directory.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Gaussian kernel side (odd).
        #[arg(long, default_value_t = texture::DEFAULT_KSIZE)]
        ksize: usize,
        /// Gaussian standard deviation.
        #[arg(long, default_value_t = texture::DEFAULT_SIGMA)]
        sigma: f64,
        #[command(flatten)]
        jobs: Jobs,
        #[command(flatten)]
        common: Common,
    },
    /// Fuse annotator masks by pixel-wise majority vote.
    Fuse {
        /// Directory with one subdirectory of masks per annotator.
        #[arg(long)]
        annotations: PathBuf,
        /// Output directory for fused masks.
        #[arg(long)]
        out: PathBuf,
        /// Minimum number of annotators marking a pixel.
        #[arg(long, default_value_t = 2)]
        threshold: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Pairwise inter-annotator agreement (Jaccard and Pearson).
    Agreement {
        /// Directory with one subdirectory of masks per annotator.
        #[arg(long)]
        annotations: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Weakly supervised pretraining (RGB to masked texture map).
    Pretrain {
        /// Training config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Run directory (journal, checkpoint, split).
        #[arg(long, default_value = "runs/pretrain")]
        out: PathBuf,
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        common: Common,
    },
    /// Supervised finetuning, optionally from a pretrained checkpoint.
    Finetune {
        /// Training config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Pretrained checkpoint to transfer from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Config that produced --init; its hash must match the checkpoint unless --force.
        #[arg(long, requires = "init")]
        init_config: Option<PathBuf>,
        /// Run directory.
        #[arg(long, default_value = "runs/finetune")]
        out: PathBuf,
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain, then finetune the four ablation rows, and report test metrics.
    Experiment {
        /// Experiment config: {"pretrain": ..., "finetune": ..., "seeds": [...]}.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Run a single seed instead of the configured list.
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        jobs: Jobs,
        #[command(flatten)]
        common: Common,
    },
    /// Segmentation metrics for a checkpoint on a dataset, or for a directory of predicted masks.
    Evaluate {
        /// Finetuned checkpoint.
        #[arg(long, conflicts_with = "pred")]
        checkpoint: Option<PathBuf>,
        /// Dataset root (with --checkpoint).
        #[arg(long, requires = "checkpoint")]
        dataset: Option<PathBuf>,
        /// Split manifest; evaluates its test ids (default: every image).
        #[arg(long, requires = "checkpoint")]
        split: Option<PathBuf>,
        /// Directory of predicted masks.
        #[arg(long, requires = "truth")]
        pred: Option<PathBuf>,
        /// Directory of reference masks.
        #[arg(long, requires = "pred")]
        truth: Option<PathBuf>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Check a corpus directory for layout, binarity and consistency violations.
    Validate {
        /// Corpus directory.
        #[arg(long)]
        corpus: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

struct Outcome {
    summary: String,
    report_path: Option<PathBuf>,
    /// Reported problems that are not errors in the command itself.
    data_failure: bool,
}

impl Outcome {
    fn ok(summary: String, report_path: Option<PathBuf>) -> Self {
        Self {
            summary,
            report_path,
            data_failure: false,
        }
    }
}

/// Parses `argv` (including the program name), runs the command and prints its summary.
pub fn dispatch<I, T>(argv: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return CommandResult {
                exit_code: code,
                report_path: None,
            };
        }
    };
    match run(cli.command) {
        Ok(out) => {
            print!("{}", out.summary);
            CommandResult {
                exit_code: if out.data_failure { EXIT_DATA } else { EXIT_OK },
                report_path: out.report_path,
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            CommandResult {
                exit_code: classify(&e),
                report_path: None,
            }
        }
    }
}

fn classify(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<Error>() {
        Some(Error::OutputExists(_)) => EXIT_USAGE,
        Some(err) if err.is_data_error() => EXIT_DATA,
        Some(_) => EXIT_RUNTIME,
        None if e.downcast_ref::<UsageError>().is_some() => EXIT_USAGE,
        None => EXIT_RUNTIME,
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Refuses an existing non-empty directory or existing file unless forced.
fn guard_output(path: &Path, force: bool) -> anyhow::Result<()> {
    if force || !path.exists() {
        return Ok(());
    }
    let occupied = if path.is_dir() {
        fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .next()
            .is_some()
    } else {
        true
    };
    if occupied {
        return Err(Error::OutputExists(path.to_path_buf()).into());
    }
    Ok(())
}

fn write_report<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Synth {
            spec,
            out,
            count,
            seed,
            jobs,
            common,
        } => {
            guard_output(&out, common.force)?;
            let mut s = match spec {
                Some(p) => SynthSpec::load(p)?,
                None => SynthSpec::default(),
            };
            if let Some(c) = count {
                s.count = c;
            }
            if let Some(seed) = seed.seed {
                s.seed = seed;
            }
            let manifest = synth::generate(&s, &out, jobs.get())?;
            let in_band = manifest.samples.iter().filter(|e| e.in_band).count();
            Ok(Outcome::ok(
                format!(
                    "generated {} images ({}x{}) in {}; {} with annotator agreement in band\n",
                    manifest.samples.len(),
                    s.size,
                    s.size,
                    out.display(),
                    in_band
                ),
                Some(out.join(synth::MANIFEST_FILE)),
            ))
        }
        Command::GenWeakLabels {
            dataset,
            images,
            masks,
            out,
            ksize,
            sigma,
            jobs,
            common,
        } => {
            let pick = |given: Option<PathBuf>, sub: &str| {
                given
                    .or_else(|| dataset.as_ref().map(|d| d.join(sub)))
                    .ok_or_else(|| usage(format!("--{sub} or --dataset is required")))
            };
            let images = pick(images, trainer::IMAGES_DIR)
                .map_err(|_| usage("--images or --dataset is required"))?;
            let masks = pick(masks, trainer::FACE_DIR)
                .map_err(|_| usage("--masks or --dataset is required"))?;
            let out = pick(out, trainer::WEAK_DIR)
                .map_err(|_| usage("--out or --dataset is required"))?;
            guard_output(&out, common.force)?;
            let kernel = GaussianKernel::new(ksize, sigma)?;
            let report = texture::batch_weak_labels(&images, &masks, &out, &kernel, jobs.get())?;
            let path = out.join("batch_report.json");
            write_report(&path, &report)?;
            let mut summary = format!(
                "wrote {} weak labels to {}\n",
                report.processed,
                out.display()
            );
            for f in &report.failed {
                summary.push_str(&format!("failed {}: {}\n", f.id, f.reason));
            }
            Ok(Outcome {
                summary,
                report_path: Some(path),
                data_failure: !report.failed.is_empty(),
            })
        }
        Command::Fuse {
            annotations,
            out,
            threshold,
            common,
        } => {
            guard_output(&out, common.force)?;
            let n = fusion::fuse_directory(&annotations, &out, threshold)?;
            Ok(Outcome::ok(
                format!(
                    "fused {n} images (threshold {threshold}) into {}\n",
                    out.display()
                ),
                None,
            ))
        }
        Command::Agreement {
            annotations,
            out,
            common,
        } => {
            let report = fusion::agreement_directory(&annotations)?;
            if let Some(p) = &out {
                guard_output(p, common.force)?;
                write_report(p, &report)?;
            }
            let a = &report.pooled.averages;
            let mut summary = format!(
                "pooled over {} images: mean Jaccard {:.4}, mean Pearson {:.4}\n",
                report.per_image.len() + report.skipped.len(),
                a.jaccard,
                a.pearson
            );
            for p in &report.pooled.pairs {
                summary.push_str(&format!(
                    "  {}-{}: Jaccard {:.4}, Pearson {:.4}\n",
                    p.a, p.b, p.jaccard, p.pearson
                ));
            }
            if !report.skipped.is_empty() {
                summary.push_str(&format!(
                    "{} images skipped (constant mask)\n",
                    report.skipped.len()
                ));
            }
            Ok(Outcome::ok(summary, out))
        }
        Command::Pretrain {
            config,
            out,
            seed,
            common,
        } => {
            guard_output(&out, common.force)?;
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = seed.seed {
                cfg = cfg.with_seed(s);
            }
            let outcome = trainer::pretrain(&cfg, &out)?;
            Ok(Outcome::ok(
                train_summary("pretrain", "val MSE", &outcome, &out),
                Some(out.join(JOURNAL_FILE)),
            ))
        }
        Command::Finetune {
            config,
            init,
            init_config,
            out,
            seed,
            common,
        } => {
            guard_output(&out, common.force)?;
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = seed.seed {
                cfg = cfg.with_seed(s);
            }
            let expected = match &init_config {
                Some(p) => Some(TrainConfig::load(p)?.config_hash()),
                None => None,
            };
            let ckpt = match &init {
                Some(p) => Some(load_checkpoint(p, expected.as_deref(), common.force)?),
                None => None,
            };
            let outcome = trainer::finetune(&cfg, ckpt.as_ref(), &out)?;
            Ok(Outcome::ok(
                train_summary("finetune", "val JSI", &outcome, &out),
                Some(out.join(JOURNAL_FILE)),
            ))
        }
        Command::Experiment {
            config,
            out,
            seed,
            jobs,
            common,
        } => {
            guard_output(&out, common.force)?;
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed.seed {
                cfg.seeds = vec![s];
            }
            let report = trainer::run_experiment(&cfg, &out, jobs.get())?;
            Ok(Outcome::ok(
                report.summary(),
                Some(out.join(trainer::REPORT_FILE)),
            ))
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            split,
            pred,
            truth,
            out,
            common,
        } => {
            if let Some(p) = &out {
                guard_output(p, common.force)?;
            }
            let report = match (checkpoint, pred, truth) {
                (Some(ck), None, None) => {
                    let root =
                        dataset.ok_or_else(|| usage("--dataset is required with --checkpoint"))?;
                    evaluate_checkpoint(&ck, &root, split.as_deref())?
                }
                (None, Some(p), Some(t)) => evaluate_dirs(&p, &t)?,
                _ => {
                    return Err(usage(
                        "pass --checkpoint with --dataset, or --pred with --truth",
                    ))
                }
            };
            if let Some(p) = &out {
                write_report(p, &report)?;
            }
            let m = &report.micro;
            Ok(Outcome::ok(
                format!(
                    "{} images: JSI {:.4}, F1 {:.4}, precision {:.4}, recall {:.4}, accuracy {:.4}\n",
                    report.per_image.len(),
                    m.jsi,
                    m.f1,
                    m.precision,
                    m.recall,
                    m.accuracy
                ),
                out,
            ))
        }
        Command::Validate {
            corpus,
            out,
            common,
        } => {
            let report = synth::validate(&corpus);
            if let Some(p) = &out {
                guard_output(p, common.force)?;
                write_report(p, &report)?;
            }
            let mut summary = format!(
                "{} images checked, {} violations\n",
                report.images_checked,
                report.violations.len()
            );
            for v in &report.violations {
                summary.push_str(&format!("  {:?} {}: {}\n", v.kind, v.file, v.detail));
            }
            Ok(Outcome {
                summary,
                report_path: out,
                data_failure: !report.is_clean(),
            })
        }
    }
}

fn train_summary(stage: &str, metric: &str, o: &trainer::TrainOutcome, out: &Path) -> String {
    format!(
        "{stage}: {} epochs, {metric} {:.5} at epoch 0, best {:.5} at epoch {}; checkpoint {}\n",
        o.journal.len(),
        o.initial_metric,
        o.best_metric,
        o.best_epoch,
        out.join(CHECKPOINT_FILE).display()
    )
}

#[derive(Debug, Serialize)]
struct ImageScore {
    id: String,
    jsi: f64,
    f1: f64,
    accuracy: f64,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    micro: EvalResult,
    per_image: Vec<ImageScore>,
}

fn score(id: String, r: &EvalResult) -> ImageScore {
    ImageScore {
        id,
        jsi: r.jsi,
        f1: r.f1,
        accuracy: r.accuracy,
    }
}

fn evaluate_checkpoint(
    ck_path: &Path,
    root: &Path,
    split: Option<&Path>,
) -> anyhow::Result<EvalReport> {
    let ck = load_checkpoint(ck_path, None, false)?;
    let mode = match ck.spec.in_channels {
        3 => InputMode::Rgb,
        4 => InputMode::RgbTexture,
        n => bail!(Error::IncompatibleCheckpoint(format!("{n} input channels"))),
    };
    let ids = match split {
        Some(p) => {
            let text = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let m: SplitManifest = serde_json::from_slice(&text).map_err(|source| Error::Json {
                path: p.to_path_buf(),
                source,
            })?;
            m.test
        }
        None => trainer::dataset_ids(root)?,
    };
    let samples = trainer::load_samples(root, &ids, true)?;
    let model = ck.to_model()?;
    let preds = trainer::predict_samples(&model, &samples, mode, 8)?;
    let truths: Vec<BinaryMask> = samples
        .iter()
        .map(|s| s.truth_mask().ok_or_else(|| anyhow!("missing truth")))
        .collect::<anyhow::Result<_>>()?;
    report_for(ids, &preds, &truths)
}

fn evaluate_dirs(pred: &Path, truth: &Path) -> anyhow::Result<EvalReport> {
    let ids = texture::list_png_ids(truth)?;
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for id in &ids {
        let file = format!("{id}.png");
        preds.push(image::load_mask(pred.join(&file))?);
        truths.push(image::load_mask(truth.join(&file))?);
    }
    report_for(ids, &preds, &truths)
}

fn report_for(
    ids: Vec<String>,
    preds: &[BinaryMask],
    truths: &[BinaryMask],
) -> anyhow::Result<EvalReport> {
    let micro = metrics::evaluate_dataset(preds.iter().zip(truths))?;
    let per_image = ids
        .into_iter()
        .zip(preds.iter().zip(truths))
        .map(|(id, (p, t))| Ok(score(id, &metrics::evaluate(p, t)?)))
        .collect::<anyhow::Result<_>>()?;
    Ok(EvalReport { micro, per_image })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn nine_subcommands() {
        let names: Vec<String> = Cli::command()
            .get_subcommands()
            .map(|c| c.get_name().to_string())
            .collect();
        assert_eq!(
            names,
            [
                "synth",
                "gen-weak-labels",
                "fuse",
                "agreement",
                "pretrain",
                "finetune",
                "experiment",
                "evaluate",
                "validate"
            ]
        );
    }

    #[test]
    fn usage_and_help_codes() {
        assert_eq!(dispatch(["wrinkleforge", "--help"]).exit_code, EXIT_OK);
        assert_eq!(
            dispatch(["wrinkleforge", "frobnicate"]).exit_code,
            EXIT_USAGE
        );
        assert_eq!(dispatch(["wrinkleforge"]).exit_code, EXIT_USAGE);
        assert_eq!(
            dispatch(["wrinkleforge", "fuse", "--annotations", "x"]).exit_code,
            EXIT_USAGE
        );
    }

    #[test]
    fn guard_refuses_non_empty_dirs() {
        let d = tempfile::tempdir().unwrap();
        guard_output(d.path(), false).unwrap();
        fs::write(d.path().join("f"), b"x").unwrap();
        let e = guard_output(d.path(), false).unwrap_err();
        assert_eq!(classify(&e), EXIT_USAGE);
        guard_output(d.path(), true).unwrap();
        guard_output(&d.path().join("f"), true).unwrap();
        assert!(guard_output(&d.path().join("f"), false).is_err());
    }
}
