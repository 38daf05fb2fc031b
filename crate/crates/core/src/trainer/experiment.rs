use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{write_json, ExperimentConfig, InputMode};
use super::data::{self, Sample};
use super::split::{label_subset, load_or_make_split};
use super::train::{evaluate_samples, finetune_on, pretrain_on, CHECKPOINT_FILE, SPLIT_FILE};
use crate::error::{Error, Result};
use crate::micronet::load_checkpoint;

pub const REPORT_FILE: &str = "report.json";

/// The four ablation rows: (name, texture-pretrained, input).
pub const ROWS: [(&str, bool, InputMode); 4] = [
    ("no_pretraining/rgb", false, InputMode::Rgb),
    ("no_pretraining/rgb_texture", false, InputMode::RgbTexture),
    ("texture_pretraining/rgb", true, InputMode::Rgb),
    (
        "texture_pretraining/rgb_texture",
        true,
        InputMode::RgbTexture,
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub pretrained: bool,
    pub input: InputMode,
    pub jsi: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub best_epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub train_labeled: usize,
    pub test_images: usize,
    pub rows: Vec<ReportRow>,
    /// Name of the row with the highest JSI (first listed wins ties).
    pub best_row: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub name: String,
    pub jsi: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub pretrain_config_hash: String,
    pub finetune_config_hash: String,
    pub runs: Vec<SeedReport>,
    /// Per-row medians over seeds.
    pub median: Vec<MedianRow>,
}

impl ExperimentReport {
    pub fn median_row(&self, name: &str) -> Option<&MedianRow> {
        self.median.iter().find(|r| r.name == name)
    }

    /// Plain-text table derived from the report.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:<34} {:>8} {:>8} {:>8}\n",
            "row (median over seeds)", "JSI", "F1", "Acc"
        );
        for r in &self.median {
            s.push_str(&format!(
                "{:<34} {:>8.4} {:>8.4} {:>8.4}\n",
                r.name, r.jsi, r.f1, r.accuracy
            ));
        }
        for run in &self.runs {
            s.push_str(&format!("seed {}: best row {}\n", run.seed, run.best_row));
        }
        s
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn pick(all: &BTreeMap<String, Sample>, ids: &[String]) -> Vec<Sample> {
    ids.iter().map(|id| all[id].clone()).collect::<Vec<_>>()
}

/// Pretrain, then finetune the four ablation rows for every seed, evaluating on each seed's test split.
///
/// Missing weak labels and fused ground truth are generated in the dataset first.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<ExperimentReport> {
    config.validate()?;
    let root = &config.finetune.dataset_root;
    data::ensure_weak_labels(root, jobs)?;
    data::ensure_ground_truth(root)?;
    let ids = data::dataset_ids(root)?;
    let all: BTreeMap<String, Sample> = data::load_samples(root, &ids, true)?
        .into_iter()
        .map(|s| (s.id.clone(), s))
        .collect();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut runs = Vec::new();
    for seed in config.seeds() {
        let dir = out_dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let pre_cfg = config.pretrain.clone().with_seed(seed);
        let fine_cfg = config.finetune.clone().with_seed(seed);
        let split = load_or_make_split(&dir.join(SPLIT_FILE), &ids, &fine_cfg.split, seed)?;
        let val = pick(&all, &split.val);
        let test = pick(&all, &split.test);
        let labeled_ids = label_subset(&split.train, fine_cfg.label_fraction, seed);
        let labeled = pick(&all, &labeled_ids);

        let pre_dir = dir.join("pretrain");
        pretrain_on(&pre_cfg, &pick(&all, &split.train), &val, &pre_dir)?;
        let pretrained = load_checkpoint(
            pre_dir.join(CHECKPOINT_FILE),
            Some(&pre_cfg.config_hash()),
            false,
        )?;

        let mut rows = Vec::new();
        for (name, use_init, input) in ROWS {
            let mut cfg = fine_cfg.clone();
            cfg.input = input;
            cfg.spec.in_channels = input.channels();
            let init = use_init.then_some(&pretrained);
            let row_dir = dir.join(name.replace('/', "-"));
            let outcome = finetune_on(&cfg, init, &labeled, &val, &row_dir)?;
            let model = outcome.checkpoint.to_model()?;
            let r = evaluate_samples(&model, &test, input, cfg.batch_size)?;
            rows.push(ReportRow {
                name: name.to_string(),
                pretrained: use_init,
                input,
                jsi: r.jsi,
                f1: r.f1,
                accuracy: r.accuracy,
                precision: r.precision,
                recall: r.recall,
                best_epoch: outcome.best_epoch,
            });
        }
        let best_row = rows
            .iter()
            .fold(None::<&ReportRow>, |best, r| match best {
                Some(b) if b.jsi >= r.jsi => Some(b),
                _ => Some(r),
            })
            .map(|r| r.name.clone())
            .unwrap_or_default();
        runs.push(SeedReport {
            seed,
            train_labeled: labeled.len(),
            test_images: test.len(),
            rows,
            best_row,
        });
    }

    let median = ROWS
        .iter()
        .map(|(name, _, _)| {
            let col = |f: fn(&ReportRow) -> f64| {
                let mut v: Vec<f64> = runs
                    .iter()
                    .flat_map(|r| r.rows.iter().filter(|row| row.name == *name).map(f))
                    .collect();
                median(&mut v)
            };
            MedianRow {
                name: name.to_string(),
                jsi: col(|r| r.jsi),
                f1: col(|r| r.f1),
                accuracy: col(|r| r.accuracy),
            }
        })
        .collect();
    let report = ExperimentReport {
        pretrain_config_hash: config.pretrain.config_hash(),
        finetune_config_hash: config.finetune.config_hash(),
        runs,
        median,
    };
    write_json(&out_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}
