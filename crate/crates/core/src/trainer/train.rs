use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{augment, sample_rng};
use super::config::{InputMode, Stage, TrainConfig};
use super::data::{self, batch_tensor, finetune_input, Sample};
use super::split::{label_subset, load_or_make_split, SplitManifest};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::losses::{self, DICE_SMOOTH};
use crate::metrics::{self, EvalResult};
use crate::micronet::{
    build, expand_input_channels, replace_head, save_checkpoint, Checkpoint, Model, Tensor4,
};
use crate::optim::AdamWState;
use crate::texture::TextureMap;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const SPLIT_FILE: &str = "split.json";
pub const CONFIG_FILE: &str = "config.json";

/// One line of the training journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub epoch: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation checkpoint (epoch 0 is the untrained network).
    pub checkpoint: Checkpoint,
    pub best_epoch: u64,
    pub best_metric: f64,
    /// Validation metric before any update.
    pub initial_metric: f64,
    pub journal: Vec<JournalEntry>,
}

/// What the network is trained to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// RGB to weak label, MSE, lower is better.
    Regress,
    /// Wrinkle segmentation, soft Dice, validation JSI (higher is better).
    Segment(InputMode),
}

impl Task {
    pub fn for_config(config: &TrainConfig) -> Self {
        match config.stage {
            Stage::Pretrain => Task::Regress,
            Stage::Finetune => Task::Segment(config.input),
        }
    }

    fn channels(self) -> usize {
        match self {
            Task::Regress => 3,
            Task::Segment(m) => m.channels(),
        }
    }

    fn input(self, samples: &[&Sample]) -> Result<Tensor4<f32>> {
        match self {
            Task::Regress => batch_tensor(samples, 3, |s, d| s.write_pretrain_input(d)),
            Task::Segment(m) => {
                batch_tensor(samples, m.channels(), |s, d| s.write_finetune_input(m, d))
            }
        }
    }

    fn loss(self, out: &Tensor4<f32>, samples: &[&Sample]) -> Result<(f64, Tensor4<f32>)> {
        match self {
            Task::Regress => {
                let target: Vec<f64> = samples
                    .iter()
                    .flat_map(|s| s.texture.iter().map(|&v| v as f64))
                    .collect();
                let pred: Vec<f64> = out.values().iter().map(|&v| v as f64).collect();
                let lv = losses::mse(&pred, &target)?;
                let grad =
                    Tensor4::from_vec(out.dims(), lv.grad.iter().map(|&g| g as f32).collect())?;
                Ok((lv.value, grad))
            }
            Task::Segment(_) => {
                let truths = samples
                    .iter()
                    .map(|s| {
                        s.truth.as_deref().ok_or_else(|| {
                            Error::DatasetMissing(format!("ground truth for {}", s.id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                dice_objective(out, &truths)
            }
        }
    }

    fn better(self, new: f64, old: f64) -> bool {
        match self {
            Task::Regress => new < old,
            Task::Segment(_) => new > old,
        }
    }

    /// Validation MSE over all pixels, or micro-averaged JSI.
    pub fn validate(self, model: &Model<f32>, val: &[Sample], batch: usize) -> Result<f64> {
        if val.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match self {
            Task::Regress => {
                let mut sq = 0.0;
                let mut count = 0usize;
                for chunk in val.chunks(batch.max(1)) {
                    let refs: Vec<&Sample> = chunk.iter().collect();
                    let out = model.infer(&self.input(&refs)?)?;
                    let target = refs.iter().flat_map(|s| s.texture.iter());
                    for (&p, &t) in out.values().iter().zip(target) {
                        let d = p as f64 - t as f64;
                        sq += d * d;
                    }
                    count += out.len();
                }
                Ok(sq / count as f64)
            }
            Task::Segment(m) => Ok(evaluate_samples(model, val, m, batch)?.jsi),
        }
    }
}

/// Softmax over the two channels, soft Dice against one-hot truth, gradient w.r.t. the logits.
pub fn dice_objective(logits: &Tensor4<f32>, truths: &[&[u8]]) -> Result<(f64, Tensor4<f32>)> {
    let [n, c, h, w] = logits.dims();
    let hw = h * w;
    if c != 2 || truths.len() != n || truths.iter().any(|t| t.len() != hw) {
        return Err(Error::ShapeMismatch(format!(
            "dice objective needs 2-channel logits matching {n} truth masks of {hw} pixels"
        )));
    }
    let mut rows = Vec::with_capacity(n * hw * 2);
    let mut onehot = Vec::with_capacity(n * hw * 2);
    for (i, t) in truths.iter().enumerate() {
        let s = logits.sample(i);
        for p in 0..hw {
            rows.push(s[p] as f64);
            rows.push(s[hw + p] as f64);
            let wrinkle = t[p] == 1;
            onehot.push(if wrinkle { 0.0 } else { 1.0 });
            onehot.push(if wrinkle { 1.0 } else { 0.0 });
        }
    }
    let probs = losses::softmax_rows(&rows, 2)?;
    let lv = losses::soft_dice(&probs, &onehot, 2, DICE_SMOOTH)?;
    let mut grad = vec![0.0f32; logits.len()];
    for i in 0..n {
        for p in 0..hw {
            let r = 2 * (i * hw + p);
            let (p0, p1) = (probs[r], probs[r + 1]);
            let (g0, g1) = (lv.grad[r], lv.grad[r + 1]);
            let dot = p0 * g0 + p1 * g1;
            grad[i * 2 * hw + p] = (p0 * (g0 - dot)) as f32;
            grad[i * 2 * hw + hw + p] = (p1 * (g1 - dot)) as f32;
        }
    }
    Ok((lv.value, Tensor4::from_vec(logits.dims(), grad)?))
}

/// Wrinkle where the wrinkle logit strictly exceeds the background logit.
pub fn logits_to_mask(sample_logits: &[f32], height: usize, width: usize) -> BinaryMask {
    let hw = height * width;
    let data = (0..hw)
        .map(|p| u8::from(sample_logits[hw + p] > sample_logits[p]))
        .collect();
    BinaryMask::new(height, width, data).expect("binary by construction")
}

pub fn predict_samples(
    model: &Model<f32>,
    samples: &[Sample],
    mode: InputMode,
    batch: usize,
) -> Result<Vec<BinaryMask>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let logits = model.infer(&Task::Segment(mode).input(&refs)?)?;
        for (i, s) in chunk.iter().enumerate() {
            out.push(logits_to_mask(logits.sample(i), s.height, s.width));
        }
    }
    Ok(out)
}

/// Micro-averaged metrics of the model's predictions against each sample's truth.
pub fn evaluate_samples(
    model: &Model<f32>,
    samples: &[Sample],
    mode: InputMode,
    batch: usize,
) -> Result<EvalResult> {
    let preds = predict_samples(model, samples, mode, batch)?;
    let truths = samples
        .iter()
        .map(|s| {
            s.truth_mask()
                .ok_or_else(|| Error::DatasetMissing(format!("ground truth for {}", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    metrics::evaluate_dataset(preds.iter().zip(truths.iter()))
}

fn input_mode_for(model: &Model<f32>) -> Result<InputMode> {
    let spec = model.spec();
    match (spec.in_channels, spec.out_channels) {
        (3, 2) => Ok(InputMode::Rgb),
        (4, 2) => Ok(InputMode::RgbTexture),
        (i, o) => Err(Error::IncompatibleCheckpoint(format!(
            "segmentation needs 3 or 4 inputs and 2 outputs, checkpoint has {i} / {o}"
        ))),
    }
}

/// Binary wrinkle mask for one image: face-masked RGB (plus texture / 255 for 4-channel models).
pub fn predict(
    ckpt: &Checkpoint,
    img: &Image,
    face: &BinaryMask,
    texture: Option<&TextureMap>,
) -> Result<BinaryMask> {
    let model: Model<f32> = ckpt.to_model()?;
    predict_with(&model, img, face, texture)
}

pub fn predict_with(
    model: &Model<f32>,
    img: &Image,
    face: &BinaryMask,
    texture: Option<&TextureMap>,
) -> Result<BinaryMask> {
    let mode = input_mode_for(model)?;
    let x = finetune_input(img, face, texture, mode)?;
    let logits = model.infer(&x)?;
    Ok(logits_to_mask(logits.sample(0), img.height(), img.width()))
}

fn snapshot(model: &Model<f32>, adam: &AdamWState, epoch: u64, hash: &str) -> Checkpoint {
    let mut ck = Checkpoint::from_model(model, epoch, hash);
    let names = model.param_names();
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.dims().to_vec()).collect();
    ck.optimizer_state = adam.to_named(&names, &shapes);
    ck.optimizer_step = adam.step;
    ck
}

/// Shared epoch loop. Writes the journal and the best checkpoint into `out_dir`.
pub fn train_loop(
    config: &TrainConfig,
    model: Model<f32>,
    train: &[Sample],
    val: &[Sample],
    out_dir: &Path,
) -> Result<TrainOutcome> {
    train_loop_with_warmup(config, model, train, val, out_dir, 0)
}

/// As [`train_loop`], but the first `head_epochs` epochs update only the head
/// (last conv weight and bias) at `config.head_warmup.lr` with their own
/// optimizer state; the schedule then starts from its epoch 0.
pub fn train_loop_with_warmup(
    config: &TrainConfig,
    mut model: Model<f32>,
    train: &[Sample],
    val: &[Sample],
    out_dir: &Path,
    head_epochs: u64,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let task = Task::for_config(config);
    if model.spec().in_channels != task.channels() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "model takes {} channels, task provides {}",
            model.spec().in_channels,
            task.channels()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    config.save(out_dir.join(CONFIG_FILE))?;
    let hash = config.config_hash();
    let batch = config.batch_size;

    let mut adam = AdamWState::for_params(config.optimizer, model.params());
    let head = model.params().len() - 2;
    let mut head_adam = AdamWState::for_params(config.optimizer, &model.params()[head..]);
    let initial_metric = task.validate(&model, val, batch)?;
    let mut best_metric = initial_metric;
    let mut best_epoch = 0;
    let mut best = snapshot(&model, &adam, 0, &hash);

    let journal_path = out_dir.join(JOURNAL_FILE);
    let mut journal_file =
        BufWriter::new(File::create(&journal_path).map_err(|e| Error::io(&journal_path, e))?);
    let mut journal = Vec::new();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let warming = epoch < head_epochs;
        let lr = if warming {
            config.head_warmup.lr
        } else {
            config.schedule.lr(epoch - head_epochs)
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut sample_rng(config.seed, epoch, u64::MAX));

        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let augmented: Vec<Sample> = chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = sample_rng(config.seed, epoch, (b * batch + j) as u64);
                    augment(&train[i], &config.augment, &mut rng)
                })
                .collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            let x = task.input(&refs)?;
            model.zero_grad();
            let out = model.forward(&x)?;
            let (loss, grad) = task.loss(&out, &refs)?;
            model.backward(&grad)?;
            if warming {
                head_adam.step_tensors(&mut model.params_mut()[head..], lr)?;
            } else {
                adam.step_tensors(model.params_mut(), lr)?;
            }
            loss_sum += loss * chunk.len() as f64;
        }
        model.clear_cache();

        let val_metric = task.validate(&model, val, batch)?;
        let entry = JournalEntry {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_metric,
            wall_ms: if config.log_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        let line = serde_json::to_string(&entry).expect("serializable");
        writeln!(journal_file, "{line}")
            .and_then(|_| journal_file.flush())
            .map_err(|e| Error::io(&journal_path, e))?;
        journal.push(entry);

        if task.better(val_metric, best_metric) {
            best_metric = val_metric;
            best_epoch = epoch + 1;
            best = snapshot(&model, &adam, epoch + 1, &hash);
        }
    }
    save_checkpoint(&best, out_dir.join(CHECKPOINT_FILE))?;
    Ok(TrainOutcome {
        checkpoint: best,
        best_epoch,
        best_metric,
        initial_metric,
        journal,
    })
}

fn split_for(config: &TrainConfig, out_dir: &Path, ids: &[String]) -> Result<SplitManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    load_or_make_split(&out_dir.join(SPLIT_FILE), ids, &config.split, config.seed)
}

/// Pretraining on the train split of `config.dataset_root`; the split is written to `out_dir`.
pub fn pretrain(config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    if config.stage != Stage::Pretrain {
        return Err(Error::InvalidConfig(
            "pretrain needs a pretrain-stage config".into(),
        ));
    }
    config.validate()?;
    let root = &config.dataset_root;
    let split = split_for(config, out_dir, &data::dataset_ids(root)?)?;
    let train = data::load_samples(root, &split.train, false)?;
    let val = data::load_samples(root, &split.val, false)?;
    pretrain_on(config, &train, &val, out_dir)
}

pub fn pretrain_on(
    config: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = build(config.spec)?;
    set_prior_bias(&mut model, Task::for_config(config), train);
    train_loop(config, model, train, val, out_dir)
}

/// Sets a freshly initialized head bias so the untrained output equals the
/// training-set prior: mean weak label for regression, wrinkle pixel rate
/// (as a logit gap over background) for segmentation.
pub fn set_prior_bias(model: &mut Model<f32>, task: Task, train: &[Sample]) {
    let (sum, count) = train.iter().fold((0.0f64, 0usize), |(s, c), x| match task {
        Task::Regress => (
            s + x.texture.iter().map(|&v| v as f64).sum::<f64>(),
            c + x.texture.len(),
        ),
        Task::Segment(_) => match &x.truth {
            Some(t) => (
                s + t.iter().filter(|&&v| v != 0).count() as f64,
                c + t.len(),
            ),
            None => (s, c),
        },
    });
    if count == 0 {
        return;
    }
    let p = (sum / count as f64).clamp(1e-4, 1.0 - 1e-4);
    let logit = (p / (1.0 - p)).ln() as f32;
    let bias = model
        .params_mut()
        .last_mut()
        .expect("head bias")
        .values_mut();
    match task {
        Task::Regress => bias[0] = logit,
        Task::Segment(_) => {
            bias.iter_mut().for_each(|b| *b = 0.0);
            bias[1] = logit;
        }
    }
}

/// Network for finetuning: transferred from `init` (channel expansion, new head) or freshly built.
pub fn finetune_model(config: &TrainConfig, init: Option<&Checkpoint>) -> Result<Model<f32>> {
    let Some(init) = init else {
        return build(config.spec);
    };
    let (want, have) = (config.spec, init.spec);
    if want.base_width != have.base_width || want.depth != have.depth {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint is width {} depth {}, config wants width {} depth {}",
            have.base_width, have.depth, want.base_width, want.depth
        )));
    }
    let mut ck = init.clone();
    if want.in_channels > have.in_channels {
        ck = expand_input_channels(&ck, want.in_channels)?;
    } else if want.in_channels < have.in_channels {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint takes {} channels, config provides {}",
            have.in_channels, want.in_channels
        )));
    }
    if ck.spec.out_channels != want.out_channels {
        ck = replace_head(&ck, want.out_channels, want.seed)?;
    }
    ck.to_model()
}

/// Finetuning on a label-fraction subset of the train split.
pub fn finetune(
    config: &TrainConfig,
    init: Option<&Checkpoint>,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    if config.stage != Stage::Finetune {
        return Err(Error::InvalidConfig(
            "finetune needs a finetune-stage config".into(),
        ));
    }
    config.validate()?;
    let root = &config.dataset_root;
    let split = split_for(config, out_dir, &data::dataset_ids(root)?)?;
    let ids = label_subset(&split.train, config.label_fraction, config.seed);
    let train = data::load_samples(root, &ids, true)?;
    let val = data::load_samples(root, &split.val, true)?;
    finetune_on(config, init, &train, &val, out_dir)
}

/// Finetuning on preloaded samples; `train` is used as given.
pub fn finetune_on(
    config: &TrainConfig,
    init: Option<&Checkpoint>,
    train: &[Sample],
    val: &[Sample],
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = finetune_model(config, init)?;
    let swapped = init.is_some_and(|ck| ck.spec.out_channels != config.spec.out_channels);
    let head_epochs = if swapped {
        config.head_warmup.epochs
    } else {
        0
    };
    if head_epochs > 0 {
        let n = model.params().len();
        model.params_mut()[n - 2].values_mut().fill(0.0);
    }
    if init.is_none() || swapped {
        set_prior_bias(&mut model, Task::for_config(config), train);
    }
    train_loop_with_warmup(config, model, train, val, out_dir, head_epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::UNetSpec;
    use crate::synth::{self, SynthSpec};
    use crate::texture::{make_gaussian, weak_label};
    use crate::trainer::HeadWarmup;

    fn samples(count: usize) -> Vec<Sample> {
        let spec = SynthSpec {
            size: 16,
            seed: 21,
            ..SynthSpec::default()
        };
        let kernel = make_gaussian(21, 5.0).unwrap();
        (0..count)
            .map(|i| {
                let s = synth::render(&spec, i);
                let tex = weak_label(&s.image, &s.face, &kernel).unwrap();
                Sample::from_parts(
                    format!("s{i}"),
                    &s.image,
                    &s.face,
                    Some(&tex),
                    Some(&s.truth),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn prior_bias_matches_rates() {
        let train = samples(3);
        let mut m = build::<f32>(UNetSpec::new(4, 2, 2, 1, 1)).unwrap();
        set_prior_bias(&mut m, Task::Segment(InputMode::RgbTexture), &train);
        let ones: usize = train
            .iter()
            .map(|s| {
                s.truth
                    .as_ref()
                    .unwrap()
                    .iter()
                    .filter(|&&v| v == 1)
                    .count()
            })
            .sum();
        let p = ones as f64 / (3 * 256) as f64;
        let b = m.params().last().unwrap().values();
        assert_eq!(b[0], 0.0);
        assert!((b[1] as f64 - (p / (1.0 - p)).ln()).abs() < 1e-5);

        let mut r = build::<f32>(UNetSpec::new(3, 1, 2, 1, 1)).unwrap();
        set_prior_bias(&mut r, Task::Regress, &train);
        let mean = train
            .iter()
            .flat_map(|s| s.texture.iter())
            .map(|&v| v as f64)
            .sum::<f64>()
            / (3 * 256) as f64;
        let sig = 1.0 / (1.0 + (-(r.params().last().unwrap().values()[0] as f64)).exp());
        assert!((sig - mean.clamp(1e-4, 1.0 - 1e-4)).abs() < 1e-5);
    }

    #[test]
    fn head_warmup_leaves_body_untouched() {
        let data = samples(4);
        let (train, val) = data.split_at(3);
        let mut config = TrainConfig::finetune_preset("unused", 2);
        config.spec = UNetSpec::new(4, 2, 2, 1, 2);
        config.epochs = 3;
        config.batch_size = 2;
        config.head_warmup = HeadWarmup {
            epochs: 2,
            lr: 5e-2,
        };
        let pre = build::<f32>(UNetSpec::new(3, 1, 2, 1, 2)).unwrap();
        let ck = Checkpoint::from_model(&pre, 1, "");
        let dir = tempfile::tempdir().unwrap();
        let out = finetune_on(&config, Some(&ck), train, val, dir.path()).unwrap();
        let lrs: Vec<f64> = out.journal.iter().map(|e| e.lr).collect();
        assert_eq!(lrs, vec![5e-2, 5e-2, config.schedule.lr(0)]);

        let mut model = finetune_model(&config, Some(&ck)).unwrap();
        let body: Vec<Vec<f32>> = model.params()[..model.params().len() - 2]
            .iter()
            .map(|p| p.values().to_vec())
            .collect();
        set_prior_bias(&mut model, Task::for_config(&config), train);
        let out = train_loop_with_warmup(&config, model, train, val, dir.path(), 3).unwrap();
        let n = out.checkpoint.params.len();
        for (a, b) in out.checkpoint.params[..n - 2].iter().zip(&body) {
            assert_eq!(&a.data, b);
        }
        assert!(out.journal.iter().all(|e| e.lr == 5e-2));
    }

    #[test]
    fn argmax_tie_goes_to_background() {
        let mask = logits_to_mask(&[0.5, 0.5, 0.1, 0.5, 0.5, 0.9], 1, 3);
        assert_eq!(mask.data(), &[0, 0, 1]);
        let all = logits_to_mask(
            &[0.0; 4]
                .iter()
                .chain(&[1.0; 4])
                .cloned()
                .collect::<Vec<_>>(),
            2,
            2,
        );
        assert_eq!(all.count_ones(), 4);
    }

    #[test]
    fn dice_objective_matches_finite_differences() {
        let logits: Vec<f32> = (0..2 * 2 * 4)
            .map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.3)
            .collect();
        let t = Tensor4::from_vec([2, 2, 2, 2], logits.clone()).unwrap();
        let truths: [&[u8]; 2] = [&[1, 0, 0, 1], &[0, 0, 1, 0]];
        let (_, g) = dice_objective(&t, &truths).unwrap();
        for i in 0..logits.len() {
            let h = 1e-2f32;
            let mut up = logits.clone();
            up[i] += h;
            let mut dn = logits.clone();
            dn[i] -= h;
            let f = |v: Vec<f32>| {
                dice_objective(&Tensor4::from_vec([2, 2, 2, 2], v).unwrap(), &truths)
                    .unwrap()
                    .0
            };
            let fd = (f(up) - f(dn)) / (2.0 * h as f64);
            let an = g.values()[i] as f64;
            assert!(
                (fd - an).abs() < 1e-4 + 1e-2 * an.abs(),
                "{i}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn uniform_wrinkle_logits_predict_all_ones() {
        let spec = UNetSpec::new(4, 2, 2, 1, 3);
        let mut ck = Checkpoint::from_model(&build::<f32>(spec).unwrap(), 0, "");
        let n = ck.params.len();
        ck.params[n - 2].data.iter_mut().for_each(|v| *v = 0.0);
        ck.params[n - 1].data = vec![0.0, 1.0];
        let img = Image::filled(4, 4, 3, 0.3).unwrap();
        let face = BinaryMask::ones(4, 4);
        let tex = TextureMap::new(4, 4, vec![10.0; 16]).unwrap();
        assert_eq!(
            predict(&ck, &img, &face, Some(&tex)).unwrap().count_ones(),
            16
        );
        ck.params[n - 1].data = vec![0.0, 0.0];
        assert_eq!(
            predict(&ck, &img, &face, Some(&tex)).unwrap().count_ones(),
            0
        );
        assert!(predict(&ck, &img, &face, None).is_err());
    }

    #[test]
    fn transfer_rules() {
        let pre = TrainConfig::pretrain_preset("d", 5);
        let mut fine = TrainConfig::finetune_preset("d", 5);
        let ck = Checkpoint::from_model(&build::<f32>(pre.spec).unwrap(), 3, pre.config_hash());
        let m = finetune_model(&fine, Some(&ck)).unwrap();
        assert_eq!((m.spec().in_channels, m.spec().out_channels), (4, 2));
        // Encoder weights other than the first layer are carried over.
        assert_eq!(m.params()[2].values(), &ck.params[2].data[..]);
        let fresh = finetune_model(&fine, None).unwrap();
        assert_ne!(fresh.params()[2].values(), &ck.params[2].data[..]);
        fine.spec.depth = 2;
        assert!(matches!(
            finetune_model(&fine, Some(&ck)),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }
}
