//! The ten acceptance criteria. Each test prints one `[criterion N] PASS|FAIL` line
//! to stderr (bypassing output capture) and then asserts.
//!
//! Tests share one lock so wall-clock limits are measured without contention.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrinkleforge::fusion::{jaccard, majority_vote, AnnotationSet};
use wrinkleforge::image::{BinaryMask, Image};
use wrinkleforge::losses::{mse, soft_dice, DICE_SMOOTH};
use wrinkleforge::metrics::evaluate;
use wrinkleforge::micronet::{build, expand_input_channels, Checkpoint, Model, Tensor4, UNetSpec};
use wrinkleforge::optim::{AdamWConfig, AdamWState, SgdrSchedule};
use wrinkleforge::synth::{self, SynthSpec};
use wrinkleforge::texture::{
    batch_weak_labels, gaussian_blur, make_gaussian, reflect101, texture_map, weak_label,
};
use wrinkleforge::trainer::{
    dice_objective, run_experiment, set_prior_bias, ExperimentConfig, ExperimentReport, InputMode,
    Sample, Task, TrainConfig,
};

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[criterion {n:>2}] {verdict}: {detail}");
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("acceptance")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(p))
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_texture_filter_oracle() {
    let _g = serial();
    let start = Instant::now();
    let kernel = make_gaussian(21, 5.0).unwrap();
    let r = kernel.radius() as isize;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_blur = 0.0f64;
    for _ in 0..20 {
        let (h, w) = (32, 32);
        let data: Vec<f64> = (0..h * w).map(|_| rng.gen()).collect();
        let img = Image::new(h, w, 1, data.clone()).unwrap();
        let fast = gaussian_blur(&img, &kernel).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in -r..=r {
                    for kx in -r..=r {
                        let wt = kernel.weights()[((ky + r) * (2 * r + 1) + kx + r) as usize];
                        let sy = reflect101(y as isize + ky, h);
                        let sx = reflect101(x as isize + kx, w);
                        acc += wt * data[sy * w + sx];
                    }
                }
                worst_blur = worst_blur.max((acc - fast.data()[y * w + x]).abs());
            }
        }
    }
    let black = texture_map(&Image::filled(32, 32, 1, 0.0).unwrap(), &kernel).unwrap();
    let white = texture_map(&Image::filled(32, 32, 1, 1.0).unwrap(), &kernel).unwrap();
    let black_err = black
        .data()
        .iter()
        .map(|v| (v - 255.0).abs())
        .fold(0.0, f64::max);
    let white_err = white
        .data()
        .iter()
        .map(|v| (v - 255.0 / 256.0).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst_blur <= 1e-10
        && black_err <= 1e-9
        && white_err <= 1e-9
        && elapsed < Duration::from_secs(5);
    report(
        1,
        pass,
        &format!("blur max |err| {worst_blur:.2e}, black {black_err:.2e}, white {white_err:.2e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_metric_oracle_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut count_mismatch = 0;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        // Vary density so empty and full masks show up.
        let (pa, pb) = match i % 10 {
            0 => (0.0, 0.0),
            1 => (0.0, 0.3),
            2 => (1.0, 0.5),
            _ => (rng.gen(), rng.gen()),
        };
        let pred = random_mask(&mut rng, 8, 8, pa);
        let truth = random_mask(&mut rng, 8, 8, pb);
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..8 {
            for x in 0..8 {
                match (pred.get(y, x), truth.get(y, x)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
        let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let empty = tp + fp + fn_ == 0;
        let jsi = if empty { 1.0 } else { div(tp, tp + fp + fn_) };
        let precision = div(tp, tp + fp);
        let recall = div(tp, tp + fn_);
        let f1 = if empty {
            1.0
        } else if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let accuracy = div(tp + tn, 64);

        let got = evaluate(&pred, &truth).unwrap();
        let c = got.counts;
        if (c.tp, c.fp, c.fn_, c.tn) != (tp, fp, fn_, tn) {
            count_mismatch += 1;
        }
        for (a, b) in [
            (got.jsi, jsi),
            (got.precision, precision),
            (got.recall, recall),
            (got.f1, f1),
            (got.accuracy, accuracy),
            (jaccard(&pred, &truth).unwrap(), jsi),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = count_mismatch == 0 && worst <= 1e-12 && elapsed < Duration::from_secs(5);
    report(
        2,
        pass,
        &format!("count mismatches {count_mismatch}, max ratio |err| {worst:.2e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn loss_gradcheck(rng: &mut ChaCha8Rng) -> (usize, f64) {
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;

    let n = 128;
    let pred: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let target: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let analytic = mse(&pred, &target).unwrap().grad;
    for i in 0..n {
        let mut p = pred.clone();
        p[i] += h;
        let up = mse(&p, &target).unwrap().value;
        p[i] -= 2.0 * h;
        let dn = mse(&p, &target).unwrap().value;
        worst = worst.max(rel_err(analytic[i], (up - dn) / (2.0 * h)));
        checked += 1;
    }

    let rows = 64;
    let classes = 2;
    let mut probs = Vec::with_capacity(rows * classes);
    let mut onehot = Vec::with_capacity(rows * classes);
    for _ in 0..rows {
        let p: f64 = rng.gen_range(0.05..0.95);
        probs.extend([1.0 - p, p]);
        let fg = rng.gen_bool(0.3);
        onehot.extend(if fg { [0.0, 1.0] } else { [1.0, 0.0] });
    }
    let analytic = soft_dice(&probs, &onehot, classes, DICE_SMOOTH)
        .unwrap()
        .grad;
    for i in 0..rows * classes {
        let mut p = probs.clone();
        p[i] += h;
        let up = soft_dice(&p, &onehot, classes, DICE_SMOOTH).unwrap().value;
        p[i] -= 2.0 * h;
        let dn = soft_dice(&p, &onehot, classes, DICE_SMOOTH).unwrap().value;
        worst = worst.max(rel_err(analytic[i], (up - dn) / (2.0 * h)));
        checked += 1;
    }
    (checked, worst)
}

fn network_gradcheck(rng: &mut ChaCha8Rng, samples: usize) -> (usize, f64) {
    let spec = UNetSpec::new(3, 1, 2, 1, 303);
    let mut model: Model<f64> = build(spec).unwrap();
    for p in model.params_mut().iter_mut().skip(1).step_by(2) {
        p.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
    let x = Tensor4::from_vec([2, 3, 8, 8], (0..2 * 3 * 64).map(|_| rng.gen()).collect()).unwrap();
    let out = model.forward(&x).unwrap();
    let r: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    model.zero_grad();
    model
        .backward(&Tensor4::from_vec(out.dims(), r.clone()).unwrap())
        .unwrap();
    let loss = |m: &Model<f64>| -> f64 {
        m.infer(&x)
            .unwrap()
            .values()
            .iter()
            .zip(&r)
            .map(|(o, w)| o * w)
            .sum()
    };

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut flat = rng.gen_range(0..total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let analytic = model.params()[t].grad().unwrap()[flat];
        let orig = model.params()[t].values()[flat];
        model.params_mut()[t].values_mut()[flat] = orig + h;
        let up = loss(&model);
        model.params_mut()[t].values_mut()[flat] = orig - h;
        let dn = loss(&model);
        model.params_mut()[t].values_mut()[flat] = orig;
        let numeric = (up - dn) / (2.0 * h);
        if analytic.abs().max(numeric.abs()) > 1e-7 {
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    (samples, worst)
}

#[test]
fn criterion_03_gradient_correctness() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (loss_n, loss_worst) = loss_gradcheck(&mut rng);
    let (net_n, net_worst) = network_gradcheck(&mut rng, 200);
    let elapsed = start.elapsed();
    let pass = loss_n >= 100
        && loss_worst < 1e-4
        && net_n >= 100
        && net_worst < 1e-3
        && elapsed < Duration::from_secs(60);
    report(
        3,
        pass,
        &format!(
            "losses {loss_n} checks, worst rel {loss_worst:.2e}; network {net_n} checks, worst rel {net_worst:.2e}; {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_fusion_correctness() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = 0;
    for _ in 0..1000 {
        let masks: Vec<BinaryMask> = (0..3)
            .map(|_| {
                let d: f64 = rng.gen();
                random_mask(&mut rng, 8, 8, d)
            })
            .collect();
        let set = AnnotationSet::from_masks(masks.clone()).unwrap();
        for threshold in 1..=3 {
            let fused = majority_vote(&set, threshold).unwrap();
            for y in 0..8 {
                for x in 0..8 {
                    let votes = masks.iter().filter(|m| m.get(y, x)).count();
                    let expect = votes >= threshold;
                    let or = masks.iter().any(|m| m.get(y, x));
                    let and = masks.iter().all(|m| m.get(y, x));
                    let special = match threshold {
                        1 => fused.get(y, x) == or,
                        3 => fused.get(y, x) == and,
                        _ => true,
                    };
                    if fused.get(y, x) != expect || !special {
                        failures += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && elapsed < Duration::from_secs(5);
    report(
        4,
        pass,
        &format!("{failures} pixel disagreements over 1000 sets x 3 thresholds, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_transfer_preservation() {
    let _g = serial();
    let start = Instant::now();
    let spec = UNetSpec::new(3, 1, 8, 2, 505);
    let model: Model<f32> = build(spec).unwrap();
    let ck = Checkpoint::from_model(&model, 0, "h");
    let expanded = expand_input_channels(&ck, 4).unwrap();
    let before: Model<f64> = ck.to_model().unwrap();
    let after: Model<f64> = expanded.to_model().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (h, w) = (16, 16);
        let rgb: Vec<f64> = (0..3 * h * w).map(|_| rng.gen()).collect();
        let extra: Vec<f64> = (0..h * w).map(|_| rng.gen()).collect();
        let x3 = Tensor4::from_vec([1, 3, h, w], rgb.clone()).unwrap();
        let x4 = Tensor4::from_vec([1, 4, h, w], [rgb, extra].concat()).unwrap();
        let a = before.infer(&x3).unwrap();
        let b = after.infer(&x4).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            worst = worst.max((p - q).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-7 && elapsed < Duration::from_secs(10);
    report(
        5,
        pass,
        &format!("max |output diff| {worst:.2e} over 10 inputs, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_overfit_single_sample() {
    let _g = serial();
    let start = Instant::now();
    let spec = SynthSpec {
        size: 32,
        wrinkle_count_range: (3, 3),
        seed: 606,
        ..SynthSpec::default()
    };
    let s = synth::render(&spec, 0);
    let kernel = make_gaussian(21, 5.0).unwrap();
    let texture = weak_label(&s.image, &s.face, &kernel).unwrap();
    let sample =
        Sample::from_parts("overfit", &s.image, &s.face, Some(&texture), Some(&s.truth)).unwrap();

    let mode = InputMode::RgbTexture;
    let mut model: Model<f32> = build(UNetSpec::new(mode.channels(), 2, 8, 2, 606)).unwrap();
    set_prior_bias(
        &mut model,
        Task::Segment(mode),
        std::slice::from_ref(&sample),
    );
    let mut x = Tensor4::zeros([1, mode.channels(), 32, 32]);
    sample.write_finetune_input(mode, x.values_mut());
    let schedule = SgdrSchedule {
        initial_period: 500,
        ..SgdrSchedule::pretrain_default()
    };
    let mut adam = AdamWState::for_params(AdamWConfig::default(), model.params());
    let truth = sample.truth.as_deref().unwrap();
    let mut best = f64::INFINITY;
    let mut steps = 0;
    for step in 0..500u64 {
        model.zero_grad();
        let out = model.forward(&x).unwrap();
        let (loss, grad) = dice_objective(&out, &[truth]).unwrap();
        best = best.min(loss);
        if loss < 0.05 {
            break;
        }
        model.backward(&grad).unwrap();
        adam.step_tensors(model.params_mut(), schedule.lr(step))
            .unwrap();
        steps = step + 1;
    }
    let elapsed = start.elapsed();
    let pass = best < 0.05 && elapsed < Duration::from_secs(120);
    report(
        6,
        pass,
        &format!(
            "soft Dice {best:.4} after {steps} steps ({} wrinkle px), {elapsed:.2?}",
            s.truth.count_ones()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7, 8, 9

const CORPUS_SEED: u64 = 7;
const SEEDS: [u64; 3] = [1, 2, 3];
const EXPERIMENT_LIMIT: Duration = Duration::from_secs(30 * 60);

/// Desk-scale preset for the pretraining comparison: 600 images of 64x64,
/// 5% of the train split labeled for finetuning.
fn acceptance_config(root: &Path) -> ExperimentConfig {
    let mut pretrain = TrainConfig::pretrain_preset(root, SEEDS[0]);
    pretrain.spec.base_width = 8;
    pretrain.epochs = 10;
    let mut finetune = TrainConfig::finetune_preset(root, SEEDS[0]);
    finetune.spec.base_width = 8;
    finetune.epochs = 30;
    finetune.label_fraction = 0.05;
    ExperimentConfig {
        pretrain,
        finetune,
        seeds: SEEDS.to_vec(),
    }
}

struct ExperimentRun {
    out: PathBuf,
    report: ExperimentReport,
    elapsed: Duration,
}

struct Shared {
    root: PathBuf,
    first: ExperimentRun,
}

fn run_once(root: &Path, out: PathBuf) -> ExperimentRun {
    let start = Instant::now();
    let report = run_experiment(&acceptance_config(root), &out, 1).unwrap();
    ExperimentRun {
        out,
        report,
        elapsed: start.elapsed(),
    }
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let root = scratch("corpus600");
        let spec = SynthSpec {
            count: 600,
            size: 64,
            seed: CORPUS_SEED,
            ..SynthSpec::default()
        };
        synth::generate(&spec, &root, 1).unwrap();
        let first = run_once(&root, scratch("experiment-a"));
        let _ = writeln!(std::io::stderr(), "{}", first.report.summary());
        Shared { root, first }
    })
}

#[test]
fn criterion_07_pretraining_beats_baseline() {
    let _g = serial();
    let run = &shared().first;
    let ours = run
        .report
        .median_row("texture_pretraining/rgb_texture")
        .unwrap()
        .jsi;
    let base = run.report.median_row("no_pretraining/rgb").unwrap().jsi;
    let pass = ours - base >= 0.02 && run.elapsed < EXPERIMENT_LIMIT;
    report(
        7,
        pass,
        &format!(
            "median test JSI pretrained rgb+texture {ours:.4} vs no-pretraining rgb {base:.4} (delta {:+.4}, need >= 0.02), {:.1?}",
            ours - base,
            run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_ablation_ordering() {
    let _g = serial();
    let run = &shared().first;
    let wins = run
        .report
        .runs
        .iter()
        .filter(|r| r.best_row == "texture_pretraining/rgb_texture")
        .count();
    let best: Vec<String> = run
        .report
        .runs
        .iter()
        .map(|r| format!("seed {}: {}", r.seed, r.best_row))
        .collect();
    let pass = wins >= 2;
    report(
        8,
        pass,
        &format!(
            "pretrained rgb+texture best in {wins}/3 seeds ({})",
            best.join(", ")
        ),
    );
    assert!(pass);
}

fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn criterion_09_determinism() {
    let _g = serial();
    let shared = shared();
    let second = run_once(&shared.root, scratch("experiment-b"));
    let a = tree_bytes(&shared.first.out);
    let b = tree_bytes(&second.out);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let kinds = ["journal.jsonl", "best.ckpt", "report.json"];
    let covered = kinds
        .iter()
        .all(|kind| a.keys().any(|k| k.file_name().is_some_and(|f| f == *kind)));
    let pass = differing.is_empty() && covered && shared.first.report == second.report;
    report(
        9,
        pass,
        &format!(
            "{} files compared, {} differ {:?}",
            a.len(),
            differing.len(),
            &differing[..differing.len().min(5)]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_batch_pipeline() {
    let _g = serial();
    let root = scratch("corpus256");
    let spec = SynthSpec {
        count: 200,
        size: 256,
        seed: 1010,
        ..SynthSpec::default()
    };
    synth::generate(&spec, &root, 8).unwrap();
    let kernel = make_gaussian(21, 5.0).unwrap();
    let images = root.join("images");
    let masks = root.join("face_masks");
    let one = root.join("weak-jobs1");
    let eight = root.join("weak-jobs8");
    let r1 = batch_weak_labels(&images, &masks, &one, &kernel, 1).unwrap();
    let start = Instant::now();
    let r8 = batch_weak_labels(&images, &masks, &eight, &kernel, 8).unwrap();
    let elapsed = start.elapsed();
    let (a, b) = (tree_bytes(&one), tree_bytes(&eight));
    let identical = a == b && r1 == r8;
    let pass =
        identical && a.len() == 200 && r8.failed.is_empty() && elapsed < Duration::from_secs(60);
    report(
        10,
        pass,
        &format!(
            "{} weak labels, identical across jobs: {identical}, --jobs 8 took {elapsed:.2?}",
            a.len()
        ),
    );
    assert!(pass);
}
