//! Two-stage training: texture-map pretraining, weight transfer, supervised finetuning.

mod augment;
mod config;
mod data;
mod experiment;
mod split;
mod train;

pub use augment::{
    apply as apply_augment, augment, sample_rng, warp_bilinear, warp_nearest, AugmentParams,
};
pub use config::{
    AugmentConfig, ExperimentConfig, HeadWarmup, InputMode, SplitFractions, Stage, TrainConfig,
    DESK_PRETRAIN_LR,
};
pub use data::{
    batch_tensor, dataset_ids, ensure_ground_truth, ensure_weak_labels, finetune_input,
    load_samples, Sample, ANNOTATIONS_DIR, FACE_DIR, FUSION_THRESHOLD, GROUND_TRUTH_DIR,
    IMAGES_DIR, WEAK_DIR,
};
pub use experiment::{
    median, run_experiment, ExperimentReport, MedianRow, ReportRow, SeedReport, REPORT_FILE, ROWS,
};
pub use split::{label_subset, load_or_make_split, make_split, SplitManifest, MIN_SPLIT_IDS};
pub use train::{
    dice_objective, evaluate_samples, finetune, finetune_model, finetune_on, logits_to_mask,
    predict, predict_samples, predict_with, pretrain, pretrain_on, set_prior_bias, train_loop,
    train_loop_with_warmup, JournalEntry, Task, TrainOutcome, CHECKPOINT_FILE, CONFIG_FILE,
    JOURNAL_FILE, SPLIT_FILE,
};
