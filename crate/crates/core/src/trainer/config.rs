use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::micronet::{UNetSpec, ARCH_TAG};
use crate::optim::{AdamWConfig, SgdrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Network input for the finetune stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Face-masked RGB.
    Rgb,
    /// Face-masked RGB plus the weak-label texture map.
    RgbTexture,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Rgb => 3,
            InputMode::RgbTexture => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip_p: f64,
    /// Isotropic zoom factor range.
    pub scale_range: (f64, f64),
    /// Rotation drawn from `[-rotate_deg, rotate_deg]`.
    pub rotate_deg: f64,
    /// Translation drawn from `[-translate_frac, translate_frac]` of each side.
    pub translate_frac: f64,
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            hflip_p: 0.0,
            scale_range: (1.0, 1.0),
            rotate_deg: 0.0,
            translate_frac: 0.0,
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            scale_range: (0.9, 1.1),
            rotate_deg: 10.0,
            translate_frac: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Head-only epochs at a constant lr before the schedule starts, applied when
/// finetuning swaps the head of a transferred network. The new head starts at
/// zero weights with the prior-rate bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadWarmup {
    pub epochs: u64,
    pub lr: f64,
}

impl HeadWarmup {
    pub fn off() -> Self {
        Self {
            epochs: 0,
            lr: 1e-2,
        }
    }
}

impl Default for HeadWarmup {
    fn default() -> Self {
        Self::off()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub dataset_root: PathBuf,
    pub spec: UNetSpec,
    pub epochs: u64,
    pub batch_size: usize,
    pub schedule: SgdrSchedule,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub split: SplitFractions,
    pub seed: u64,
    #[serde(default = "one")]
    pub label_fraction: f64,
    #[serde(default = "rgb_texture")]
    pub input: InputMode,
    #[serde(default)]
    pub head_warmup: HeadWarmup,
    /// Records wall-clock time in the journal; off keeps journals reproducible.
    #[serde(default)]
    pub log_wall_time: bool,
}

fn one() -> f64 {
    1.0
}

fn rgb_texture() -> InputMode {
    InputMode::RgbTexture
}

/// Peak pretraining lr of the desk preset.
pub const DESK_PRETRAIN_LR: f64 = 3e-4;

impl TrainConfig {
    /// Desk-scale pretraining: 3-channel regression, 30 epochs, T0 = 10.
    ///
    /// Peak lr is 3e-4: at 1e-3 the normalization-free net drives the sigmoid
    /// head into saturation at 64x64, batch 8.
    pub fn pretrain_preset(dataset_root: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            stage: Stage::Pretrain,
            dataset_root: dataset_root.into(),
            spec: UNetSpec::new(3, 1, 16, 3, seed),
            epochs: 30,
            batch_size: 8,
            schedule: SgdrSchedule {
                max_lr: DESK_PRETRAIN_LR,
                ..SgdrSchedule::pretrain_default()
            },
            optimizer: AdamWConfig::default(),
            augment: AugmentConfig::default(),
            split: SplitFractions::default(),
            seed,
            label_fraction: 1.0,
            input: InputMode::Rgb,
            head_warmup: HeadWarmup::off(),
            log_wall_time: false,
        }
    }

    /// Desk-scale finetuning: 2-class head on RGB + texture, 30 epochs, T0 = 10,
    /// preceded by 10 head-only epochs when starting from a pretrained network.
    pub fn finetune_preset(dataset_root: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            stage: Stage::Finetune,
            spec: UNetSpec::new(4, 2, 16, 3, seed),
            schedule: SgdrSchedule::finetune_default(),
            input: InputMode::RgbTexture,
            head_warmup: HeadWarmup {
                epochs: 10,
                lr: 1e-2,
            },
            ..Self::pretrain_preset(dataset_root, seed)
        }
    }

    /// Full-resolution schedule lengths (300 / 150 epochs, T0 = 100 / 50); not a test target.
    pub fn full_scale(mut self) -> Self {
        self.spec.depth = 4;
        self.spec.base_width = 32;
        match self.stage {
            Stage::Pretrain => {
                self.epochs = 300;
                self.batch_size = 26;
                self.schedule = SgdrSchedule {
                    initial_period: 100,
                    ..SgdrSchedule::pretrain_default()
                };
            }
            Stage::Finetune => {
                self.head_warmup = HeadWarmup::off();
                self.epochs = 150;
                self.batch_size = 14;
                self.schedule = SgdrSchedule {
                    initial_period: 50,
                    ..SgdrSchedule::finetune_default()
                };
            }
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.spec.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.schedule.validate()?;
        let s = self.split;
        let parts = [s.train, s.val, s.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(format!(
                "split fractions {s:?} must be in [0,1] and sum to 1"
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "label_fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        let hw = self.head_warmup;
        if hw.epochs > 0
            && (self.stage != Stage::Finetune || hw.epochs >= self.epochs || !(hw.lr > 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "head warm-up {hw:?} needs a finetune stage, a positive lr and fewer epochs than {}",
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        let a = self.augment;
        if !(0.0..=1.0).contains(&a.hflip_p)
            || !(a.scale_range.0 > 0.0 && a.scale_range.0 <= a.scale_range.1)
            || a.rotate_deg < 0.0
            || !(0.0..1.0).contains(&a.translate_frac)
        {
            return Err(Error::InvalidConfig(format!("invalid augmentation {a:?}")));
        }
        match self.stage {
            Stage::Pretrain if self.spec.in_channels != 3 || self.spec.out_channels != 1 => Err(
                Error::InvalidConfig("pretraining needs a 3-in / 1-out network".into()),
            ),
            Stage::Finetune
                if self.spec.out_channels != 2
                    || self.spec.in_channels != self.input.channels() =>
            {
                Err(Error::InvalidConfig(format!(
                    "finetuning with {:?} input needs a {}-in / 2-out network",
                    self.input,
                    self.input.channels()
                )))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 over the canonical JSON of the config (dataset location excluded)
    /// and the architecture tag.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.dataset_root = PathBuf::new();
        let doc = serde_json::json!({ "arch": ARCH_TAG, "config": c });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// A pretrain/finetune pair run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Defaults to the finetune config's seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.finetune.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.pretrain.stage != Stage::Pretrain || self.finetune.stage != Stage::Finetune {
            return Err(Error::InvalidConfig(
                "experiment needs a pretrain and a finetune stage".into(),
            ));
        }
        let (p, f) = (self.pretrain.spec, self.finetune.spec);
        if p.base_width != f.base_width || p.depth != f.depth {
            return Err(Error::InvalidConfig(
                "pretrain and finetune networks differ in width or depth".into(),
            ));
        }
        if self.pretrain.dataset_root != self.finetune.dataset_root
            || self.pretrain.split != self.finetune.split
        {
            return Err(Error::InvalidConfig(
                "pretrain and finetune must share dataset and split".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::pretrain_preset("d", 1).validate().unwrap();
        TrainConfig::finetune_preset("d", 1).validate().unwrap();
        TrainConfig::finetune_preset("d", 1)
            .full_scale()
            .validate()
            .unwrap();
    }

    #[test]
    fn invalid_fields_rejected() {
        let mut c = TrainConfig::finetune_preset("d", 1);
        c.label_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::finetune_preset("d", 1);
        c.split.test = 0.2;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::finetune_preset("d", 1);
        c.input = InputMode::Rgb;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::pretrain_preset("d", 1);
        c.spec.out_channels = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_location_only() {
        let a = TrainConfig::finetune_preset("x", 1);
        let b = TrainConfig::finetune_preset("/elsewhere", 1);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), a.clone().with_seed(2).config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let c = TrainConfig::pretrain_preset("data", 3);
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let mut v = serde_json::to_value(&c).unwrap();
        let obj = v.as_object_mut().unwrap();
        for k in [
            "optimizer",
            "augment",
            "split",
            "label_fraction",
            "log_wall_time",
        ] {
            obj.remove(k);
        }
        let back: TrainConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back.optimizer, AdamWConfig::default());
        assert_eq!(back.split, SplitFractions::default());
        assert_eq!(back.label_fraction, 1.0);
    }
}
