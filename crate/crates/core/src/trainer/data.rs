//! Dataset layout, sample loading and batch assembly.
//!
//! ```text
//! <root>/images/<id>.png         RGB face images
//! <root>/face_masks/<id>.png     binary facial-skin masks
//! <root>/weak_labels/<id>.png    masked texture maps (8-bit)
//! <root>/annotations/<a>/<id>.png per-annotator wrinkle masks
//! <root>/ground_truth/<id>.png   majority-vote fusion of the annotations
//! ```

use std::path::Path;

use super::config::InputMode;
use crate::error::{Error, Result};
use crate::fusion;
use crate::image::{self, apply_mask, BinaryMask, Image};
use crate::micronet::Tensor4;
use crate::texture::{self, GaussianKernel, TextureMap};

pub const IMAGES_DIR: &str = "images";
pub const FACE_DIR: &str = "face_masks";
pub const WEAK_DIR: &str = "weak_labels";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const GROUND_TRUTH_DIR: &str = "ground_truth";

/// Majority threshold used when fusing three annotators.
pub const FUSION_THRESHOLD: usize = 2;

/// One image with planar `f32` channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Three planes, unmasked.
    pub rgb: Vec<f32>,
    /// Weak label divided by 255.
    pub texture: Vec<f32>,
    pub face: Vec<u8>,
    pub truth: Option<Vec<u8>>,
}

impl Sample {
    pub fn from_parts(
        id: impl Into<String>,
        img: &Image,
        face: &BinaryMask,
        texture: Option<&TextureMap>,
        truth: Option<&BinaryMask>,
    ) -> Result<Self> {
        let (h, w) = (img.height(), img.width());
        if img.channels() < 3 {
            return Err(Error::WrongChannelCount {
                expected: 3,
                actual: img.channels(),
            });
        }
        if !img.same_size(face) {
            return Err(Error::ShapeMismatch(format!(
                "image {h}x{w} vs face mask {}x{}",
                face.height(),
                face.width()
            )));
        }
        let texture = match texture {
            Some(t) if t.height() != h || t.width() != w => {
                return Err(Error::ShapeMismatch(format!(
                    "image {h}x{w} vs texture {}x{}",
                    t.height(),
                    t.width()
                )))
            }
            Some(t) => t.data().iter().map(|&v| (v / 255.0) as f32).collect(),
            None => vec![0.0; h * w],
        };
        if let Some(t) = truth {
            face.ensure_same_shape(t)?;
        }
        let mut rgb = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    rgb.push(img.get(y, x, c) as f32);
                }
            }
        }
        Ok(Self {
            id: id.into(),
            height: h,
            width: w,
            rgb,
            texture,
            face: face.data().to_vec(),
            truth: truth.map(|t| t.data().to_vec()),
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn truth_mask(&self) -> Option<BinaryMask> {
        self.truth.as_ref().map(|t| {
            BinaryMask::new(self.height, self.width, t.clone()).expect("binary by construction")
        })
    }

    /// Unmasked RGB, the pretraining input.
    pub fn write_pretrain_input(&self, dst: &mut [f32]) {
        for (d, &v) in dst.iter_mut().zip(&self.rgb) {
            *d = v;
        }
    }

    /// Face-masked RGB, followed by the texture plane for [`InputMode::RgbTexture`].
    pub fn write_finetune_input(&self, mode: InputMode, dst: &mut [f32]) {
        let n = self.pixels();
        for c in 0..3 {
            for i in 0..n {
                dst[c * n + i] = if self.face[i] == 1 {
                    self.rgb[c * n + i]
                } else {
                    0.0
                };
            }
        }
        if mode == InputMode::RgbTexture {
            dst[3 * n..4 * n].copy_from_slice(&self.texture);
        }
    }
}

/// Stacks one input plane set per sample into an `n x channels x h x w` tensor.
pub fn batch_tensor<F>(samples: &[&Sample], channels: usize, fill: F) -> Result<Tensor4<f32>>
where
    F: Fn(&Sample, &mut [f32]),
{
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height, first.width);
    let per = channels * h * w;
    let mut values = vec![0.0f32; samples.len() * per];
    for (s, dst) in samples.iter().zip(values.chunks_exact_mut(per)) {
        if (s.height, s.width) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "sample {} is {}x{}, batch is {h}x{w}",
                s.id, s.height, s.width
            )));
        }
        fill(s, dst);
    }
    Tensor4::from_vec([samples.len(), channels, h, w], values)
}

fn require_dir(root: &Path, name: &str) -> Result<std::path::PathBuf> {
    let dir = root.join(name);
    if !dir.is_dir() {
        return Err(Error::DatasetMissing(format!(
            "{} (no {name}/ directory)",
            root.display()
        )));
    }
    Ok(dir)
}

/// Ids of `images/*.png`, sorted.
pub fn dataset_ids(root: &Path) -> Result<Vec<String>> {
    let ids = texture::list_png_ids(&require_dir(root, IMAGES_DIR)?)?;
    if ids.is_empty() {
        return Err(Error::DatasetMissing(format!(
            "{} has no images",
            root.display()
        )));
    }
    Ok(ids)
}

/// Generates `weak_labels/` when absent or incomplete.
pub fn ensure_weak_labels(root: &Path, jobs: usize) -> Result<()> {
    let ids = dataset_ids(root)?;
    let weak = root.join(WEAK_DIR);
    if weak.is_dir() && ids.iter().all(|id| weak.join(format!("{id}.png")).exists()) {
        return Ok(());
    }
    let report = texture::batch_weak_labels(
        &root.join(IMAGES_DIR),
        &require_dir(root, FACE_DIR)?,
        &weak,
        &GaussianKernel::default(),
        jobs,
    )?;
    match report.failed.first() {
        Some(f) => Err(Error::DatasetMissing(format!(
            "weak label for {}: {}",
            f.id, f.reason
        ))),
        None => Ok(()),
    }
}

/// Fuses `annotations/` into `ground_truth/` when the latter is absent or incomplete.
pub fn ensure_ground_truth(root: &Path) -> Result<()> {
    let ids = dataset_ids(root)?;
    let gt = root.join(GROUND_TRUTH_DIR);
    if gt.is_dir() && ids.iter().all(|id| gt.join(format!("{id}.png")).exists()) {
        return Ok(());
    }
    let annotations = require_dir(root, ANNOTATIONS_DIR)?;
    fusion::fuse_directory(&annotations, &gt, FUSION_THRESHOLD)?;
    Ok(())
}

fn existing(path: std::path::PathBuf, what: &str, id: &str) -> Result<std::path::PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::DatasetMissing(format!(
            "{what} for {id} ({})",
            path.display()
        )))
    }
}

/// Loads the given ids. Weak labels are always required; ground truth only when `with_truth`.
pub fn load_samples(root: &Path, ids: &[String], with_truth: bool) -> Result<Vec<Sample>> {
    ids.iter()
        .map(|id| {
            let file = format!("{id}.png");
            let img = image::load_png(existing(root.join(IMAGES_DIR).join(&file), "image", id)?)?;
            let face =
                image::load_mask(existing(root.join(FACE_DIR).join(&file), "face mask", id)?)?;
            let tex = texture::load_texture(existing(
                root.join(WEAK_DIR).join(&file),
                "weak label",
                id,
            )?)?;
            let truth = if with_truth {
                Some(image::load_mask(existing(
                    root.join(GROUND_TRUTH_DIR).join(&file),
                    "ground truth",
                    id,
                )?)?)
            } else {
                None
            };
            Sample::from_parts(id.clone(), &img, &face, Some(&tex), truth.as_ref())
        })
        .collect()
}

/// Builds the finetune input for a single image (used by prediction).
pub fn finetune_input(
    img: &Image,
    face: &BinaryMask,
    texture: Option<&TextureMap>,
    mode: InputMode,
) -> Result<Tensor4<f32>> {
    if mode == InputMode::RgbTexture && texture.is_none() {
        return Err(Error::ShapeMismatch(
            "RGB + texture input needs a texture map".into(),
        ));
    }
    let masked = apply_mask(img, face)?;
    let s = Sample::from_parts("input", &masked, face, texture, None)?;
    batch_tensor(&[&s], mode.channels(), |s, d| {
        s.write_finetune_input(mode, d)
    })
}
