//! Gaussian filtering and texture maps.
//!
//! The texture map highlights pixels that are darker than their Gaussian
//! neighbourhood:
//!
//! ```text
//! T(x, y) = (1 - I(x, y) / (1 + I_G(x, y))) * 255
//! ```
//!
//! evaluated on the 0..=255 intensity scale and clamped to `[0, 255]`.
//! Borders are handled by reflect-101 (`dcb|abcd|cba`).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, BinaryMask, Image};

pub const DEFAULT_SIGMA: f64 = 5.0;
pub const DEFAULT_KSIZE: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
    factor: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size.is_multiple_of(2) || !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidKernelSpec { size, sigma });
        }
        let r = (size / 2) as isize;
        let two_s2 = 2.0 * sigma * sigma;
        let mut weights = Vec::with_capacity(size * size);
        for i in -r..=r {
            for j in -r..=r {
                weights.push((-((i * i + j * j) as f64) / two_s2).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        let mut factor: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / two_s2).exp())
            .collect();
        let total: f64 = factor.iter().sum();
        factor.iter_mut().for_each(|w| *w /= total);

        Ok(Self {
            size,
            sigma,
            weights,
            factor,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// Dense `size x size` weights, row-major.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Normalized 1-D factor; the dense kernel is its outer product.
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }
}

impl Default for GaussianKernel {
    fn default() -> Self {
        Self::new(DEFAULT_KSIZE, DEFAULT_SIGMA).expect("default kernel is valid")
    }
}

pub fn make_gaussian(size: usize, sigma: f64) -> Result<GaussianKernel> {
    GaussianKernel::new(size, sigma)
}

/// Maps an out-of-range coordinate back into `0..n` by reflect-101.
#[inline]
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur of a single-channel image.
pub fn gaussian_blur(img: &Image, kernel: &GaussianKernel) -> Result<Image> {
    if img.channels() != 1 {
        return Err(Error::WrongChannelCount {
            expected: 1,
            actual: img.channels(),
        });
    }
    let (h, w) = (img.height(), img.width());
    let r = kernel.radius() as isize;
    let f = kernel.factor();
    let src = img.data();

    // Offset tables are shared by every row/column.
    let col_idx: Vec<Vec<usize>> = (0..w as isize)
        .map(|x| (-r..=r).map(|k| reflect101(x + k, w)).collect())
        .collect();
    let row_idx: Vec<Vec<usize>> = (0..h as isize)
        .map(|y| (-r..=r).map(|k| reflect101(y + k, h)).collect())
        .collect();

    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut horiz[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            *o = col_idx[x]
                .iter()
                .zip(f)
                .map(|(&xx, &wt)| wt * row[xx])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (&yy, &wt) in row_idx[y].iter().zip(f) {
            let line = &horiz[yy * w..(yy + 1) * w];
            for (d, &v) in dst.iter_mut().zip(line) {
                *d += wt * v;
            }
        }
    }
    Ok(Image::from_clamped(h, w, 1, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TextureMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} texture map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(Error::CorruptData {
                path: PathBuf::new(),
                reason: "texture value outside [0, 255]".into(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rescales to a `[0, 1]` single-channel image.
    pub fn to_unit_image(&self) -> Image {
        Image::from_clamped(
            self.height,
            self.width,
            1,
            self.data.iter().map(|v| v / 255.0).collect(),
        )
    }

    /// Inverse of [`TextureMap::to_unit_image`].
    pub fn from_unit_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::WrongChannelCount {
                expected: 1,
                actual: img.channels(),
            });
        }
        Ok(Self {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|v| v * 255.0).collect(),
        })
    }
}

pub fn texture_map(gray: &Image, kernel: &GaussianKernel) -> Result<TextureMap> {
    let blurred = gaussian_blur(gray, kernel)?;
    let data = gray
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&i, &ig)| {
            let (i, ig) = (i * 255.0, ig * 255.0);
            ((1.0 - i / (1.0 + ig)) * 255.0).clamp(0.0, 255.0)
        })
        .collect();
    Ok(TextureMap {
        height: gray.height(),
        width: gray.width(),
        data,
    })
}

/// Masked texture map of an RGB image: the pretraining target.
pub fn weak_label(img: &Image, face: &BinaryMask, kernel: &GaussianKernel) -> Result<TextureMap> {
    if !img.same_size(face) {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs face mask {}x{}",
            img.height(),
            img.width(),
            face.height(),
            face.width()
        )));
    }
    let mut t = texture_map(&image::to_grayscale(img)?, kernel)?;
    for (v, &m) in t.data.iter_mut().zip(face.data()) {
        if m == 0 {
            *v = 0.0;
        }
    }
    Ok(t)
}

pub fn save_texture(t: &TextureMap, path: impl AsRef<Path>) -> Result<()> {
    image::save_png(&t.to_unit_image(), path)
}

pub fn load_texture(path: impl AsRef<Path>) -> Result<TextureMap> {
    TextureMap::from_unit_image(&image::load_png(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedItem {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub processed: usize,
    pub failed: Vec<FailedItem>,
}

/// Ids (file stems) of every `*.png` in `dir`, sorted.
pub fn list_png_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Writes `out_dir/<id>.png` for every `src_dir/<id>.png` that has a face mask.
///
/// `jobs` caps the worker count; output bytes do not depend on it.
pub fn batch_weak_labels(
    src_dir: &Path,
    mask_dir: &Path,
    out_dir: &Path,
    kernel: &GaussianKernel,
    jobs: usize,
) -> Result<BatchReport> {
    let ids = list_png_ids(src_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let outcomes: Vec<(String, Result<()>)> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let res = (|| {
                    let mask_path = mask_dir.join(format!("{id}.png"));
                    if !mask_path.exists() {
                        return Err(Error::MissingMask(id.clone()));
                    }
                    let img = image::load_png(src_dir.join(format!("{id}.png")))?;
                    let face = image::load_mask(&mask_path)?;
                    let t = weak_label(&img, &face, kernel)?;
                    save_texture(&t, out_dir.join(format!("{id}.png")))
                })();
                (id.clone(), res)
            })
            .collect()
    });

    let mut report = BatchReport::default();
    for (id, res) in outcomes {
        match res {
            Ok(()) => report.processed += 1,
            Err(e) => report.failed.push(FailedItem {
                id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}
