//! Pixel containers, BT.601 grayscale conversion, masking and PNG I/O.
//!
//! Samples are stored as `f64` in `[0, 1]`, row-major, channels interleaved.
//! Masks are `{0, 1}` rasters; on disk they are 8-bit grayscale PNGs holding
//! only the samples 0 and 255.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// BT.601 luma weights for (r, g, b).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::UnsupportedFormat(format!("{channels} channels")));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} image needs {} samples, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::CorruptData {
                path: Default::default(),
                reason: format!("sample {i} = {} outside [0, 1]", data[i]),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds an image without range checks, clamping every sample into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * channels);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels);
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn same_size(&self, mask: &BinaryMask) -> bool {
        self.height == mask.height && self.width == mask.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} mask needs {} samples, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::CorruptData {
                path: Default::default(),
                reason: format!("mask value {} at {i} is not 0 or 1", data[i]),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    /// Builds a mask from a predicate over `(y, x)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn ensure_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_shape(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.ensure_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a & b)
            .collect();
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Reads an 8- or 16-bit grayscale, RGB or RGBA PNG into `[0, 1]` samples.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let (height, width, channels, samples, max) = decode_png(path)?;
    let data = samples.into_iter().map(|s| s as f64 / max).collect();
    Ok(Image {
        height,
        width,
        channels,
        data,
    })
}

/// Writes an 8-bit PNG, quantizing each sample as `round(v * 255)`.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::UnsupportedFormat(format!("{c} channels"))),
    };
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    write_png_bytes(path.as_ref(), img.width, img.height, color, &bytes)
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    // f64::round is round-half-away-from-zero, i.e. half-up on nonnegative input.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a mask PNG; every sample must be 0 or 255.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let (height, width, channels, samples, max) = decode_png(path)?;
    if channels != 1 || max != 255.0 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: masks must be 8-bit grayscale",
            path.display()
        )));
    }
    let mut data = Vec::with_capacity(samples.len());
    for (i, s) in samples.into_iter().enumerate() {
        match s {
            0 => data.push(0),
            255 => data.push(1),
            other => {
                return Err(Error::CorruptData {
                    path: path.to_path_buf(),
                    reason: format!("mask sample {other} at index {i} is not 0 or 255"),
                })
            }
        }
    }
    Ok(BinaryMask {
        height,
        width,
        data,
    })
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&v| v * 255).collect();
    write_png_bytes(
        path.as_ref(),
        mask.width,
        mask.height,
        png::ColorType::Grayscale,
        &bytes,
    )
}

pub fn to_grayscale(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::WrongChannelCount {
            expected: 3,
            actual: img.channels,
        });
    }
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (wr * p[0] + wg * p[1] + wb * p[2]).clamp(0.0, 1.0))
        .collect();
    Ok(Image {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    })
}

pub fn apply_mask(img: &Image, mask: &BinaryMask) -> Result<Image> {
    if !img.same_size(mask) {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.height, img.width, mask.height, mask.width
        )));
    }
    let c = img.channels;
    let data = img
        .data
        .chunks_exact(c)
        .zip(&mask.data)
        .flat_map(|(px, &m)| px.iter().map(move |&v| v * m as f64))
        .collect();
    Ok(Image {
        height: img.height,
        width: img.width,
        channels: c,
        data,
    })
}

fn decode_png(path: &Path) -> Result<(usize, usize, usize, Vec<u16>, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::CorruptData {
        path: path.to_path_buf(),
        reason,
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| corrupt(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: color type {other:?}",
                path.display()
            )))
        }
    };
    let (wide, max) = match depth {
        png::BitDepth::Eight => (false, 255.0),
        png::BitDepth::Sixteen => (true, 65535.0),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: bit depth {other:?}",
                path.display()
            )))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| corrupt("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| corrupt(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let row_samples = width * channels;
    let mut samples = Vec::with_capacity(height * row_samples);
    for row in buf.chunks_exact(info.line_size).take(height) {
        if wide {
            samples.extend(
                row.chunks_exact(2)
                    .take(row_samples)
                    .map(|b| u16::from_be_bytes([b[0], b[1]])),
            );
        } else {
            samples.extend(row.iter().take(row_samples).map(|&b| b as u16));
        }
    }
    if samples.len() != height * row_samples {
        return Err(corrupt("short image data".into()));
    }
    Ok((height, width, channels, samples, max))
}

pub(crate) fn write_png_bytes(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    bytes: &[u8],
) -> Result<()> {
    let mut out = Vec::with_capacity(bytes.len() + 1024);
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    }
    fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
