use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::AugmentConfig;
use super::data::Sample;

/// One draw of the geometric transform shared by every plane of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub scale: f64,
    /// Radians.
    pub angle: f64,
    /// Pixels.
    pub shift: (f64, f64),
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        hflip: false,
        scale: 1.0,
        angle: 0.0,
        shift: (0.0, 0.0),
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Draws in a fixed order: flip, scale, angle, shift y, shift x.
    pub fn draw(cfg: &AugmentConfig, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let hflip = cfg.hflip_p > 0.0 && rng.gen::<f64>() < cfg.hflip_p;
        let (lo, hi) = cfg.scale_range;
        let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let angle = if cfg.rotate_deg > 0.0 {
            rng.gen_range(-cfg.rotate_deg..=cfg.rotate_deg).to_radians()
        } else {
            0.0
        };
        let t = cfg.translate_frac;
        let shift = if t > 0.0 {
            (
                rng.gen_range(-t..=t) * height as f64,
                rng.gen_range(-t..=t) * width as f64,
            )
        } else {
            (0.0, 0.0)
        };
        Self {
            hflip,
            scale,
            angle,
            shift,
        }
    }

    /// Source coordinate (y, x) for output pixel (y, x).
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (f64, f64) {
        let xo = if self.hflip { w - 1 - x } else { x } as f64;
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let dy = y as f64 - cy - self.shift.0;
        let dx = xo - cx - self.shift.1;
        let (s, c) = self.angle.sin_cos();
        let sx = (c * dx + s * dy) / self.scale + cx;
        let sy = (-s * dx + c * dy) / self.scale + cy;
        (sy, sx)
    }
}

/// Per-sample stream keyed by `(seed, epoch, index)`.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"augment\0");
    ChaCha8Rng::from_seed(key)
}

fn clamp_idx(v: f64, n: usize) -> (usize, usize, f64) {
    let v = v.clamp(0.0, (n - 1) as f64);
    let i0 = v.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, v - i0 as f64)
}

/// Bilinear resampling of one `h x w` plane with edge clamping.
pub fn warp_bilinear(plane: &[f32], h: usize, w: usize, p: &AugmentParams) -> Vec<f32> {
    if p.is_identity() {
        return plane.to_vec();
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = p.source(y, x, h, w);
            let (y0, y1, fy) = clamp_idx(sy, h);
            let (x0, x1, fx) = clamp_idx(sx, w);
            let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    out
}

/// Nearest-neighbour resampling for masks; outside the source is background.
pub fn warp_nearest(mask: &[u8], h: usize, w: usize, p: &AugmentParams) -> Vec<u8> {
    if p.is_identity() {
        return mask.to_vec();
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = p.source(y, x, h, w);
            let (ry, rx) = (sy.round(), sx.round());
            let inside = ry >= 0.0 && rx >= 0.0 && ry < h as f64 && rx < w as f64;
            out.push(if inside {
                mask[ry as usize * w + rx as usize]
            } else {
                0
            });
        }
    }
    out
}

/// Applies one transform to the image, texture and both masks.
pub fn apply(sample: &Sample, p: &AugmentParams) -> Sample {
    let (h, w) = (sample.height, sample.width);
    let n = h * w;
    let mut rgb = Vec::with_capacity(3 * n);
    for c in 0..3 {
        rgb.extend(warp_bilinear(&sample.rgb[c * n..(c + 1) * n], h, w, p));
    }
    Sample {
        id: sample.id.clone(),
        height: h,
        width: w,
        rgb,
        texture: warp_bilinear(&sample.texture, h, w, p),
        face: warp_nearest(&sample.face, h, w, p),
        truth: sample.truth.as_ref().map(|t| warp_nearest(t, h, w, p)),
    }
}

pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    let p = AugmentParams::draw(cfg, sample.height, sample.width, rng);
    apply(sample, &p)
}
