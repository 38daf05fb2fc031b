//! Procedural wrinkle corpus: skin-toned elliptical faces with dark curved
//! strokes, their exact masks, and three jittered annotator masks.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::jaccard;
use crate::image::{self, BinaryMask, Image};
use crate::texture::list_png_ids;
use crate::trainer::{ANNOTATIONS_DIR, FACE_DIR, IMAGES_DIR};

pub const TRUTH_DIR: &str = "truth";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATORS: [&str; 3] = ["a", "b", "c"];
const MAX_JITTER_ATTEMPTS: usize = 200;
const MAX_PLACEMENT_ATTEMPTS: usize = 50;

/// Face ellipse radii as fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceShape {
    pub rx: f64,
    pub ry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorJitter {
    pub dilate_p: f64,
    pub drop_p: f64,
    pub offset_px: usize,
    /// Accepted range of pairwise Jaccard between annotators.
    pub agreement_band: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    pub wrinkle_count_range: (usize, usize),
    pub wrinkle_width_range: (f64, f64),
    pub wrinkle_darkness: f64,
    pub skin_noise: f64,
    pub face_shape: FaceShape,
    pub annotator_jitter: AnnotatorJitter,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 100,
            size: 64,
            wrinkle_count_range: (2, 6),
            wrinkle_width_range: (1.0, 2.0),
            wrinkle_darkness: 0.35,
            skin_noise: 0.02,
            face_shape: FaceShape { rx: 0.36, ry: 0.44 },
            annotator_jitter: AnnotatorJitter {
                dilate_p: 0.5,
                drop_p: 0.15,
                offset_px: 1,
                agreement_band: (0.25, 0.6),
            },
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let j = &self.annotator_jitter;
        if self.size < 16 || !self.size.is_multiple_of(8) {
            return bad(format!(
                "size {} must be >= 16 and divisible by 8",
                self.size
            ));
        }
        if self.wrinkle_count_range.0 > self.wrinkle_count_range.1 {
            return bad("wrinkle_count_range is empty".into());
        }
        let (w0, w1) = self.wrinkle_width_range;
        if !(w0 > 0.0 && w0 <= w1) {
            return bad("wrinkle_width_range must be positive and nonempty".into());
        }
        if !unit(self.wrinkle_darkness) || !(self.skin_noise >= 0.0) {
            return bad("wrinkle_darkness must be in [0,1] and skin_noise >= 0".into());
        }
        let f = self.face_shape;
        if !(f.rx > 0.0 && f.rx <= 0.5 && f.ry > 0.0 && f.ry <= 0.5) {
            return bad("face radii must be in (0, 0.5]".into());
        }
        if !unit(j.dilate_p)
            || !unit(j.drop_p)
            || !(unit(j.agreement_band.0)
                && j.agreement_band.0 <= j.agreement_band.1
                && unit(j.agreement_band.1))
        {
            return bad("jitter probabilities and agreement band must lie in [0,1]".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: Image,
    pub face: BinaryMask,
    pub truth: BinaryMask,
    pub annotations: [BinaryMask; 3],
    pub wrinkles: usize,
    pub pairwise_jaccard: Option<[f64; 3]>,
    pub jitter_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub wrinkles: usize,
    pub truth_pixels: usize,
    /// (a,b), (a,c), (b,c); absent when the truth is empty.
    pub pairwise_jaccard: Option<[f64; 3]>,
    pub jitter_attempts: usize,
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub samples: Vec<ManifestEntry>,
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(b"synthcor");
    ChaCha8Rng::from_seed(key)
}

pub fn sample_id(index: usize) -> String {
    format!("{index:05}")
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn level(&self, y: f64, x: f64) -> f64 {
        ((x - self.cx) / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2)
    }
}

type Pt = (f64, f64);

fn bezier(p0: Pt, p1: Pt, p2: Pt, t: f64) -> Pt {
    let u = 1.0 - t;
    (
        u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0,
        u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1,
    )
}

/// Pixels within `width / 2` of the curve, plus every pixel the curve passes through.
fn stroke(size: usize, p0: Pt, p1: Pt, p2: Pt, width: f64) -> BinaryMask {
    let len = {
        let (a, b) = (
            (p1.0 - p0.0).hypot(p1.1 - p0.1),
            (p2.0 - p1.0).hypot(p2.1 - p1.1),
        );
        a + b
    };
    let steps = (len * 4.0).ceil().max(2.0) as usize;
    let r = width / 2.0;
    let reach = r.ceil() as isize + 1;
    let mut m = BinaryMask::zeros(size, size);
    for i in 0..=steps {
        let (y, x) = bezier(p0, p1, p2, i as f64 / steps as f64);
        let (yi, xi) = (y.round() as isize, x.round() as isize);
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (py, px) = (yi + dy, xi + dx);
                if py < 0 || px < 0 || py >= size as isize || px >= size as isize {
                    continue;
                }
                let d = (py as f64 - y).hypot(px as f64 - x);
                if (dy == 0 && dx == 0) || d <= r {
                    m.set(py as usize, px as usize, true);
                }
            }
        }
    }
    m
}

fn union(a: &mut BinaryMask, b: &BinaryMask) {
    let (h, w) = (a.height(), a.width());
    for y in 0..h {
        for x in 0..w {
            if b.get(y, x) {
                a.set(y, x, true);
            }
        }
    }
}

fn dilate(m: &BinaryMask) -> BinaryMask {
    let (h, w) = (m.height(), m.width());
    BinaryMask::from_fn(h, w, |y, x| {
        (y.saturating_sub(1)..=(y + 1).min(h - 1))
            .any(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| m.get(yy, xx)))
    })
}

fn shift(m: &BinaryMask, dy: isize, dx: isize) -> BinaryMask {
    let (h, w) = (m.height() as isize, m.width() as isize);
    BinaryMask::from_fn(m.height(), m.width(), |y, x| {
        let (sy, sx) = (y as isize - dy, x as isize - dx);
        sy >= 0 && sx >= 0 && sy < h && sx < w && m.get(sy as usize, sx as usize)
    })
}

fn annotate(
    curves: &[BinaryMask],
    face: &BinaryMask,
    j: &AnnotatorJitter,
    rng: &mut ChaCha8Rng,
) -> BinaryMask {
    let mut m = BinaryMask::zeros(face.height(), face.width());
    for c in curves {
        if rng.gen::<f64>() >= j.drop_p {
            union(&mut m, c);
        }
    }
    if rng.gen::<f64>() < j.dilate_p {
        m = dilate(&m);
    }
    if j.offset_px > 0 {
        let o = j.offset_px as isize;
        let (dy, dx) = (rng.gen_range(-o..=o), rng.gen_range(-o..=o));
        m = shift(&m, dy, dx);
    }
    m.and(face).expect("same shape")
}

fn band_distance(js: &[f64; 3], band: (f64, f64)) -> f64 {
    js.iter()
        .map(|&v| (band.0 - v).max(0.0) + (v - band.1).max(0.0))
        .sum()
}

/// Renders sample `index` of the corpus; a pure function of `(spec, index)`.
pub fn render(spec: &SynthSpec, index: usize) -> SynthSample {
    let mut rng = sample_rng(spec.seed, index as u64);
    let n = spec.size;
    let s = n as f64;

    let face_e = Ellipse {
        cx: s * (0.5 + rng.gen_range(-0.03..0.03)) - 0.5,
        cy: s * (0.5 + rng.gen_range(-0.03..0.03)) - 0.5,
        rx: s * spec.face_shape.rx * rng.gen_range(0.95..1.05),
        ry: s * spec.face_shape.ry * rng.gen_range(0.95..1.05),
    };
    let face = BinaryMask::from_fn(n, n, |y, x| face_e.level(y as f64, x as f64) <= 1.0);

    let tone = rng.gen_range(0.6..0.9);
    let skin = [
        tone,
        tone * rng.gen_range(0.72..0.82),
        tone * rng.gen_range(0.58..0.7),
    ];
    let bg = [
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.3..0.7),
    ];
    let (stripe_f, stripe_ph, stripe_a) = (
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.03..0.1),
    );
    let (gx, gy) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let (wave_f, wave_ph) = (rng.gen_range(0.5..1.5), rng.gen_range(0.0..std::f64::consts::TAU));
    let noise = Normal::new(0.0, spec.skin_noise.max(1e-12)).expect("valid std");

    let mut px = vec![0.0f64; n * n * 3];
    for y in 0..n {
        for x in 0..n {
            let (yf, xf) = (y as f64, x as f64);
            let grain = if spec.skin_noise > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let base = if face.get(y, x) {
                let shade = 1.0
                    + gx * (xf - face_e.cx) / s * 2.0
                    + gy * (yf - face_e.cy) / s * 2.0
                    + 0.04 * (std::f64::consts::TAU * wave_f * yf / s + wave_ph).cos();
                skin.map(|c| c * shade + grain)
            } else {
                let stripe = stripe_a * (stripe_f * (xf + 0.5 * yf) + stripe_ph).sin();
                bg.map(|c| c + stripe + grain)
            };
            px[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(&base);
        }
    }

    // Eyes, brows and mouth: dark blobs that the texture map also responds to.
    let features = [
        Ellipse {
            cx: face_e.cx - 0.38 * face_e.rx,
            cy: face_e.cy - 0.12 * face_e.ry,
            rx: 0.16 * face_e.rx,
            ry: 0.06 * face_e.ry,
        },
        Ellipse {
            cx: face_e.cx + 0.38 * face_e.rx,
            cy: face_e.cy - 0.12 * face_e.ry,
            rx: 0.16 * face_e.rx,
            ry: 0.06 * face_e.ry,
        },
        Ellipse {
            cx: face_e.cx,
            cy: face_e.cy + 0.52 * face_e.ry,
            rx: 0.3 * face_e.rx,
            ry: 0.05 * face_e.ry,
        },
    ];
    let feature_dark = rng.gen_range(0.4..0.55);
    for y in 0..n {
        for x in 0..n {
            if features.iter().any(|f| f.level(y as f64, x as f64) <= 1.0) {
                for c in 0..3 {
                    px[(y * n + x) * 3 + c] *= feature_dark;
                }
            }
        }
    }
    let near_feature = |y: f64, x: f64| {
        features.iter().any(|f| {
            let grown = Ellipse {
                rx: f.rx + 3.0,
                ry: f.ry + 3.0,
                ..*f
            };
            grown.level(y, x) <= 1.0
        })
    };

    let (c0, c1) = spec.wrinkle_count_range;
    let want = rng.gen_range(c0..=c1);
    let mut curves = Vec::new();
    for _ in 0..want {
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let rad = rng.gen::<f64>().sqrt() * 0.75;
            let p0 = (
                face_e.cy + rad * face_e.ry * ang.sin(),
                face_e.cx + rad * face_e.rx * ang.cos(),
            );
            let theta: f64 = if rng.gen::<f64>() < 0.7 {
                rng.gen_range(-0.45..0.45)
            } else {
                rng.gen_range(-1.57..1.57)
            };
            let len = s * rng.gen_range(0.12..0.3);
            let p2 = (p0.0 + len * theta.sin(), p0.1 + len * theta.cos());
            let bend = len * rng.gen_range(-0.2..0.2);
            let p1 = (
                (p0.0 + p2.0) / 2.0 + bend * theta.cos(),
                (p0.1 + p2.1) / 2.0 - bend * theta.sin(),
            );
            let width = rng.gen_range(spec.wrinkle_width_range.0..=spec.wrinkle_width_range.1);
            let depth = rng.gen_range(0.8..=1.0);
            let ok = (0..=16).all(|i| {
                let (y, x) = bezier(p0, p1, p2, i as f64 / 16.0);
                face_e.level(y, x) <= 0.8 && !near_feature(y, x)
            });
            if ok {
                let m = stroke(n, p0, p1, p2, width).and(&face).expect("same shape");
                for y in 0..n {
                    for x in 0..n {
                        if m.get(y, x) {
                            for c in 0..3 {
                                px[(y * n + x) * 3 + c] *= 1.0 - spec.wrinkle_darkness * depth;
                            }
                        }
                    }
                }
                curves.push(m);
                break;
            }
        }
    }
    let mut truth = BinaryMask::zeros(n, n);
    for c in &curves {
        union(&mut truth, c);
    }

    let j = &spec.annotator_jitter;
    let empty = truth.count_ones() == 0;
    let mut best: Option<([BinaryMask; 3], Option<[f64; 3]>, f64)> = None;
    let mut attempts = 0;
    for _ in 0..MAX_JITTER_ATTEMPTS {
        attempts += 1;
        let set = [
            annotate(&curves, &face, j, &mut rng),
            annotate(&curves, &face, j, &mut rng),
            annotate(&curves, &face, j, &mut rng),
        ];
        if empty {
            best = Some((set, None, 0.0));
            break;
        }
        let js = [
            jaccard(&set[0], &set[1]).expect("same shape"),
            jaccard(&set[0], &set[2]).expect("same shape"),
            jaccard(&set[1], &set[2]).expect("same shape"),
        ];
        let dist = band_distance(&js, j.agreement_band);
        if best.as_ref().is_none_or(|b| dist < b.2) {
            best = Some((set, Some(js), dist));
        }
        if dist == 0.0 {
            break;
        }
    }
    let (annotations, pairwise_jaccard, _) = best.expect("at least one attempt");

    SynthSample {
        image: Image::from_clamped(n, n, 3, px),
        face,
        truth,
        annotations,
        wrinkles: curves.len(),
        pairwise_jaccard,
        jitter_attempts: attempts,
    }
}

fn in_band(js: &Option<[f64; 3]>, band: (f64, f64)) -> bool {
    js.is_none_or(|v| band_distance(&v, band) == 0.0)
}

/// Writes the corpus under `out_dir`; output bytes do not depend on `jobs`.
pub fn generate(spec: &SynthSpec, out_dir: &Path, jobs: usize) -> Result<Manifest> {
    spec.validate()?;
    let dirs: Vec<PathBuf> = [IMAGES_DIR, FACE_DIR, TRUTH_DIR]
        .iter()
        .map(|d| out_dir.join(d))
        .chain(
            ANNOTATORS
                .iter()
                .map(|a| out_dir.join(ANNOTATIONS_DIR).join(a)),
        )
        .collect();
    for d in &dirs {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let band = spec.annotator_jitter.agreement_band;
    let samples = pool.install(|| {
        (0..spec.count)
            .into_par_iter()
            .map(|i| -> Result<ManifestEntry> {
                let s = render(spec, i);
                let id = sample_id(i);
                let file = format!("{id}.png");
                image::save_png(&s.image, out_dir.join(IMAGES_DIR).join(&file))?;
                image::save_mask(&s.face, out_dir.join(FACE_DIR).join(&file))?;
                image::save_mask(&s.truth, out_dir.join(TRUTH_DIR).join(&file))?;
                for (a, m) in ANNOTATORS.iter().zip(&s.annotations) {
                    image::save_mask(m, out_dir.join(ANNOTATIONS_DIR).join(a).join(&file))?;
                }
                Ok(ManifestEntry {
                    id,
                    wrinkles: s.wrinkles,
                    truth_pixels: s.truth.count_ones(),
                    pairwise_jaccard: s.pairwise_jaccard,
                    jitter_attempts: s.jitter_attempts,
                    in_band: in_band(&s.pairwise_jaccard, band),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = Manifest {
        spec: spec.clone(),
        samples,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Missing,
    Unreadable,
    NotBinary,
    TruthOutsideFace,
    DimensionMismatch,
    WrongChannels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub id: String,
    pub file: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub images_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks layout completeness, mask binarity, truth within face and matching dimensions.
pub fn validate(corpus_dir: &Path) -> ValidationReport {
    let mut rel_dirs: Vec<String> = vec![IMAGES_DIR.into(), FACE_DIR.into(), TRUTH_DIR.into()];
    rel_dirs.extend(ANNOTATORS.iter().map(|a| format!("{ANNOTATIONS_DIR}/{a}")));
    let mut violations = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for d in &rel_dirs {
        match list_png_ids(&corpus_dir.join(d)) {
            Ok(found) => ids.extend(found),
            Err(e) => violations.push(Violation {
                id: String::new(),
                file: d.clone(),
                kind: ViolationKind::Missing,
                detail: e.to_string(),
            }),
        }
    }
    for id in &ids {
        let file_of = |d: &str| format!("{d}/{id}.png");
        let mut push = |file: String, kind, detail: String| {
            violations.push(Violation {
                id: id.clone(),
                file,
                kind,
                detail,
            })
        };
        let mut dims = None;
        let mut masks: Vec<(String, Option<BinaryMask>)> = Vec::new();
        for d in &rel_dirs {
            let file = file_of(d);
            let path = corpus_dir.join(&file);
            if !path.exists() {
                push(file, ViolationKind::Missing, "file absent".into());
                if d != IMAGES_DIR {
                    masks.push((d.clone(), None));
                }
                continue;
            }
            let img = match image::load_png(&path) {
                Ok(img) => img,
                Err(e) => {
                    push(file, ViolationKind::Unreadable, e.to_string());
                    continue;
                }
            };
            let here = (img.height(), img.width());
            match dims {
                None => dims = Some(here),
                Some(want) if want != here => push(
                    file.clone(),
                    ViolationKind::DimensionMismatch,
                    format!("{}x{} vs {}x{}", here.0, here.1, want.0, want.1),
                ),
                _ => {}
            }
            if d == IMAGES_DIR {
                if img.channels() != 3 {
                    push(
                        file,
                        ViolationKind::WrongChannels,
                        format!("{} channels", img.channels()),
                    );
                }
                continue;
            }
            let binary = img.channels() == 1 && img.data().iter().all(|&v| v == 0.0 || v == 1.0);
            if !binary {
                push(
                    file,
                    ViolationKind::NotBinary,
                    "mask has values other than 0 and 255".into(),
                );
                masks.push((d.clone(), None));
                continue;
            }
            let bits = img.data().iter().map(|&v| v as u8).collect();
            masks.push((d.clone(), BinaryMask::new(here.0, here.1, bits).ok()));
        }
        let get = |name: &str| {
            masks
                .iter()
                .find(|(d, _)| d == name)
                .and_then(|(_, m)| m.as_ref())
        };
        if let (Some(face), Some(truth)) = (get(FACE_DIR), get(TRUTH_DIR)) {
            if face.same_shape(truth) && !truth.is_subset_of(face) {
                push(
                    file_of(TRUTH_DIR),
                    ViolationKind::TruthOutsideFace,
                    "truth pixels outside the face mask".into(),
                );
            }
        }
    }
    ValidationReport {
        images_checked: ids.len(),
        violations,
    }
}
