//! Checkpoint values and the `WRNK1` file format.
//!
//! Layout: magic `WRNK1`, a little-endian `u64` header length, the JSON
//! header, then every tensor as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{he_weights, layer_inventory, parameter_inventory, Model, UNetSpec};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"WRNK1";

/// Fixed architectural choices, folded into every config hash.
pub const ARCH_TAG: &str = "unet/relu/maxpool2/nearest-up/no-norm/he-normal";

const HEAD_SALT: u64 = 0x6865_6164_5f72_6e67;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: UNetSpec,
    pub params: Vec<NamedArray>,
    pub optimizer_state: Vec<NamedArray>,
    pub optimizer_step: u64,
    pub epoch: u64,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: String,
    spec: UNetSpec,
    epoch: u64,
    optimizer_step: u64,
    config_hash: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    group: Group,
}

#[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum Group {
    Param,
    Optim,
}

impl Checkpoint {
    pub fn from_model<T: Real>(
        model: &Model<T>,
        epoch: u64,
        config_hash: impl Into<String>,
    ) -> Self {
        let params = model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, p)| NamedArray {
                name,
                shape: p.dims().to_vec(),
                data: p.values().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Self {
            spec: *model.spec(),
            params,
            optimizer_state: Vec::new(),
            optimizer_step: 0,
            epoch,
            config_hash: config_hash.into(),
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<Model<T>> {
        self.validate()?;
        let tensors = self
            .params
            .iter()
            .map(|a| {
                let dims = [a.shape[0], a.shape[1], a.shape[2], a.shape[3]];
                Tensor4::from_vec(dims, a.data.iter().map(|&v| T::lit(v as f64)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Model::from_parts(self.spec, tensors)
    }

    pub fn param(&self, name: &str) -> Option<&NamedArray> {
        self.params.iter().find(|a| a.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|a| a.data.len()).sum()
    }

    /// Every inventory parameter present exactly once, in order, with its shape.
    pub fn validate(&self) -> Result<()> {
        self.spec
            .validate()
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let inventory = parameter_inventory(&self.spec);
        if inventory.len() != self.params.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {} parameter tensors, found {}",
                inventory.len(),
                self.params.len()
            )));
        }
        for ((name, dims), a) in inventory.iter().zip(&self.params) {
            if *name != a.name || a.shape != dims.to_vec() {
                return Err(Error::CorruptCheckpoint(format!(
                    "expected {name} {dims:?}, found {} {:?}",
                    a.name, a.shape
                )));
            }
            if a.data.len() != dims.iter().product::<usize>() {
                return Err(Error::CorruptCheckpoint(format!(
                    "{name}: wrong element count"
                )));
            }
        }
        for a in &self.optimizer_state {
            if a.data.len() != a.shape.iter().product::<usize>() {
                return Err(Error::CorruptCheckpoint(format!(
                    "{}: wrong element count",
                    a.name
                )));
            }
        }
        Ok(())
    }

    pub fn verify_hash(&self, expected: &str, force: bool) -> Result<()> {
        if !force && self.config_hash != expected {
            return Err(Error::HashMismatch {
                expected: expected.to_string(),
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let tensors = self
            .params
            .iter()
            .map(|a| (a, Group::Param))
            .chain(self.optimizer_state.iter().map(|a| (a, Group::Optim)));
        let header = Header {
            arch: ARCH_TAG.to_string(),
            spec: self.spec,
            epoch: self.epoch,
            optimizer_step: self.optimizer_step,
            config_hash: self.config_hash.clone(),
            tensors: tensors
                .clone()
                .map(|(a, group)| TensorEntry {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    group,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 4 * self.param_count() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (a, _) in tensors {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[5..13]);
        let len = u64::from_le_bytes(len) as usize;
        let body = &bytes[13..];
        if body.len() < len {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        if header.arch != ARCH_TAG {
            return Err(Error::CorruptCheckpoint(format!(
                "architecture tag {:?} is not {ARCH_TAG:?}",
                header.arch
            )));
        }
        let mut blob = &body[len..];
        let mut params = Vec::new();
        let mut optimizer_state = Vec::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if blob.len() < 4 * n {
                return Err(corrupt("truncated tensor data"));
            }
            let data = blob[..4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            blob = &blob[4 * n..];
            let arr = NamedArray {
                name: entry.name,
                shape: entry.shape,
                data,
            };
            match entry.group {
                Group::Param => params.push(arr),
                Group::Optim => optimizer_state.push(arr),
            }
        }
        if !blob.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        let ckpt = Checkpoint {
            spec: header.spec,
            params,
            optimizer_state,
            optimizer_step: header.optimizer_step,
            epoch: header.epoch,
            config_hash: header.config_hash,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint; when `expected_hash` is given it must match unless `force`.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected_hash: Option<&str>,
    force: bool,
) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    if let Some(h) = expected_hash {
        ckpt.verify_hash(h, force)?;
    }
    Ok(ckpt)
}

/// Grows the first convolution to `new_in` input channels with zero weights
/// for the new channels, so the network ignores them until trained.
/// Optimizer state is dropped.
pub fn expand_input_channels(ckpt: &Checkpoint, new_in: usize) -> Result<Checkpoint> {
    ckpt.validate()?;
    let old_in = ckpt.spec.in_channels;
    if new_in <= old_in {
        return Err(Error::ShrinkNotSupported {
            from: old_in,
            to: new_in,
        });
    }
    let mut out = ckpt.clone();
    out.spec.in_channels = new_in;
    out.optimizer_state.clear();
    out.optimizer_step = 0;
    let first = &mut out.params[0];
    let (oc, k) = (first.shape[0], first.shape[2]);
    let plane = k * first.shape[3];
    let mut data = Vec::with_capacity(oc * new_in * plane);
    for o in 0..oc {
        data.extend_from_slice(&first.data[o * old_in * plane..(o + 1) * old_in * plane]);
        data.extend(std::iter::repeat_n(0.0, (new_in - old_in) * plane));
    }
    first.shape[1] = new_in;
    first.data = data;
    out.validate()?;
    Ok(out)
}

/// Re-initializes the 1x1 output layer for `new_out` channels; every other
/// parameter is copied unchanged. Optimizer state is dropped.
pub fn replace_head(ckpt: &Checkpoint, new_out: usize, seed: u64) -> Result<Checkpoint> {
    ckpt.validate()?;
    if new_out == 0 {
        return Err(Error::InvalidSpec("output channels must be >= 1".into()));
    }
    let mut out = ckpt.clone();
    out.spec.out_channels = new_out;
    out.optimizer_state.clear();
    out.optimizer_step = 0;
    let head = layer_inventory(&out.spec)
        .pop()
        .expect("inventory has a head");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ HEAD_SALT);
    let n = out.params.len();
    out.params[n - 2] = NamedArray {
        name: format!("{}.weight", head.name),
        shape: head.weight_dims().to_vec(),
        data: he_weights(&head, &mut rng),
    };
    out.params[n - 1] = NamedArray {
        name: format!("{}.bias", head.name),
        shape: head.bias_dims().to_vec(),
        data: vec![0.0; new_out],
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::build;
    use rand::Rng;

    fn sample_ckpt() -> Checkpoint {
        let m: Model<f32> = build(UNetSpec::new(3, 1, 4, 2, 11)).unwrap();
        let mut c = Checkpoint::from_model(&m, 3, "abc");
        c.optimizer_state.push(NamedArray {
            name: "adam.m.enc0.conv1.bias".into(),
            shape: vec![1, 4, 1, 1],
            data: vec![0.5, -1.0, 2.0, 0.25],
        });
        c.optimizer_step = 17;
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample_ckpt();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..5], b"WRNK1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = sample_ckpt();
        save_checkpoint(&c, &p).unwrap();
        let first = fs::read(&p).unwrap();
        let loaded = load_checkpoint(&p, Some("abc"), false).unwrap();
        save_checkpoint(&loaded, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
        assert!(matches!(
            load_checkpoint(&p, Some("xyz"), false),
            Err(Error::HashMismatch { .. })
        ));
        assert!(load_checkpoint(&p, Some("xyz"), true).is_ok());
    }

    #[test]
    fn truncated_and_garbage_are_corrupt() {
        let bytes = sample_ckpt().to_bytes().unwrap();
        for cut in [3, 10, 40, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&extra),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn expansion_grows_first_layer_only() {
        let c = sample_ckpt();
        assert!(matches!(
            expand_input_channels(&c, 3),
            Err(Error::ShrinkNotSupported { .. })
        ));
        let e = expand_input_channels(&c, 4).unwrap();
        assert_eq!(e.spec.in_channels, 4);
        // 3 * 3 kernel * base width 4 * one new channel
        assert_eq!(e.param_count() - c.param_count(), 3 * 3 * 4);
        let w = &e.params[0];
        for o in 0..4 {
            let old = &c.params[0].data[o * 27..(o + 1) * 27];
            assert_eq!(&w.data[o * 36..o * 36 + 27], old);
            assert!(w.data[o * 36 + 27..(o + 1) * 36].iter().all(|&v| v == 0.0));
        }
        assert_eq!(e.params[1..], c.params[1..]);
    }

    #[test]
    fn expansion_preserves_function() {
        let c = sample_ckpt();
        let e = expand_input_channels(&c, 4).unwrap();
        let before: Model<f32> = c.to_model().unwrap();
        let after: Model<f32> = e.to_model().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x3: Vec<f32> = (0..3 * 64).map(|_| rng.gen()).collect();
        let extra: Vec<f32> = (0..64).map(|_| rng.gen::<f32>() * 10.0).collect();
        let mut x4 = x3.clone();
        x4.extend(extra);
        let a = before
            .infer(&Tensor4::from_vec([1, 3, 8, 8], x3.clone()).unwrap())
            .unwrap();
        let b = after
            .infer(&Tensor4::from_vec([1, 4, 8, 8], x4.clone()).unwrap())
            .unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p - q).abs() < 1e-7);
        }
        let fa = before
            .encoder_features(&Tensor4::from_vec([1, 3, 8, 8], x3).unwrap())
            .unwrap();
        let fb = after
            .encoder_features(&Tensor4::from_vec([1, 4, 8, 8], x4).unwrap())
            .unwrap();
        for (p, q) in fa.iter().zip(&fb) {
            for (u, v) in p.values().iter().zip(q.values()) {
                assert!((u - v).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn head_replacement() {
        let c = sample_ckpt();
        let r = replace_head(&c, 2, 5).unwrap();
        assert_eq!(r.spec.out_channels, 2);
        let n = c.params.len();
        assert_eq!(r.params[..n - 2], c.params[..n - 2]);
        assert_eq!(r.params[n - 2].shape, vec![2, 4, 1, 1]);
        assert_eq!(r, replace_head(&c, 2, 5).unwrap());
        assert!(r.optimizer_state.is_empty());

        // Same seed as the original build: head is redrawn, not copied.
        let again = replace_head(&c, 1, c.spec.seed).unwrap();
        assert_ne!(again.params[n - 2].data, c.params[n - 2].data);
        assert!(r.to_model::<f32>().is_ok());
    }
}
