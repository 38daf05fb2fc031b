use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{read_json, write_json, SplitFractions};
use crate::error::{Error, Result};

pub const MIN_SPLIT_IDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    fn covers(&self, ids: &[String]) -> bool {
        let mut all: Vec<&String> = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .collect();
        all.sort();
        let mut want: Vec<&String> = ids.iter().collect();
        want.sort();
        all == want
    }
}

fn floor_frac(n: usize, f: f64) -> usize {
    // Guard against representation error (0.8 * 10 must give 8).
    ((n as f64 * f) + 1e-9).floor() as usize
}

/// Seeded shuffle of the sorted ids, cut into `floor(train n) / floor(val n) / rest`.
pub fn make_split(ids: &[String], fractions: &SplitFractions, seed: u64) -> Result<SplitManifest> {
    if ids.len() < MIN_SPLIT_IDS {
        return Err(Error::TooFewSamples {
            needed: MIN_SPLIT_IDS,
            got: ids.len(),
        });
    }
    let mut order = ids.to_vec();
    order.sort();
    order.dedup();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_train = floor_frac(n, fractions.train);
    let n_val = floor_frac(n, fractions.val);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitManifest {
        seed,
        train: order,
        val,
        test,
    })
}

/// Reuses `path` when it holds a split with this seed over the same ids, otherwise writes a fresh one.
pub fn load_or_make_split(
    path: &Path,
    ids: &[String],
    fractions: &SplitFractions,
    seed: u64,
) -> Result<SplitManifest> {
    if path.exists() {
        let existing: SplitManifest = read_json(path)?;
        if existing.seed == seed && existing.covers(ids) {
            return Ok(existing);
        }
    }
    let split = make_split(ids, fractions, seed)?;
    write_json(path, &split)?;
    Ok(split)
}

/// The `round(fraction * n)` ids (at least one) with the lowest `sha256(seed, id)`, in sorted order.
pub fn label_subset(ids: &[String], fraction: f64, seed: u64) -> Vec<String> {
    if fraction >= 1.0 || ids.is_empty() {
        let mut all = ids.to_vec();
        all.sort();
        return all;
    }
    let k = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len());
    let mut keyed: Vec<([u8; 32], &String)> = ids
        .iter()
        .map(|id| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(id.as_bytes());
            (h.finalize().into(), id)
        })
        .collect();
    keyed.sort();
    let mut chosen: Vec<String> = keyed
        .into_iter()
        .take(k)
        .map(|(_, id)| id.clone())
        .collect();
    chosen.sort();
    chosen
}
