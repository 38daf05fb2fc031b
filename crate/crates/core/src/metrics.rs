//! Pixel-level segmentation metrics: JSI, precision, recall, F1 and accuracy.
//!
//! Zero-denominator conventions: precision, recall, F1 and JSI are 0 when
//! their denominator vanishes, except when both prediction and truth are
//! empty, where JSI and F1 are 1 (agreement on absence).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryMask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub jsi: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub counts: ConfusionCounts,
}

impl EvalResult {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let ConfusionCounts { tp, fp, fn_, tn } = counts;
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let both_empty = tp + fp + fn_ == 0;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let (jsi, f1) = if both_empty {
            (1.0, 1.0)
        } else {
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (ratio(tp, tp + fp + fn_), f1)
        };
        let accuracy = ratio(tp + tn, counts.total());
        Self {
            jsi,
            precision,
            recall,
            f1,
            accuracy,
            counts,
        }
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    pred.ensure_same_shape(truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn evaluate(pred: &BinaryMask, truth: &BinaryMask) -> Result<EvalResult> {
    Ok(EvalResult::from_counts(confusion(pred, truth)?))
}

/// Micro-averaged metrics: counts summed over all pairs, ratios computed once.
pub fn evaluate_dataset<'a, I>(pairs: I) -> Result<EvalResult>
where
    I: IntoIterator<Item = (&'a BinaryMask, &'a BinaryMask)>,
{
    let mut total = ConfusionCounts::default();
    let mut n = 0usize;
    for (p, t) in pairs {
        total = total + confusion(p, t)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(EvalResult::from_counts(total))
}
