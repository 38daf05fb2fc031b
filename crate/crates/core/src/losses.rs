//! Training objectives with analytic gradients.
//!
//! Row-major `N x C` arrays are passed as flat slices plus a class count.

use crate::error::{Error, Result};

pub const DICE_SMOOTH: f64 = 1e-6;
const ROW_SUM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient of `value` with respect to the prediction input, same layout.
    pub grad: Vec<f64>,
}

/// Mean squared error.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<LossValue> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} elements, target {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok(LossValue {
        value: value / n,
        grad,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Result<Vec<f64>> {
    if classes == 0 || !logits.len().is_multiple_of(classes) {
        return Err(Error::ShapeMismatch(format!(
            "{} logits do not split into rows of {classes}",
            logits.len()
        )));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits
        .chunks_exact(classes)
        .zip(out.chunks_exact_mut(classes))
    {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    Ok(out)
}

/// Soft Dice loss averaged over classes, with `smooth` added to numerator and denominator.
///
/// `probs` must be post-softmax (rows sum to 1) and `onehot` exact one-hot rows.
pub fn soft_dice(probs: &[f64], onehot: &[f64], classes: usize, smooth: f64) -> Result<LossValue> {
    if classes < 2 || probs.len() != onehot.len() || probs.is_empty() || !probs.len().is_multiple_of(classes)
    {
        return Err(Error::ShapeMismatch(format!(
            "soft dice needs matching N x C arrays with C >= 2 (got {} / {} values, C = {classes})",
            probs.len(),
            onehot.len()
        )));
    }
    for (r, (prow, grow)) in probs
        .chunks_exact(classes)
        .zip(onehot.chunks_exact(classes))
        .enumerate()
    {
        let sum: f64 = prow.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || prow.iter().any(|p| !p.is_finite()) {
            return Err(Error::NotNormalized { row: r, sum });
        }
        let ones = grow.iter().filter(|&&g| g == 1.0).count();
        let zeros = grow.iter().filter(|&&g| g == 0.0).count();
        if ones != 1 || ones + zeros != classes {
            return Err(Error::NotNormalized {
                row: r,
                sum: grow.iter().sum(),
            });
        }
    }

    let mut inter = vec![0.0; classes];
    let mut psum = vec![0.0; classes];
    let mut gsum = vec![0.0; classes];
    for (prow, grow) in probs
        .chunks_exact(classes)
        .zip(onehot.chunks_exact(classes))
    {
        for c in 0..classes {
            inter[c] += prow[c] * grow[c];
            psum[c] += prow[c];
            gsum[c] += grow[c];
        }
    }
    let cf = classes as f64;
    let mut dice_mean = 0.0;
    let mut num = vec![0.0; classes];
    let mut den = vec![0.0; classes];
    for c in 0..classes {
        num[c] = 2.0 * inter[c] + smooth;
        den[c] = psum[c] + gsum[c] + smooth;
        dice_mean += num[c] / den[c];
    }
    dice_mean /= cf;

    let mut grad = vec![0.0; probs.len()];
    for (grow, drow) in onehot
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
    {
        for c in 0..classes {
            // d(num/den)/dp = (2 g den - num) / den^2
            drow[c] = -(2.0 * grow[c] * den[c] - num[c]) / (den[c] * den[c] * cf);
        }
    }
    Ok(LossValue {
        value: 1.0 - dice_mean,
        grad,
    })
}
