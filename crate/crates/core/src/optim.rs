//! AdamW with decoupled weight decay and the SGDR warm-restart schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::micronet::{NamedArray, Real, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.05,
            eps: 1e-8,
        }
    }
}

/// Moments kept in `f64` regardless of the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params<T: Real>(config: AdamWConfig, params: &[Tensor4<T>]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(config, &sizes)
    }

    /// One update over every tensor using its gradient buffer (missing buffers count as zero).
    pub fn step_tensors<T: Real>(&mut self, params: &mut [Tensor4<T>], lr: f64) -> Result<()> {
        self.check(params.iter().map(|p| p.len()))?;
        self.step += 1;
        let (c1, c2) = self.corrections();
        for (i, p) in params.iter_mut().enumerate() {
            let (vals, grads) = p.split_mut();
            for j in 0..vals.len() {
                let g = grads[j].as_f64();
                let next = self.update(i, j, vals[j].as_f64(), g, lr, c1, c2);
                vals[j] = T::lit(next);
            }
        }
        Ok(())
    }

    /// Plain-slice form of [`AdamWState::step_tensors`].
    pub fn step_slices(
        &mut self,
        params: &mut [Vec<f64>],
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        self.check(params.iter().map(|p| p.len()))?;
        if grads.len() != params.len()
            || grads
                .iter()
                .zip(params.iter())
                .any(|(g, p)| g.len() != p.len())
        {
            return Err(Error::ShapeMismatch(
                "gradients do not match parameters".into(),
            ));
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for j in 0..p.len() {
                p[j] = self.update(i, j, p[j], g[j], lr, c1, c2);
            }
        }
        Ok(())
    }

    fn check(&self, lens: impl ExactSizeIterator<Item = usize>) -> Result<()> {
        let n = lens.len();
        if n != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {n}",
                self.m.len()
            )));
        }
        for (i, len) in lens.enumerate() {
            if self.m[i].len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {i}: optimizer has {} moments, parameter has {len} values",
                    self.m[i].len()
                )));
            }
        }
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (
            1.0 - self.config.beta1.powi(t),
            1.0 - self.config.beta2.powi(t),
        )
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn update(&mut self, i: usize, j: usize, p: f64, g: f64, lr: f64, c1: f64, c2: f64) -> f64 {
        let AdamWConfig {
            beta1,
            beta2,
            weight_decay,
            eps,
        } = self.config;
        let m = &mut self.m[i][j];
        let v = &mut self.v[i][j];
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        p - lr * (mhat / (vhat.sqrt() + eps) + weight_decay * p)
    }

    /// Moments as named arrays (`adam.m.<param>` / `adam.v.<param>`), stored as `f32`.
    pub fn to_named(&self, names: &[String], shapes: &[Vec<usize>]) -> Vec<NamedArray> {
        let mut out = Vec::with_capacity(2 * names.len());
        for (kind, moments) in [("m", &self.m), ("v", &self.v)] {
            for ((name, shape), data) in names.iter().zip(shapes).zip(moments) {
                out.push(NamedArray {
                    name: format!("adam.{kind}.{name}"),
                    shape: shape.clone(),
                    data: data.iter().map(|&x| x as f32).collect(),
                });
            }
        }
        out
    }
}

/// Cosine annealing with warm restarts, stepped per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdrSchedule {
    pub initial_period: u64,
    pub max_lr: f64,
    /// Multiplier applied to the peak at every restart.
    pub period_decay: f64,
    /// Period length doubles at every restart when set.
    pub doubling: bool,
}

impl SgdrSchedule {
    pub fn pretrain_default() -> Self {
        Self {
            initial_period: 10,
            max_lr: 1e-3,
            period_decay: 1.0,
            doubling: true,
        }
    }

    pub fn finetune_default() -> Self {
        Self {
            initial_period: 10,
            max_lr: 1e-4,
            period_decay: 0.9,
            doubling: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_period == 0 || !(self.max_lr >= 0.0) || !(self.period_decay > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }

    /// (period index, offset into period, period length).
    pub fn locate(&self, epoch: u64) -> (u32, u64, u64) {
        let mut start = 0u64;
        let mut len = self.initial_period.max(1);
        let mut k = 0u32;
        while epoch >= start + len {
            start += len;
            if self.doubling {
                len = len.saturating_mul(2);
            }
            k += 1;
        }
        (k, epoch - start, len)
    }

    pub fn peak(&self, period: u32) -> f64 {
        self.max_lr * self.period_decay.powi(period as i32)
    }

    pub fn lr(&self, epoch: u64) -> f64 {
        let (k, t, len) = self.locate(epoch);
        let phase = std::f64::consts::PI * t as f64 / len as f64;
        self.peak(k) * (1.0 + phase.cos()) / 2.0
    }
}

pub fn sgdr_lr(schedule: &SgdrSchedule, epoch: u64) -> f64 {
    schedule.lr(epoch)
}
