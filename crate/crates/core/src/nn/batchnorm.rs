//! Per-channel batch normalization over (batch × length).

use serde::{Deserialize, Serialize};

use super::tensor::Tensor1D;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm1d {
    pub(crate) gamma: Vec<f64>,
    pub(crate) beta: Vec<f64>,
    pub(crate) running_mean: Vec<f64>,
    pub(crate) running_var: Vec<f64>,
    epsilon: f64,
    momentum: f64,
}

/// Per-channel statistics of one training batch. `var` is the biased
/// (population) variance used for normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// What the backward pass needs from a training-mode forward.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub(crate) normalized: Vec<Tensor1D>,
    pub(crate) inv_std: Vec<f64>,
    pub stats: BatchStats,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn from_parts(
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        epsilon: f64,
        momentum: f64,
    ) -> Result<Self> {
        let c = gamma.len();
        if c == 0 || beta.len() != c || running_mean.len() != c || running_var.len() != c {
            return Err(Error::Shape("batchnorm parameter vectors differ in length".into()));
        }
        if !(epsilon > 0.0) || !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "batchnorm epsilon {epsilon} must be > 0 and momentum {momentum} in [0, 1]"
            )));
        }
        if running_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("running variance must be >= 0".into()));
        }
        let all = gamma.iter().chain(&beta).chain(&running_mean).chain(&running_var);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite batchnorm parameter".into()));
        }
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            epsilon,
            momentum,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }
    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    fn check(&self, x: &Tensor1D) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::Shape(format!(
                "batchnorm has {} channels, input has {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Normalizes with batch statistics. Pure: running statistics are left
    /// alone; feed the returned stats to [`BatchNorm1d::update_running`].
    pub fn forward_train(&self, batch: &[Tensor1D]) -> Result<(Vec<Tensor1D>, NormCache)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument(
                "training-mode batchnorm on an empty batch".into(),
            ));
        }
        let len = batch[0].length();
        for x in batch {
            self.check(x)?;
            if x.length() != len {
                return Err(Error::Shape("batch items differ in length".into()));
            }
        }
        let channels = self.channels();
        let count = batch.len() * len;
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            let s: f64 = batch.iter().map(|x| x.row(c).iter().sum::<f64>()).sum();
            let m = s / count as f64;
            let ss: f64 = batch
                .iter()
                .map(|x| x.row(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                .sum();
            mean[c] = m;
            var[c] = ss / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();

        let mut normalized = Vec::with_capacity(batch.len());
        let mut out = Vec::with_capacity(batch.len());
        for x in batch {
            let mut xhat = x.clone();
            let mut y = x.clone();
            for c in 0..channels {
                let (m, s, g, b) = (mean[c], inv_std[c], self.gamma[c], self.beta[c]);
                for (h, yv) in xhat.row_mut(c).iter_mut().zip(y.row_mut(c).iter_mut()) {
                    *h = (*h - m) * s;
                    *yv = g * *h + b;
                }
            }
            normalized.push(xhat);
            out.push(y);
        }
        Ok((
            out,
            NormCache {
                normalized,
                inv_std,
                stats: BatchStats { mean, var, count },
            },
        ))
    }

    pub fn forward_infer(&self, x: &Tensor1D) -> Result<Tensor1D> {
        self.check(x)?;
        let mut y = x.clone();
        for c in 0..self.channels() {
            let scale = self.gamma[c] / (self.running_var[c] + self.epsilon).sqrt();
            let shift = self.beta[c] - self.running_mean[c] * scale;
            for v in y.row_mut(c) {
                *v = *v * scale + shift;
            }
        }
        Ok(y)
    }

    /// Exponential moving average of the batch statistics. The running
    /// variance uses the unbiased estimate.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let correction = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * stats.var[c] * correction;
        }
    }

    /// Returns (d_gamma, d_beta, d_input per sample).
    pub fn backward(&self, cache: &NormCache, grad_out: &[Tensor1D]) -> Result<(Vec<f64>, Vec<f64>, Vec<Tensor1D>)> {
        if grad_out.len() != cache.normalized.len() {
            return Err(Error::Shape("batchnorm gradient batch size mismatch".into()));
        }
        let channels = self.channels();
        let n = cache.stats.count as f64;
        let mut d_gamma = vec![0.0; channels];
        let mut d_beta = vec![0.0; channels];
        for c in 0..channels {
            for (g, h) in grad_out.iter().zip(&cache.normalized) {
                if g.shape() != h.shape() {
                    return Err(Error::Shape("batchnorm gradient shape mismatch".into()));
                }
                for (gv, hv) in g.row(c).iter().zip(h.row(c)) {
                    d_beta[c] += gv;
                    d_gamma[c] += gv * hv;
                }
            }
        }
        let mut d_input = Vec::with_capacity(grad_out.len());
        for (g, h) in grad_out.iter().zip(&cache.normalized) {
            let mut dx = g.clone();
            for c in 0..channels {
                let k = self.gamma[c] * cache.inv_std[c];
                let mean_g = d_beta[c] / n;
                let mean_gh = d_gamma[c] / n;
                for (d, hv) in dx.row_mut(c).iter_mut().zip(h.row(c)) {
                    *d = k * (*d - mean_g - hv * mean_gh);
                }
            }
            d_input.push(dx);
        }
        Ok((d_gamma, d_beta, d_input))
    }
}

/// Train mode normalizes with batch statistics and updates the running
/// statistics; Infer mode uses the running statistics only.
pub fn batchnorm_forward(batch: &[Tensor1D], layer: &mut BatchNorm1d, mode: Mode) -> Result<Vec<Tensor1D>> {
    match mode {
        Mode::Train => {
            let (out, cache) = layer.forward_train(batch)?;
            layer.update_running(&cache.stats);
            Ok(out)
        }
        Mode::Infer => batch.iter().map(|x| layer.forward_infer(x)).collect(),
    }
}
