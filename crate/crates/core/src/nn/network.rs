//! Conv blocks (conv → batchnorm → ReLU), global average pooling, a dense
//! head and softmax, with a hand-written backward pass.

use rand::Rng;

use super::batchnorm::{BatchNorm1d, BatchStats, NormCache};
use super::conv::Conv1d;
use super::dense::Dense;
use super::ops::{cross_entropy_loss, global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax};
use super::tensor::Tensor1D;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub norm: BatchNorm1d,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    blocks: Vec<ConvBlock>,
    head: Dense,
}

/// Gradients with the same layout as [`Network::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    pub blocks: Vec<BlockGradients>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGradients {
    pub conv_weights: Vec<f64>,
    pub conv_bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Everything a training step needs from one forward/backward pass.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub loss: f64,
    pub probabilities: Vec<Vec<f64>>,
    pub tape: GradientTape,
    pub stats: Vec<BatchStats>,
}

struct BlockCache {
    input: Vec<Tensor1D>,
    norm: NormCache,
    pre_relu: Vec<Tensor1D>,
}

struct ForwardPass {
    blocks: Vec<BlockCache>,
    final_length: usize,
    pooled: Vec<Vec<f64>>,
    probabilities: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(blocks: Vec<ConvBlock>, head: Dense) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Shape("network needs at least one conv block".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.norm.channels() != b.conv.out_channels() {
                return Err(Error::Shape(format!(
                    "block {i}: batchnorm has {} channels, conv outputs {}",
                    b.norm.channels(),
                    b.conv.out_channels()
                )));
            }
            if i > 0 && b.conv.in_channels() != blocks[i - 1].conv.out_channels() {
                return Err(Error::Shape(format!(
                    "block {i} expects {} channels, previous block outputs {}",
                    b.conv.in_channels(),
                    blocks[i - 1].conv.out_channels()
                )));
            }
        }
        let last = blocks.last().map(|b| b.conv.out_channels()).unwrap_or_default();
        if head.inputs() != last {
            return Err(Error::Shape(format!(
                "head expects {} features, last block outputs {last}",
                head.inputs()
            )));
        }
        Ok(Self { blocks, head })
    }

    /// He-uniform conv/dense weights, zero biases, identity batchnorm.
    pub fn he_uniform<R: Rng + ?Sized>(
        input_channels: usize,
        filters: &[usize],
        kernel_size: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(filters.len());
        let mut channels = input_channels;
        for &f in filters {
            blocks.push(ConvBlock {
                conv: Conv1d::he_uniform(channels, f, kernel_size, rng)?,
                norm: BatchNorm1d::new(f),
            });
            channels = f;
        }
        let head = Dense::he_uniform(channels, classes, rng)?;
        Self::new(blocks, head)
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn input_channels(&self) -> usize {
        self.blocks[0].conv.in_channels()
    }

    pub fn classes(&self) -> usize {
        self.head.outputs()
    }

    /// Every stored value, running batchnorm statistics included.
    pub fn parameter_count(&self) -> usize {
        let stats: usize = self.blocks.iter().map(|b| 2 * b.norm.channels()).sum();
        self.trainable_parameter_count() + stats
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Trainable parameter slices in tape order.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(b.conv.weights.as_slice());
            out.push(b.conv.bias.as_slice());
            out.push(b.norm.gamma.as_slice());
            out.push(b.norm.beta.as_slice());
        }
        out.push(self.head.weights.as_slice());
        out.push(self.head.bias.as_slice());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push(b.conv.weights.as_mut_slice());
            out.push(b.conv.bias.as_mut_slice());
            out.push(b.norm.gamma.as_mut_slice());
            out.push(b.norm.beta.as_mut_slice());
        }
        out.push(self.head.weights.as_mut_slice());
        out.push(self.head.bias.as_mut_slice());
        out
    }

    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.blocks.len() {
            return Err(Error::Shape("one batch statistics record per block expected".into()));
        }
        for (b, s) in self.blocks.iter_mut().zip(stats) {
            b.norm.update_running(s);
        }
        Ok(())
    }

    /// Inference-mode logits; batchnorm uses running statistics.
    pub fn logits(&self, input: &Tensor1D) -> Result<Vec<f64>> {
        let mut x = input.clone();
        for b in &self.blocks {
            x = relu(&b.norm.forward_infer(&b.conv.forward(&x)?)?);
        }
        self.head.forward(&global_avg_pool(&x)?)
    }

    /// Inference-mode class probabilities.
    pub fn predict(&self, input: &Tensor1D) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(input)?))
    }

    fn forward_train(&self, batch: &[Tensor1D], exec: Execution) -> Result<ForwardPass> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x: Vec<Tensor1D> = batch.to_vec();
        for b in &self.blocks {
            let conv_out = exec::try_map(exec, &x, |t| b.conv.forward(t))?;
            let (pre_relu, norm) = b.norm.forward_train(&conv_out)?;
            drop(conv_out);
            let activated = pre_relu.iter().map(relu).collect();
            caches.push(BlockCache {
                input: std::mem::replace(&mut x, activated),
                norm,
                pre_relu,
            });
        }
        let final_length = x[0].length();
        let pooled = x.iter().map(global_avg_pool).collect::<Result<Vec<_>>>()?;
        let probabilities = pooled
            .iter()
            .map(|p| self.head.forward(p).map(|z| softmax(&z)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass {
            blocks: caches,
            final_length,
            pooled,
            probabilities,
        })
    }

    fn mean_loss(probabilities: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for (p, &t) in probabilities.iter().zip(targets) {
            total += cross_entropy_loss(p, t)?;
        }
        Ok(total / probabilities.len() as f64)
    }

    fn check_targets(&self, batch: &[Tensor1D], targets: &[usize]) -> Result<()> {
        if batch.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                batch.len(),
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|t| **t >= self.classes()) {
            return Err(Error::InvalidArgument(format!(
                "target {t} out of range for {} classes",
                self.classes()
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy with training-mode batchnorm; does not touch the
    /// running statistics.
    pub fn batch_loss(&self, batch: &[Tensor1D], targets: &[usize], exec: Execution) -> Result<f64> {
        self.check_targets(batch, targets)?;
        let pass = self.forward_train(batch, exec)?;
        Self::mean_loss(&pass.probabilities, targets)
    }

    /// Forward then backward over one batch. Gradients are of the mean
    /// cross-entropy; per-sample pieces are summed in batch order.
    pub fn gradients(&self, batch: &[Tensor1D], targets: &[usize], exec: Execution) -> Result<BatchGradients> {
        self.check_targets(batch, targets)?;
        let pass = self.forward_train(batch, exec)?;
        let loss = Self::mean_loss(&pass.probabilities, targets)?;
        let n = batch.len() as f64;

        let mut head_weights = vec![0.0; self.head.weights.len()];
        let mut head_bias = vec![0.0; self.head.outputs()];
        let mut grad: Vec<Tensor1D> = Vec::with_capacity(batch.len());
        for ((p, &t), pooled) in pass.probabilities.iter().zip(targets).zip(&pass.pooled) {
            let d_logits: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, pk)| (pk - if k == t { 1.0 } else { 0.0 }) / n)
                .collect();
            let d_pooled = self
                .head
                .backward_accumulate(pooled, &d_logits, &mut head_weights, &mut head_bias);
            grad.push(global_avg_pool_backward(&d_pooled, pass.final_length));
        }

        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (bi, (block, cache)) in self.blocks.iter().zip(&pass.blocks).enumerate().rev() {
            for (g, pre) in grad.iter_mut().zip(&cache.pre_relu) {
                relu_backward(pre, g);
            }
            let (gamma, beta, d_conv) = block.norm.backward(&cache.norm, &grad)?;
            let need_input = bi > 0;
            let pairs: Vec<(&Tensor1D, &Tensor1D)> = cache.input.iter().zip(&d_conv).collect();
            let per_sample = exec::try_map(exec, &pairs, |(x, g)| block.conv.backward(x, g, need_input))?;

            let mut conv_weights = vec![0.0; block.conv.weights.len()];
            let mut conv_bias = vec![0.0; block.conv.out_channels()];
            let mut next = Vec::with_capacity(batch.len());
            for (g, dx) in per_sample {
                for (acc, v) in conv_weights.iter_mut().zip(&g.weights) {
                    *acc += v;
                }
                for (acc, v) in conv_bias.iter_mut().zip(&g.bias) {
                    *acc += v;
                }
                if let Some(dx) = dx {
                    next.push(dx);
                }
            }
            grad = next;
            block_grads.push(BlockGradients {
                conv_weights,
                conv_bias,
                gamma,
                beta,
            });
        }
        block_grads.reverse();

        Ok(BatchGradients {
            loss,
            probabilities: pass.probabilities,
            tape: GradientTape {
                blocks: block_grads,
                head_weights,
                head_bias,
            },
            stats: pass.blocks.into_iter().map(|c| c.norm.stats).collect(),
        })
    }
}

/// Gradient of the mean cross-entropy over `batch` w.r.t. every trainable
/// parameter (training-mode batchnorm).
pub fn backward(net: &Network, batch: &[Tensor1D], targets: &[usize]) -> Result<GradientTape> {
    Ok(net.gradients(batch, targets, Execution::default())?.tape)
}

impl GradientTape {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            blocks: net
                .blocks
                .iter()
                .map(|b| BlockGradients {
                    conv_weights: vec![0.0; b.conv.weights.len()],
                    conv_bias: vec![0.0; b.conv.bias.len()],
                    gamma: vec![0.0; b.norm.channels()],
                    beta: vec![0.0; b.norm.channels()],
                })
                .collect(),
            head_weights: vec![0.0; net.head.weights.len()],
            head_bias: vec![0.0; net.head.bias.len()],
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(b.conv_weights.as_slice());
            out.push(b.conv_bias.as_slice());
            out.push(b.gamma.as_slice());
            out.push(b.beta.as_slice());
        }
        out.push(self.head_weights.as_slice());
        out.push(self.head_bias.as_slice());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push(b.conv_weights.as_mut_slice());
            out.push(b.conv_bias.as_mut_slice());
            out.push(b.gamma.as_mut_slice());
            out.push(b.beta.as_mut_slice());
        }
        out.push(self.head_weights.as_mut_slice());
        out.push(self.head_bias.as_mut_slice());
        out
    }

    /// Flattened view, tape order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn check_against(&self, net: &Network) -> Result<()> {
        let a = self.slices();
        let b = net.parameters();
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.len() != y.len()) {
            return Err(Error::Shape("gradient tape does not mirror network parameters".into()));
        }
        Ok(())
    }
}

/// `parameter ← parameter − learning_rate · gradient`.
pub fn sgd_step(net: &mut Network, tape: &GradientTape, learning_rate: f64) -> Result<()> {
    if !(learning_rate > 0.0) || !learning_rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    tape.check_against(net)?;
    for (p, g) in net.parameters_mut().into_iter().zip(tape.slices()) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= learning_rate * gv;
        }
    }
    Ok(())
}

/// Heavy-ball SGD: `v ← μ·v + g`, `p ← p − lr·v`. The first step from zero
/// velocity equals plain [`sgd_step`].
#[derive(Clone, Debug)]
pub struct MomentumSgd {
    learning_rate: f64,
    momentum: f64,
    velocity: GradientTape,
}

impl MomentumSgd {
    pub fn new(net: &Network, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "need learning_rate > 0 and momentum in [0, 1), got {learning_rate}, {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: GradientTape::zeros_like(net),
        })
    }

    pub fn step(&mut self, net: &mut Network, tape: &GradientTape) -> Result<()> {
        tape.check_against(net)?;
        let mu = self.momentum;
        for (v, g) in self.velocity.slices_mut().into_iter().zip(tape.slices()) {
            for (vv, gv) in v.iter_mut().zip(g) {
                *vv = mu * *vv + gv;
            }
        }
        sgd_step(net, &self.velocity, self.learning_rate)
    }
}
