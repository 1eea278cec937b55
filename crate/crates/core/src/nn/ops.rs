use super::tensor::Tensor1D;
use crate::error::{Error, Result};

pub const PROBABILITY_FLOOR: f64 = 1e-12;

pub fn relu(input: &Tensor1D) -> Tensor1D {
    let data = input.data().iter().map(|v| v.max(0.0)).collect();
    Tensor1D::from_raw(input.channels(), input.length(), data)
}

/// Passes gradient where the pre-activation was strictly positive.
pub(crate) fn relu_backward(pre: &Tensor1D, grad: &mut Tensor1D) {
    for (g, x) in grad.data_mut().iter_mut().zip(pre.data()) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn global_avg_pool(input: &Tensor1D) -> Result<Vec<f64>> {
    if input.length() == 0 {
        return Err(Error::Shape("global average pool over zero length".into()));
    }
    let n = input.length() as f64;
    Ok((0..input.channels())
        .map(|c| input.row(c).iter().sum::<f64>() / n)
        .collect())
}

pub(crate) fn global_avg_pool_backward(grad: &[f64], length: usize) -> Tensor1D {
    let n = length as f64;
    let data = grad.iter().flat_map(|g| std::iter::repeat_n(g / n, length)).collect();
    Tensor1D::from_raw(grad.len(), length, data)
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln p[target]` with the probability floored at 1e-12.
pub fn cross_entropy_loss(probabilities: &[f64], target: usize) -> Result<f64> {
    let p = probabilities.get(target).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "target class {target} out of range for {} classes",
            probabilities.len()
        ))
    })?;
    Ok(-p.max(PROBABILITY_FLOOR).ln())
}
