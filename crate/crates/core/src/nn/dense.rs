use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected map `outputs × inputs`, row-major weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if inputs == 0 || outputs == 0 || weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Shape(format!(
                "dense ({outputs}, {inputs}) got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite dense parameter".into()));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn he_uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        let limit = (6.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Self::new(inputs, outputs, weights, vec![0.0; outputs])
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }
    pub fn outputs(&self) -> usize {
        self.outputs
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::Shape(format!(
                "dense expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        Ok(self
            .weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect())
    }

    /// Accumulates parameter gradients into `d_weights`/`d_bias` and returns
    /// the input gradient.
    pub(crate) fn backward_accumulate(
        &self,
        x: &[f64],
        grad_out: &[f64],
        d_weights: &mut [f64],
        d_bias: &mut [f64],
    ) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, g) in grad_out.iter().enumerate() {
            d_bias[o] += g;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let d_row = &mut d_weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                d_row[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}
