//! 1D convolution, stride 1, zero "same" padding.
//!
//! Both passes lower to a GEMM over an im2col buffer whose row `i * k + tap`
//! holds input channel `i` shifted by `tap - pad`.

use rand::Rng;

use super::gemm::{gemm, Strides};
use super::tensor::Tensor1D;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    /// `[out][in][tap]`, row-major.
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape("convolution needs at least one channel".into()));
        }
        if kernel_size.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "same padding needs an odd kernel size, got {kernel_size}"
            )));
        }
        if weights.len() != out_channels * in_channels * kernel_size || bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "conv ({out_channels}, {in_channels}, {kernel_size}) got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite convolution parameter".into()));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            weights,
            bias,
        })
    }

    /// Uniform He initialization, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = (6.0 / (in_channels * kernel_size) as f64).sqrt();
        let weights = (0..out_channels * in_channels * kernel_size)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self::new(in_channels, out_channels, kernel_size, weights, vec![0.0; out_channels])
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, o: usize, i: usize, tap: usize) -> f64 {
        self.weights[(o * self.in_channels + i) * self.kernel_size + tap]
    }

    fn pad(&self) -> usize {
        self.kernel_size / 2
    }

    fn check_input(&self, input: &Tensor1D) -> Result<()> {
        if input.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        Ok(())
    }

    fn im2col(&self, input: &Tensor1D) -> Vec<f64> {
        let len = input.length();
        let pad = self.pad();
        let mut col = vec![0.0; self.in_channels * self.kernel_size * len];
        for i in 0..self.in_channels {
            let src = input.row(i);
            for tap in 0..self.kernel_size {
                let dst = &mut col[(i * self.kernel_size + tap) * len..][..len];
                // dst[t] = src[t + tap - pad] where in range
                if tap >= pad {
                    let shift = tap - pad;
                    if shift < len {
                        dst[..len - shift].copy_from_slice(&src[shift..]);
                    }
                } else {
                    let shift = pad - tap;
                    if shift < len {
                        dst[shift..].copy_from_slice(&src[..len - shift]);
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, input: &Tensor1D) -> Result<Tensor1D> {
        self.check_input(input)?;
        let len = input.length();
        let rows = self.in_channels * self.kernel_size;
        let col = self.im2col(input);
        let mut out = vec![0.0; self.out_channels * len];
        for (o, b) in self.bias.iter().enumerate() {
            out[o * len..(o + 1) * len].fill(*b);
        }
        gemm(
            self.out_channels,
            rows,
            len,
            &self.weights,
            Strides::row_major(rows),
            &col,
            Strides::row_major(len),
            1.0,
            &mut out,
            Strides::row_major(len),
        );
        Ok(Tensor1D::from_raw(self.out_channels, len, out))
    }

    /// Parameter gradients for one sample, plus the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &self,
        input: &Tensor1D,
        grad_out: &Tensor1D,
        need_input_grad: bool,
    ) -> Result<(ConvGradients, Option<Tensor1D>)> {
        self.check_input(input)?;
        let len = input.length();
        if grad_out.shape() != (self.out_channels, len) {
            return Err(Error::Shape(format!(
                "conv gradient shape {:?} does not match output ({}, {len})",
                grad_out.shape(),
                self.out_channels
            )));
        }
        let rows = self.in_channels * self.kernel_size;
        let col = self.im2col(input);

        let mut d_weights = vec![0.0; self.out_channels * rows];
        gemm(
            self.out_channels,
            len,
            rows,
            grad_out.data(),
            Strides::row_major(len),
            &col,
            Strides::transposed(len),
            0.0,
            &mut d_weights,
            Strides::row_major(rows),
        );
        let d_bias = (0..self.out_channels).map(|o| grad_out.row(o).iter().sum()).collect();

        let d_input = need_input_grad.then(|| {
            let mut d_col = vec![0.0; rows * len];
            gemm(
                rows,
                self.out_channels,
                len,
                &self.weights,
                Strides::transposed(rows),
                grad_out.data(),
                Strides::row_major(len),
                0.0,
                &mut d_col,
                Strides::row_major(len),
            );
            let pad = self.pad();
            let mut dx = Tensor1D::zeros(self.in_channels, len);
            for i in 0..self.in_channels {
                let dst = dx.row_mut(i);
                for tap in 0..self.kernel_size {
                    let src = &d_col[(i * self.kernel_size + tap) * len..][..len];
                    // col[t] read x[t + tap - pad], so route its gradient back there
                    if tap >= pad {
                        let shift = tap - pad;
                        if shift < len {
                            for (d, s) in dst[shift..].iter_mut().zip(&src[..len - shift]) {
                                *d += s;
                            }
                        }
                    } else {
                        let shift = pad - tap;
                        if shift < len {
                            for (d, s) in dst[..len - shift].iter_mut().zip(&src[shift..]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            dx
        });

        Ok((
            ConvGradients {
                weights: d_weights,
                bias: d_bias,
            },
            d_input,
        ))
    }
}

/// Free-function form of [`Conv1d::forward`].
pub fn conv1d_forward(input: &Tensor1D, layer: &Conv1d) -> Result<Tensor1D> {
    layer.forward(input)
}
