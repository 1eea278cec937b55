use crate::error::{Error, Result};

/// Channels × length activation map, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor1D {
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl Tensor1D {
    pub fn new(channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * length {
            return Err(Error::Shape(format!(
                "tensor data has {} values, shape ({channels}, {length}) needs {}",
                data.len(),
                channels * length
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor contains non-finite values".into()));
        }
        Ok(Self { channels, length, data })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Self {
            channels,
            length,
            data: vec![0.0; channels * length],
        }
    }

    /// Wraps values that are finite by construction.
    pub(crate) fn from_raw(channels: usize, length: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * length);
        Self { channels, length, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.length)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.length + t]
    }
}
