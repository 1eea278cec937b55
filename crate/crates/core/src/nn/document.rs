//! JSON form of a [`Network`]: an ordered layer list with shape-tagged flat
//! parameter arrays.

use serde::{Deserialize, Serialize};

use super::batchnorm::BatchNorm1d;
use super::conv::Conv1d;
use super::dense::Dense;
use super::network::{ConvBlock, Network};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "tcnn-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDoc {
    Conv1d {
        /// `[out_channels, in_channels, kernel_size]`
        shape: [usize; 3],
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    BatchNorm {
        shape: [usize; 1],
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        epsilon: f64,
        momentum: f64,
    },
    Relu,
    GlobalAvgPool,
    Dense {
        /// `[outputs, inputs]`
        shape: [usize; 2],
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub version: String,
    pub layers: Vec<LayerDoc>,
}

impl Network {
    pub fn to_document(&self) -> NetworkDocument {
        let mut layers = Vec::new();
        for b in self.blocks() {
            let c = &b.conv;
            layers.push(LayerDoc::Conv1d {
                shape: [c.out_channels(), c.in_channels(), c.kernel_size()],
                weights: c.weights().to_vec(),
                bias: c.bias().to_vec(),
            });
            let n = &b.norm;
            layers.push(LayerDoc::BatchNorm {
                shape: [n.channels()],
                gamma: n.gamma().to_vec(),
                beta: n.beta().to_vec(),
                running_mean: n.running_mean().to_vec(),
                running_var: n.running_var().to_vec(),
                epsilon: n.epsilon(),
                momentum: n.momentum(),
            });
            layers.push(LayerDoc::Relu);
        }
        layers.push(LayerDoc::GlobalAvgPool);
        let h = self.head();
        layers.push(LayerDoc::Dense {
            shape: [h.outputs(), h.inputs()],
            weights: h.weights().to_vec(),
            bias: h.bias().to_vec(),
        });
        layers.push(LayerDoc::Softmax);
        NetworkDocument {
            version: FORMAT_VERSION.to_string(),
            layers,
        }
    }

    /// Accepts exactly `(conv, batch_norm, relu)+ global_avg_pool dense softmax`.
    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if doc.version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported network version {:?}, expected {FORMAT_VERSION}",
                doc.version
            )));
        }
        let mut layers = doc.layers.iter();
        let mut blocks = Vec::new();
        loop {
            match layers.next() {
                Some(LayerDoc::Conv1d { shape, weights, bias }) => {
                    let conv = Conv1d::new(shape[1], shape[0], shape[2], weights.clone(), bias.clone())?;
                    let norm = match layers.next() {
                        Some(LayerDoc::BatchNorm {
                            shape,
                            gamma,
                            beta,
                            running_mean,
                            running_var,
                            epsilon,
                            momentum,
                        }) => {
                            let n = BatchNorm1d::from_parts(
                                gamma.clone(),
                                beta.clone(),
                                running_mean.clone(),
                                running_var.clone(),
                                *epsilon,
                                *momentum,
                            )?;
                            if n.channels() != shape[0] {
                                return Err(Error::Model("batch_norm shape tag disagrees with data".into()));
                            }
                            n
                        }
                        other => return Err(unexpected("batch_norm", other)),
                    };
                    match layers.next() {
                        Some(LayerDoc::Relu) => {}
                        other => return Err(unexpected("relu", other)),
                    }
                    blocks.push(ConvBlock { conv, norm });
                }
                Some(LayerDoc::GlobalAvgPool) => break,
                other => return Err(unexpected("conv1d or global_avg_pool", other)),
            }
        }
        let head = match layers.next() {
            Some(LayerDoc::Dense { shape, weights, bias }) => {
                Dense::new(shape[1], shape[0], weights.clone(), bias.clone())?
            }
            other => return Err(unexpected("dense", other)),
        };
        match layers.next() {
            Some(LayerDoc::Softmax) => {}
            other => return Err(unexpected("softmax", other)),
        }
        if let Some(extra) = layers.next() {
            return Err(unexpected("end of layer list", Some(extra)));
        }
        Network::new(blocks, head)
    }
}

fn unexpected(wanted: &str, got: Option<&LayerDoc>) -> Error {
    let got = match got {
        None => "end of list".to_string(),
        Some(l) => serde_json::to_value(l)
            .ok()
            .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_string))
            .unwrap_or_else(|| "?".into()),
    };
    Error::Model(format!("expected {wanted} layer, found {got}"))
}
