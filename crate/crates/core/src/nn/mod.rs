//! From-scratch 1D network primitives: forward, backward and SGD for the
//! conv → batchnorm → ReLU → GAP → dense → softmax stack.

mod batchnorm;
mod conv;
mod dense;
mod document;
mod gemm;
mod network;
mod ops;
mod tensor;

pub use batchnorm::{batchnorm_forward, BatchNorm1d, BatchStats, Mode, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{conv1d_forward, Conv1d, ConvGradients};
pub use dense::Dense;
pub use document::{LayerDoc, NetworkDocument, FORMAT_VERSION};
pub use network::{backward, sgd_step, BatchGradients, BlockGradients, ConvBlock, GradientTape, MomentumSgd, Network};
pub use ops::{cross_entropy_loss, global_avg_pool, relu, softmax, PROBABILITY_FLOOR};
pub use tensor::Tensor1D;
