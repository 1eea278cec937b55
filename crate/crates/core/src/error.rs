use thiserror::Error;

use crate::types::Millis;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed torque window: {0}")]
    MalformedWindow(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("invalid object slab: z_front={z_front} z_back={z_back} (need 0 < z_front < z_back)")]
    InvalidSlab { z_front: f64, z_back: f64 },

    #[error("dataset rejected: {0}")]
    Dataset(String),

    #[error("{stream} stream out of order at index {index}: {current} ms after {previous} ms")]
    OutOfOrder {
        stream: &'static str,
        index: usize,
        previous: Millis,
        current: Millis,
    },

    #[error("state machine already released; start a new episode")]
    AlreadyReleased,

    #[error("empty {0} stream")]
    EmptyStream(&'static str),

    #[error("model: {0}")]
    Model(String),

    #[error("replay mismatch: {0}")]
    Replay(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
