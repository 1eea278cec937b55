//! Release decision pipeline for robot-to-human object handover.
//!
//! A 1D CNN classifies one-second joint-torque windows into six receiver
//! actions; a geometric gate checks that at least three fingertips, thumb
//! included, sit between the object's front and back planes; the two votes
//! are time-synchronized and AND-fused by a debounced state machine that
//! emits the release command. Synthetic generators stand in for the sensor
//! streams, and [`harness`] runs the per-action trial protocol under
//! torque-only, vision-only and fused pipelines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod harness;
pub mod multibox;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod types;
pub mod vision;

pub use error::{Error, Result};
pub use exec::Execution;
pub use types::*;
