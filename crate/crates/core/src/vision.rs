//! Geometric grasp gate: release only when at least three fingertips,
//! thumb among them, are between the object's front and back planes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FingerType, FingertipDetection, Millis, ObjectSlab};

pub const MIN_FINGERS: usize = 3;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionVerdict {
    pub vote: bool,
    pub fingers_in_slab: usize,
    pub thumb_in_slab: bool,
    pub evaluated_at: Millis,
}

impl VisionVerdict {
    pub fn new(fingers_in_slab: usize, thumb_in_slab: bool, evaluated_at: Millis) -> Self {
        Self {
            vote: fingers_in_slab >= MIN_FINGERS && thumb_in_slab,
            fingers_in_slab,
            thumb_in_slab,
            evaluated_at,
        }
    }
}

/// Depth within `[z_front, z_back]`, both ends inclusive.
pub fn in_slab(detection: &FingertipDetection, slab: &ObjectSlab) -> bool {
    let z = detection.depth();
    slab.z_front() <= z && z <= slab.z_back()
}

/// Verdict for one frame. `evaluated_at` is the latest detection timestamp,
/// or 0 for an empty frame; use [`evaluate_grasp_at`] to set it explicitly.
pub fn evaluate_grasp(
    detections: &[FingertipDetection],
    slab: &ObjectSlab,
    min_confidence: f64,
) -> Result<VisionVerdict> {
    let at = detections.iter().map(|d| d.timestamp).max().unwrap_or(0);
    evaluate_grasp_at(detections, slab, min_confidence, at)
}

pub fn evaluate_grasp_at(
    detections: &[FingertipDetection],
    slab: &ObjectSlab,
    min_confidence: f64,
    evaluated_at: Millis,
) -> Result<VisionVerdict> {
    if !(0.0..=1.0).contains(&min_confidence) {
        return Err(Error::InvalidArgument(format!(
            "min_confidence must lie in [0, 1], got {min_confidence}"
        )));
    }
    let mut fingers = 0;
    let mut thumb = false;
    for d in detections
        .iter()
        .filter(|d| d.confidence >= min_confidence && in_slab(d, slab))
    {
        fingers += 1;
        thumb |= d.finger_type == FingerType::Thumb;
    }
    Ok(VisionVerdict::new(fingers, thumb, evaluated_at))
}
