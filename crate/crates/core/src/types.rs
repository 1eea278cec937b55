//! Shared domain types: torque windows, action classes, fingertip detections
//! and the release decision record.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monotonic timestamp in milliseconds.
pub type Millis = u64;

pub const JOINTS: usize = 7;
pub const SAMPLE_RATE_HZ: u32 = 40;
pub const SAMPLE_PERIOD_MS: Millis = 25;
pub const WINDOW_SAMPLES: usize = 40;
pub const FLAT_LEN: usize = JOINTS * WINDOW_SAMPLES;
pub const TORQUE_LIMIT_NM: f64 = 35.0;
pub const NUM_CLASSES: usize = 6;

/// The six receiver actions, in success-criteria table order. The
/// discriminant is the stable class code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    NoAction = 0,
    Bump = 1,
    Push = 2,
    Hold = 3,
    Pull = 4,
    PullUp = 5,
}

impl ActionClass {
    pub const ALL: [ActionClass; NUM_CLASSES] = [
        ActionClass::NoAction,
        ActionClass::Bump,
        ActionClass::Push,
        ActionClass::Hold,
        ActionClass::Pull,
        ActionClass::PullUp,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Self::ALL
            .get(code)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("class code {code} outside 0..6")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionClass::NoAction => "no_action",
            ActionClass::Bump => "bump",
            ActionClass::Push => "push",
            ActionClass::Hold => "hold",
            ActionClass::Pull => "pull",
            ActionClass::PullUp => "pull_up",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name || a.name().replace('_', "-") == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown action {name:?}")))
    }
}

impl fmt::Display for ActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Release,
    DoNotRelease,
}

/// Success criteria: what the gripper should do for each receiver action.
pub fn expected_decision(action: ActionClass) -> Decision {
    match action {
        ActionClass::NoAction | ActionClass::Bump | ActionClass::Push => Decision::DoNotRelease,
        ActionClass::Hold | ActionClass::Pull | ActionClass::PullUp => Decision::Release,
    }
}

/// The full action → decision table, serialized as a JSON object keyed by
/// action name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessCriteria(pub std::collections::BTreeMap<ActionClass, Decision>);

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self(
            ActionClass::ALL
                .into_iter()
                .map(|a| (a, expected_decision(a)))
                .collect(),
        )
    }
}

impl SuccessCriteria {
    pub fn expected(&self, action: ActionClass) -> Decision {
        self.0[&action]
    }
}

/// Class probabilities from the torque classifier plus the argmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScoresRepr")]
pub struct ActionScores {
    pub probabilities: [f64; NUM_CLASSES],
    pub predicted: ActionClass,
}

#[derive(Deserialize)]
struct ScoresRepr {
    probabilities: [f64; NUM_CLASSES],
    predicted: ActionClass,
}

impl TryFrom<ScoresRepr> for ActionScores {
    type Error = Error;

    fn try_from(r: ScoresRepr) -> Result<Self> {
        let scores = ActionScores::from_probabilities(r.probabilities)?;
        if scores.predicted != r.predicted {
            return Err(Error::InvalidArgument(format!(
                "predicted {} is not the argmax {}",
                r.predicted, scores.predicted
            )));
        }
        Ok(scores)
    }
}

impl ActionScores {
    pub fn from_probabilities(probabilities: [f64; NUM_CLASSES]) -> Result<Self> {
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "probabilities must be finite and non-negative: {probabilities:?}"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}, not 1")));
        }
        let mut best = 0;
        for (i, &p) in probabilities.iter().enumerate().skip(1) {
            if p > probabilities[best] {
                best = i;
            }
        }
        Ok(Self {
            probabilities,
            predicted: ActionClass::ALL[best],
        })
    }

    /// All mass on one class.
    pub fn one_hot(action: ActionClass) -> Self {
        let mut probabilities = [0.0; NUM_CLASSES];
        probabilities[action.code()] = 1.0;
        Self {
            probabilities,
            predicted: action,
        }
    }
}

/// One second of 7-joint torque at 40 Hz. Stored joint-major, so the flat
/// buffer is already the 280-value classifier input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub struct TorqueWindow {
    flat: Vec<f64>,
    start_time: Millis,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    samples: Vec<Vec<f64>>,
    start_time: Millis,
    sample_rate_hz: u32,
}

impl TryFrom<WindowRepr> for TorqueWindow {
    type Error = Error;

    fn try_from(r: WindowRepr) -> Result<Self> {
        if r.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::MalformedWindow(format!(
                "sample_rate_hz must be {SAMPLE_RATE_HZ}, got {}",
                r.sample_rate_hz
            )));
        }
        TorqueWindow::from_rows(&r.samples, r.start_time)
    }
}

impl From<TorqueWindow> for WindowRepr {
    fn from(w: TorqueWindow) -> Self {
        WindowRepr {
            samples: w.flat.chunks(WINDOW_SAMPLES).map(<[f64]>::to_vec).collect(),
            start_time: w.start_time,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }
}

impl TorqueWindow {
    /// Builds a window from 7 rows of 40 samples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], start_time: Millis) -> Result<Self> {
        if rows.len() != JOINTS {
            return Err(Error::MalformedWindow(format!(
                "expected {JOINTS} joint rows, got {}",
                rows.len()
            )));
        }
        let mut flat = Vec::with_capacity(FLAT_LEN);
        for (j, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != WINDOW_SAMPLES {
                return Err(Error::MalformedWindow(format!(
                    "joint {j} has {} samples, expected {WINDOW_SAMPLES}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::unflatten(&flat, start_time)
    }

    /// Inverse of [`TorqueWindow::flatten`].
    pub fn unflatten(values: &[f64], start_time: Millis) -> Result<Self> {
        if values.len() != FLAT_LEN {
            return Err(Error::MalformedWindow(format!(
                "flat window must hold {FLAT_LEN} values, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > TORQUE_LIMIT_NM)
        {
            return Err(Error::MalformedWindow(format!(
                "joint {} sample {} = {v} outside ±{TORQUE_LIMIT_NM} N·m",
                i / WINDOW_SAMPLES,
                i % WINDOW_SAMPLES
            )));
        }
        Ok(Self {
            flat: values.to_vec(),
            start_time,
        })
    }

    pub fn zeros(start_time: Millis) -> Self {
        Self {
            flat: vec![0.0; FLAT_LEN],
            start_time,
        }
    }

    /// Joint-major 280-value vector: joint 0's 40 samples, then joint 1, ...
    pub fn flatten(&self) -> Vec<f64> {
        self.flat.clone()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        &self.flat[j * WINDOW_SAMPLES..(j + 1) * WINDOW_SAMPLES]
    }

    pub fn sample(&self, joint: usize, t: usize) -> f64 {
        self.flat[joint * WINDOW_SAMPLES + t]
    }

    pub fn start_time(&self) -> Millis {
        self.start_time
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE_HZ
    }

    /// Timestamp of the last sample.
    pub fn end_time(&self) -> Millis {
        self.start_time + (WINDOW_SAMPLES as Millis - 1) * SAMPLE_PERIOD_MS
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<BoxRepr> for BBox {
    type Error = Error;
    fn try_from(r: BoxRepr) -> Result<Self> {
        BBox::new(r.x_min, r.y_min, r.x_max, r.y_max)
    }
}

impl From<BBox> for BoxRepr {
    fn from(b: BBox) -> Self {
        BoxRepr {
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        }
    }
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(x_min < x_max && y_min < y_max) || ![x_min, y_min, x_max, y_max].into_iter().all(in_unit) {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerType {
    Thumb,
    Other,
}

/// A fingertip reported by the detector, with its camera-frame position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DetectionRepr", into = "DetectionRepr")]
pub struct FingertipDetection {
    pub bbox: BBox,
    pub finger_type: FingerType,
    pub position_3d: [f64; 3],
    pub confidence: f64,
    pub timestamp: Millis,
}

#[derive(Serialize, Deserialize)]
struct DetectionRepr {
    #[serde(rename = "box")]
    bbox: BBox,
    finger_type: FingerType,
    position_3d: [f64; 3],
    confidence: f64,
    timestamp: Millis,
}

impl TryFrom<DetectionRepr> for FingertipDetection {
    type Error = Error;
    fn try_from(r: DetectionRepr) -> Result<Self> {
        FingertipDetection::new(r.bbox, r.finger_type, r.position_3d, r.confidence, r.timestamp)
    }
}

impl From<FingertipDetection> for DetectionRepr {
    fn from(d: FingertipDetection) -> Self {
        DetectionRepr {
            bbox: d.bbox,
            finger_type: d.finger_type,
            position_3d: d.position_3d,
            confidence: d.confidence,
            timestamp: d.timestamp,
        }
    }
}

impl FingertipDetection {
    pub fn new(
        bbox: BBox,
        finger_type: FingerType,
        position_3d: [f64; 3],
        confidence: f64,
        timestamp: Millis,
    ) -> Result<Self> {
        if position_3d.iter().any(|v| !v.is_finite()) || position_3d[2] < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "fingertip position {position_3d:?} must be finite with z >= 0"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            bbox,
            finger_type,
            position_3d,
            confidence,
            timestamp,
        })
    }

    pub fn depth(&self) -> f64 {
        self.position_3d[2]
    }
}

/// Camera-frame depths of the object's front and back planes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SlabRepr", into = "SlabRepr")]
pub struct ObjectSlab {
    z_front: f64,
    z_back: f64,
}

#[derive(Serialize, Deserialize)]
struct SlabRepr {
    z_front: f64,
    z_back: f64,
}

impl TryFrom<SlabRepr> for ObjectSlab {
    type Error = Error;
    fn try_from(r: SlabRepr) -> Result<Self> {
        ObjectSlab::new(r.z_front, r.z_back)
    }
}

impl From<ObjectSlab> for SlabRepr {
    fn from(s: ObjectSlab) -> Self {
        SlabRepr {
            z_front: s.z_front,
            z_back: s.z_back,
        }
    }
}

impl ObjectSlab {
    pub fn new(z_front: f64, z_back: f64) -> Result<Self> {
        if !(z_front > 0.0 && z_front < z_back && z_back.is_finite()) {
            return Err(Error::InvalidSlab { z_front, z_back });
        }
        Ok(Self { z_front, z_back })
    }

    pub fn z_front(&self) -> f64 {
        self.z_front
    }

    pub fn z_back(&self) -> f64 {
        self.z_back
    }
}

/// The final release output together with the two votes that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DecisionRepr", into = "DecisionRepr")]
pub struct ReleaseDecision {
    release: bool,
    torque_vote: bool,
    vision_vote: bool,
    action: ActionClass,
    decided_at: Millis,
}

#[derive(Serialize, Deserialize)]
struct DecisionRepr {
    release: bool,
    torque_vote: bool,
    vision_vote: bool,
    action: ActionClass,
    decided_at: Millis,
}

impl TryFrom<DecisionRepr> for ReleaseDecision {
    type Error = Error;
    fn try_from(r: DecisionRepr) -> Result<Self> {
        if r.release != (r.torque_vote && r.vision_vote) {
            return Err(Error::InvalidArgument(
                "release must equal torque_vote AND vision_vote".into(),
            ));
        }
        Ok(ReleaseDecision::new(
            r.torque_vote,
            r.vision_vote,
            r.action,
            r.decided_at,
        ))
    }
}

impl From<ReleaseDecision> for DecisionRepr {
    fn from(d: ReleaseDecision) -> Self {
        DecisionRepr {
            release: d.release,
            torque_vote: d.torque_vote,
            vision_vote: d.vision_vote,
            action: d.action,
            decided_at: d.decided_at,
        }
    }
}

impl ReleaseDecision {
    pub fn new(torque_vote: bool, vision_vote: bool, action: ActionClass, decided_at: Millis) -> Self {
        Self {
            release: torque_vote && vision_vote,
            torque_vote,
            vision_vote,
            action,
            decided_at,
        }
    }

    pub fn release(&self) -> bool {
        self.release
    }
    pub fn torque_vote(&self) -> bool {
        self.torque_vote
    }
    pub fn vision_vote(&self) -> bool {
        self.vision_vote
    }
    pub fn action(&self) -> ActionClass {
        self.action
    }
    pub fn decided_at(&self) -> Millis {
        self.decided_at
    }
}
