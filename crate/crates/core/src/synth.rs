//! Seeded synthetic sensor data: labeled torque windows for training, and
//! full handover episodes (40 Hz torque plus 30 Hz fingertip detections) for
//! the trial harness.
//!
//! Torque signatures are invented stand-ins: a gravity-holding baseline plus
//! a per-action delta (step, ramp, triangular impulse or nothing) scaled by a
//! per-joint amplitude vector.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::LabeledWindow;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::types::{
    ActionClass, BBox, FingerType, FingertipDetection, Millis, ObjectSlab, TorqueWindow, JOINTS, SAMPLE_PERIOD_MS,
    TORQUE_LIMIT_NM, WINDOW_SAMPLES,
};

pub const DEFAULT_PER_CLASS: usize = 300;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.4;
pub const DEFAULT_AMPLITUDE_JITTER: f64 = 0.2;

pub const EPISODE_MS: Millis = 3000;
pub const DETECTION_RATE_HZ: u64 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileShape {
    /// Full amplitude from onset for `duration`, then back to baseline.
    Step,
    /// Linear rise over `duration`, then held.
    Ramp,
    /// Triangular pulse spanning `duration`, peak in the middle.
    Impulse,
    Null,
}

/// Closed interval in milliseconds, sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsRange {
    pub min: f64,
    pub max: f64,
}

impl MsRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTemplate {
    pub shape: ProfileShape,
    /// Peak delta per joint, N·m.
    pub amplitude: [f64; JOINTS],
    /// Onset relative to the first sample of a training window.
    pub onset_ms: MsRange,
    pub duration_ms: MsRange,
}

impl ActionTemplate {
    pub fn null() -> Self {
        Self {
            shape: ProfileShape::Null,
            amplitude: [0.0; JOINTS],
            onset_ms: MsRange::fixed(0.0),
            duration_ms: MsRange::fixed(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TorqueSignatureModel {
    /// Holding torque per joint with no receiver contact, N·m.
    pub baseline: [f64; JOINTS],
    pub templates: BTreeMap<ActionClass, ActionTemplate>,
    /// Per-sample Gaussian noise, N·m.
    pub noise_sigma: f64,
    /// Amplitude gain is drawn from `1 ± amplitude_jitter`.
    pub amplitude_jitter: f64,
}

impl Default for TorqueSignatureModel {
    fn default() -> Self {
        use ActionClass::*;
        let sustained = MsRange::new(-1000.0, 600.0);
        let held = MsRange::fixed(4000.0);
        let templates = BTreeMap::from([
            (NoAction, ActionTemplate::null()),
            (
                Bump,
                ActionTemplate {
                    shape: ProfileShape::Impulse,
                    amplitude: [-0.8, -6.0, -0.4, -4.5, 0.0, -2.0, 0.0],
                    onset_ms: MsRange::new(0.0, 850.0),
                    duration_ms: MsRange::new(100.0, 225.0),
                },
            ),
            (
                Push,
                ActionTemplate {
                    shape: ProfileShape::Step,
                    amplitude: [-0.5, -4.0, 0.0, -3.0, 0.0, -1.5, 0.0],
                    onset_ms: sustained,
                    duration_ms: held,
                },
            ),
            (
                Hold,
                ActionTemplate {
                    shape: ProfileShape::Step,
                    amplitude: [0.0, -1.5, 0.0, -1.0, 0.0, 0.8, 0.0],
                    onset_ms: sustained,
                    duration_ms: held,
                },
            ),
            (
                Pull,
                ActionTemplate {
                    shape: ProfileShape::Step,
                    amplitude: [0.5, 4.0, 0.0, 3.0, 0.0, 1.5, 0.0],
                    onset_ms: sustained,
                    duration_ms: held,
                },
            ),
            (
                PullUp,
                ActionTemplate {
                    shape: ProfileShape::Ramp,
                    amplitude: [0.0, -3.0, 1.5, -2.0, 0.0, 2.0, 0.8],
                    onset_ms: sustained,
                    duration_ms: MsRange::new(400.0, 800.0),
                },
            ),
        ]);
        Self {
            baseline: [0.8, 14.0, 0.5, 7.5, 0.3, 3.0, 0.2],
            templates,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            amplitude_jitter: DEFAULT_AMPLITUDE_JITTER,
        }
    }
}

/// One drawn instance of an action delta on an absolute time axis.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Realization<'a> {
    template: &'a ActionTemplate,
    onset_ms: f64,
    duration_ms: f64,
    gain: f64,
}

impl Realization<'_> {
    fn envelope(&self, t_ms: f64) -> f64 {
        let dt = t_ms - self.onset_ms;
        let d = self.duration_ms;
        match self.template.shape {
            ProfileShape::Null => 0.0,
            _ if dt < 0.0 => 0.0,
            ProfileShape::Step => (dt < d) as u8 as f64,
            ProfileShape::Ramp => {
                if d <= 0.0 || dt >= d {
                    1.0
                } else {
                    dt / d
                }
            }
            ProfileShape::Impulse => {
                if d <= 0.0 || dt >= d {
                    0.0
                } else {
                    1.0 - (2.0 * dt / d - 1.0).abs()
                }
            }
        }
    }

    fn add_delta(&self, t_ms: f64, weight: f64, out: &mut [f64; JOINTS]) {
        let e = self.envelope(t_ms) * self.gain * weight;
        if e != 0.0 {
            for (o, a) in out.iter_mut().zip(&self.template.amplitude) {
                *o += a * e;
            }
        }
    }
}

impl TorqueSignatureModel {
    pub fn with_noise(mut self, noise_sigma: f64) -> Self {
        self.noise_sigma = noise_sigma;
        self
    }

    pub fn template(&self, action: ActionClass) -> Result<&ActionTemplate> {
        self.templates
            .get(&action)
            .ok_or_else(|| Error::InvalidArgument(format!("signature model has no template for {action}")))
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma {} must be >= 0 and amplitude_jitter {} in [0, 1)",
                self.noise_sigma, self.amplitude_jitter
            )));
        }
        if let Some(t) = self.templates.get(&ActionClass::NoAction) {
            if t.shape != ProfileShape::Null {
                return Err(Error::InvalidArgument("no_action must use the null profile".into()));
            }
        }
        Ok(())
    }

    /// Draws onset, duration and gain. `onset_override` replaces the template's
    /// window-relative onset with an absolute time.
    fn realize<'a, R: Rng + ?Sized>(
        &'a self,
        action: ActionClass,
        onset_override: Option<f64>,
        rng: &mut R,
    ) -> Result<Realization<'a>> {
        let template = self.template(action)?;
        let onset = template.onset_ms.sample(rng);
        let duration = template.duration_ms.sample(rng);
        let gain = if self.amplitude_jitter > 0.0 {
            1.0 + rng.random_range(-self.amplitude_jitter..=self.amplitude_jitter)
        } else {
            1.0
        };
        Ok(Realization {
            template,
            onset_ms: onset_override.unwrap_or(onset),
            duration_ms: duration,
            gain,
        })
    }

    fn noise(&self) -> Option<Normal<f64>> {
        (self.noise_sigma > 0.0).then(|| Normal::new(0.0, self.noise_sigma).expect("sigma > 0"))
    }
}

fn clamp_torque(v: f64) -> f64 {
    v.clamp(-TORQUE_LIMIT_NM, TORQUE_LIMIT_NM)
}

/// One labeled training window; deterministic in `(model, action, seed)`.
pub fn generate_window(model: &TorqueSignatureModel, action: ActionClass, seed: u64) -> Result<LabeledWindow> {
    model.validate()?;
    let mut rng = seeded(seed);
    let real = model.realize(action, None, &mut rng)?;
    let noise = model.noise();
    let mut rows = vec![[0.0; WINDOW_SAMPLES]; JOINTS];
    for s in 0..WINDOW_SAMPLES {
        let t = (s as Millis * SAMPLE_PERIOD_MS) as f64;
        let mut v = model.baseline;
        real.add_delta(t, 1.0, &mut v);
        for (j, row) in rows.iter_mut().enumerate() {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            row[s] = clamp_torque(v[j] + n);
        }
    }
    Ok(LabeledWindow {
        window: TorqueWindow::from_rows(&rows, 0)?,
        label: action,
    })
}

/// `per_class_count` windows of each action, interleaved class by class.
pub fn generate_dataset(model: &TorqueSignatureModel, per_class_count: usize, seed: u64) -> Result<Vec<LabeledWindow>> {
    if per_class_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "per_class_count must be at least 2, got {per_class_count}"
        )));
    }
    let mut out = Vec::with_capacity(per_class_count * ActionClass::ALL.len());
    for i in 0..per_class_count {
        for action in ActionClass::ALL {
            let s = derive_seed(seed, &[action.code() as u64, i as u64]);
            out.push(generate_window(model, action, s)?);
        }
    }
    Ok(out)
}

/// Per-action fault probabilities for scenario generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionFaults {
    /// Probability that the action's torque signature is blended toward
    /// `confuser` (with extra noise) for the whole episode.
    pub torque_confusion: f64,
    pub confuser: ActionClass,
    /// Receiver grasps weakly: torque delta scaled down and only two
    /// non-thumb fingertips reach the slab. Hits both modalities at once.
    pub weak_grasp: f64,
    /// Thumb never detected during contact.
    pub vision_dropout: f64,
    /// Fingers wrap the object although the action should not release.
    pub vision_false_grasp: f64,
}

impl Default for ActionFaults {
    fn default() -> Self {
        Self::clean()
    }
}

impl ActionFaults {
    pub const fn clean() -> Self {
        Self {
            torque_confusion: 0.0,
            confuser: ActionClass::Pull,
            weak_grasp: 0.0,
            vision_dropout: 0.0,
            vision_false_grasp: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultProfile {
    pub per_action: BTreeMap<ActionClass, ActionFaults>,
    /// Weight of the confuser signature in a confused episode.
    pub confusion_blend: f64,
    /// Extra torque noise on confused episodes, N·m.
    pub confusion_extra_noise: f64,
    /// Torque gain applied on weak grasps.
    pub weak_grasp_gain: f64,
    /// Per-frame, per-fingertip probability that a detection is missing.
    pub detection_flicker: f64,
    /// Per-frame probability of a low-confidence spurious detection.
    pub spurious_detection_rate: f64,
}

impl FaultProfile {
    /// No scripted faults; only detector flicker and spurious detections.
    pub fn none() -> Self {
        Self {
            per_action: ActionClass::ALL
                .into_iter()
                .map(|a| (a, ActionFaults::clean()))
                .collect(),
            ..Self::calibrated()
        }
    }

    /// Rates tuned so the single-modality pipelines land near 90 % (torque)
    /// and 79 % (vision) overall success.
    pub fn calibrated() -> Self {
        use ActionClass::*;
        let confused = |p: f64| ActionFaults {
            torque_confusion: p,
            confuser: Pull,
            ..ActionFaults::clean()
        };
        let per_action = BTreeMap::from([
            (NoAction, confused(0.10)),
            (
                Bump,
                ActionFaults {
                    vision_false_grasp: 0.17,
                    ..confused(0.33)
                },
            ),
            (Push, confused(0.033)),
            (
                Hold,
                ActionFaults {
                    weak_grasp: 0.05,
                    ..ActionFaults::clean()
                },
            ),
            (Pull, ActionFaults::clean()),
            (
                PullUp,
                ActionFaults {
                    weak_grasp: 0.05,
                    ..ActionFaults::clean()
                },
            ),
        ]);
        Self {
            per_action,
            confusion_blend: 0.85,
            confusion_extra_noise: 0.3,
            weak_grasp_gain: 0.1,
            detection_flicker: 0.03,
            spurious_detection_rate: 0.05,
        }
    }

    fn faults(&self, action: ActionClass) -> ActionFaults {
        self.per_action.get(&action).cloned().unwrap_or(ActionFaults::clean())
    }

    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = self.per_action.values().all(|f| {
            prob(f.torque_confusion) && prob(f.weak_grasp) && prob(f.vision_dropout) && prob(f.vision_false_grasp)
        }) && prob(self.confusion_blend)
            && prob(self.detection_flicker)
            && prob(self.spurious_detection_rate)
            && self.confusion_extra_noise >= 0.0
            && self.weak_grasp_gain >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "fault profile probabilities must lie in [0, 1]".into(),
            ))
        }
    }
}

impl Default for FaultProfile {
    fn default() -> Self {
        Self::calibrated()
    }
}

/// Which faults a scenario actually drew.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedFaults {
    pub torque_confused_as: Option<ActionClass>,
    pub weak_grasp: bool,
    pub vision_dropout: bool,
    pub vision_false_grasp: bool,
}

/// Where the receiver's fingertips end up once contact is made.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraspGeometry {
    /// Fingertips between the planes during the contact phase (before
    /// detector flicker).
    pub fingers_in_slab: usize,
    pub thumb_in_slab: bool,
    pub enters_at_ms: Option<Millis>,
    pub leaves_at_ms: Option<Millis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorqueSample {
    pub timestamp: Millis,
    pub torques: [f64; JOINTS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub timestamp: Millis,
    pub detections: Vec<FingertipDetection>,
}

/// One line of a scenario stream dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stream", rename_all = "snake_case")]
pub enum StreamEvent {
    Torque(TorqueSample),
    Detections(DetectionFrame),
}

/// A 3 s handover episode: approach, contact, then the receiver's action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub action: ActionClass,
    pub seed: u64,
    pub slab: ObjectSlab,
    pub hand_appears_ms: Option<Millis>,
    pub contact_ms: Millis,
    pub action_onset_ms: Millis,
    pub grasp: GraspGeometry,
    pub faults: AppliedFaults,
    pub torque: Vec<TorqueSample>,
    pub detections: Vec<DetectionFrame>,
}

impl ScenarioScript {
    /// The one-second window whose last sample is `torque[end_index]`.
    pub fn window_ending_at(&self, end_index: usize) -> Result<TorqueWindow> {
        if end_index + 1 < WINDOW_SAMPLES || end_index >= self.torque.len() {
            return Err(Error::InvalidArgument(format!(
                "no full window ends at torque sample {end_index}"
            )));
        }
        let first = end_index + 1 - WINDOW_SAMPLES;
        let samples = &self.torque[first..=end_index];
        let rows: Vec<Vec<f64>> = (0..JOINTS)
            .map(|j| samples.iter().map(|s| s.torques[j]).collect())
            .collect();
        TorqueWindow::from_rows(&rows, samples[0].timestamp)
    }

    /// Both streams merged in time order (torque first on ties).
    pub fn events(&self) -> Vec<StreamEvent> {
        let mut out = Vec::with_capacity(self.torque.len() + self.detections.len());
        let (mut i, mut j) = (0, 0);
        while i < self.torque.len() || j < self.detections.len() {
            let take_torque = match (self.torque.get(i), self.detections.get(j)) {
                (Some(t), Some(d)) => t.timestamp <= d.timestamp,
                (Some(_), None) => true,
                _ => false,
            };
            if take_torque {
                out.push(StreamEvent::Torque(self.torque[i].clone()));
                i += 1;
            } else {
                out.push(StreamEvent::Detections(self.detections[j].clone()));
                j += 1;
            }
        }
        out
    }
}

/// Scenario with the default signature model.
pub fn generate_scenario(action: ActionClass, profile: &FaultProfile, seed: u64) -> Result<ScenarioScript> {
    generate_scenario_with(&TorqueSignatureModel::default(), action, profile, seed)
}

#[derive(Clone, Copy, PartialEq)]
enum Placement {
    /// Between the planes.
    Inside,
    /// In front of the front plane by the given gap (m).
    Front(f64),
}

struct Fingertip {
    finger: FingerType,
    /// Image-plane center of the box.
    u: f64,
    v: f64,
    /// Depth inside the slab, as a fraction of its thickness.
    depth_frac: f64,
}

pub fn generate_scenario_with(
    model: &TorqueSignatureModel,
    action: ActionClass,
    profile: &FaultProfile,
    seed: u64,
) -> Result<ScenarioScript> {
    model.validate()?;
    profile.validate()?;
    let mut rng = seeded(seed);
    let faults_cfg = profile.faults(action);
    let bernoulli = |rng: &mut crate::rng::Rng, p: f64| p > 0.0 && rng.random_bool(p);

    let torque_confused = bernoulli(&mut rng, faults_cfg.torque_confusion);
    let release_action = matches!(action, ActionClass::Hold | ActionClass::Pull | ActionClass::PullUp);
    let weak_grasp = release_action && bernoulli(&mut rng, faults_cfg.weak_grasp);
    let vision_dropout = release_action && !weak_grasp && bernoulli(&mut rng, faults_cfg.vision_dropout);
    let vision_false_grasp = action == ActionClass::Bump && bernoulli(&mut rng, faults_cfg.vision_false_grasp);
    let faults = AppliedFaults {
        torque_confused_as: torque_confused.then_some(faults_cfg.confuser),
        weak_grasp,
        vision_dropout,
        vision_false_grasp,
    };

    let z_front = rng.random_range(0.28..0.32);
    let slab = ObjectSlab::new(z_front, z_front + rng.random_range(0.06..0.08))?;
    let contact_ms = rng.random_range(1000..=1300);
    let action_onset_ms = contact_ms + rng.random_range(100..=300);

    // torque stream
    let onset = action_onset_ms as f64;
    let mut primary = model.realize(action, Some(onset), &mut rng)?;
    if weak_grasp {
        primary.gain *= profile.weak_grasp_gain;
    }
    let confuser = match faults.torque_confused_as {
        Some(c) => Some(model.realize(c, Some(onset), &mut rng)?),
        None => None,
    };
    let (w_primary, w_confuser) = match confuser {
        Some(_) => (1.0 - profile.confusion_blend, profile.confusion_blend),
        None => (1.0, 0.0),
    };
    let sigma = if confuser.is_some() {
        (model.noise_sigma.powi(2) + profile.confusion_extra_noise.powi(2)).sqrt()
    } else {
        model.noise_sigma
    };
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma > 0"));
    let samples = (EPISODE_MS / SAMPLE_PERIOD_MS) as usize;
    let mut torque = Vec::with_capacity(samples);
    for k in 0..samples {
        let timestamp = k as Millis * SAMPLE_PERIOD_MS;
        let mut v = model.baseline;
        primary.add_delta(timestamp as f64, w_primary, &mut v);
        if let Some(c) = &confuser {
            c.add_delta(timestamp as f64, w_confuser, &mut v);
        }
        for x in &mut v {
            *x = clamp_torque(*x + noise.as_ref().map_or(0.0, |d| d.sample(&mut rng)));
        }
        torque.push(TorqueSample { timestamp, torques: v });
    }

    // fingertip layout: thumb opposite three fingers around the object center
    let fingertips: Vec<Fingertip> = std::iter::once(FingerType::Thumb)
        .chain(std::iter::repeat_n(FingerType::Other, 3))
        .enumerate()
        .map(|(i, finger)| Fingertip {
            finger,
            u: if i == 0 { 0.42 } else { 0.56 } + rng.random_range(-0.02..0.02),
            v: if i == 0 { 0.50 } else { 0.38 + 0.08 * i as f64 } + rng.random_range(-0.02..0.02),
            depth_frac: rng.random_range(0.2..0.8),
        })
        .collect();

    let hand_appears_ms = (action != ActionClass::NoAction).then(|| contact_ms - rng.random_range(400..=700));
    let bump_leaves_ms = contact_ms + rng.random_range(150..=300);

    // contact-phase placement per fingertip index (0 = thumb)
    let contact_placement = |i: usize, t: Millis| -> Option<Placement> {
        let full_wrap = || Some(Placement::Inside);
        match action {
            ActionClass::NoAction => None,
            ActionClass::Bump if !vision_false_grasp => {
                if t >= bump_leaves_ms {
                    // retreating hand
                    Some(Placement::Front(
                        0.02 + 0.08 * ((t - bump_leaves_ms) as f64 / 500.0).min(1.0),
                    ))
                } else if i == 1 || i == 2 {
                    Some(Placement::Inside)
                } else {
                    Some(Placement::Front(0.02))
                }
            }
            _ if weak_grasp => {
                if i == 1 || i == 2 {
                    Some(Placement::Inside)
                } else {
                    Some(Placement::Front(0.03))
                }
            }
            _ if vision_dropout && i == 0 => None,
            _ => full_wrap(),
        }
    };

    let grasp = {
        let placements: Vec<Option<Placement>> = (0..fingertips.len())
            .map(|i| contact_placement(i, contact_ms))
            .collect();
        let inside = |i: usize| placements[i] == Some(Placement::Inside);
        let fingers_in_slab = (0..fingertips.len()).filter(|&i| inside(i)).count();
        GraspGeometry {
            fingers_in_slab,
            thumb_in_slab: inside(0),
            enters_at_ms: (fingers_in_slab > 0).then_some(contact_ms),
            leaves_at_ms: (action == ActionClass::Bump && !vision_false_grasp).then_some(bump_leaves_ms),
        }
    };

    let frames = (EPISODE_MS * DETECTION_RATE_HZ / 1000) as usize;
    let mut detections = Vec::with_capacity(frames);
    for f in 0..frames {
        let timestamp = (f as u64 * 1000 + DETECTION_RATE_HZ / 2) / DETECTION_RATE_HZ;
        let mut frame = Vec::new();
        if let Some(appear) = hand_appears_ms.filter(|a| timestamp >= *a) {
            for (i, tip) in fingertips.iter().enumerate() {
                let placement = if timestamp < contact_ms {
                    // approach: closing from 15 cm to 1 cm in front of the object
                    let progress = (timestamp - appear) as f64 / (contact_ms - appear) as f64;
                    Some(Placement::Front(0.15 - 0.14 * progress))
                } else {
                    contact_placement(i, timestamp)
                };
                let Some(placement) = placement else { continue };
                if bernoulli(&mut rng, profile.detection_flicker) {
                    continue;
                }
                let z = match placement {
                    Placement::Inside => {
                        let thickness = slab.z_back() - slab.z_front();
                        let jitter = rng.random_range(-0.05..0.05);
                        slab.z_front() + thickness * (tip.depth_frac + jitter).clamp(0.05, 0.95)
                    }
                    Placement::Front(gap) => (slab.z_front() - gap - rng.random_range(0.0..0.005)).max(0.0),
                };
                let confidence = rng_confidence(&mut rng, true);
                frame.push(fingertip_detection(&mut rng, tip, z, confidence, timestamp)?);
            }
        }
        if bernoulli(&mut rng, profile.spurious_detection_rate) {
            let tip = Fingertip {
                finger: FingerType::Other,
                u: rng.random_range(0.1..0.9),
                v: rng.random_range(0.1..0.9),
                depth_frac: 0.5,
            };
            let z = rng.random_range(0.1..0.6);
            let confidence = rng_confidence(&mut rng, false);
            frame.push(fingertip_detection(&mut rng, &tip, z, confidence, timestamp)?);
        }
        detections.push(DetectionFrame {
            timestamp,
            detections: frame,
        });
    }

    Ok(ScenarioScript {
        action,
        seed,
        slab,
        hand_appears_ms,
        contact_ms,
        action_onset_ms,
        grasp,
        faults,
        torque,
        detections,
    })
}

fn rng_confidence(rng: &mut crate::rng::Rng, genuine: bool) -> f64 {
    if genuine {
        rng.random_range(0.6..0.99)
    } else {
        rng.random_range(0.05..0.45)
    }
}

fn fingertip_detection(
    rng: &mut crate::rng::Rng,
    tip: &Fingertip,
    z: f64,
    confidence: f64,
    timestamp: Millis,
) -> Result<FingertipDetection> {
    let half = 0.02 + rng.random_range(0.0..0.01);
    let (u, v) = (
        (tip.u + rng.random_range(-0.005..0.005)).clamp(half, 1.0 - half),
        (tip.v + rng.random_range(-0.005..0.005)).clamp(half, 1.0 - half),
    );
    let bbox = BBox::new(u - half, v - half, u + half, v + half)?;
    // pinhole back-projection with a unit focal length in normalized coordinates
    let position = [(u - 0.5) * z, (v - 0.5) * z, z];
    FingertipDetection::new(bbox, tip.finger, position, confidence, timestamp)
}
