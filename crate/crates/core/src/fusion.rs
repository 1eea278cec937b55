//! Pairs torque classifications with vision verdicts and runs the debounced
//! AND state machine that emits the release command.

use serde::{Deserialize, Serialize};

use crate::classifier::{classify_window, torque_vote, TrainedModel};
use crate::error::{Error, Result};
use crate::synth::ScenarioScript;
use crate::types::{expected_decision, ActionClass, ActionScores, Decision, Millis, ReleaseDecision, WINDOW_SAMPLES};
use crate::vision::{evaluate_grasp_at, VisionVerdict, DEFAULT_MIN_CONFIDENCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    HoldingIdle,
    ContactPending,
    ReleaseArmed,
    Released,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    TorqueOnly,
    VisionOnly,
    Fused,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::TorqueOnly, Pipeline::VisionOnly, Pipeline::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::TorqueOnly => "torque_only",
            Pipeline::VisionOnly => "vision_only",
            Pipeline::Fused => "fused",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let norm = name.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pipeline {name:?}")))
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncConfig {
    pub pairing_window_ms: Millis,
    pub debounce_frames: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            pairing_window_ms: 100,
            debounce_frames: 3,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairing_window_ms == 0 || self.debounce_frames == 0 {
            return Err(Error::InvalidArgument(
                "pairing_window_ms and debounce_frames must both be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One classified torque window, stamped with its last sample's time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorqueEvent {
    pub timestamp: Millis,
    pub scores: ActionScores,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedSample {
    pub timestamp: Millis,
    pub torque: ActionScores,
    pub torque_vote: bool,
    pub vision: VisionVerdict,
    pub fused_vote: bool,
    /// Torque time minus vision time; never negative.
    pub skew_ms: Millis,
}

impl FusedSample {
    pub fn new(torque: TorqueEvent, vision: VisionVerdict) -> Result<Self> {
        if vision.evaluated_at > torque.timestamp {
            return Err(Error::InvalidArgument(format!(
                "vision verdict at {} is later than torque event at {}",
                vision.evaluated_at, torque.timestamp
            )));
        }
        let tv = torque_vote(&torque.scores);
        Ok(Self {
            timestamp: torque.timestamp,
            torque: torque.scores,
            torque_vote: tv,
            vision,
            fused_vote: tv && vision.vote,
            skew_ms: torque.timestamp - vision.evaluated_at,
        })
    }

    /// The vote the given pipeline acts on; the bypassed modality counts as
    /// agreeing.
    pub fn votes(&self, pipeline: Pipeline) -> (bool, bool) {
        match pipeline {
            Pipeline::TorqueOnly => (self.torque_vote, true),
            Pipeline::VisionOnly => (true, self.vision.vote),
            Pipeline::Fused => (self.torque_vote, self.vision.vote),
        }
    }

    /// Whether the pipeline's sensors report that the receiver has touched
    /// the object.
    pub fn contact(&self, pipeline: Pipeline) -> bool {
        match pipeline {
            Pipeline::TorqueOnly => self.torque.predicted != ActionClass::NoAction,
            Pipeline::VisionOnly | Pipeline::Fused => self.vision.fingers_in_slab > 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncOutput {
    pub samples: Vec<FusedSample>,
    /// Torque events with no vision verdict inside the pairing window.
    pub dropped: usize,
}

fn check_order(stream: &'static str, times: impl Iterator<Item = Millis>) -> Result<()> {
    let mut prev: Option<Millis> = None;
    for (index, t) in times.enumerate() {
        if let Some(p) = prev {
            if t < p {
                return Err(Error::OutOfOrder {
                    stream,
                    index,
                    previous: p,
                    current: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// Pairs each torque event with the latest vision verdict at or before it,
/// if that verdict is at most `pairing_window_ms` older.
pub fn synchronize(torque: &[TorqueEvent], vision: &[VisionVerdict], config: &SyncConfig) -> Result<SyncOutput> {
    config.validate()?;
    check_order("torque", torque.iter().map(|e| e.timestamp))?;
    check_order("vision", vision.iter().map(|v| v.evaluated_at))?;
    let mut out = SyncOutput::default();
    let mut k = 0;
    for event in torque {
        while k < vision.len() && vision[k].evaluated_at <= event.timestamp {
            k += 1;
        }
        match k.checked_sub(1).map(|i| vision[i]) {
            Some(v) if event.timestamp - v.evaluated_at <= config.pairing_window_ms => {
                out.samples.push(FusedSample::new(*event, v)?)
            }
            _ => out.dropped += 1,
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub at: Millis,
    pub from: FsmState,
    pub to: FsmState,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepResult {
    pub transitions: Vec<Transition>,
    pub decision: Option<ReleaseDecision>,
}

/// Debounced release state machine. The sample that first reports contact
/// already counts toward the debounce streak; reaching the streak arms and
/// releases within the same step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fsm {
    pub state: FsmState,
    pub streak: usize,
}

impl Default for Fsm {
    fn default() -> Self {
        Self::new()
    }
}

impl Fsm {
    pub fn new() -> Self {
        Self {
            state: FsmState::HoldingIdle,
            streak: 0,
        }
    }

    pub fn step(&mut self, sample: &FusedSample, config: &SyncConfig) -> Result<StepResult> {
        self.step_pipeline(sample, config, Pipeline::Fused)
    }

    pub fn step_pipeline(
        &mut self,
        sample: &FusedSample,
        config: &SyncConfig,
        pipeline: Pipeline,
    ) -> Result<StepResult> {
        if self.state == FsmState::Released {
            return Err(Error::AlreadyReleased);
        }
        let mut result = StepResult::default();
        let mut go = |fsm: &mut Fsm, to: FsmState| {
            result.transitions.push(Transition {
                at: sample.timestamp,
                from: fsm.state,
                to,
            });
            fsm.state = to;
        };
        if self.state == FsmState::HoldingIdle {
            if !sample.contact(pipeline) {
                return Ok(result);
            }
            go(self, FsmState::ContactPending);
        }
        let (tv, vv) = sample.votes(pipeline);
        if tv && vv {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= config.debounce_frames {
            go(self, FsmState::ReleaseArmed);
            go(self, FsmState::Released);
            result.decision = Some(ReleaseDecision::new(tv, vv, sample.torque.predicted, sample.timestamp));
        }
        Ok(result)
    }
}

/// Single-step form: returns the next state and any decision.
pub fn fsm_step(
    state: FsmState,
    streak: usize,
    sample: &FusedSample,
    config: &SyncConfig,
) -> Result<(Fsm, Option<ReleaseDecision>)> {
    let mut fsm = Fsm { state, streak };
    let r = fsm.step(sample, config)?;
    Ok((fsm, r.decision))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub sync: SyncConfig,
    /// Samples between consecutive classified windows.
    pub stride_samples: usize,
    pub min_confidence: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            sync: SyncConfig::default(),
            stride_samples: 5,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }
}

/// Both perception streams of one scenario, before any pipeline runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub torque: Vec<TorqueEvent>,
    pub vision: Vec<VisionVerdict>,
}

/// Sliding one-second windows every `stride` samples, each classified.
pub fn classify_stream(model: &TrainedModel, script: &ScenarioScript, stride: usize) -> Result<Vec<TorqueEvent>> {
    if script.torque.len() < WINDOW_SAMPLES {
        return Err(Error::EmptyStream("torque"));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    (WINDOW_SAMPLES - 1..script.torque.len())
        .step_by(stride)
        .map(|end| {
            Ok(TorqueEvent {
                timestamp: script.torque[end].timestamp,
                scores: classify_window(model, &script.window_ending_at(end)?)?,
            })
        })
        .collect()
}

pub fn perceive(model: &TrainedModel, script: &ScenarioScript, config: &EpisodeConfig) -> Result<Perception> {
    if script.detections.is_empty() {
        return Err(Error::EmptyStream("detection"));
    }
    let torque = classify_stream(model, script, config.stride_samples)?;
    let vision = script
        .detections
        .iter()
        .map(|f| evaluate_grasp_at(&f.detections, &script.slab, config.min_confidence, f.timestamp))
        .collect::<Result<_>>()?;
    Ok(Perception { torque, vision })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub action: ActionClass,
    pub pipeline: Pipeline,
    pub released: bool,
    pub release_time: Option<Millis>,
    pub decision: Option<ReleaseDecision>,
    pub success: bool,
    pub final_state: FsmState,
    pub samples: usize,
    pub dropped: usize,
}

/// One line of an episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EpisodeEvent {
    EpisodeStart {
        action: ActionClass,
        pipeline: Pipeline,
        seed: u64,
        config: EpisodeConfig,
    },
    FusedSample {
        sample: FusedSample,
    },
    Transition(Transition),
    Decision {
        decision: ReleaseDecision,
    },
    EpisodeEnd {
        outcome: EpisodeOutcome,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRun {
    pub outcome: EpisodeOutcome,
    pub log: Vec<EpisodeEvent>,
}

/// Runs the FSM over synchronized samples until release or stream end.
pub fn run_samples(
    action: ActionClass,
    pipeline: Pipeline,
    seed: u64,
    sync: &SyncOutput,
    config: &EpisodeConfig,
) -> Result<EpisodeRun> {
    let mut log = vec![EpisodeEvent::EpisodeStart {
        action,
        pipeline,
        seed,
        config: *config,
    }];
    let mut fsm = Fsm::new();
    let mut decision = None;
    for sample in &sync.samples {
        log.push(EpisodeEvent::FusedSample { sample: *sample });
        let step = fsm.step_pipeline(sample, &config.sync, pipeline)?;
        log.extend(step.transitions.into_iter().map(EpisodeEvent::Transition));
        if let Some(d) = step.decision {
            log.push(EpisodeEvent::Decision { decision: d });
            decision = Some(d);
            break;
        }
    }
    let released = decision.is_some_and(|d| d.release());
    let outcome = EpisodeOutcome {
        action,
        pipeline,
        released,
        release_time: decision.map(|d| d.decided_at()),
        decision,
        success: released == (expected_decision(action) == Decision::Release),
        final_state: fsm.state,
        samples: sync.samples.len(),
        dropped: sync.dropped,
    };
    log.push(EpisodeEvent::EpisodeEnd {
        outcome: outcome.clone(),
    });
    Ok(EpisodeRun { outcome, log })
}

pub fn run_perceived(
    script: &ScenarioScript,
    perception: &Perception,
    pipeline: Pipeline,
    config: &EpisodeConfig,
) -> Result<EpisodeRun> {
    if perception.torque.is_empty() {
        return Err(Error::EmptyStream("torque"));
    }
    if perception.vision.is_empty() {
        return Err(Error::EmptyStream("vision"));
    }
    let sync = synchronize(&perception.torque, &perception.vision, &config.sync)?;
    run_samples(script.action, pipeline, script.seed, &sync, config)
}

pub fn run_episode(
    script: &ScenarioScript,
    model: &TrainedModel,
    pipeline: Pipeline,
    config: &EpisodeConfig,
) -> Result<EpisodeRun> {
    run_perceived(script, &perceive(model, script, config)?, pipeline, config)
}

pub fn log_to_jsonl(log: &[EpisodeEvent]) -> Result<String> {
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySummary {
    pub episodes: usize,
    pub outcomes: Vec<EpisodeOutcome>,
}

/// Re-runs the state machine over every logged fused sample and checks that
/// transitions, decisions and outcomes match the log exactly.
pub fn replay(jsonl: &str) -> Result<ReplaySummary> {
    let mut events = Vec::new();
    for (n, line) in jsonl.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let e: EpisodeEvent =
            serde_json::from_str(line).map_err(|err| Error::Replay(format!("line {}: {err}", n + 1)))?;
        events.push(e);
    }
    let mut outcomes = Vec::new();
    let mut rest = events.as_slice();
    while let Some((first, tail)) = rest.split_first() {
        let EpisodeEvent::EpisodeStart {
            action,
            pipeline,
            seed,
            config,
        } = first
        else {
            return Err(Error::Replay(format!("expected episode_start, found {first:?}")));
        };
        let end = tail
            .iter()
            .position(|e| matches!(e, EpisodeEvent::EpisodeEnd { .. }))
            .ok_or_else(|| Error::Replay("episode without episode_end".into()))?;
        let recorded = &rest[..end + 2];
        let EpisodeEvent::EpisodeEnd { outcome } = &recorded[recorded.len() - 1] else {
            unreachable!()
        };
        let samples: Vec<FusedSample> = recorded
            .iter()
            .filter_map(|e| match e {
                EpisodeEvent::FusedSample { sample } => Some(*sample),
                _ => None,
            })
            .collect();
        for s in &samples {
            if s.fused_vote != (s.torque_vote && s.vision.vote) || s.torque_vote != torque_vote(&s.torque) {
                return Err(Error::Replay(format!(
                    "inconsistent votes in sample at {}",
                    s.timestamp
                )));
            }
        }
        // samples after a release are never logged, so the logged prefix plus
        // the recorded totals reproduce the episode
        let sync = SyncOutput {
            samples,
            dropped: outcome.dropped,
        };
        let mut rerun = run_samples(*action, *pipeline, *seed, &sync, config)?;
        if let Some(EpisodeEvent::EpisodeEnd { outcome: o }) = rerun.log.last_mut() {
            o.samples = outcome.samples;
            rerun.outcome.samples = outcome.samples;
        }
        if rerun.log != recorded {
            return Err(Error::Replay(format!(
                "episode {} ({action}, {pipeline}, seed {seed}) does not reproduce",
                outcomes.len()
            )));
        }
        outcomes.push(rerun.outcome);
        rest = &tail[end + 1..];
    }
    Ok(ReplaySummary {
        episodes: outcomes.len(),
        outcomes,
    })
}
