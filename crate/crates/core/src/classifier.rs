//! Torque action classifier: network assembly, input standardization,
//! training loop, evaluation and the online `classify_window` entry point.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::nn::{LayerDoc, MomentumSgd, Network, NetworkDocument, Tensor1D, FORMAT_VERSION};
use crate::rng::{derive_seed, seeded};
use crate::types::{
    expected_decision, ActionClass, ActionScores, Decision, TorqueWindow, FLAT_LEN, JOINTS, NUM_CLASSES, WINDOW_SAMPLES,
};

pub const STD_FLOOR: f64 = 1e-6;
pub const HELD_OUT_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub window: TorqueWindow,
    pub label: ActionClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TorqueNetConfig {
    pub blocks: usize,
    pub filters_per_block: usize,
    pub kernel_size: usize,
    pub classes: usize,
    pub input_channels: usize,
    pub input_length: usize,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Runtime choice only; never affects results.
    #[serde(skip)]
    pub execution: Execution,
}

impl TorqueNetConfig {
    /// Three 64-filter k=3 blocks over the flattened 1×280 window, 30 epochs
    /// of momentum SGD.
    pub fn standard() -> Self {
        Self {
            blocks: 3,
            filters_per_block: 64,
            kernel_size: 3,
            classes: NUM_CLASSES,
            input_channels: 1,
            input_length: FLAT_LEN,
            seed: 0,
            epochs: 30,
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 32,
            execution: Execution::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let shape_err = |m: String| Err(Error::Shape(m));
        if self.input_channels != 1 || self.input_length != FLAT_LEN {
            return shape_err(format!(
                "input must be 1×{FLAT_LEN}, got {}×{}",
                self.input_channels, self.input_length
            ));
        }
        if self.classes != NUM_CLASSES {
            return shape_err(format!("classes must be {NUM_CLASSES}, got {}", self.classes));
        }
        if self.blocks == 0 || self.filters_per_block == 0 {
            return shape_err("need at least one block with at least one filter".into());
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size > self.input_length {
            return shape_err(format!(
                "kernel size {} must be odd and fit the input",
                self.kernel_size
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "learning_rate {} must be > 0, momentum {} in [0, 1), batch_size {} > 0",
                self.learning_rate, self.momentum, self.batch_size
            )));
        }
        Ok(())
    }
}

impl Default for TorqueNetConfig {
    fn default() -> Self {
        Self::standard()
    }
}

/// Seeded network for `config`; identical seeds give identical parameters.
pub fn build_network(config: &TorqueNetConfig) -> Result<Network> {
    config.validate()?;
    let mut rng = seeded(derive_seed(config.seed, &[0]));
    Network::he_uniform(
        config.input_channels,
        &vec![config.filters_per_block; config.blocks],
        config.kernel_size,
        config.classes,
        &mut rng,
    )
}

/// Per-joint mean and standard deviation of the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputStats {
    pub mean: [f64; JOINTS],
    pub std: [f64; JOINTS],
}

impl InputStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; JOINTS],
            std: [1.0; JOINTS],
        }
    }

    /// Population statistics over every sample of every window; std floored.
    pub fn from_windows<'a, I: IntoIterator<Item = &'a TorqueWindow>>(windows: I) -> Result<Self> {
        let windows: Vec<&TorqueWindow> = windows.into_iter().collect();
        if windows.is_empty() {
            return Err(Error::Dataset("input statistics need at least one window".into()));
        }
        let n = (windows.len() * WINDOW_SAMPLES) as f64;
        let mut mean = [0.0; JOINTS];
        let mut std = [0.0; JOINTS];
        for j in 0..JOINTS {
            mean[j] = windows.iter().flat_map(|w| w.joint(j)).sum::<f64>() / n;
            let var = windows
                .iter()
                .flat_map(|w| w.joint(j))
                .map(|v| (v - mean[j]).powi(2))
                .sum::<f64>()
                / n;
            std[j] = var.sqrt().max(STD_FLOOR);
        }
        Ok(Self { mean, std })
    }

    fn validate(&self) -> Result<()> {
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) || self.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Model("input statistics must be finite with positive std".into()));
        }
        Ok(())
    }
}

/// Per-joint z-score, then the joint-major flattening, as a 1×280 tensor.
pub fn normalize_input(window: &TorqueWindow, stats: &InputStats) -> Tensor1D {
    let mut data = Vec::with_capacity(FLAT_LEN);
    for j in 0..JOINTS {
        let s = stats.std[j].max(STD_FLOOR);
        data.extend(window.joint(j).iter().map(|v| (v - stats.mean[j]) / s));
    }
    Tensor1D::new(1, FLAT_LEN, data).expect("window values and stats are finite")
}

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: ActionClass, predicted: ActionClass) {
        self.counts[truth.code()][predicted.code()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, truth: ActionClass) -> u64 {
        self.counts[truth.code()].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn render(&self) -> String {
        let width = ActionClass::ALL
            .iter()
            .map(|a| a.name().len())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut out = format!("{:<width$}", "true\\pred");
        for a in ActionClass::ALL {
            out.push_str(&format!(" {:>width$}", a.name()));
        }
        out.push('\n');
        for t in ActionClass::ALL {
            out.push_str(&format!("{:<width$}", t.name()));
            for c in &self.counts[t.code()] {
                out.push_str(&format!(" {c:>width$}"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "accuracy {}/{} = {:.4}\n",
            self.trace(),
            self.total(),
            self.accuracy()
        ));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the training-mode forward passes seen during the epoch.
    pub train_accuracy: f64,
    pub held_out_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochMetrics>,
    pub train_count: usize,
    pub held_out_count: usize,
    pub confusion: ConfusionMatrix,
    pub held_out_accuracy: f64,
    pub wall_clock_seconds: f64,
}

/// A trained network together with the input statistics it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: TorqueNetConfig,
    pub network: Network,
    pub stats: InputStats,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    config: TorqueNetConfig,
    input_stats: InputStats,
    layers: Vec<LayerDoc>,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: FORMAT_VERSION.to_string(),
            config: self.config.clone(),
            input_stats: self.stats.clone(),
            layers: self.network.to_document().layers,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.input_stats.validate()?;
        let network = Network::from_document(&NetworkDocument {
            version: file.version,
            layers: file.layers,
        })?;
        if network.classes() != NUM_CLASSES || network.input_channels() != 1 {
            return Err(Error::Model(format!(
                "model maps {} channels to {} classes; expected 1 and {NUM_CLASSES}",
                network.input_channels(),
                network.classes()
            )));
        }
        Ok(Self {
            config: file.config,
            network,
            stats: file.input_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Per class, a seeded shuffle then the first 20 % (at least one) held out.
/// Returns `(train, held_out)` dataset indices.
pub fn stratified_split(dataset: &[LabeledWindow], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for action in ActionClass::ALL {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset[i].label == action).collect();
        if idx.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {action} has {} examples; every class needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut seeded(derive_seed(seed, &[1, action.code() as u64])));
        let n_held = ((idx.len() as f64 * HELD_OUT_FRACTION).round() as usize).clamp(1, idx.len() - 1);
        held.extend_from_slice(&idx[..n_held]);
        train.extend_from_slice(&idx[n_held..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    Ok((train, held))
}

pub fn train(dataset: &[LabeledWindow], config: &TorqueNetConfig) -> Result<(TrainedModel, TrainingReport)> {
    let started = Instant::now();
    let mut network = build_network(config)?;
    let (mut train_idx, held_idx) = stratified_split(dataset, config.seed)?;
    let stats = InputStats::from_windows(train_idx.iter().map(|&i| &dataset[i].window))?;
    let inputs: Vec<Tensor1D> = exec::map(config.execution, dataset, |w| normalize_input(&w.window, &stats));
    let held: Vec<LabeledWindow> = held_idx.iter().map(|&i| dataset[i].clone()).collect();

    let mut optimizer = MomentumSgd::new(&network, config.learning_rate, config.momentum)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut seeded(derive_seed(config.seed, &[2, epoch as u64])));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<Tensor1D> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| dataset[i].label.code()).collect();
            let g = network.gradients(&batch, &targets, config.execution)?;
            loss_sum += g.loss * chunk.len() as f64;
            correct += g
                .probabilities
                .iter()
                .zip(&targets)
                .filter(|(p, t)| argmax(p) == **t)
                .count();
            network.apply_batch_stats(&g.stats)?;
            optimizer.step(&mut network, &g.tape)?;
        }
        let snapshot = TrainedModel {
            config: config.clone(),
            network: network.clone(),
            stats: stats.clone(),
        };
        let held_out_accuracy = evaluate(&snapshot, &held, config.execution)?.accuracy();
        epochs.push(EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / train_idx.len() as f64,
            train_accuracy: correct as f64 / train_idx.len() as f64,
            held_out_accuracy,
        });
    }

    let model = TrainedModel {
        config: config.clone(),
        network,
        stats,
    };
    let confusion = evaluate(&model, &held, config.execution)?;
    let report = TrainingReport {
        epochs,
        train_count: train_idx.len(),
        held_out_count: held.len(),
        held_out_accuracy: confusion.accuracy(),
        confusion,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate().skip(1) {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode scores for one window. Pure: batchnorm uses the frozen
/// running statistics.
pub fn classify_window(model: &TrainedModel, window: &TorqueWindow) -> Result<ActionScores> {
    if window.as_flat().len() != FLAT_LEN {
        return Err(Error::MalformedWindow(format!("expected {FLAT_LEN} values")));
    }
    let p = model.network.predict(&normalize_input(window, &model.stats))?;
    let probabilities: [f64; NUM_CLASSES] = p
        .try_into()
        .map_err(|_| Error::Model("network does not output six classes".into()))?;
    ActionScores::from_probabilities(probabilities)
}

/// Release vote: the predicted action is one that hands the object over.
pub fn torque_vote(scores: &ActionScores) -> bool {
    expected_decision(scores.predicted) == Decision::Release
}

pub fn evaluate(model: &TrainedModel, dataset: &[LabeledWindow], exec: Execution) -> Result<ConfusionMatrix> {
    let predictions = exec::try_map(exec, dataset, |w| classify_window(model, &w.window))?;
    let mut m = ConfusionMatrix::default();
    for (w, s) in dataset.iter().zip(&predictions) {
        m.record(w.label, s.predicted);
    }
    Ok(m)
}
