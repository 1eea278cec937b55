//! Multibox detection objective: IoU matching of predicted boxes to ground
//! truth, softmax confidence loss, smooth-L1 localization loss over
//! center/size offsets, and the N-normalized combination.
//!
//! Class 0 is background; object classes are 1..K. Confidences are per-box
//! probability vectors over 1+K classes (use [`Prediction::from_logits`] for
//! raw scores).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, PROBABILITY_FLOOR};
use crate::types::BBox;

pub const IOU_THRESHOLD: f64 = 0.5;
pub const BACKGROUND: usize = 0;
pub const DEFAULT_ALPHA: f64 = 1.0;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let h = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidences: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(bbox: BBox, logits: &[f64]) -> Self {
        Self {
            bbox,
            confidences: softmax(logits),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiboxInstance {
    pub predicted: Vec<Prediction>,
    pub ground_truth: Vec<GroundTruth>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// `assignment[i]` is the ground-truth index predicted box `i` is matched
/// to, if any. Each predicted box matches at most one ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchMatrix {
    pub assignment: Vec<Option<usize>>,
    pub ground_truth_count: usize,
}

impl MatchMatrix {
    /// Number of matched predicted boxes.
    pub fn n(&self) -> usize {
        self.assignment.iter().flatten().count()
    }

    /// `x[i][j][p]` of the objective: 1 iff box `i` is matched to ground
    /// truth `j` and `p` is that ground truth's class.
    pub fn x(&self, i: usize, j: usize, p: usize, ground_truth: &[GroundTruth]) -> u8 {
        (self.assignment[i] == Some(j) && ground_truth[j].class == p) as u8
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|j| (i, j)))
    }
}

/// Deterministic total order on ground truths so that tie-breaking does not
/// depend on list order.
pub fn canonical_cmp(a: &GroundTruth, b: &GroundTruth) -> Ordering {
    let key = |g: &GroundTruth| [g.bbox.x_min(), g.bbox.y_min(), g.bbox.x_max(), g.bbox.y_max()];
    key(a)
        .iter()
        .zip(key(b).iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.class.cmp(&b.class))
}

/// Best candidate by IoU; ties go to the canonically smaller ground truth.
fn prefer(ground_truth: &[GroundTruth], ious: &[f64], best: Option<usize>, j: usize) -> Option<usize> {
    match best {
        None => Some(j),
        Some(b) => match ious[j].total_cmp(&ious[b]) {
            Ordering::Greater => Some(j),
            Ordering::Equal if canonical_cmp(&ground_truth[j], &ground_truth[b]).is_lt() => Some(j),
            _ => Some(b),
        },
    }
}

/// Two phases. Each ground truth claims its best-IoU predicted box (lowest
/// index on ties); a box claimed by several keeps the claimant with the
/// highest IoU. Every remaining box then matches its best ground truth if
/// that IoU reaches the threshold.
pub fn match_boxes(predicted: &[BBox], ground_truth: &[GroundTruth]) -> Result<MatchMatrix> {
    if predicted.is_empty() {
        return Err(Error::InvalidArgument(
            "match_boxes needs at least one predicted box".into(),
        ));
    }
    let table: Vec<Vec<f64>> = predicted
        .iter()
        .map(|p| ground_truth.iter().map(|g| iou(p, &g.bbox)).collect())
        .collect();
    let mut assignment: Vec<Option<usize>> = vec![None; predicted.len()];
    for j in 0..ground_truth.len() {
        let mut best = 0;
        for i in 1..predicted.len() {
            if table[i][j] > table[best][j] {
                best = i;
            }
        }
        assignment[best] = prefer(ground_truth, &table[best], assignment[best], j);
    }
    let forced: Vec<bool> = assignment.iter().map(Option::is_some).collect();
    for (i, row) in table.iter().enumerate() {
        if forced[i] {
            continue;
        }
        let mut best = None;
        for j in (0..ground_truth.len()).filter(|&j| row[j] >= IOU_THRESHOLD) {
            best = prefer(ground_truth, row, best, j);
        }
        assignment[i] = best;
    }
    Ok(MatchMatrix {
        assignment,
        ground_truth_count: ground_truth.len(),
    })
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Ground truth `g` encoded relative to predicted box `l`: center offsets
/// scaled by `l`'s size, then log size ratios.
pub fn encode_offsets(l: &BBox, g: &BBox) -> [f64; 4] {
    let (lx, ly) = l.center();
    let (gx, gy) = g.center();
    [
        (gx - lx) / l.width(),
        (gy - ly) / l.height(),
        (g.width() / l.width()).ln(),
        (g.height() / l.height()).ln(),
    ]
}

impl MultiboxInstance {
    pub fn new(predicted: Vec<Prediction>, ground_truth: Vec<GroundTruth>, alpha: f64) -> Result<Self> {
        let inst = Self {
            predicted,
            ground_truth,
            alpha,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn classes(&self) -> usize {
        self.predicted.first().map_or(0, |p| p.confidences.len())
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.classes();
        if self.predicted.is_empty() {
            return Err(Error::InvalidArgument("instance has no predicted boxes".into()));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument(
                "confidences need background plus at least one class".into(),
            ));
        }
        for (i, p) in self.predicted.iter().enumerate() {
            if p.confidences.len() != classes {
                return Err(Error::Shape(format!(
                    "box {i} has {} confidences, expected {classes}",
                    p.confidences.len()
                )));
            }
            let sum: f64 = p.confidences.iter().sum();
            if p.confidences.iter().any(|c| !c.is_finite() || *c < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "box {i} confidences are not a distribution"
                )));
            }
        }
        for (j, g) in self.ground_truth.iter().enumerate() {
            if g.class == BACKGROUND || g.class >= classes {
                return Err(Error::InvalidArgument(format!(
                    "ground truth {j} class {} outside 1..{}",
                    g.class,
                    classes - 1
                )));
            }
            if !(g.bbox.area() > 0.0) {
                return Err(Error::InvalidArgument(format!("ground truth {j} has zero area")));
            }
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn matches(&self) -> Result<MatchMatrix> {
        let boxes: Vec<BBox> = self.predicted.iter().map(|p| p.bbox).collect();
        match_boxes(&boxes, &self.ground_truth)
    }
}

/// Cross-entropy of every box: matched boxes against their ground-truth
/// class, unmatched ones against background.
pub fn confidence_loss(instance: &MultiboxInstance) -> Result<f64> {
    instance.validate()?;
    Ok(confidence_loss_matched(instance, &instance.matches()?))
}

fn confidence_loss_matched(instance: &MultiboxInstance, m: &MatchMatrix) -> f64 {
    instance
        .predicted
        .iter()
        .zip(&m.assignment)
        .map(|(p, a)| {
            let target = a.map_or(BACKGROUND, |j| instance.ground_truth[j].class);
            -p.confidences[target].max(PROBABILITY_FLOOR).ln()
        })
        .sum()
}

pub fn localization_loss(instance: &MultiboxInstance) -> Result<f64> {
    instance.validate()?;
    Ok(localization_loss_matched(instance, &instance.matches()?))
}

fn localization_loss_matched(instance: &MultiboxInstance, m: &MatchMatrix) -> f64 {
    m.pairs()
        .map(|(i, j)| {
            encode_offsets(&instance.predicted[i].bbox, &instance.ground_truth[j].bbox)
                .iter()
                .map(|d| smooth_l1(*d))
                .sum::<f64>()
        })
        .sum()
}

/// `(L_conf + α·L_loc) / N`, or 0 when nothing matched.
pub fn total_loss(instance: &MultiboxInstance) -> Result<f64> {
    instance.validate()?;
    let m = instance.matches()?;
    let n = m.n();
    if n == 0 {
        return Ok(0.0);
    }
    let conf = confidence_loss_matched(instance, &m);
    let loc = localization_loss_matched(instance, &m);
    Ok((conf + instance.alpha * loc) / n as f64)
}
