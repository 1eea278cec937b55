//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls into the code under test except for plain accessors.
#![allow(dead_code)]

use std::cmp::Ordering;

use handover::fusion::TorqueEvent;
use handover::multibox::{GroundTruth, MultiboxInstance};
use handover::nn::{cross_entropy_loss, global_avg_pool, softmax, BatchNorm1d, Conv1d, Network, Tensor1D};
use handover::rng::seeded;
use handover::vision::VisionVerdict;
use handover::Execution;
use handover::{BBox, FingerType, FingertipDetection, Millis, ObjectSlab};
use rand::Rng;

/// Same-padded cross-correlation, one output at a time.
pub fn conv_oracle(input: &[Vec<f64>], layer: &Conv1d) -> Vec<Vec<f64>> {
    let len = input[0].len() as isize;
    let k = layer.kernel_size();
    let pad = (k / 2) as isize;
    let mut out = vec![vec![0.0; len as usize]; layer.out_channels()];
    for (o, row) in out.iter_mut().enumerate() {
        for t in 0..len {
            let mut acc = layer.bias()[o];
            for (i, x) in input.iter().enumerate() {
                for tap in 0..k {
                    let src = t + tap as isize - pad;
                    if (0..len).contains(&src) {
                        acc += layer.weight(o, i, tap) * x[src as usize];
                    }
                }
            }
            row[t as usize] = acc;
        }
    }
    out
}

pub struct BnOracle {
    pub out: Vec<Vec<Vec<f64>>>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch statistics over (batch, time) per channel, biased variance.
pub fn batchnorm_oracle(batch: &[Vec<Vec<f64>>], gamma: &[f64], beta: &[f64], eps: f64) -> BnOracle {
    let channels = gamma.len();
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let values: Vec<f64> = batch.iter().flat_map(|x| x[c].iter().copied()).collect();
        let n = values.len() as f64;
        mean[c] = values.iter().sum::<f64>() / n;
        var[c] = values.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n;
    }
    let out = batch
        .iter()
        .map(|x| {
            (0..channels)
                .map(|c| {
                    x[c].iter()
                        .map(|v| gamma[c] * (v - mean[c]) / (var[c] + eps).sqrt() + beta[c])
                        .collect()
                })
                .collect()
        })
        .collect();
    BnOracle { out, mean, var }
}

pub fn gap_oracle(input: &[Vec<f64>]) -> Vec<f64> {
    input.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
}

/// Direct exp / sum, for logits small enough not to overflow.
pub fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn cross_entropy_oracle(p: &[f64], target: usize) -> f64 {
    -(p[target].max(1e-12)).ln()
}

pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let h = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = w * h;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn gt_key(g: &GroundTruth) -> (Vec<f64>, usize) {
    (
        vec![g.bbox.x_min(), g.bbox.y_min(), g.bbox.x_max(), g.bbox.y_max()],
        g.class,
    )
}

/// `a` precedes `b` canonically (box coordinates, then class).
fn canon_before(a: &GroundTruth, b: &GroundTruth) -> bool {
    let (ka, ca) = gt_key(a);
    let (kb, cb) = gt_key(b);
    for (x, y) in ka.iter().zip(&kb) {
        match x.total_cmp(y) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    ca < cb
}

/// Whether candidate `j` is the preferred ground truth for box `i` among
/// `pool`: highest IoU, canonical order on ties.
fn preferred(ious: &[Vec<f64>], gts: &[GroundTruth], i: usize, j: usize, pool: &[usize]) -> bool {
    pool.iter()
        .all(|&k| k == j || ious[i][j] > ious[i][k] || (ious[i][j] == ious[i][k] && !canon_before(&gts[k], &gts[j])))
}

/// Enumerates every assignment of boxes to `None | Some(gt)` and keeps those
/// satisfying the matching rules stated as predicates.
pub fn exhaustive_matches(predicted: &[BBox], gts: &[GroundTruth]) -> Vec<Vec<Option<usize>>> {
    let p = predicted.len();
    let g = gts.len();
    let ious: Vec<Vec<f64>> = predicted
        .iter()
        .map(|b| gts.iter().map(|t| iou_oracle(b, &t.bbox)).collect())
        .collect();
    // best box of each ground truth, first index on ties
    let best_box: Vec<usize> = (0..g)
        .map(|j| {
            (0..p)
                .filter(|&i| (0..p).all(|k| ious[i][j] >= ious[k][j]))
                .min()
                .unwrap()
        })
        .collect();
    let mut found = Vec::new();
    let total = (g + 1).pow(p as u32);
    for code in 0..total {
        let mut c = code;
        let assign: Vec<Option<usize>> = (0..p)
            .map(|_| {
                let d = c % (g + 1);
                c /= g + 1;
                (d > 0).then(|| d - 1)
            })
            .collect();
        let ok = (0..p).all(|i| {
            let claimants: Vec<usize> = (0..g).filter(|&j| best_box[j] == i).collect();
            if !claimants.is_empty() {
                matches!(assign[i], Some(j) if claimants.contains(&j) && preferred(&ious, gts, i, j, &claimants))
            } else {
                let eligible: Vec<usize> = (0..g).filter(|&j| ious[i][j] >= 0.5).collect();
                match assign[i] {
                    None => eligible.is_empty(),
                    Some(j) => eligible.contains(&j) && preferred(&ious, gts, i, j, &eligible),
                }
            }
        });
        if ok {
            found.push(assign);
        }
    }
    found
}

fn smooth_l1_oracle(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x * x / 2.0
    } else {
        x.abs() - 0.5
    }
}

/// `(L_conf + alpha * L_loc) / N` from an explicit assignment.
pub fn multibox_loss_oracle(inst: &MultiboxInstance, assign: &[Option<usize>]) -> f64 {
    let n = assign.iter().filter(|a| a.is_some()).count();
    if n == 0 {
        return 0.0;
    }
    let mut conf = 0.0;
    let mut loc = 0.0;
    for (p, a) in inst.predicted.iter().zip(assign) {
        let class = a.map_or(0, |j| inst.ground_truth[j].class);
        conf -= p.confidences[class].max(1e-12).ln();
        if let Some(j) = a {
            let l = &p.bbox;
            let g = &inst.ground_truth[*j].bbox;
            let lcx = (l.x_min() + l.x_max()) / 2.0;
            let lcy = (l.y_min() + l.y_max()) / 2.0;
            let gcx = (g.x_min() + g.x_max()) / 2.0;
            let gcy = (g.y_min() + g.y_max()) / 2.0;
            let d = [
                (gcx - lcx) / l.width(),
                (gcy - lcy) / l.height(),
                (g.width() / l.width()).ln(),
                (g.height() / l.height()).ln(),
            ];
            loc += d.iter().map(|v| smooth_l1_oracle(*v)).sum::<f64>();
        }
    }
    (conf + inst.alpha * loc) / n as f64
}

/// Counts qualifying fingertips the slow way.
pub fn vision_oracle(dets: &[FingertipDetection], slab: &ObjectSlab, min_conf: f64) -> bool {
    let inside: Vec<&FingertipDetection> = dets
        .iter()
        .filter(|d| d.confidence >= min_conf)
        .filter(|d| d.position_3d[2] >= slab.z_front() && d.position_3d[2] <= slab.z_back())
        .collect();
    inside.len() >= 3 && inside.iter().any(|d| d.finger_type == FingerType::Thumb)
}

/// For each torque event, the index of the vision verdict it pairs with.
pub fn sync_oracle(torque: &[TorqueEvent], vision: &[VisionVerdict], window: Millis) -> Vec<Option<usize>> {
    torque
        .iter()
        .map(|e| {
            let mut best: Option<usize> = None;
            for (k, v) in vision.iter().enumerate() {
                if v.evaluated_at <= e.timestamp
                    && e.timestamp - v.evaluated_at <= window
                    && best.is_none_or(|b| v.evaluated_at >= vision[b].evaluated_at)
                {
                    best = Some(k);
                }
            }
            best
        })
        .collect()
}

/// Relative error with a floor so that near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst deviation per kernel over a batch of randomized cases.
#[derive(Debug, Default)]
pub struct KernelReport {
    pub cases: usize,
    pub conv: f64,
    pub batchnorm_out: f64,
    pub batchnorm_stats: f64,
    pub gap: f64,
    pub softmax: f64,
    pub cross_entropy: f64,
}

impl KernelReport {
    pub fn within(&self, tol: f64, stats_tol: f64) -> bool {
        [
            self.conv,
            self.batchnorm_out,
            self.gap,
            self.softmax,
            self.cross_entropy,
        ]
        .iter()
        .all(|e| *e <= tol)
            && self.batchnorm_stats <= stats_tol
    }
}

fn rows(t: &Tensor1D) -> Vec<Vec<f64>> {
    (0..t.channels()).map(|c| t.row(c).to_vec()).collect()
}

fn random_tensor(rng: &mut impl Rng, channels: usize, len: usize, scale: f64) -> Tensor1D {
    let data = (0..channels * len).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor1D::new(channels, len, data).unwrap()
}

fn max_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `per_kernel` randomized cases for each of the five kernels.
pub fn kernel_cases(seed: u64, per_kernel: usize) -> KernelReport {
    let mut rng = seeded(seed);
    let mut r = KernelReport::default();
    for _ in 0..per_kernel {
        let cin = rng.random_range(1..6);
        let cout = rng.random_range(1..6);
        let k = [1, 3, 5, 7][rng.random_range(0..4)];
        let len = rng.random_range(1..45);
        let w = (0..cout * cin * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let conv = Conv1d::new(cin, cout, k, w, b).unwrap();
        let x = random_tensor(&mut rng, cin, len, 3.0);
        let got = conv.forward(&x).unwrap();
        let want = conv_oracle(&rows(&x), &conv);
        r.conv = r.conv.max(max_diff(got.data(), want.iter().flatten()));
    }
    for _ in 0..per_kernel {
        let c = rng.random_range(1..6);
        let len = rng.random_range(1..20);
        let n = rng.random_range(1..6);
        // include the degenerate one-value-per-channel case
        let (n, len) = if rng.random_bool(0.05) { (1, 1) } else { (n, len) };
        let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eps = 1e-5;
        let bn = BatchNorm1d::from_parts(gamma.clone(), beta.clone(), vec![0.0; c], vec![1.0; c], eps, 0.1).unwrap();
        let shift = rng.random_range(-5.0..5.0);
        let batch: Vec<Tensor1D> = (0..n)
            .map(|_| {
                let mut t = random_tensor(&mut rng, c, len, 2.0);
                t.data_mut().iter_mut().for_each(|v| *v += shift);
                t
            })
            .collect();
        let (out, cache) = bn.forward_train(&batch).unwrap();
        let want = batchnorm_oracle(&batch.iter().map(rows).collect::<Vec<_>>(), &gamma, &beta, eps);
        r.batchnorm_out = r.batchnorm_out.max(max_diff(
            out.iter().flat_map(|t| t.data()),
            want.out.iter().flatten().flatten(),
        ));
        r.batchnorm_stats = r
            .batchnorm_stats
            .max(max_diff(&cache.stats.mean, &want.mean))
            .max(max_diff(&cache.stats.var, &want.var));
        // normalized output has mean beta and variance gamma^2 var/(var+eps)
        for ch in 0..c {
            let ys: Vec<f64> = out.iter().flat_map(|t| t.row(ch).iter().copied()).collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64;
            let target_v = gamma[ch].powi(2) * want.var[ch] / (want.var[ch] + eps);
            r.batchnorm_stats = r.batchnorm_stats.max((m - beta[ch]).abs()).max((v - target_v).abs());
        }
    }
    for _ in 0..per_kernel {
        let c = rng.random_range(1..8);
        let len = rng.random_range(1..50);
        let x = random_tensor(&mut rng, c, len, 10.0);
        let got = global_avg_pool(&x).unwrap();
        r.gap = r.gap.max(max_diff(&got, &gap_oracle(&rows(&x))));
    }
    for _ in 0..per_kernel {
        let k = rng.random_range(2..10);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let p = softmax(&z);
        r.softmax = r.softmax.max(max_diff(&p, &softmax_oracle(&z)));
        r.softmax = r.softmax.max((p.iter().sum::<f64>() - 1.0).abs());
        let t = rng.random_range(0..k);
        let ce = cross_entropy_loss(&p, t).unwrap();
        r.cross_entropy = r.cross_entropy.max((ce - cross_entropy_oracle(&p, t)).abs());
        // against the log-softmax identity as well
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        if p[t] > 1e-12 {
            r.cross_entropy = r.cross_entropy.max((ce - (lse - z[t])).abs());
        }
    }
    r.cases = 5 * per_kernel;
    r
}

/// Small seeded network with non-trivial biases and batchnorm affine terms.
pub fn small_network(seed: u64) -> Network {
    let mut rng = seeded(seed);
    let mut net = Network::he_uniform(2, &[4, 5], 3, 4, &mut rng).unwrap();
    let mut slices = net.parameters_mut();
    // tape order per block: conv weights, conv bias, gamma, beta; then head
    for (i, s) in slices.iter_mut().enumerate() {
        let kind = if i >= 8 { i - 4 } else { i % 4 };
        for v in s.iter_mut() {
            match kind {
                1 | 5 => *v = rng.random_range(-0.2..0.2),
                2 => *v = rng.random_range(0.5..1.5),
                3 => *v = rng.random_range(-0.5..0.5),
                _ => {}
            }
        }
    }
    net
}

pub struct GradCheck {
    pub coordinates: usize,
    pub worst: f64,
}

/// Central differences on `coordinates` parameters drawn without
/// replacement.
pub fn gradcheck(seed: u64, coordinates: usize, h: f64) -> GradCheck {
    let net = small_network(seed);
    let mut rng = seeded(seed ^ 0xabcd);
    let n = 6;
    let len = 16;
    let batch: Vec<Tensor1D> = (0..n).map(|_| random_tensor(&mut rng, 2, len, 2.0)).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let analytic = net
        .gradients(&batch, &targets, Execution::Sequential)
        .unwrap()
        .tape
        .to_flat();
    let picks = rand::seq::index::sample(&mut rng, analytic.len(), coordinates.min(analytic.len()));
    let mut worst: f64 = 0.0;
    for idx in picks.iter() {
        let eval = |delta: f64| {
            let mut probe = net.clone();
            let mut off = idx;
            for s in probe.parameters_mut() {
                if off < s.len() {
                    s[off] += delta;
                    break;
                }
                off -= s.len();
            }
            probe.batch_loss(&batch, &targets, Execution::Sequential).unwrap()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(analytic[idx], numeric));
    }
    GradCheck {
        coordinates: picks.len(),
        worst,
    }
}

/// Box with corners on a coarse grid so that equal IoUs and duplicate boxes
/// actually occur.
pub fn grid_box(rng: &mut impl Rng) -> BBox {
    loop {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect();
        let (x0, x1) = (v[0].min(v[1]), v[0].max(v[1]));
        let (y0, y1) = (v[2].min(v[3]), v[2].max(v[3]));
        if x1 > x0 && y1 > y0 {
            return BBox::new(x0, y0, x1, y1).unwrap();
        }
    }
}

fn distribution(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(3) + 1e-9).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Up to `max_pred` predictions and `max_gt` ground truths.
pub fn random_instance(rng: &mut impl Rng, max_pred: usize, max_gt: usize) -> MultiboxInstance {
    use handover::multibox::Prediction;
    let k = rng.random_range(2..6);
    let p = rng.random_range(1..=max_pred);
    let g = rng.random_range(0..=max_gt);
    let predicted = (0..p)
        .map(|_| Prediction {
            bbox: grid_box(rng),
            confidences: distribution(rng, k),
        })
        .collect();
    let ground_truth = (0..g)
        .map(|_| GroundTruth {
            bbox: grid_box(rng),
            class: rng.random_range(1..k),
        })
        .collect();
    let alpha = [0.0, 0.5, 1.0, 2.0][rng.random_range(0..4)];
    MultiboxInstance::new(predicted, ground_truth, alpha).unwrap()
}

/// Every ground truth reproduced exactly with a one-hot confidence, plus
/// background boxes that overlap nothing much.
pub fn perfect_instance(rng: &mut impl Rng) -> MultiboxInstance {
    use handover::multibox::Prediction;
    let k = rng.random_range(2..6);
    let one_hot = |c: usize| (0..k).map(|i| if i == c { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let mut gts: Vec<GroundTruth> = Vec::new();
    for _ in 0..rng.random_range(1..4) {
        let b = grid_box(rng);
        if gts.iter().all(|g| g.bbox != b) {
            gts.push(GroundTruth {
                bbox: b,
                class: rng.random_range(1..k),
            });
        }
    }
    let mut predicted: Vec<Prediction> = gts
        .iter()
        .map(|g| Prediction {
            bbox: g.bbox,
            confidences: one_hot(g.class),
        })
        .collect();
    for _ in 0..rng.random_range(0..3) {
        let b = grid_box(rng);
        if gts.iter().all(|g| iou_oracle(&b, &g.bbox) < 0.5) {
            predicted.push(Prediction {
                bbox: b,
                confidences: one_hot(0),
            });
        }
    }
    // shuffle so ground truths are not aligned with box indices
    use rand::seq::SliceRandom;
    predicted.shuffle(rng);
    MultiboxInstance::new(predicted, gts, 1.0).unwrap()
}

/// The 4^5 = 1024 frames over five fingertip slots, each slot absent, thumb
/// inside, other finger inside, or outside the slab. Inside depths land on
/// the slab faces and interior in turn; outside ones alternate finger type
/// and side.
pub fn enumerated_frames(slab: &ObjectSlab) -> Vec<Vec<FingertipDetection>> {
    let (front, back) = (slab.z_front(), slab.z_back());
    let inside = [front, back, 0.5 * (front + back), front, back];
    let bbox = BBox::new(0.4, 0.4, 0.45, 0.45).unwrap();
    let make = |finger, z| FingertipDetection::new(bbox, finger, [0.0, 0.0, z], 0.9, 100).unwrap();
    (0..1024usize)
        .map(|code| {
            (0..5)
                .filter_map(|slot| match (code >> (2 * slot)) & 3 {
                    0 => None,
                    1 => Some(make(FingerType::Thumb, inside[slot])),
                    2 => Some(make(FingerType::Other, inside[slot])),
                    _ => {
                        let finger = if slot % 2 == 0 {
                            FingerType::Thumb
                        } else {
                            FingerType::Other
                        };
                        let z = if slot < 3 { front - 0.01 } else { back + 0.01 };
                        Some(make(finger, z))
                    }
                })
                .collect()
        })
        .collect()
}

/// Release index of a debounced AND machine written out longhand: idle until
/// the first contact, then count consecutive agreeing samples.
pub fn release_index_oracle(contact: &[bool], agree: &[bool], debounce: usize) -> Option<usize> {
    let start = contact.iter().position(|c| *c)?;
    let mut run = 0;
    for (i, a) in agree.iter().enumerate().skip(start) {
        run = if *a { run + 1 } else { 0 };
        if run == debounce {
            return Some(i);
        }
    }
    None
}
