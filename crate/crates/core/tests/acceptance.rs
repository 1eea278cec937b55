//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits nonzero if any fails.
//!
//!     cargo test --release -p handover --test acceptance

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use handover::classifier::train;
use handover::fusion::{
    run_samples, EpisodeConfig, EpisodeEvent, FusedSample, Pipeline, SyncConfig, SyncOutput, TorqueEvent,
};
use handover::harness::{self, simulate, ExperimentConfig};
use handover::multibox::{match_boxes, total_loss};
use handover::rng::seeded;
use handover::synth::generate_dataset;
use handover::vision::{evaluate_grasp, VisionVerdict};
use handover::{ActionClass, ActionScores, BBox, Result};
use rand::Rng;

const SEED: u64 = 0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn timed(budget: Duration, f: impl FnOnce() -> Result<Outcome>) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut o = match f() {
        Ok(o) => o,
        Err(e) => outcome(false, format!("error: {e}")),
    };
    let took = start.elapsed();
    if took > budget {
        o.passed = false;
        o.detail.push_str(&format!("; over the {}s budget", budget.as_secs()));
    }
    (o, took)
}

fn kernels() -> Result<Outcome> {
    let r = common::kernel_cases(SEED + 1, 220);
    Ok(outcome(
        r.cases >= 1000 && r.within(1e-9, 1e-6),
        format!(
            "{} cases, max err conv {:.1e} bn {:.1e} bn-stats {:.1e} gap {:.1e} softmax {:.1e} ce {:.1e}",
            r.cases, r.conv, r.batchnorm_out, r.batchnorm_stats, r.gap, r.softmax, r.cross_entropy
        ),
    ))
}

fn gradients() -> Result<Outcome> {
    let g = common::gradcheck(SEED + 2, 100, 1e-4);
    Ok(outcome(
        g.coordinates == 100 && g.worst < 1e-4,
        format!("{} coordinates, worst relative error {:.2e}", g.coordinates, g.worst),
    ))
}

fn classifier(model_out: &Path) -> Result<Outcome> {
    let cfg = ExperimentConfig {
        seed: SEED,
        ..ExperimentConfig::default()
    };
    let data = generate_dataset(&cfg.signature, 300, cfg.dataset_seed())?;
    let training = cfg.training_config();
    let (model, report) = train(&data, &training)?;
    model.save(model_out)?;
    Ok(outcome(
        report.held_out_accuracy >= 0.95 && training.epochs == 30,
        format!(
            "held-out accuracy {:.4} on {} windows after {} epochs",
            report.held_out_accuracy, report.held_out_count, training.epochs
        ),
    ))
}

fn multibox() -> Result<Outcome> {
    let mut rng = seeded(SEED + 4);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    let mut ambiguous = 0;
    let n = 600;
    for _ in 0..n {
        let inst = common::random_instance(&mut rng, 6, 3);
        let boxes: Vec<BBox> = inst.predicted.iter().map(|p| p.bbox).collect();
        let want = common::exhaustive_matches(&boxes, &inst.ground_truth);
        if want.len() != 1 {
            ambiguous += 1;
            continue;
        }
        if match_boxes(&boxes, &inst.ground_truth)?.assignment != want[0] {
            mismatches += 1;
        }
        worst = worst.max((total_loss(&inst)? - common::multibox_loss_oracle(&inst, &want[0])).abs());
    }
    let perfect = 200;
    let mut nonzero = 0;
    for _ in 0..perfect {
        if total_loss(&common::perfect_instance(&mut rng))? != 0.0 {
            nonzero += 1;
        }
    }
    Ok(outcome(
        worst <= 1e-12 && mismatches == 0 && ambiguous == 0 && nonzero == 0,
        format!(
            "{n} instances: max loss err {worst:.1e}, {mismatches} match mismatches, {ambiguous} ambiguous; {perfect} perfect instances, {nonzero} nonzero"
        ),
    ))
}

fn vision() -> Result<Outcome> {
    let slab = handover::ObjectSlab::new(0.3, 0.36)?;
    let frames = common::enumerated_frames(&slab);
    let mut wrong = 0;
    for f in &frames {
        if evaluate_grasp(f, &slab, 0.5)?.vote != common::vision_oracle(f, &slab, 0.5) {
            wrong += 1;
        }
    }
    Ok(outcome(
        frames.len() == 1024 && wrong == 0,
        format!("{} configurations, {wrong} disagree", frames.len()),
    ))
}

fn sample(t: u64, tv: bool, vv: bool, fingers: usize) -> Result<FusedSample> {
    let class = if tv { ActionClass::Pull } else { ActionClass::Bump };
    let fingers = if vv { fingers.max(3) } else { fingers };
    FusedSample::new(
        TorqueEvent {
            timestamp: t,
            scores: ActionScores::one_hot(class),
        },
        VisionVerdict::new(fingers, vv, t),
    )
}

fn fusion() -> Result<Outcome> {
    let cfg = EpisodeConfig::default();
    let mut and_violations = 0;
    let mut multi_release = 0;
    let mut oracle_mismatch = 0;
    let mut rng = seeded(SEED + 6);
    let episodes = 2000;
    for _ in 0..episodes {
        let len = rng.random_range(0..40);
        let samples = (0..len)
            .map(|i| {
                sample(
                    25 * i as u64,
                    rng.random_bool(0.7),
                    rng.random_bool(0.7),
                    rng.random_range(0..5),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        and_violations += samples
            .iter()
            .filter(|s| s.fused_vote != (s.torque_vote && s.vision.vote))
            .count();
        let sync = SyncOutput { samples, dropped: 0 };
        for pipeline in Pipeline::ALL {
            let run = run_samples(ActionClass::Pull, pipeline, 0, &sync, &cfg)?;
            let decisions = run
                .log
                .iter()
                .filter(|e| matches!(e, EpisodeEvent::Decision { .. }))
                .count();
            multi_release += usize::from(decisions > 1);
            let contact: Vec<bool> = sync.samples.iter().map(|s| s.contact(pipeline)).collect();
            let agree: Vec<bool> = sync
                .samples
                .iter()
                .map(|s| {
                    let (a, b) = s.votes(pipeline);
                    a && b
                })
                .collect();
            let want = common::release_index_oracle(&contact, &agree, cfg.sync.debounce_frames)
                .map(|i| sync.samples[i].timestamp);
            oracle_mismatch += usize::from(want != run.outcome.release_time);
        }
    }
    let mut table_ok = true;
    for (tv, vv) in [(false, false), (false, true), (true, false), (true, true)] {
        let s = sample(0, tv, vv, 4)?;
        let one = SyncConfig {
            debounce_frames: 1,
            ..SyncConfig::default()
        };
        let released = handover::fusion::Fsm::new()
            .step(&s, &one)?
            .decision
            .is_some_and(|d| d.release());
        table_ok &= s.fused_vote == (tv && vv) && released == (tv && vv);
    }
    let seq = [true, true, false, true, true, true]
        .iter()
        .enumerate()
        .map(|(i, v)| sample(25 * i as u64, *v, *v, 4))
        .collect::<Result<Vec<_>>>()?;
    let run = run_samples(
        ActionClass::Pull,
        Pipeline::Fused,
        0,
        &SyncOutput {
            samples: seq,
            dropped: 0,
        },
        &cfg,
    )?;
    let debounce_ok = run.outcome.release_time == Some(5 * 25);
    Ok(outcome(
        and_violations == 0 && multi_release == 0 && oracle_mismatch == 0 && table_ok && debounce_ok,
        format!(
            "{episodes} random episodes x 3 pipelines: {and_violations} AND violations, {multi_release} multi-release, {oracle_mismatch} FSM mismatches; truth table {}; T,T,F,T,T,T releases at sample {}",
            if table_ok { "ok" } else { "broken" },
            run.outcome.release_time.map_or("never".into(), |t| (t / 25 + 1).to_string())
        ),
    ))
}

fn protocol_config(model: &Path) -> ExperimentConfig {
    ExperimentConfig {
        seed: SEED,
        model_path: Some(model.to_path_buf()),
        ..ExperimentConfig::default()
    }
}

fn protocol(model: &Path, out: &Path, report: &mut String) -> Result<Outcome> {
    let cfg = protocol_config(model);
    let summary = simulate(&cfg, out)?;
    *report = summary.report_text.clone();
    let t = &summary.table;
    let push = t
        .cell(ActionClass::Push, Pipeline::VisionOnly)
        .map_or(usize::MAX, |c| c.success);
    let rate = |p| t.overall[&p].rate;
    let (tq, vi, fu) = (
        rate(Pipeline::TorqueOnly),
        rate(Pipeline::VisionOnly),
        rate(Pipeline::Fused),
    );
    let trials = t.rows.iter().map(|r| r.trials).sum::<usize>();
    Ok(outcome(
        trials == 180 && t.pipelines.len() == 3 && push == 0 && fu >= 0.95 && fu >= tq && fu >= vi,
        format!(
            "{trials} trials x {} pipelines: vision-only push {push}/30; overall torque {:.1}% vision {:.1}% fused {:.1}%",
            t.pipelines.len(),
            100.0 * tq,
            100.0 * vi,
            100.0 * fu
        ),
    ))
}

fn determinism(model: &Path, first: &Path, second: &Path) -> Result<Outcome> {
    simulate(&protocol_config(model), second)?;
    let mut differing = Vec::new();
    for f in [harness::TRIALS_FILE, harness::REPORT_JSON] {
        if fs::read(first.join(f))? != fs::read(second.join(f))? {
            differing.push(f);
        }
    }
    Ok(outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} and {} byte-identical across two runs",
                harness::TRIALS_FILE,
                harness::REPORT_JSON
            )
        } else {
            format!("differ: {}", differing.join(", "))
        },
    ))
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let model: PathBuf = work.path().join(harness::MODEL_FILE);
    let (run_a, run_b) = (work.path().join("a"), work.path().join("b"));
    let mut report = String::new();
    let secs = Duration::from_secs;

    let mut results: Vec<(&str, &str, (Outcome, Duration))> = vec![
        ("AC1", "numeric kernels vs brute force", timed(secs(30), kernels)),
        ("AC2", "gradient check", timed(secs(60), gradients)),
        (
            "AC3",
            "classifier held-out accuracy",
            timed(secs(300), || classifier(&model)),
        ),
        ("AC4", "multibox loss and matching", timed(Duration::MAX, multibox)),
        ("AC5", "vision gate, 1024 configurations", timed(Duration::MAX, vision)),
        ("AC6", "fusion logic", timed(Duration::MAX, fusion)),
    ];
    results.push((
        "AC7",
        "calibrated trial protocol",
        timed(secs(600), || protocol(&model, &run_a, &mut report)),
    ));
    results.push((
        "AC8",
        "simulate determinism",
        timed(Duration::MAX, || determinism(&model, &run_a, &run_b)),
    ));

    let mut failed = 0;
    for (id, name, (o, took)) in &results {
        println!(
            "[{}] {id} {name}: {} ({:.1}s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
        failed += usize::from(!o.passed);
    }
    println!("{}/{} criteria passed", results.len() - failed, results.len());
    if !report.is_empty() {
        println!("\n{report}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
