use std::fs;

use handover::fusion::{replay, Pipeline};
use handover::harness::{self, simulate, ExperimentConfig, ReportTable, TrialRecord};
use handover::{ActionClass, Execution};

fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        trials_per_action: 1,
        per_class: 6,
        ..ExperimentConfig::default()
    };
    cfg.training.filters_per_block = 4;
    cfg.training.epochs = 2;
    cfg.gates.enabled = false;
    cfg
}

#[test]
fn one_trial_per_action_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let summary = simulate(&small_config(2), dir.path()).unwrap();
    for f in [
        harness::MODEL_FILE,
        harness::DATASET_FILE,
        harness::TRIALS_FILE,
        harness::REPORT_TXT,
        harness::REPORT_JSON,
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(summary.training.is_some());
    let trials = fs::read_to_string(dir.path().join(harness::TRIALS_FILE)).unwrap();
    let records: Vec<TrialRecord> = trials.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 6 * 3);

    // every episode log replays to the outcome in trials.jsonl
    for r in &records {
        let log = fs::read_to_string(dir.path().join(&r.episode_log)).unwrap();
        let out = replay(&log).unwrap();
        assert_eq!(out.episodes, 1);
        assert_eq!(
            (out.outcomes[0].success, out.outcomes[0].release_time),
            (r.success, r.release_time)
        );
    }

    // the JSON table, the text table and the records all agree
    let table: ReportTable =
        serde_json::from_str(&fs::read_to_string(dir.path().join(harness::REPORT_JSON)).unwrap()).unwrap();
    let text = fs::read_to_string(dir.path().join(harness::REPORT_TXT)).unwrap();
    for row in &table.rows {
        let line = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(row.action.name()))
            .unwrap();
        let nums: Vec<usize> = line.split_whitespace().skip(1).map(|n| n.parse().unwrap()).collect();
        let mut expected = vec![row.trials];
        for p in &table.pipelines {
            let c = row.cells[p];
            let succ = records
                .iter()
                .filter(|r| r.action == row.action && r.pipeline == *p && r.success)
                .count();
            assert_eq!(c.success, succ);
            assert_eq!(c.success + c.failure, row.trials);
            expected.extend([c.success, c.failure]);
        }
        assert_eq!(nums, expected, "{line}");
    }
    for p in Pipeline::ALL {
        let o = table.overall[&p];
        assert_eq!(o.trials, 6);
        assert_eq!(
            o.successes,
            records.iter().filter(|r| r.pipeline == p && r.success).count()
        );
        assert!(text.contains(&format!("{:>5}%", o.percent)));
    }
}

#[test]
fn sequential_and_parallel_write_identical_bytes() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, exec) in dirs.iter().zip([Execution::Sequential, Execution::Parallel]) {
        let mut cfg = small_config(9);
        cfg.execution = exec;
        cfg.training.execution = exec;
        simulate(&cfg, dir.path()).unwrap();
    }
    for f in [
        harness::MODEL_FILE,
        harness::TRIALS_FILE,
        harness::REPORT_JSON,
        harness::REPORT_TXT,
    ] {
        assert_eq!(
            fs::read(dirs[0].path().join(f)).unwrap(),
            fs::read(dirs[1].path().join(f)).unwrap(),
            "{f}"
        );
    }
    let log = harness::episode_log_name(ActionClass::Push, 0, Pipeline::Fused);
    assert_eq!(
        fs::read(dirs[0].path().join(&log)).unwrap(),
        fs::read(dirs[1].path().join(&log)).unwrap()
    );
}

#[test]
fn saved_model_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let first = simulate(&small_config(4), &dir.path().join("a")).unwrap();
    assert!(first.training.is_some());
    let mut cfg = small_config(4);
    cfg.model_path = Some(dir.path().join("a").join(harness::MODEL_FILE));
    cfg.train_if_missing = false;
    let second = simulate(&cfg, &dir.path().join("b")).unwrap();
    assert!(second.training.is_none());
    assert_eq!(first.table, second.table);
}
