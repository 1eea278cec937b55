use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use handover::classifier::{evaluate, train, LabeledWindow, TrainedModel};
use handover::fusion::replay;
use handover::harness::{self, ExperimentConfig};
use handover::synth::{generate_dataset, generate_scenario_with};
use handover::ActionClass;

#[derive(Parser)]
#[command(
    name = "handover",
    version,
    about = "Torque/vision release pipeline for robot-to-human handover"
)]
struct Cli {
    /// Root seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config as JSON; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Run without the thread pool (results are identical).
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled torque-window dataset, or one scenario's streams.
    Synth {
        #[arg(long)]
        per_class: Option<usize>,
        /// Torque noise sigma, N·m.
        #[arg(long)]
        noise: Option<f64>,
        /// Dump the sensor streams of one scenario of this action instead.
        #[arg(long)]
        scenario: Option<String>,
        /// Output file; defaults to <out-dir>/dataset.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the classifier on a JSONL dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to <out-dir>/model.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print the confusion matrix of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the full trial protocol and write every artifact to --out-dir.
    Simulate {
        /// Use this model instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Re-run the state machine over an episode log and verify it.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.sequential {
        cfg.execution = handover::Execution::Sequential;
    }
    Ok(cfg)
}

fn read_dataset(path: &Path) -> Result<Vec<LabeledWindow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth {
            per_class,
            noise,
            scenario,
            out,
        } => {
            if let Some(n) = noise {
                cfg.signature.noise_sigma = n;
            }
            let out = out.unwrap_or_else(|| cli.out_dir.join(harness::DATASET_FILE));
            ensure_parent(&out)?;
            if let Some(name) = scenario {
                let action = ActionClass::parse(&name)?;
                let script = generate_scenario_with(&cfg.signature, action, &cfg.faults, cfg.scenario_seed(action, 0))?;
                harness::write_jsonl(&out, &script.events())?;
                println!(
                    "{action} scenario: {} stream events -> {}",
                    script.events().len(),
                    out.display()
                );
            } else {
                let per_class = per_class.unwrap_or(cfg.per_class);
                let data = generate_dataset(&cfg.signature, per_class, cfg.dataset_seed())?;
                harness::write_jsonl(&out, &data)?;
                println!("{} windows -> {}", data.len(), out.display());
            }
        }
        Command::Train { dataset, out, epochs } => {
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let data = read_dataset(&dataset)?;
            let (model, report) = train(&data, &cfg.training_config())?;
            let out = out.unwrap_or_else(|| cli.out_dir.join(harness::MODEL_FILE));
            ensure_parent(&out)?;
            model.save(&out)?;
            let report_path = out.with_file_name("training.json");
            fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            for e in &report.epochs {
                println!(
                    "epoch {:>3}  loss {:.4}  train {:.3}  held-out {:.3}",
                    e.epoch, e.loss, e.train_accuracy, e.held_out_accuracy
                );
            }
            print!("{}", report.confusion.render());
            println!("model -> {}  ({:.1}s)", out.display(), report.wall_clock_seconds);
        }
        Command::Eval { model, dataset } => {
            let model = TrainedModel::load(&model)?;
            let data = read_dataset(&dataset)?;
            let m = evaluate(&model, &data, cfg.execution)?;
            print!("{}", m.render());
            fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join("eval.json");
            let json = serde_json::json!({
                "windows": data.len(),
                "accuracy": m.accuracy(),
                "confusion": m,
            });
            fs::write(&path, serde_json::to_string_pretty(&json)?)?;
            println!("report -> {}", path.display());
        }
        Command::Simulate { model, trials } => {
            if let Some(m) = model {
                cfg.model_path = Some(m);
            }
            if let Some(t) = trials {
                cfg.trials_per_action = t;
            }
            let summary = harness::simulate(&cfg, &cli.out_dir)?;
            print!("{}", summary.report_text);
            println!("artifacts -> {}", cli.out_dir.display());
            if !summary.table.gates_passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Replay { log } => {
            let text = fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let summary = replay(&text)?;
            for o in &summary.outcomes {
                println!(
                    "{:<10} {:<12} released={:<5} success={:<5} at={}",
                    o.action.name(),
                    o.pipeline.name(),
                    o.released,
                    o.success,
                    o.release_time.map_or("-".to_string(), |t| format!("{t}ms"))
                );
            }
            println!("{} episode(s) reproduced", summary.episodes);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain()
                .any(|c| matches!(c.downcast_ref(), Some(handover::Error::Replay(_))))
            {
                return ExitCode::from(3);
            }
            ExitCode::FAILURE
        }
    }
}
