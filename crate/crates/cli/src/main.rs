use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use bact_cli::commands::{self, EvalSplit, SweepAxis};
use bact_cli::config::{ExperimentConfig, Overrides};
use bact_core::acquisition::ClipStrategy;
use bact_core::active_loop::{RoundHistory, VideoStrategy};
use bact_core::dataset::FeatureFormat;
use bact_core::uncertainty::AcquisitionFn;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "bact",
    version,
    about = "Boundary-centric clip-budgeted active learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Experiment seed (loop, predictor and oracle streams).
    #[arg(long)]
    seed: Option<u64>,
    /// Label budget as a percentage of training frames.
    #[arg(long)]
    budget_pct: Option<f64>,
    /// Clip selection: bact | random | entropy | equidistant | split_random |
    /// split_entropy | coreset.
    #[arg(long)]
    strategy: Option<ClipStrategy>,
    /// Video selection: uncertainty | random.
    #[arg(long)]
    video_strategy: Option<VideoStrategy>,
    /// Acquisition function: entropy | bald | power_bald[:beta] | jsd |
    /// variation_ratio.
    #[arg(long)]
    acq_fn: Option<AcquisitionFn>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            budget_pct: self.budget_pct,
            strategy: self.strategy,
            video_strategy: self.video_strategy,
            acq_fn: self.acq_fn,
        })?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Binary,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment with the simulated annotator.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory for history.json, history.csv and selections.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Save the model of every round under <out>/checkpoints.
        #[arg(long)]
        checkpoints: bool,
    },
    /// Run one experiment per configuration of a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "ablations")]
        axis: SweepAxis,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Serve the annotation API while the experiment waits for human labels.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Where to export results once the experiment completes.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop the server when the experiment finishes.
        #[arg(long)]
        exit_when_done: bool,
    },
    /// Score a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: EvalSplit,
        /// Also write the report to this JSON file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the configured synthetic benchmark in the dataset layout.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
}

fn print_history(history: &[RoundHistory]) {
    println!("round  labels  acc     edit    f1@10   f1@25   f1@50");
    for h in history {
        match &h.metrics {
            Some(m) => println!(
                "{:>5}  {:>6}  {:>6.2}  {:>6.2}  {:>6.2}  {:>6.2}  {:>6.2}",
                h.round,
                h.labeled_before,
                m.accuracy,
                m.edit,
                m.f1_at(10).unwrap_or(f64::NAN),
                m.f1_at(25).unwrap_or(f64::NAN),
                m.f1_at(50).unwrap_or(f64::NAN),
            ),
            None => println!(
                "{:>5}  {:>6}  (no labeled test videos)",
                h.round, h.labeled_before
            ),
        }
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            common,
            out,
            checkpoints,
        } => {
            let cfg = common.load()?;
            let history = commands::run(&cfg, &out, checkpoints)?;
            print_history(&history);
        }
        Command::Sweep { common, axis, out } => {
            let cfg = common.load()?;
            for (name, rows) in commands::run_sweep(&cfg, axis, &out)? {
                println!("{name}: {} rows", rows.len());
            }
        }
        Command::Serve {
            common,
            addr,
            out,
            exit_when_done,
        } => {
            let cfg = common.load()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(commands::serve(cfg, addr, out, exit_when_done))?;
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            out,
        } => {
            let cfg = common.load()?;
            let report = commands::eval(&cfg, &checkpoint, split)?;
            let json = serde_json::to_string_pretty(&report)?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(&path, json + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::GenData {
            common,
            out,
            format,
        } => {
            let cfg = common.load()?;
            let format = match format {
                Format::Binary => FeatureFormat::Binary,
                Format::Csv => FeatureFormat::Csv,
            };
            let ds = commands::gen_data(&cfg, &out, format)?;
            println!(
                "wrote {} videos ({} classes) to {}",
                ds.videos().len(),
                ds.num_classes(),
                out.display()
            );
        }
    }
    Ok(())
}
