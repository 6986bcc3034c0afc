use std::path::PathBuf;
use std::process::ExitCode;

use anclab::commands::{self, RunOptions};
use anclab::{ExperimentConfig, LabError, Profile};
use clap::{Parser, Subcommand};

/// Desk-scale active noise control lab.
#[derive(Debug, Parser)]
#[command(name = "anclab", version)]
struct Cli {
    /// Experiment config JSON, merged over the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in starting point for the config.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single-threaded, byte-reproducible outputs (runtime_ms is recorded as 0).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Config override, e.g. `--set schedule.batch_size=8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=JSON")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate and export the primary and secondary paths.
    Rir,
    /// Build the train and test datasets.
    Synth,
    /// Train the CRN controller.
    Train,
    /// Evaluate FxLMS on the test set.
    Baseline,
    /// Evaluate a CRN checkpoint on the test set.
    Eval {
        /// Defaults to `<out>/train/final.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Aggregate eval CSVs into the report tables.
    Report,
    /// Run every stage in order.
    All,
    /// Print the resolved config.
    Config,
}

fn resolve(cli: &Cli) -> anclab::Result<ExperimentConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = ExperimentConfig::resolve(cli.profile, cli.config.as_deref(), &overrides)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anclab::Result<()> {
    let cfg = resolve(cli)?;
    let opts = RunOptions {
        deterministic: cli.deterministic,
    };
    match &cli.command {
        Command::Rir => commands::run_rir(&cfg).map(drop),
        Command::Synth => commands::run_synth(&cfg),
        Command::Train => commands::run_train(&cfg).map(drop),
        Command::Baseline => commands::run_baseline(&cfg, opts).map(drop),
        Command::Eval { checkpoint } => commands::run_eval(&cfg, opts, checkpoint.as_deref()).map(drop),
        Command::Report => commands::run_report(&cfg.output_dir).map(drop),
        Command::All => commands::run_all(&cfg, opts).map(drop),
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                eprintln!("the last completed epoch's checkpoint, if any, is in the train/ directory");
            }
            ExitCode::from(LabError::exit_code(&e) as u8)
        }
    }
}
