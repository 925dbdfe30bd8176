use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use riser::config::{ExperimentConfig, WORKDIR_ENV};
use riser::experiment::{self, Stage, Subset};
use riser::metrics::SummaryRow;
use riser::train::Mode;

#[derive(Parser)]
#[command(name = "riser", version, about = "Generative recommendation with RL item-space exploration")]
struct Cli {
    /// TOML experiment config; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `gen.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = WORKDIR_ENV)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic catalog and data splits.
    GenData {
        #[arg(long)]
        force: bool,
    },
    /// Run SFT or RL training.
    Train {
        #[arg(long, default_value = "sft")]
        stage: Stage,
        /// Overrides `rl.mode`.
        #[arg(long)]
        mode: Option<Mode>,
        /// Continue an interrupted RL run from its last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate checkpoints on the test split and write summary.csv.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        split: Subset,
    },
    /// Run the component ladder from a shared SFT checkpoint; writes ablation.csv.
    Ablate,
}

fn print_rows(rows: &[SummaryRow], cutoffs: &[usize]) -> riser::Result<()> {
    let mut out = std::io::stdout().lock();
    riser::metrics::write_summary(&mut out, rows, cutoffs)
}

fn run(cli: Cli) -> riser::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.gen.seed = seed;
    }
    if let Some(dir) = cli.workdir {
        cfg.paths.workdir = dir;
    }
    match cli.command {
        Command::GenData { force } => {
            for file in experiment::cmd_gen_data(&cfg, force)? {
                println!("{}", file.display());
            }
        }
        Command::Train { stage, mode, resume } => {
            if let Some(mode) = mode {
                cfg.rl.mode = mode;
            }
            experiment::cmd_train(&cfg, stage, resume)?;
        }
        Command::Eval { checkpoint, split } => {
            let rows = experiment::cmd_eval(&cfg, checkpoint.as_deref(), split)?;
            print_rows(&rows, &cfg.eval.cutoffs)?;
        }
        Command::Ablate => {
            let rows = experiment::cmd_ablate(&cfg)?;
            print_rows(&rows, &cfg.eval.cutoffs)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
