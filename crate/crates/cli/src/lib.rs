//! Batch driver: `rerank`, `evaluate`, `sweep` and `simulate`.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rerank_core::dataio::DEFAULT_RELEVANCE_THRESHOLD;

use crate::commands::EvaluateArgs;
use crate::config::{BudgetArg, Format, Overrides, Resolved};
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "rerank", version, about = "Budget-constrained LLM passage re-ranking")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset path; overrides the config's data path.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Per-query budget in backend cost units, or B1/B2/B3 (cents).
    #[arg(long, global = true)]
    pub budget: Option<BudgetArg>,
    /// Seed mixed into every simulated backend.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-query parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rerank a dataset with the configured pipeline.
    Rerank,
    /// Score a run file against task gold or qrels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RELEVANCE_THRESHOLD)]
        threshold: u32,
        #[arg(long)]
        spend: Option<PathBuf>,
    },
    /// Budget-split × tier-order grid over noisy tiers.
    Sweep,
    /// Generate a synthetic corpus and rerank it.
    Simulate,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            data: self.data.clone(),
            format: self.format,
            budget: self.budget.map(|b| b.0),
            seed: self.seed,
            jobs: self.jobs,
            out: self.out.clone(),
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let res = Resolved::load(cli.common.config.as_deref(), &cli.common.overrides())?;
    match &cli.command {
        Command::Rerank => commands::rerank(&res).map(drop),
        Command::Simulate => commands::simulate(&res).map(drop),
        Command::Sweep => commands::sweep(&res).map(drop),
        Command::Evaluate {
            run,
            qrels,
            threshold,
            spend,
        } => commands::evaluate(
            &res,
            &EvaluateArgs {
                run,
                qrels: qrels.as_deref(),
                threshold: *threshold,
                spend: spend.as_deref(),
            },
        )
        .map(drop),
    }
}
