use std::path::PathBuf;
use std::process::ExitCode;

use cbcnas_cli::report::Report;
use cbcnas_cli::{cmd_search, cmd_train_discovered, cmd_train_supernet, CommonArgs};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cbcnas",
    version,
    about = "Super-network training and coordinate-descent architecture search"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<Common> for CommonArgs {
    fn from(c: Common) -> Self {
        CommonArgs {
            config: c.config,
            seed: c.seed,
            out: c.out,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Jointly train all sub-networks of the super-network.
    TrainSupernet(Common),
    /// Search the trained super-network for an architecture meeting the target.
    Search {
        #[command(flatten)]
        common: Common,
        /// Super-network weights (default: <out>/supernet.weights.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the discovered architecture.
    TrainDiscovered {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Trajectory or architecture file (default: <out>/trajectory.json).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Print accuracy, cost, time breakdown and CO2 for a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// GPU-hours for the CO2 line (default: total wall-clock hours).
        #[arg(long)]
        gpu_hours: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<String, Box<dyn std::error::Error>> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()?;
    }
    Ok(match cli.command {
        Command::TrainSupernet(c) => serde_json::to_string_pretty(&cmd_train_supernet(&c.into())?)?,
        Command::Search { common, checkpoint } => {
            serde_json::to_string_pretty(&cmd_search(&common.into(), checkpoint.as_deref())?)?
        }
        Command::TrainDiscovered {
            common,
            checkpoint,
            trajectory,
        } => serde_json::to_string_pretty(&cmd_train_discovered(
            &common.into(),
            checkpoint.as_deref(),
            trajectory.as_deref(),
        )?)?,
        Command::Report { out, gpu_hours } => Report::load(&out, gpu_hours)?.render(),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
