mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, EvalTarget};
use config::{Profile, RunConfig};
use wakerl::pretrain::DatasetSize;

/// Wake-steering yaw control: turbulence and expert-data generation,
/// pretraining, online SAC training, evaluation and the full sweep.
#[derive(Debug, Parser)]
#[command(name = "wakerl", version)]
struct Cli {
    /// JSON configuration laid over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    /// Restrict the run to a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset size: None, Small, Medium or Large.
    #[arg(long, global = true)]
    size: Option<DatasetSize>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate training and held-out turbulence boxes plus a manifest.
    GenTurbulence,
    /// Generate the expert dataset for --size.
    GenExpert,
    /// Pretrain fresh agents on the --size dataset.
    Pretrain,
    /// Pretrain (if needed) and train online, writing snapshots.
    Train,
    /// Evaluate snapshots of --size, or a baseline controller.
    Evaluate {
        /// greedy or lut
        #[arg(long)]
        baseline: Option<EvalTarget>,
    },
    /// Run every stage for all sizes and seeds.
    Sweep,
    /// Merge all evaluations into one report.
    Report,
    /// Print the effective configuration.
    ShowConfig,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.profile, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(size) = cli.size {
        cfg.size = size;
        cfg.sizes = vec![size];
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    let ctx = Ctx::new(cfg)?;
    let size = ctx.cfg.size;
    match cli.command {
        Command::GenTurbulence => {
            ctx.gen_turbulence()?;
        }
        Command::GenExpert => {
            ctx.gen_expert(size)?;
        }
        Command::Pretrain => ctx.pretrain(size)?,
        Command::Train => ctx.train(&[size])?,
        Command::Evaluate { baseline } => {
            ctx.evaluate(&baseline.unwrap_or(EvalTarget::Snapshots(size)))?
        }
        Command::Sweep => {
            ctx.sweep()?;
        }
        Command::Report => {
            ctx.report()?;
        }
        Command::ShowConfig => println!("{}", serde_json::to_string_pretty(&ctx.cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
