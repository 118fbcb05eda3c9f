//! `pfsgld`: data generation, gradient-bias sweeps, SGLD runs and their
//! diagnostics. Every output file gets a `<file>.manifest.json` next to it;
//! passing that manifest back as `--config` replays the run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use pfsgld::sgld::ClockMode;

mod commands;
mod config;
mod manifest;

use config::{parse_enum, BiasArgs, Common, ConfigFile, EvaluateArgs, GenerateArgs, IngestArgs, KsdArgs, ReferenceArgs, SgldArgs};

#[derive(Parser, Debug)]
#[command(name = "pfsgld", version, about = "Buffered particle gradients and SGLD for state space models")]
struct Cli {
    /// TOML config, or a JSON run manifest to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `measured` wall time or the deterministic `work` clock.
    #[arg(long, global = true, value_parser = parse_enum::<ClockMode>)]
    clock: Option<ClockMode>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a trajectory from a model.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GenerateArgs,
    },
    /// Cache a high-accuracy full-sequence particle gradient.
    MakeReference {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: ReferenceArgs,
    },
    /// Bias and MSE of buffered gradient estimators over an (S, B, N) grid.
    GradBias {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: BiasArgs,
    },
    /// Run SGLD chains.
    Sgld {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SgldArgs,
    },
    /// Heldout and predictive loglikelihood (and MSE to truth) along chains.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EvaluateArgs,
    },
    /// Kernel Stein discrepancy report over chains.
    Ksd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: KsdArgs,
    },
    /// Turn a price file into demeaned, segmented log-returns.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: IngestArgs,
    },
}

fn run(cli: Cli) -> pfsgld::Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    pfsgld::exec::init_threads(threads);
    let clock = cli.clock.or(file.clock).unwrap_or_default();
    let ctx = |common: Common| commands::Ctx {
        file: file.clone(),
        common,
        threads,
        clock,
    };
    match cli.command {
        Command::Generate { common, args } => commands::generate::run(&ctx(common), &args),
        Command::MakeReference { common, args } => commands::reference::run(&ctx(common), &args),
        Command::GradBias { common, args } => commands::bias::run(&ctx(common), &args),
        Command::Sgld { common, args } => commands::sgld::run(&ctx(common), &args),
        Command::Evaluate { common, args } => commands::evaluate::run(&ctx(common), &args),
        Command::Ksd { common, args } => commands::ksd::run(&ctx(common), &args),
        Command::Ingest { common, args } => commands::ingest::run(&ctx(common), &args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("RUST_LOG").init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
