mod commands;
mod config;
mod output;

use clap::{ArgAction, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "gls-adapt", version, about = "Importance-weighted domain adaptation experiments")]
struct Cli {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Also write `*.raw.csv` sidecars with round-trip precision.
    #[arg(long, global = true)]
    full_precision: bool,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a source/target pair of Gaussian domains.
    Generate(commands::generate::GenerateArgs),
    /// Train one or more algorithms over several seeds.
    Train(commands::train::TrainCmdArgs),
    /// Base-versus-weighted gains over a suite of label-shift tasks.
    SweepJsd(commands::sweep::SweepArgs),
    /// Estimate importance weights from prediction files.
    EstimateWeights(commands::estimate::EstimateArgs),
    /// Evaluate the bound checks on a representation and its predictions.
    VerifyBounds(commands::verify::VerifyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = config::Settings::load(cli.config.as_deref()).and_then(|settings| {
        let ctx = commands::Context {
            settings,
            full_precision: cli.full_precision,
            jobs: cli.jobs.max(1),
        };
        match &cli.command {
            Command::Generate(a) => commands::generate::run(&ctx, a),
            Command::Train(a) => commands::train::run(&ctx, a),
            Command::SweepJsd(a) => commands::sweep::run(&ctx, a),
            Command::EstimateWeights(a) => commands::estimate::run(&ctx, a),
            Command::VerifyBounds(a) => commands::verify::run(&ctx, a),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
