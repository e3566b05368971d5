use std::path::PathBuf;
use std::process::ExitCode;

use bolus_sim::cli::{self, Command, Options};
use clap::{Args, Parser, Subcommand};

/// Bolus transport and digestion along the small intestine.
#[derive(Parser)]
#[command(name = "bolus", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one bolus to the ileum and write its trajectory.
    Run(Common),
    /// One-at-a-time parameter perturbation sweep.
    Sensitivity(Common),
    /// Pulse-resolved versus averaged transport, with error table.
    HomogCompare(Common),
    /// Starch meal evaluation against the reference ileal output.
    EvaluateStarch(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [env: BOLUS_OUT_DIR]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long)]
    jobs: Option<usize>,
    /// Accepted for compatibility; every run is deterministic.
    #[arg(long)]
    seedless: bool,
    /// Parse and check the scenario, then exit.
    #[arg(long)]
    validate_only: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Run(c) => (Command::Run, c),
        Cmd::Sensitivity(c) => (Command::Sensitivity, c),
        Cmd::HomogCompare(c) => (Command::HomogCompare, c),
        Cmd::EvaluateStarch(c) => (Command::EvaluateStarch, c),
    };
    let _ = common.seedless;
    let opts = Options {
        config: common.config,
        out: common.out,
        jobs: common.jobs,
        validate_only: common.validate_only,
    };
    match cli::execute(command, &opts) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: a run or audit did not pass");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
