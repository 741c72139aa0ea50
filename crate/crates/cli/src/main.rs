//! Experiment runner: every operation family as a subcommand with
//! reproducible CSV artifacts. Exit codes: 0 all asserted invariants pass,
//! 1 configuration or I/O error, 2 assertion failure (failures.csv written),
//! 64 unknown subcommand.

mod config;
mod report;
mod runner;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sselab",
    version,
    about = "Stochastic Schrodinger observability laboratory",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory (default: output.directory from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override mc.base_seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for path-parallel sections (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward SPDE simulation summary (optionally dumps a trajectory)
    Simulate(RunArgs),
    /// Pointwise multiplier/fundamental identity residuals + integrated dM
    VerifyIdentity(RunArgs),
    /// Carleman weight bound scan (ℓ_t, ℓ_tt ratios, D bound, c-form coercivity)
    WeightBounds(RunArgs),
    /// Both sides of the Carleman estimate over the (s, λ) grid
    CarlemanScan(RunArgs),
    /// Observability quotients over the seeded initial ensemble
    Observability(RunArgs),
    /// Hidden-regularity (converse) quotient
    HiddenReg(RunArgs),
    /// Two-sided energy estimate worst ratio
    EnergyCheck(RunArgs),
    /// Unique-continuation boundary energy floor
    UcpScan(RunArgs),
    /// Stability constant of the semilinear observation map
    StabilityScan(RunArgs),
    /// Pathwise Tikhonov reconstruction (inverse-crime mode)
    Reconstruct(RunArgs),
}

impl Command {
    fn split(self) -> (&'static str, RunArgs) {
        match self {
            Command::Simulate(a) => ("simulate", a),
            Command::VerifyIdentity(a) => ("verify-identity", a),
            Command::WeightBounds(a) => ("weight-bounds", a),
            Command::CarlemanScan(a) => ("carleman-scan", a),
            Command::Observability(a) => ("observability", a),
            Command::HiddenReg(a) => ("hidden-reg", a),
            Command::EnergyCheck(a) => ("energy-check", a),
            Command::UcpScan(a) => ("ucp-scan", a),
            Command::StabilityScan(a) => ("stability-scan", a),
            Command::Reconstruct(a) => ("reconstruct", a),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = err.print();
                    return ExitCode::SUCCESS;
                }
                ErrorKind::InvalidSubcommand | ErrorKind::UnknownArgument => 64,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let (name, args) = cli.command.split();
    if let Some(k) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("sselab: cannot configure {k} threads: {e}");
            return ExitCode::from(1);
        }
    }

    let mut cfg = match config::load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("sselab: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = args.seed {
        cfg.mc.base_seed = seed;
    }
    let out_dir = runner::default_out_dir(&cfg, args.out.as_deref());
    let ctx = runner::RunContext { cfg, out_dir };

    match runner::run(name, &ctx) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("sselab {name}: assertion failure, see failures.csv in {}", ctx.out_dir.display());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("sselab {name}: {e}");
            ExitCode::from(1)
        }
    }
}
