use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kpo_cli::{run, Command, Options, RunConfig};

#[derive(Parser)]
#[command(name = "kposim", version, about = "Kerr parametric oscillator simulations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Fock-space dimension, overriding the config.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Readout RNG seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Continue a sweep from its checkpoint in --out.
    #[arg(long, global = true)]
    resume: bool,
    /// Average sweep points over four drive phases.
    #[arg(long, global = true)]
    theta_average: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Eigenenergies, excitation energies and the E_02 calibration.
    Spectrum,
    /// Single-point bit-flip time.
    Bitflip,
    /// Detuning by power grid of bit-flip times.
    Sweep,
    /// Emulated multiplexed readout: spectrum, IQ histograms, quadrants.
    ReadoutDemo,
    /// Pump-detuning collisions of a coupled pair.
    CollisionReport,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Bitflip => Command::Bitflip,
        Cmd::Sweep => Command::Sweep,
        Cmd::ReadoutDemo => Command::ReadoutDemo,
        Cmd::CollisionReport => Command::CollisionReport,
    };
    let Some(path) = cli.config else {
        eprintln!("config error: --config is required");
        return ExitCode::from(kpo_cli::EXIT_CONFIG as u8);
    };
    let opts = Options {
        out: cli.out,
        parallel: cli.parallel,
        dim: cli.dim,
        seed: cli.seed,
        resume: cli.resume,
        theta_average: cli.theta_average,
    };
    let result = RunConfig::load(&path).and_then(|cfg| {
        for w in cfg.warnings() {
            eprintln!("{w}");
        }
        run(command, &cfg, &opts)
    });
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
