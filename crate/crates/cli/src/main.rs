use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

mod commands;
mod config;

use commands::{pretty, Context, Failure};

#[derive(Parser)]
#[command(name = "gfspec", version, about = "Growth-fragmentation semigroups: criteria, Monte Carlo, finite volumes and spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "GFSPEC_THREADS")]
    threads: Option<usize>,
    /// Output directory for CSV and JSON files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Lyapunov criteria and assumption checks.
    Check,
    /// Monte Carlo estimate of the semigroup.
    Simulate,
    /// Finite-volume solution from a point mass.
    Pde,
    /// Principal eigenelements and the bound on lambda0.
    Spectral,
    /// Fleming–Viot estimate of the quasi-stationary objects.
    Qsd,
    /// Fit of the convergence rate towards the asymptotic profile.
    Converge,
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprint!("{}", pretty(&json!({"error": kind, "message": message})));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("ConfigError", e.to_string(), 2),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("ConfigError", format!("--threads: {e}"), 2);
        }
    }
    let Some(path) = cli.config.as_deref() else {
        return fail("ConfigError", "--config is required".into(), 2);
    };
    let loaded = match config::load(path) {
        Ok(l) => l,
        Err(e) => return fail("ConfigError", e.0, 2),
    };
    let ctx = Context { seed: cli.seed.unwrap_or(loaded.config.run.seed), loaded: &loaded, out: cli.out.as_deref() };
    let outcome = match cli.command {
        Command::Check => commands::check(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Pde => commands::pde(&ctx),
        Command::Spectral => commands::spectral(&ctx),
        Command::Qsd => commands::qsd(&ctx),
        Command::Converge => commands::converge(&ctx),
    };
    match outcome {
        Ok(v) => {
            print!("{}", pretty(&v));
            ExitCode::SUCCESS
        }
        Err(Failure::Criterion(v)) => {
            print!("{}", pretty(&v));
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => fail("ConfigError", e.0, 2),
        Err(Failure::Numeric(e)) => fail(e.kind(), e.to_string(), 1),
        Err(Failure::Io(m)) => fail("IoError", m, 1),
    }
}
