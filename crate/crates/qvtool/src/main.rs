//! `qvtool <command> --config exp.toml [--strict] [--out DIR]`
//!
//! Exit status: 0 on success, 1 on a config or computation error, 2 when
//! `--strict` is given and the verdict is not `Pass`.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Experiment;
use error::CliError;
use qvcore::Verdict;
use report::Reporter;

#[derive(Parser)]
#[command(name = "qvtool", version, about = "Quadratic-variation experiments along partition sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Exit with status 2 unless the verdict is Pass.
    #[arg(long, global = true)]
    strict: bool,

    /// Output directory; overrides `output.dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Discrete QV per level and its limit.
    Qv,
    /// Residual of the Ito formula per level.
    Ito,
    /// QV of a C1 transformation against the formula.
    C1,
    /// QV of an Ito-Foellmer integral against the weighted QV.
    Intqv,
    /// Density of the B-covariation with respect to the scalar QV.
    Density,
    /// Integral plus continuous and pure-jump finite-variation parts.
    Decompose,
    /// Conditions (C), (UC) and left approximation.
    Check,
    /// Export the configured paths as CSV.
    Paths,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Qv => "qv",
            Command::Ito => "ito",
            Command::C1 => "c1",
            Command::Intqv => "intqv",
            Command::Density => "density",
            Command::Decompose => "decompose",
            Command::Check => "check",
            Command::Paths => "paths",
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("QVTOOL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("QVTOOL_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<Verdict, CliError> {
    configure_threads()?;
    let config = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let exp = Experiment::load(config)?;
    let dir = cli.out.clone().or_else(|| exp.config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("qvtool-out"));
    let mut out = Reporter::new(&dir, cli.command.name(), &exp.config_sha256)?;
    let outcome = match cli.command {
        Command::Qv => commands::qv(&exp, &mut out),
        Command::Ito => commands::ito(&exp, &mut out),
        Command::C1 => commands::c1(&exp, &mut out),
        Command::Intqv => commands::intqv(&exp, &mut out),
        Command::Density => commands::density(&exp, &mut out),
        Command::Decompose => commands::decompose(&exp, &mut out),
        Command::Check => commands::check(&exp, &mut out),
        Command::Paths => commands::paths(&exp, &mut out),
    }?;
    println!("{} verdict={:?} {}", cli.command.name(), outcome.verdict, outcome.summary);
    for f in out.written() {
        println!("wrote {}", f.display());
    }
    Ok(outcome.verdict)
}

fn main() -> ExitCode {
    // usage errors share status 1 with config errors; 2 is reserved for --strict
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(v) if cli.strict && v != Verdict::Pass => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qvtool: {e}");
            ExitCode::from(1)
        }
    }
}
