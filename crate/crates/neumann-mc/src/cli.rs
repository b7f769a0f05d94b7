//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ExperimentConfig, Format};
use crate::error::AppResult;
use crate::output::{Metadata, Report};
use crate::run::{self, Runtime};

#[derive(Debug, Parser)]
#[command(
    name = "neumann-mc",
    version,
    about = "Monte Carlo gradients of Neumann heat semigroups"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model assumptions and geometry.
    Validate(Common),
    /// Estimate u and its gradient with the configured schemes.
    Estimate(Common),
    /// Sweep dt, n, epsilon or the path count.
    Convergence(Common),
    /// Excursion statistics with composition and tangentiality checks.
    Excursions(Common),
    /// Estimate and compare against the configured oracles.
    Compare(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `[estimate] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides `[output] directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Estimate(_) => "estimate",
            Command::Convergence(_) => "convergence",
            Command::Excursions(_) => "excursions",
            Command::Compare(_) => "compare",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Validate(c)
            | Command::Estimate(c)
            | Command::Convergence(c)
            | Command::Excursions(c)
            | Command::Compare(c) => c,
        }
    }
}

/// Runs one subcommand and writes its files. Returns the report.
pub fn execute(command: &Command) -> AppResult<Report> {
    let common = command.common();
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.estimate.seed = seed;
    }
    let workers = common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rt = Runtime::new(workers)?;
    let report = match command {
        Command::Validate(_) => run::validate(&cfg)?,
        Command::Estimate(_) => run::estimate(&cfg, &rt)?.report,
        Command::Convergence(_) => run::convergence(&cfg, &rt)?.report,
        Command::Excursions(_) => run::excursions(&cfg, &rt)?.report,
        Command::Compare(_) => run::compare(&cfg, &rt)?.report,
    };
    let formats = match common.format {
        Some(FormatArg::Csv) => vec![Format::Csv],
        Some(FormatArg::Json) => vec![Format::Json],
        Some(FormatArg::Both) => vec![Format::Csv, Format::Json],
        None => cfg.output.formats.clone(),
    };
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let meta = Metadata::now(
        command.name(),
        Some(&common.config),
        cfg.estimate.seed,
        rt.workers(),
    );
    report.write(&dir, &formats, &meta)?;
    Ok(report)
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(report) => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(report.text.as_bytes());
            if report.passed() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
