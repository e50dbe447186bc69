//! `insens` command line: loads a TOML configuration, runs one pipeline stage
//! and writes CSV tables, field dumps and a `manifest.json` into `--out`.
//!
//! Exit status: 0 when every asserted check passes, 2 when a check fails,
//! 1 on usage, configuration or I/O errors.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::Ctx;
use output::Artifacts;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Check(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "insens",
    version,
    about = "Insensitizing controls for fourth-order parabolic equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; defaults reproduce the 1D desk problem.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "insens-out")]
    out: PathBuf,
    /// Smaller sample counts (same tolerances).
    #[arg(long, global = true)]
    quick: bool,
    /// Worker threads; overrides the configured value.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Pointwise weight properties and the weighted exponential bounds.
    WeightsCheck,
    /// Observability ratio sampling, with an optional refinement comparison.
    Observability,
    /// Penalized HUM control for the linear problem, null check and sentinel probe.
    InsensitizeLinear,
    /// Picard iteration over frozen linearizations for the semilinear problem.
    InsensitizeSemilinear,
    /// Eigenmode decay and manufactured-solution temporal order.
    Convergence,
    /// The full invariant suite.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::WeightsCheck => "weights-check",
            Command::Observability => "observability",
            Command::InsensitizeLinear => "insensitize-linear",
            Command::InsensitizeSemilinear => "insensitize-semilinear",
            Command::Convergence => "convergence",
            Command::Selftest => "selftest",
        }
    }
}

fn set_threads(n: usize) {
    if n > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    let mut cfg = config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    set_threads(cfg.threads);
    let echo = serde_json::to_value(&cfg).map_err(|e| CliError::Io(e.to_string()))?;
    let ctx = Ctx { cfg, quick: cli.quick };
    let mut art = Artifacts::new(&cli.out)?;
    let started = Instant::now();
    let run = match cli.command {
        Command::WeightsCheck => commands::weights_check(&ctx, &mut art),
        Command::Observability => commands::observability(&ctx, &mut art),
        Command::InsensitizeLinear => commands::insensitize_linear(&ctx, &mut art),
        Command::InsensitizeSemilinear => commands::insensitize_semilinear(&ctx, &mut art),
        Command::Convergence => commands::convergence(&ctx, &mut art),
        Command::Selftest => commands::selftest(&ctx, &mut art),
    };
    art.time("total", started.elapsed());
    let usage = match run {
        Ok(()) => None,
        Err(CliError::Check(m)) => {
            art.check("run", false, m);
            None
        }
        Err(e) => Some(e),
    };
    for c in &art.checks {
        eprintln!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let pass = art.finish(cli.command.name(), echo)?;
    match usage {
        Some(e) => Err(e),
        None => Ok(pass),
    }
}

/// Parse `argv` (program name first), run the command and return the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK,
        Err(e) => {
            eprintln!("{e}");
            EXIT_USAGE
        }
    }
}
