//! `gelfand` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration or solver failure, 2 degenerate
//! point on the branch, 3 a check missed its threshold.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gelfand::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "gelfand", version, about = "Continuation of -Δv = μ f(v) on mapped domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration; omitted tables take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel commands.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-iteration Newton logging as JSON lines on stderr.
    #[arg(long, short, global = true, conflicts_with = "quiet")]
    verbose: bool,
    /// Errors only.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trace the continuum from (0, 0); writes branch.jsonl, branch.csv,
    /// events.json, folds.json.
    Trace {
        /// Re-read branch.csv and branch.jsonl and compare them bitwise.
        #[arg(long)]
        self_test: bool,
    },
    /// Check the domain derivative and the boundary pairing at the first
    /// fold; writes shape_report.json.
    ShapeCheck,
    /// Trace the continuum on random domain perturbations; writes
    /// experiment.json.
    GenericExp,
    /// Reference tables: radial family, interval fold, multistart counts.
    Oracle,
    /// Eigenvalue table at a branch point; writes spectrum.csv and
    /// spectrum.json.
    Spectrum,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Trace { .. } => "trace",
            Command::ShapeCheck => "shape-check",
            Command::GenericExp => "generic-exp",
            Command::Oracle => "oracle",
            Command::Spectrum => "spectrum",
        }
    }
}

fn resolve(common: &Common) -> gelfand::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose {
        log::LevelFilter::Debug
    } else if cli.common.quiet {
        log::LevelFilter::Error
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let jobs = cli.common.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    // A second initialization only happens in tests that call main twice.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();

    let cfg = match resolve(&cli.common) {
        Ok(c) => c,
        Err(e) => return commands::fail(cli.command.name(), None, &e),
    };
    if cli.common.dump_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    let name = cli.command.name();
    let result = match cli.command {
        Command::Trace { self_test } => commands::trace(&cfg, self_test),
        Command::ShapeCheck => commands::shape_check(&cfg),
        Command::GenericExp => commands::generic_exp(&cfg, jobs),
        Command::Oracle => commands::oracle(&cfg),
        Command::Spectrum => commands::spectrum(&cfg),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => commands::fail(name, Some(&cfg.out), &e),
    }
}
