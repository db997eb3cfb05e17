//! `bsl`: solves billiard eigenproblems and runs the non-concentration
//! scans, ray studies and verification suites as batch jobs.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bsl_core::verify::Suite;

#[derive(Debug, Parser)]
#[command(name = "bsl", version, about = "Eigenfunction non-concentration toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; BSL_OUT takes precedence.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for eigenpairs and write the cache.
    Solve,
    /// Mass and resolvent scans over a cached solve.
    Scan {
        kind: ScanKind,
        /// Eigenpair cache; defaults to the one `solve` writes under the output directory.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Billiard trajectory and geometric control curve.
    Rays,
    /// Husimi densities of cached eigenfunctions.
    Husimi {
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Run a verification suite.
    Verify { suite: SuiteArg },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanKind {
    Thm1,
    Thm2,
    Resolvent,
    Orbit,
}

impl ScanKind {
    pub fn name(self) -> &'static str {
        match self {
            ScanKind::Thm1 => "thm1",
            ScanKind::Thm2 => "thm2",
            ScanKind::Resolvent => "resolvent",
            ScanKind::Orbit => "orbit",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Unit,
    Oracle,
    Theorems,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Unit => Suite::Unit,
            SuiteArg::Oracle => Suite::Oracle,
            SuiteArg::Theorems => Suite::Theorems,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bsl: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), run::Failure> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| run::Failure::other(e.to_string()))?;
    }
    let out = std::env::var_os("BSL_OUT").map_or(cli.common.out.clone(), PathBuf::from);
    let ctx = run::Context {
        config: cli.common.config,
        out,
        seed: cli.common.seed,
    };
    match cli.command {
        Command::Solve => run::solve(&ctx),
        Command::Scan { kind, cache } => run::scan(&ctx, kind, cache),
        Command::Rays => run::rays(&ctx),
        Command::Husimi { cache } => run::husimi(&ctx, cache),
        Command::Verify { suite } => run::verify(&ctx, suite.into()),
    }
}
