//! `otlab`: benchmark generation, training runs, timescale sweeps, oracle
//! verification and plotting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 divergence abort,
//! 4 oracle failure, 1 anything else.

mod commands;
mod config;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otlab_core::oracle::SuiteConfig;
use otlab_core::solver::RunOptions;
use otlab_core::OtError;

use crate::commands::{DivergenceAbort, OracleFailure};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "otlab", version, about = "Semi-dual neural optimal transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; the desk defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both the split seed and the solver seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> otlab_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.problem.seed = s;
            cfg.solver.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a benchmark and export its ground truth and sample splits.
    Generate(Common),
    /// Train one map/potential pair and record its metric history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Outer iterations, overriding `solver.outer`.
        #[arg(long)]
        outer: Option<usize>,
        /// Perturb the potential after this many outer iterations.
        #[arg(long)]
        perturb_psi_at: Option<usize>,
        /// Iterations to run beyond `solver.outer`.
        #[arg(long, default_value_t = 0)]
        extra_steps: usize,
    },
    /// Run the K x (eta_psi / eta_t) grid over several seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Use seeds 0..N instead of the configured list.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Verify the discrete duality properties on random instances.
    Oracle {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        /// Comma-separated instance sizes.
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,64")]
        sizes: Vec<usize>,
        /// Comma-separated point dimensions.
        #[arg(long, value_delimiter = ',', default_value = "1,2,8")]
        dims: Vec<usize>,
        /// Random potentials per instance for the weak-duality check.
        #[arg(long, default_value_t = 1000)]
        potentials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `oracle.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the optimal duals with suboptimal ones.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Redraw the figures of a run or sweep directory.
    Report {
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.load()?;
            let dir = commands::generate(&cfg, common.out.as_deref(), common.force)?;
            println!("benchmark written to {}", dir.display());
        }
        Command::Train {
            common,
            outer,
            perturb_psi_at,
            extra_steps,
        } => {
            let mut cfg = common.load()?;
            if let Some(o) = outer {
                cfg.solver.outer = o;
            }
            cfg.validate()?;
            let opts = RunOptions {
                perturb_psi_at,
                extra_steps,
            };
            let dir = commands::train(&cfg, common.out.as_deref(), common.force, opts)?;
            println!("run written to {}", dir.display());
        }
        Command::Sweep { common, jobs, seeds } => {
            let cfg = common.load()?;
            let dir = commands::sweep(&cfg, common.out.as_deref(), common.force, jobs, seeds)?;
            println!("sweep written to {}", dir.display());
        }
        Command::Oracle {
            instances,
            sizes,
            dims,
            potentials,
            seed,
            out,
            inject_fault,
        } => {
            let cfg = SuiteConfig {
                instances,
                sizes,
                dims,
                random_potentials: potentials,
                seed,
                inject_suboptimal_duals: inject_fault,
            };
            commands::oracle(&cfg, out.as_deref())?;
        }
        Command::Report { dir } => {
            for f in commands::report(&dir)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<DivergenceAbort>() {
        return 3;
    }
    if err.is::<OracleFailure>() {
        return 4;
    }
    match err.downcast_ref::<OtError>() {
        Some(OtError::Config(_) | OtError::Parse(_) | OtError::Json(_) | OtError::NonQuadraticCost(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
