//! `zinbs`: zero-inflated negative binomial regression with an
//! imperfect-detection layer and optional Moran-basis spatial random effects.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use zinb_cli::commands;

const FIT_CONFIG_HELP: &str = "\
Config file keys (flat `key = value` lines; `#` starts a comment):
  counts                 path to counts.csv (county_id,year,y[,population])
  covariates             path to covariates.csv (county_id,year,<name>...)
  adjacency              path to neighbor pairs (needed when spatial = true)
  out_dir                output directory for artifacts
  family                 negative-binomial (default) | poisson
  spatial                true | false (default false)
  q                      Moran basis rank (default min(100, n_counties/10))
  prior_beta_sd          default 10
  prior_log_theta_sd     default 2
  prior_sigma_w_scale    default 1
  iterations             default 60000
  burnin                 default 20000
  thin                   default 10
  seed                   default 0
  chains                 default 1 (chain j uses seed + j)
  target_accept_vector   default 0.234
  target_accept_scalar   default 0.44
  adapt_window           default 50
  threads                worker threads, 0 = all cores (default 0)

Outputs in out_dir: summary.csv, unit_estimates.csv, draws.bin,
pointwise_loglik.bin, run.json. Exit codes: 0 success (warnings recorded in
run.json), 2 input error, 3 numerical failure.";

const SCENARIO_HELP: &str = "\
Scenario file keys (flat `key = value` lines):
  graph                  lattice | file
  rows, cols             lattice dimensions (graph = lattice)
  adjacency              neighbor-pair file (graph = file)
  years                  default 4
  beta1                  comma list, intercept first (detection layer)
  beta2                  comma list, intercept first (abundance layer)
  theta                  dispersion, default 1.2
  spatial                none (default) | moran
  q, sigma_w             basis rank and effect scale (spatial = moran)
  population_min/max     optional per-unit population range
  seed                   default 0

Writes counts.csv, covariates.csv, adjacency.txt, truth.csv, and
truth_params.json into --out.";

#[derive(Parser)]
#[command(
    name = "zinbs",
    version,
    about = "Zero-inflated negative binomial regression with imperfect detection and Moran-basis spatial effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpatialToggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write all artifacts.
    #[command(after_long_help = FIT_CONFIG_HELP)]
    Fit {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's spatial switch.
        #[arg(long, value_enum)]
        spatial: Option<SpatialToggle>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's chain count.
        #[arg(long)]
        chains: Option<usize>,
        /// Override the config's worker thread count (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a synthetic dataset from the generative model.
    #[command(after_long_help = SCENARIO_HELP)]
    Simulate {
        /// Scenario file.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two fits of the same dataset by WAIC.
    Compare {
        /// First fit directory.
        #[arg(long = "fit-a")]
        fit_a: PathBuf,
        /// Second fit directory.
        #[arg(long = "fit-b")]
        fit_b: PathBuf,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized quantile residuals and QQ data for a fit.
    Diagnose {
        /// Fit directory (reads run.json, draws.bin).
        #[arg(long)]
        fit: PathBuf,
        /// Optional fit-config file overriding the recorded data paths.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Rebuild summary.csv and unit_estimates.csv from stored draws.
    Summarize {
        /// Fit directory.
        #[arg(long)]
        fit: PathBuf,
        /// Optional fit-config file overriding the recorded data paths.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit {
            config,
            spatial,
            seed,
            chains,
            threads,
            out,
        } => commands::fit::run(
            &config,
            &commands::fit::FitOverrides {
                spatial: spatial.map(|s| matches!(s, SpatialToggle::On)),
                seed,
                chains,
                threads,
                out_dir: out,
            },
        ),
        Command::Simulate { scenario, out } => commands::simulate::run(&scenario, &out),
        Command::Compare { fit_a, fit_b, out } => {
            commands::compare::run(&fit_a, &fit_b, out.as_deref())
        }
        Command::Diagnose { fit, data } => commands::diagnose::run(&fit, data.as_deref()),
        Command::Summarize { fit, data } => commands::summarize::run(&fit, data.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
