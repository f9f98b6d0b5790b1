use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands;
use crate::config::{RowSum, RunConfig};
use crate::error::{CliError, Result};
use crate::ingest;

#[derive(Debug, Parser)]
#[command(name = "patchfish", version, about = "Patch fishery simulator and two-stage migration estimator")]
pub struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured scenario and write its data files.
    Simulate(SimulateArgs),
    /// Estimate both stages from the data files and write reports.
    Estimate(EstimateArgs),
    /// Repeat simulate and estimate over seeds 1..=reps.
    Montecarlo(MonteCarloArgs),
    /// Print or write the default configuration.
    InitConfig {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RowSumArg {
    ConservativeZero,
    PaperOne,
    Unconstrained,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub row_sum: Option<RowSumArg>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Map own rates as d_kk = r - alpha0 instead of alpha0 - 1 - r.
    #[arg(long)]
    pub paper_mapping: bool,
    /// Leave harvest out of the second-stage response.
    #[arg(long)]
    pub no_harvest: bool,
    /// Capacity fallback level: 0.80, 0.90 or 0.95.
    #[arg(long)]
    pub level: Option<f64>,
    /// Fixed biomass exponent instead of calibration to annual totals.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub pseudo_count: Option<f64>,
    /// Skip malformed input rows (reported) instead of aborting.
    #[arg(long)]
    pub lenient: bool,
    /// Compare the estimates with the configured scenario.
    #[arg(long)]
    pub compare_truth: bool,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads; 0 uses every processor.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Expected-value choices instead of sampled ones.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long, value_enum)]
    pub row_sum: Option<RowSumArg>,
    #[arg(long)]
    pub paper_mapping: bool,
    #[arg(long)]
    pub no_harvest: bool,
}

fn row_sum(arg: RowSumArg) -> RowSum {
    match arg {
        RowSumArg::ConservativeZero => RowSum::ConservativeZero,
        RowSumArg::PaperOne => RowSum::PaperOne,
        RowSumArg::Unconstrained => RowSum::Unconstrained,
    }
}

/// The file configuration with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.data_dir {
        cfg.paths.data_dir = dir.clone();
    }
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(r) = a.row_sum {
                cfg.scenario.row_sum = row_sum(r);
            }
        }
        Command::Estimate(a) => {
            let e = &mut cfg.estimation;
            e.paper_mapping |= a.paper_mapping;
            e.harvest &= !a.no_harvest;
            e.strict &= !a.lenient;
            e.compare_truth |= a.compare_truth;
            if let Some(l) = a.level {
                e.level = l;
            }
            if a.beta.is_some() {
                e.beta = a.beta;
            }
            if a.pseudo_count.is_some() {
                e.pseudo_count = a.pseudo_count;
            }
        }
        Command::Montecarlo(a) => {
            if let Some(n) = a.reps {
                cfg.montecarlo.reps = n;
            }
            if let Some(t) = a.threads {
                cfg.montecarlo.threads = t;
            }
            cfg.scenario.noiseless |= a.noiseless;
            if let Some(r) = a.row_sum {
                cfg.scenario.row_sum = row_sum(r);
            }
            cfg.estimation.paper_mapping |= a.paper_mapping;
            cfg.estimation.harvest &= !a.no_harvest;
        }
        Command::InitConfig { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the command and returns its one-line summary.
pub fn execute(cli: &Cli) -> Result<String> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Simulate(_) => commands::simulate(&cfg).map(|s| s.line()),
        Command::Estimate(_) => commands::estimate_files(&cfg).map(|o| o.line()),
        Command::Montecarlo(_) => commands::montecarlo_files(&cfg).map(|r| r.line()),
        Command::InitConfig { output } => {
            let text = cfg.to_toml();
            match output {
                Some(path) => {
                    ingest::write_text(path, &text)?;
                    Ok(format!("wrote {}", path.display()))
                }
                None => Ok(text.trim_end().to_string()),
            }
        }
    }
    .map_err(|e: CliError| e)
}
