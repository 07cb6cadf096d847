//! `ngmm` command-line pipeline.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ngmm", version, about = "Non-ergodic ground-motion modeling pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML configuration file, one section per module.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for the randomness of the chosen subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Validate inputs and configuration without computing or writing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "ngmm-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CatalogArgs {
    /// Directory holding sites.csv, scenarios.csv and residuals.csv.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Split manifest (split.json) restricting observations to TrTr.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ParamArgs {
    /// Tuned parameters (params.json).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Named preset used when no parameters are given.
    #[arg(long)]
    pub preset: Option<String>,
    /// Sparsity radius of the factor.
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a catalog and write it in normalized form.
    Ingest {
        #[command(flatten)]
        catalog: CatalogArgs,
        /// Scenario id to drop (repeatable).
        #[arg(long = "exclude")]
        exclude: Vec<String>,
    },
    /// Collapse variations to scenario means per site.
    Collapse {
        #[command(flatten)]
        catalog: CatalogArgs,
    },
    /// Random train/test partition of sites and scenarios.
    Split {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[arg(long)]
        site_test_frac: Option<f64>,
        #[arg(long)]
        scenario_test_frac: Option<f64>,
    },
    /// Maximum-likelihood fit of the between- and within-event variances.
    FitLmm {
        #[command(flatten)]
        catalog: CatalogArgs,
    },
    /// Tune kernel hyperparameters and secondary variances.
    Tune {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[arg(long)]
        preset: Option<String>,
        /// Starting parameters (params.json).
        #[arg(long)]
        init: Option<PathBuf>,
        /// lmm.json providing the primary variance components.
        #[arg(long)]
        lmm: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Posterior at new scenarios or sites (prediction mode).
    Predict {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[command(flatten)]
        params: ParamArgs,
        /// CSV of `scenario_id,site_id` targets.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Facilities CSV for field realizations.
        #[arg(long)]
        facilities: Option<PathBuf>,
        /// Scenario for facility field realizations.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Posterior at observed variations (interpolation mode).
    Interpolate {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[command(flatten)]
        params: ParamArgs,
        /// CSV of `variation_id,site_id` targets.
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Site hazard curves from a posterior.
    Hazard {
        #[command(flatten)]
        catalog: CatalogArgs,
        /// posterior.json written by predict or interpolate.
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        realizations: Option<usize>,
        /// `median` or `mean`.
        #[arg(long)]
        summary: Option<String>,
    },
    /// Damage-state realizations at facilities.
    Damage {
        #[arg(long)]
        facilities: PathBuf,
        /// `state,median_g,beta` CSV; the built-in example set when absent.
        #[arg(long)]
        fragility: Option<PathBuf>,
        /// fields.csv written by predict.
        #[arg(long)]
        fields: PathBuf,
        #[arg(long)]
        draws_per_field: Option<usize>,
    },
    /// Synthetic catalog with known truth.
    Synth {
        #[arg(long)]
        sites: Option<usize>,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        sites_per_scenario: Option<usize>,
        #[arg(long)]
        variations: Option<usize>,
        #[arg(long)]
        preset: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let listing = matches!(e.kind(), ErrorKind::InvalidSubcommand | ErrorKind::UnknownArgument);
            let _ = e.print();
            if listing {
                let names: Vec<String> =
                    Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
                eprintln!("\nsubcommands: {}", names.join(", "));
            }
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
