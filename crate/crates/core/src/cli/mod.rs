//! Command-line front end: argument parsing, config merging, CSV input, and
//! experiment reports.

mod config;
mod io;
mod report;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser};

pub use config::{
    Command, CpaSection, DataSection, ExperimentConfig, KeygenSection, KpaChoice, KpaSection, LdpSection, SyntheticSection,
    TamperKind, TamperSection, SEED_ENV,
};
pub use io::{load_csv, parse_csv, sha256_hex, split_horizontal, ResponseColumn, SplitPolicy};
pub use report::{Report, EXIT_ERROR, EXIT_OK, EXIT_TAMPERED};
pub use run::{load_input, run_experiment, Outcome};

use crate::error::{Error, Result};
use crate::keygen::Mode;
use crate::protocol::TransportKind;

#[derive(Debug, Parser)]
#[command(name = "maskreg", version, about = "Collaborative regression over matrix-masked data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    #[command(flatten)]
    pub overrides: Overrides,
}

/// Flags override the config file field by field.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Number of agencies.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Comma-separated ridge penalties for cross-validation.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, global = true)]
    pub sigma_b: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_delta: Option<f64>,
    #[arg(long, global = true)]
    pub block_size: Option<usize>,
    /// Falls back to the config file, then MASKREG_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_transport)]
    pub transport: Option<TransportKind>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// CSV input; synthetic data when absent.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Response column name or 0-based index.
    #[arg(long, global = true)]
    pub response: Option<String>,
    #[arg(long, global = true)]
    pub no_header: bool,
    /// Comma-separated shard sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    pub split: Option<Vec<usize>>,
    /// Run with identity masks (debugging only).
    #[arg(long, global = true)]
    pub identity_keys: bool,
    /// Host the cloud on this agency.
    #[arg(long, global = true)]
    pub cloud_host: Option<u8>,
    #[arg(long, global = true)]
    pub tamper_action: Option<TamperKind>,
    /// Deviating agency; the cloud when absent.
    #[arg(long, global = true)]
    pub tamper_agency: Option<u8>,
    #[arg(long, global = true)]
    pub magnitude: Option<f64>,
    /// Attack trials (CPA instances, KPA seeds).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Comma-separated noise scales for the KPA and LDP sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub scenario: Option<KpaChoice>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "linear" => Ok(Mode::Linear),
        "ridge" => Ok(Mode::Ridge),
        other => Err(format!("unknown mode {other:?} (linear, ridge)")),
    }
}

fn parse_transport(s: &str) -> std::result::Result<TransportKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Cli {
    /// Merges the config file, flags, and environment into one config.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let o = &self.overrides;
        let mut c = match &o.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if self.command.is_some() {
            c.command = self.command;
        }
        if c.command.is_none() {
            return Err(Error::InvalidConfig("no command given on the command line or in the config".into()));
        }
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(o.k => c.k);
        set!(o.mode => c.mode);
        set!(o.lambda => c.lambda);
        set!(o.lambda_grid => c.lambda_grid);
        set!(o.folds => c.folds);
        set!(o.sigma_b => c.keygen.sigma_b);
        set!(o.sigma_delta => c.keygen.sigma_delta);
        set!(o.block_size => c.keygen.block_size);
        set!(o.transport => c.transport);
        set!(o.out => c.out);
        set!(o.tamper_action => c.tamper.action);
        set!(o.magnitude => c.tamper.magnitude);
        set!(o.scenario => c.kpa.scenario);
        if let Some(t) = o.trials {
            c.cpa.trials = t;
            c.kpa.trials = t;
        }
        if let Some(s) = &o.sigmas {
            c.kpa.sigmas = s.clone();
            c.ldp.sigmas = s.clone();
        }
        if o.seed.is_some() {
            c.seed = o.seed;
        }
        if o.data.is_some() {
            c.data.path = o.data.clone();
        }
        if o.response.is_some() {
            c.data.response = o.response.clone();
        }
        if o.no_header {
            c.data.header = false;
        }
        if o.split.is_some() {
            c.data.split = o.split.clone();
        }
        if o.identity_keys {
            c.identity_keys = true;
        }
        if o.cloud_host.is_some() {
            c.cloud_host = o.cloud_host;
        }
        if o.tamper_agency.is_some() {
            c.tamper.agency = o.tamper_agency;
        }
        c.resolve_seed()?;
        Ok(c)
    }
}
