use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keygen::{AgencyId, BlockPolicy, KeygenConfig, Mode};
use crate::matrix::{Conditioning, DEFAULT_COND_MAX};
use crate::protocol::{Actor, CloudPlacement, FederationConfig, Perturbation, TamperAction, TamperPlan, TransportKind, VERIFY_TOL};

pub const SEED_ENV: &str = "MASKREG_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Honest protocol run with verification.
    Run,
    /// Cross-validation on the encrypted aggregate.
    Cv,
    /// Protocol run with one injected deviation.
    Tamper,
    /// Chosen-plaintext attack trials against the commutative key.
    AttackCpa,
    /// Known-plaintext attack scenarios.
    AttackKpa,
    /// Privacy-loss sweep for the Gaussian projection.
    Ldp,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Cv => "cv",
            Command::Tamper => "tamper",
            Command::AttackCpa => "attack-cpa",
            Command::AttackKpa => "attack-kpa",
            Command::Ldp => "ldp",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TamperKind {
    Honest,
    SkipPseudoResponse,
    NonCommutativeKey,
    #[default]
    PerturbResult,
    WrongDecrypt,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KpaChoice {
    One,
    Two,
    #[default]
    Both,
}

/// Everything an experiment needs. Every field has a default, so a config
/// file only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub k: usize,
    pub mode: Mode,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub seed: Option<u64>,
    pub transport: TransportKind,
    pub identity_keys: bool,
    /// Host the cloud on this agency instead of a separate node.
    pub cloud_host: Option<u8>,
    pub verify_tol: f64,
    pub out: PathBuf,
    pub keygen: KeygenSection,
    pub data: DataSection,
    pub tamper: TamperSection,
    pub cpa: CpaSection,
    pub kpa: KpaSection,
    pub ldp: LdpSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            k: 2,
            mode: Mode::Linear,
            lambda: 0.0,
            lambda_grid: Vec::new(),
            folds: 5,
            seed: None,
            transport: TransportKind::Bus,
            identity_keys: false,
            cloud_host: None,
            verify_tol: VERIFY_TOL,
            out: PathBuf::from("out"),
            keygen: KeygenSection::default(),
            data: DataSection::default(),
            tamper: TamperSection::default(),
            cpa: CpaSection::default(),
            kpa: KpaSection::default(),
            ldp: LdpSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeygenSection {
    pub sigma_b: f64,
    pub sigma_coeff: f64,
    pub sigma_delta: f64,
    pub degree_cap: usize,
    pub block_size: usize,
    pub cond_max: f64,
}

impl Default for KeygenSection {
    fn default() -> Self {
        let d = KeygenConfig::default();
        Self {
            sigma_b: d.sigma_b,
            sigma_coeff: d.sigma_coeff,
            sigma_delta: d.sigma_delta,
            degree_cap: d.degree_cap,
            block_size: 100,
            cond_max: DEFAULT_COND_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV input; synthetic data when absent.
    pub path: Option<PathBuf>,
    /// Column name or 0-based index; the last column when absent.
    pub response: Option<String>,
    pub header: bool,
    /// Explicit shard sizes; equal split when absent.
    pub split: Option<Vec<usize>>,
    pub synthetic: SyntheticSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            response: None,
            header: true,
            split: None,
            synthetic: SyntheticSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n: usize,
    pub p: usize,
    pub noise: f64,
    /// Threshold the response into {0, 1}.
    pub binary: bool,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            n: 200,
            p: 5,
            noise: 0.1,
            binary: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TamperSection {
    /// Deviating agency; the cloud when absent.
    pub agency: Option<u8>,
    pub action: TamperKind,
    /// Gaussian scale, or the added delta when `entry` is set.
    pub magnitude: f64,
    /// `[row, col]` of a single perturbed entry.
    pub entry: Option<[usize; 2]>,
}

impl Default for TamperSection {
    fn default() -> Self {
        Self {
            agency: None,
            action: TamperKind::PerturbResult,
            magnitude: 1e-3,
            entry: None,
        }
    }
}

impl TamperSection {
    pub fn plan(&self) -> TamperPlan {
        let actor = match self.agency {
            Some(id) => Actor::Agency(AgencyId(id)),
            None => Actor::Cloud,
        };
        let action = match self.action {
            TamperKind::Honest => TamperAction::Honest,
            TamperKind::SkipPseudoResponse => TamperAction::SkipPseudoResponse,
            TamperKind::NonCommutativeKey => TamperAction::NonCommutativeKey,
            TamperKind::WrongDecrypt => TamperAction::WrongDecrypt,
            TamperKind::PerturbResult => TamperAction::PerturbResult(match self.entry {
                Some([row, col]) => Perturbation::Entry {
                    row,
                    col,
                    delta: self.magnitude,
                },
                None => Perturbation::Gaussian {
                    magnitude: self.magnitude,
                },
            }),
        };
        TamperPlan { actor, action }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpaSection {
    pub n: usize,
    pub p: usize,
    pub degree: usize,
    pub trials: usize,
}

impl Default for CpaSection {
    fn default() -> Self {
        Self {
            n: 6,
            p: 4,
            degree: 3,
            trials: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpaSection {
    pub scenario: KpaChoice,
    /// Rows of the known block in scenario I.
    pub rows: usize,
    pub p: usize,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    /// Size of the square blocks in scenario II.
    pub block: usize,
}

impl Default for KpaSection {
    fn default() -> Self {
        Self {
            scenario: KpaChoice::Both,
            rows: 100,
            p: 5,
            sigmas: vec![1e-2, 1e-3, 1e-4],
            trials: 50,
            block: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdpSection {
    pub t: f64,
    pub norm1: f64,
    pub norm2: f64,
    pub sigmas: Vec<f64>,
}

impl Default for LdpSection {
    fn default() -> Self {
        Self {
            t: 1.0,
            norm1: 1.0,
            norm2: 5.0,
            sigmas: (0..=20).map(|i| 10f64.powf(1.0 - 0.25 * f64::from(i))).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if self.command == Some(Command::Cv) {
            if self.folds < 2 {
                return bad("cv needs folds >= 2");
            }
            if self.mode == Mode::Ridge && self.lambda_grid.is_empty() {
                return bad("ridge cv needs a non-empty lambda_grid");
            }
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a finite value >= 0");
        }
        if self.mode == Mode::Linear && self.lambda != 0.0 {
            return bad("lambda is only meaningful in ridge mode");
        }
        Ok(())
    }

    /// Seed from the config, then the environment, then 0.
    pub fn resolve_seed(&mut self) -> Result<u64> {
        if self.seed.is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                let s = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
                self.seed = Some(s);
            }
        }
        Ok(*self.seed.get_or_insert(0))
    }

    pub fn federation(&self, block: BlockPolicy) -> Result<FederationConfig> {
        if self.keygen.block_size == 0 {
            return Err(Error::InvalidConfig("block_size must be >= 1".into()));
        }
        let ks = &self.keygen;
        Ok(FederationConfig {
            mode: self.mode,
            lambda: self.lambda,
            keygen: KeygenConfig {
                sigma_b: ks.sigma_b,
                sigma_coeff: ks.sigma_coeff,
                sigma_delta: ks.sigma_delta,
                degree_cap: ks.degree_cap,
                block,
                conditioning: Conditioning {
                    cond_max: ks.cond_max,
                    ..Conditioning::default()
                },
            },
            seed: self.seed.unwrap_or(0),
            identity_keys: self.identity_keys,
            cloud: match self.cloud_host {
                Some(id) => CloudPlacement::Agency(AgencyId(id)),
                None => CloudPlacement::Standalone,
            },
            decrypt_order: None,
            rings: None,
            verify_tol: self.verify_tol,
        })
    }
}
