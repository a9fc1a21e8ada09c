use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::keygen::{derive_bases, gen_agency_keys, AgencyId, AgencyKeys, KeygenConfig, MaskBases, Mode, Ring, SharedSeed};
use crate::matrix::Mat;
use crate::seed::stream;

use super::cloud::EncryptedAggregate;
use super::estimate::{decrypt_residual_gram_round, unmask_with, verify_values, Verification, VERIFY_TOL};
use super::node::{AgencyRole, CloudRole, Node, NodeId, Scope, STANDALONE_CLOUD};
use super::tamper::{non_commutative_masks, wrong_decrypt_masks, TamperAction, TamperPlan};
use super::transport::Transport;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudPlacement {
    /// A separate node 0.
    #[default]
    Standalone,
    /// The cloud role runs on an agency's node.
    Agency(AgencyId),
}

#[derive(Clone, Debug)]
pub struct FederationConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub keygen: KeygenConfig,
    pub seed: u64,
    /// Unmasked run (A = I, B = I, C = I, Δ = 0) for debugging.
    pub identity_keys: bool,
    pub cloud: CloudPlacement,
    /// Decryption order; defaults to `1..=K`.
    pub decrypt_order: Option<Vec<AgencyId>>,
    /// Per-agency ring orders; default rotations.
    pub rings: Option<Vec<Vec<AgencyId>>>,
    pub verify_tol: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Linear,
            lambda: 0.0,
            keygen: KeygenConfig::default(),
            seed: 0,
            identity_keys: false,
            cloud: CloudPlacement::Standalone,
            decrypt_order: None,
            rings: None,
            verify_tol: VERIFY_TOL,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    pub pre_modeling_ms: f64,
    pub modeling_ms: f64,
    pub post_modeling_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Decrypted `p×3` estimate, identical at every agency.
    pub estimate: Mat,
    pub verification: Verification,
    pub encrypted_estimate: Mat,
    pub aggregate: EncryptedAggregate,
    pub timings: PhaseTimings,
    pub transport: &'static str,
}

impl RunOutcome {
    pub fn beta(&self) -> Vec<f64> {
        self.estimate.column(0)
    }
}

/// Everything needed to simulate one protocol instance.
pub struct Federation {
    cfg: FederationConfig,
    bases: MaskBases,
    keys: Vec<AgencyKeys>,
    data: Vec<Dataset>,
    tamper: TamperPlan,
    decrypt_masks: Option<(AgencyId, (Mat, Mat))>,
}

impl Federation {
    pub fn setup(data: Vec<Dataset>, cfg: FederationConfig) -> Result<Self> {
        let k = data.len();
        if k == 0 || k > u8::MAX as usize {
            return Err(Error::InvalidConfig(format!("agency count {k} outside 1..=255")));
        }
        let p = data[0].p();
        if data.iter().any(|d| d.p() != p) {
            return Err(Error::dims("agencies hold different feature counts"));
        }
        if cfg.mode == Mode::Linear && cfg.lambda != 0.0 {
            return Err(Error::InvalidConfig("lambda must be 0 in linear mode".into()));
        }
        let sizes: Vec<usize> = data.iter().map(Dataset::n).collect();
        let bases = if cfg.identity_keys {
            MaskBases::identity(p, SharedSeed(cfg.seed))
        } else {
            derive_bases(SharedSeed(cfg.seed), p, &cfg.keygen)?
        };
        let mut keys = Vec::with_capacity(k);
        for id in AgencyId::all(k) {
            let mut kk = if cfg.identity_keys {
                AgencyKeys::identity(id, &sizes, p, cfg.keygen.block)?
            } else {
                gen_agency_keys(&bases, id, &sizes, &cfg.keygen, &mut stream(cfg.seed, "agency-keys", id.0 as u64))?
            };
            if let Some(rings) = &cfg.rings {
                let order = rings
                    .get(id.index())
                    .ok_or_else(|| Error::InvalidConfig(format!("no ring for agency {id}")))?;
                kk = kk.with_ring(Ring::new(order.clone(), id)?)?;
            }
            keys.push(kk);
        }
        if let Some(order) = &cfg.decrypt_order {
            let mut sorted = order.clone();
            sorted.sort();
            if sorted != AgencyId::all(k).collect::<Vec<_>>() {
                return Err(Error::InvalidConfig(format!("decryption order {order:?} is not a permutation")));
            }
        }
        if let CloudPlacement::Agency(h) = cfg.cloud {
            if h.0 == 0 || h.index() >= k {
                return Err(Error::InvalidConfig(format!("cloud host {h} is not an agency")));
            }
        }
        Ok(Self {
            cfg,
            bases,
            keys,
            data,
            tamper: TamperPlan::honest(),
            decrypt_masks: None,
        })
    }

    pub fn k(&self) -> usize {
        self.keys.len()
    }

    pub fn p(&self) -> usize {
        self.bases.p()
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn bases(&self) -> &MaskBases {
        &self.bases
    }

    pub fn keys(&self) -> &[AgencyKeys] {
        &self.keys
    }

    pub fn data(&self) -> &[Dataset] {
        &self.data
    }

    pub fn tamper_plan(&self) -> TamperPlan {
        self.tamper
    }

    /// Arms a deviation for subsequent runs. Replaces any earlier plan's
    /// effect on decryption; a key override persists.
    pub fn inject_tamper(&mut self, plan: TamperPlan) -> Result<()> {
        plan.validate(self.k())?;
        let mut rng = stream(self.cfg.seed, "tamper", 0);
        self.decrypt_masks = None;
        if let Some(action) = plan.actor_agency().and_then(|id| plan.targets(id).map(|a| (id, a))) {
            match action {
                (id, TamperAction::NonCommutativeKey) => {
                    let keys = &mut self.keys[id.index()];
                    let (b, c) = non_commutative_masks(keys, &self.cfg.keygen, &mut rng)?;
                    keys.override_masks(b, c)?;
                }
                (id, TamperAction::WrongDecrypt) => {
                    self.decrypt_masks = Some((id, wrong_decrypt_masks(&self.bases, &self.cfg.keygen, &mut rng)?));
                }
                _ => {}
            }
        }
        self.tamper = plan;
        Ok(())
    }

    fn decrypt_route(&self) -> Vec<AgencyId> {
        self.cfg
            .decrypt_order
            .clone()
            .unwrap_or_else(|| AgencyId::all(self.k()).collect())
    }

    fn cloud_node(&self) -> NodeId {
        match self.cfg.cloud {
            CloudPlacement::Standalone => STANDALONE_CLOUD,
            CloudPlacement::Agency(h) => h.0,
        }
    }

    fn build_nodes(&self, scope: Scope) -> Vec<Node> {
        let cloud_node = self.cloud_node();
        let seed = self.cfg.seed;
        let mut cloud = Some(CloudRole {
            k: self.k(),
            mode: self.cfg.mode,
            lambda: self.cfg.lambda,
            decrypt_route: self.decrypt_route(),
            perturbation: self.tamper.cloud_perturbation(),
            rng: stream(seed, "cloud", 0),
            shards: Vec::new(),
            factor: None,
            aggregate: None,
            encrypted_estimate: None,
            pre_done_at: None,
            fit_done_at: None,
        });
        let mut nodes = Vec::new();
        if cloud_node == STANDALONE_CLOUD {
            nodes.push(Node::new(STANDALONE_CLOUD, scope, None, cloud.take()));
        }
        for (keys, data) in self.keys.iter().zip(&self.data) {
            let id = keys.agency_id;
            let role = AgencyRole {
                keys: keys.clone(),
                data: data.clone(),
                mode: self.cfg.mode,
                rng: stream(seed, "agency-run", id.0 as u64),
                cloud_node,
                factor_route: AgencyId::all(self.k()).collect(),
                skip_pseudo: self.tamper.targets(id) == Some(TamperAction::SkipPseudoResponse),
                decrypt_masks: self
                    .decrypt_masks
                    .as_ref()
                    .filter(|(who, _)| *who == id)
                    .map(|(_, m)| m.clone()),
                passes_done: 0,
                factor_done: false,
                decrypted: false,
                plain: None,
            };
            let hosted = if id.0 == cloud_node { cloud.take() } else { None };
            nodes.push(Node::new(id.0, scope, Some(role), hosted));
        }
        nodes
    }

    fn cloud_of(nodes: &mut [Node]) -> &mut CloudRole {
        nodes
            .iter_mut()
            .find_map(|n| n.cloud.as_mut())
            .expect("every run has exactly one cloud role")
    }

    /// Full run: ring passes, optional factor release, cloud fit,
    /// round-robin decryption and verification.
    pub fn run(&self, transport: &dyn Transport) -> Result<RunOutcome> {
        let epoch = Instant::now();
        let mut nodes = transport.execute(self.build_nodes(Scope::Full), epoch)?;
        let total = epoch.elapsed();

        let mut plains = nodes.iter().filter_map(|n| n.agency.as_ref()).map(|a| a.plain.clone());
        let estimate = plains
            .next()
            .flatten()
            .ok_or_else(|| Error::ProtocolOrderViolation("agency 1 holds no estimate".into()))?;
        if plains.any(|p| p.as_ref() != Some(&estimate)) {
            return Err(Error::ProtocolOrderViolation("agencies disagree on the plain estimate".into()));
        }
        let cloud = Self::cloud_of(&mut nodes);
        let (pre, fit) = (
            cloud.pre_done_at.unwrap_or_default(),
            cloud.fit_done_at.unwrap_or_default(),
        );
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        Ok(RunOutcome {
            verification: verify_values(&estimate, self.cfg.mode, self.cfg.verify_tol),
            estimate,
            encrypted_estimate: cloud.encrypted_estimate.take().expect("cloud finished its fit"),
            aggregate: cloud.aggregate.take().expect("cloud assembled the aggregate"),
            timings: PhaseTimings {
                pre_modeling_ms: ms(pre),
                modeling_ms: ms(fit.saturating_sub(pre)),
                post_modeling_ms: ms(total.saturating_sub(fit)),
                total_ms: ms(total),
            },
            transport: transport.name(),
        })
    }

    /// Ring passes only.
    pub fn run_pre_modeling(&self, transport: &dyn Transport) -> Result<EncryptedAggregate> {
        let mut nodes = transport.execute(self.build_nodes(Scope::PreModeling), Instant::now())?;
        Ok(Self::cloud_of(&mut nodes).aggregate.take().expect("cloud assembled the aggregate"))
    }

    /// Factor ring only; returns `BᵀB`.
    pub fn release_btb(&self, transport: &dyn Transport) -> Result<Mat> {
        Ok(self.release_mask_factor(transport)?.gram())
    }

    /// Factor ring only; returns the released triangular `R`.
    pub fn release_mask_factor(&self, transport: &dyn Transport) -> Result<Mat> {
        let mut nodes = transport.execute(self.build_nodes(Scope::MaskRelease), Instant::now())?;
        Ok(Self::cloud_of(&mut nodes).factor.take().expect("cloud received the factor"))
    }

    /// The encrypted aggregate with the factor attached in ridge mode.
    pub fn encrypted_aggregate(&self, transport: &dyn Transport) -> Result<EncryptedAggregate> {
        let agg = self.run_pre_modeling(transport)?;
        match self.cfg.mode {
            Mode::Linear => Ok(agg),
            Mode::Ridge => agg.with_mask_factor(self.release_mask_factor(transport)?),
        }
    }
}

impl TamperPlan {
    fn actor_agency(&self) -> Option<AgencyId> {
        match self.actor {
            super::tamper::Actor::Agency(id) => Some(id),
            super::tamper::Actor::Cloud => None,
        }
    }
}

/// Decryption service the cloud can call on between CV folds.
pub trait Decryptor {
    /// All rounds of `β ← B_i β C_i⁻¹`.
    fn decrypt_estimate(&self, values: &Mat) -> Result<Mat>;
    /// All rounds of `S ← C_i⁻ᵀ S C_i⁻¹`.
    fn decrypt_residual_gram(&self, s: &Mat) -> Result<Mat>;
}

impl Decryptor for Federation {
    fn decrypt_estimate(&self, values: &Mat) -> Result<Mat> {
        let mut v = values.clone();
        for id in self.decrypt_route() {
            let keys = &self.keys[id.index()];
            v = unmask_with(&v, keys.b_matrix(), keys.c_matrix())?;
        }
        Ok(v)
    }

    fn decrypt_residual_gram(&self, s: &Mat) -> Result<Mat> {
        let mut out = s.clone();
        for id in self.decrypt_route() {
            out = decrypt_residual_gram_round(&out, &self.keys[id.index()])?;
        }
        Ok(out)
    }
}

/// Builds per-agency ring orders from a map, filling rotations elsewhere.
pub fn rings_with(k: usize, custom: BTreeMap<AgencyId, Vec<AgencyId>>) -> Vec<Vec<AgencyId>> {
    AgencyId::all(k)
        .map(|id| custom.get(&id).cloned().unwrap_or_else(|| Ring::rotation(id, k).order().to_vec()))
        .collect()
}
