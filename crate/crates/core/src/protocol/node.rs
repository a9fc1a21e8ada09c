use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::keygen::{make_responses, AgencyId, AgencyKeys, Mode};
use crate::matrix::Mat;
use crate::seed::StreamRng;

use super::cloud::{cloud_fit, mask_factor_round, mask_factor_seed, EncryptedAggregate};
use super::estimate::unmask_with;
use super::shard::{local_encrypt_with, noisy_features, pass_encrypt, EncryptedShard};
use super::tamper::{apply_perturbation, Perturbation};
use super::wire::{Message, MsgType};

/// Node address. Agency `i` lives on node `i`; node 0 is a standalone cloud.
pub type NodeId = u8;
pub const STANDALONE_CLOUD: NodeId = 0;

/// How much of the protocol a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Ring passes only; ends with the aggregate at the cloud.
    PreModeling,
    /// `BᵀB` factor ring only.
    MaskRelease,
    /// Everything through the plain estimate at every agency.
    Full,
}

#[derive(Clone, Debug)]
pub struct Outgoing {
    pub to: NodeId,
    pub frame: Vec<u8>,
}

fn node_of(a: AgencyId) -> NodeId {
    a.0
}

fn send(to: NodeId, msg: &Message) -> Result<Outgoing> {
    Ok(Outgoing {
        to,
        frame: msg.encode()?,
    })
}

fn round_of(msg: &Message) -> usize {
    msg.round as usize
}

pub(crate) struct AgencyRole {
    pub keys: AgencyKeys,
    pub data: Dataset,
    pub mode: Mode,
    pub rng: StreamRng,
    pub cloud_node: NodeId,
    pub factor_route: Vec<AgencyId>,
    pub skip_pseudo: bool,
    /// Masks used in place of the real ones when decrypting.
    pub decrypt_masks: Option<(Mat, Mat)>,
    pub passes_done: usize,
    pub factor_done: bool,
    pub decrypted: bool,
    pub plain: Option<Mat>,
}

impl AgencyRole {
    fn id(&self) -> AgencyId {
        self.keys.agency_id
    }

    fn k(&self) -> usize {
        self.keys.k()
    }

    fn needs_factor(&self, scope: Scope) -> bool {
        scope == Scope::MaskRelease || (scope == Scope::Full && self.mode == Mode::Ridge)
    }

    fn start(&mut self, scope: Scope, me: NodeId) -> Result<Vec<Outgoing>> {
        let mut out = Vec::new();
        if scope != Scope::MaskRelease {
            let x_tilde = noisy_features(&self.keys, &self.data)?;
            let mut responses = make_responses(&x_tilde, &self.data.y, self.mode, &mut self.rng)?;
            if self.skip_pseudo {
                responses.y_verify = StandardNormal.sample_iter(&mut self.rng).take(self.data.n()).collect();
            }
            let shard = local_encrypt_with(&self.keys, &x_tilde, &responses)?;
            out.push(self.forward_shard(shard, me)?);
        }
        if self.needs_factor(scope) && self.factor_route.first() == Some(&self.id()) {
            let m = mask_factor_round(&mask_factor_seed(self.keys.b_matrix().rows()), &self.keys)?;
            self.factor_done = true;
            out.push(self.forward_factor(m, 1, me)?);
        }
        Ok(out)
    }

    fn forward_shard(&self, shard: EncryptedShard, me: NodeId) -> Result<Outgoing> {
        let route = self.route_of(shard.origin)?;
        let round = shard.applied.len();
        let (msg_type, to) = if round == route.len() {
            (MsgType::ShardFinal, self.cloud_node)
        } else {
            (MsgType::ShardPass, node_of(route[round]))
        };
        send(
            to,
            &Message {
                msg_type,
                origin: me,
                round: round as u16,
                route,
                block_sizes: shard.block_sizes,
                matrices: vec![shard.x_star, shard.y_star],
            },
        )
    }

    /// The ring of shard `origin`. Only the owner knows it, so a shard
    /// carries its route and passers read it from there.
    fn route_of(&self, origin: AgencyId) -> Result<Vec<AgencyId>> {
        if origin == self.id() {
            Ok(self.keys.ring.order().to_vec())
        } else {
            Err(Error::ProtocolOrderViolation(format!(
                "agency {} asked for the ring of {origin}",
                self.id()
            )))
        }
    }

    fn forward_factor(&self, m: Mat, round: usize, me: NodeId) -> Result<Outgoing> {
        let route = self.factor_route.clone();
        let (msg_type, to) = if round == route.len() {
            (MsgType::FactorFinal, self.cloud_node)
        } else {
            (MsgType::FactorPass, node_of(route[round]))
        };
        send(
            to,
            &Message {
                msg_type,
                origin: me,
                round: round as u16,
                route,
                block_sizes: vec![],
                matrices: vec![m],
            },
        )
    }

    fn expect_turn(&self, msg: &Message) -> Result<()> {
        let round = round_of(msg);
        if msg.route.get(round) != Some(&self.id()) {
            return Err(Error::ProtocolOrderViolation(format!(
                "{:?} at round {round} delivered to agency {} out of turn",
                msg.msg_type,
                self.id()
            )));
        }
        Ok(())
    }

    fn handle(&mut self, mut msg: Message, me: NodeId) -> Result<Vec<Outgoing>> {
        match msg.msg_type {
            MsgType::ShardPass => {
                self.expect_turn(&msg)?;
                let round = round_of(&msg);
                let y_star = msg.matrices.pop().expect("decoded shard has two matrices");
                let x_star = msg.matrices.pop().expect("decoded shard has two matrices");
                let shard = EncryptedShard {
                    origin: msg.route[0],
                    x_star,
                    y_star,
                    block_sizes: msg.block_sizes,
                    applied: msg.route[..round].to_vec(),
                };
                let passed = pass_encrypt(&shard, &self.keys)?;
                self.passes_done += 1;
                let (msg_type, to) = if passed.applied.len() == msg.route.len() {
                    (MsgType::ShardFinal, self.cloud_node)
                } else {
                    (MsgType::ShardPass, node_of(msg.route[passed.applied.len()]))
                };
                Ok(vec![send(
                    to,
                    &Message {
                        msg_type,
                        origin: me,
                        round: passed.applied.len() as u16,
                        route: msg.route,
                        block_sizes: passed.block_sizes,
                        matrices: vec![passed.x_star, passed.y_star],
                    },
                )?])
            }
            MsgType::FactorPass => {
                self.expect_turn(&msg)?;
                if self.factor_done {
                    return Err(Error::DuplicatePass(self.id()));
                }
                let m = mask_factor_round(&msg.matrices[0], &self.keys)?;
                self.factor_done = true;
                Ok(vec![self.forward_factor(m, round_of(&msg) + 1, me)?])
            }
            MsgType::Estimate => {
                self.expect_turn(&msg)?;
                if self.decrypted {
                    return Err(Error::DoubleDecrypt(self.id()));
                }
                let (b, c) = match &self.decrypt_masks {
                    Some((b, c)) => (b, c),
                    None => (self.keys.b_matrix(), self.keys.c_matrix()),
                };
                let values = unmask_with(&msg.matrices[0], b, c)?;
                self.decrypted = true;
                let round = round_of(&msg) + 1;
                if round < msg.route.len() {
                    return Ok(vec![send(
                        node_of(msg.route[round]),
                        &Message {
                            msg_type: MsgType::Estimate,
                            origin: me,
                            round: round as u16,
                            route: msg.route,
                            block_sizes: vec![],
                            matrices: vec![values],
                        },
                    )?]);
                }
                let out = AgencyId::all(self.k())
                    .filter(|&a| a != self.id())
                    .map(|a| {
                        send(
                            node_of(a),
                            &Message {
                                msg_type: MsgType::PlainEstimate,
                                origin: me,
                                round: round as u16,
                                route: msg.route.clone(),
                                block_sizes: vec![],
                                matrices: vec![values.clone()],
                            },
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.plain = Some(values);
                Ok(out)
            }
            MsgType::PlainEstimate => {
                if self.plain.is_some() {
                    return Err(Error::ProtocolOrderViolation("second plain estimate".into()));
                }
                self.plain = msg.matrices.pop();
                Ok(vec![])
            }
            other => Err(Error::ProtocolOrderViolation(format!(
                "agency {} received {other:?}",
                self.id()
            ))),
        }
    }

    fn is_done(&self, scope: Scope) -> bool {
        match scope {
            Scope::PreModeling => self.passes_done + 1 == self.k(),
            Scope::MaskRelease => self.factor_done,
            Scope::Full => self.plain.is_some() && (!self.needs_factor(scope) || self.factor_done),
        }
    }
}

pub(crate) struct CloudRole {
    pub k: usize,
    pub mode: Mode,
    pub lambda: f64,
    pub decrypt_route: Vec<AgencyId>,
    pub perturbation: Option<Perturbation>,
    pub rng: StreamRng,
    pub shards: Vec<EncryptedShard>,
    pub factor: Option<Mat>,
    pub aggregate: Option<EncryptedAggregate>,
    pub encrypted_estimate: Option<Mat>,
    pub pre_done_at: Option<Duration>,
    pub fit_done_at: Option<Duration>,
}

impl CloudRole {
    fn needs_factor(&self, scope: Scope) -> bool {
        scope == Scope::MaskRelease || (scope == Scope::Full && self.mode == Mode::Ridge)
    }

    fn handle(&mut self, mut msg: Message, scope: Scope, me: NodeId, now: Duration) -> Result<Vec<Outgoing>> {
        match msg.msg_type {
            MsgType::ShardFinal => {
                let round = round_of(&msg);
                if round != self.k || msg.route.len() != self.k {
                    return Err(Error::ProtocolOrderViolation(format!(
                        "shard from {:?} carries {round} of {} passes",
                        msg.route.first(),
                        self.k
                    )));
                }
                if scope == Scope::MaskRelease || self.aggregate.is_some() {
                    return Err(Error::ProtocolOrderViolation("unexpected shard".into()));
                }
                let y_star = msg.matrices.pop().expect("decoded shard has two matrices");
                let x_star = msg.matrices.pop().expect("decoded shard has two matrices");
                self.shards.push(EncryptedShard {
                    origin: msg.route[0],
                    x_star,
                    y_star,
                    block_sizes: msg.block_sizes,
                    applied: msg.route,
                });
            }
            MsgType::FactorFinal => {
                if !self.needs_factor(scope) || self.factor.is_some() || round_of(&msg) != self.k {
                    return Err(Error::ProtocolOrderViolation("unexpected mask factor".into()));
                }
                self.factor = msg.matrices.pop();
            }
            other => return Err(Error::ProtocolOrderViolation(format!("cloud received {other:?}"))),
        }
        self.progress(scope, me, now)
    }

    fn progress(&mut self, scope: Scope, me: NodeId, now: Duration) -> Result<Vec<Outgoing>> {
        if self.aggregate.is_none() && scope != Scope::MaskRelease && self.shards.len() == self.k {
            self.aggregate = Some(EncryptedAggregate::assemble(std::mem::take(&mut self.shards), self.k)?);
        }
        let have_factor = !self.needs_factor(scope) || self.factor.is_some();
        let have_shards = scope == Scope::MaskRelease || self.aggregate.is_some();
        if !(have_factor && have_shards) || self.pre_done_at.is_some() {
            return Ok(vec![]);
        }
        self.pre_done_at = Some(now);
        if let Some(r) = self.factor.clone() {
            if let Some(agg) = self.aggregate.take() {
                self.aggregate = Some(agg.with_mask_factor(r)?);
            }
        }
        if scope != Scope::Full {
            return Ok(vec![]);
        }
        let agg = self.aggregate.as_ref().expect("aggregate assembled above");
        let mut values = cloud_fit(agg, self.mode, self.lambda)?.values;
        if let Some(p) = self.perturbation {
            values = apply_perturbation(&values, p, &mut self.rng)?;
        }
        self.encrypted_estimate = Some(values.clone());
        self.fit_done_at = Some(now);
        let first = *self
            .decrypt_route
            .first()
            .ok_or_else(|| Error::InvalidConfig("empty decryption order".into()))?;
        Ok(vec![send(
            node_of(first),
            &Message {
                msg_type: MsgType::Estimate,
                origin: me,
                round: 0,
                route: self.decrypt_route.clone(),
                block_sizes: vec![],
                matrices: vec![values],
            },
        )?])
    }

    fn is_done(&self, scope: Scope) -> bool {
        match scope {
            Scope::PreModeling | Scope::MaskRelease => self.pre_done_at.is_some(),
            Scope::Full => self.encrypted_estimate.is_some(),
        }
    }
}

/// One participant: an agency, the cloud, or an agency hosting the cloud.
pub struct Node {
    pub id: NodeId,
    scope: Scope,
    epoch: Instant,
    pub(crate) agency: Option<AgencyRole>,
    pub(crate) cloud: Option<CloudRole>,
}

impl Node {
    pub(crate) fn new(id: NodeId, scope: Scope, agency: Option<AgencyRole>, cloud: Option<CloudRole>) -> Self {
        Self {
            id,
            scope,
            epoch: Instant::now(),
            agency,
            cloud,
        }
    }

    /// Sets the reference instant for the cloud's phase marks.
    pub fn set_epoch(&mut self, epoch: Instant) {
        self.epoch = epoch;
    }

    pub fn start(&mut self) -> Result<Vec<Outgoing>> {
        match self.agency.as_mut() {
            Some(a) => a.start(self.scope, self.id),
            None => Ok(vec![]),
        }
    }

    /// Handles one frame body.
    pub fn handle(&mut self, body: &[u8]) -> Result<Vec<Outgoing>> {
        let msg = Message::decode_body(body)?;
        let now = self.epoch.elapsed();
        if msg.msg_type.for_cloud() {
            let cloud = self
                .cloud
                .as_mut()
                .ok_or_else(|| Error::ProtocolOrderViolation(format!("node {} is not the cloud", self.id)))?;
            cloud.handle(msg, self.scope, self.id, now)
        } else {
            let agency = self
                .agency
                .as_mut()
                .ok_or_else(|| Error::ProtocolOrderViolation(format!("node {} hosts no agency", self.id)))?;
            agency.handle(msg, self.id)
        }
    }

    pub fn is_done(&self) -> bool {
        self.agency.as_ref().is_none_or(|a| a.is_done(self.scope))
            && self.cloud.as_ref().is_none_or(|c| c.is_done(self.scope))
    }
}
