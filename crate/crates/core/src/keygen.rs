//! Per-agency secret material: shared bases, commutative keys, orthogonal
//! blocks, additive noise, ring order, and pseudo responses.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{
    commute_materialize, random_gaussian_basis, random_ortho_blocks, CommutativeKey, Conditioning,
    Mat, OrthoBlocks, MAX_RESAMPLE,
};
use crate::seed::stream;

/// 1-based agency index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgencyId(pub u8);

impl AgencyId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        AgencyId(u8::try_from(i + 1).expect("at most 255 agencies"))
    }

    /// Ids `1..=k`.
    pub fn all(k: usize) -> impl Iterator<Item = AgencyId> {
        (0..k).map(AgencyId::from_index)
    }
}

impl fmt::Display for AgencyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedSeed(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Linear,
    Ridge,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Linear => "linear",
            Mode::Ridge => "ridge",
        })
    }
}

/// How a shard's rows are cut into orthogonal blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockPolicy {
    /// Blocks of this many rows; the last block takes the remainder.
    Size(usize),
    /// Exactly this many near-equal blocks per shard (sizes differ by <= 1).
    PerShard(usize),
}

impl BlockPolicy {
    pub fn block_sizes(&self, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::InvalidArgument("shard with no rows".into()));
        }
        match *self {
            BlockPolicy::Size(0) | BlockPolicy::PerShard(0) => {
                Err(Error::InvalidArgument("block size/count must be >= 1".into()))
            }
            BlockPolicy::Size(b) => {
                let mut sizes = vec![b; n / b];
                if !n.is_multiple_of(b) {
                    sizes.push(n % b);
                }
                Ok(sizes)
            }
            BlockPolicy::PerShard(k) => {
                if k > n {
                    return Err(Error::InvalidArgument(format!(
                        "{k} blocks requested for {n} rows"
                    )));
                }
                Ok((0..k).map(|i| n / k + usize::from(i < n % k)).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeygenConfig {
    /// Standard deviation of the pre-rescale B₀ entries.
    pub sigma_b: f64,
    pub sigma_coeff: f64,
    pub sigma_delta: f64,
    pub degree_cap: usize,
    pub block: BlockPolicy,
    pub conditioning: Conditioning,
}

impl Default for KeygenConfig {
    fn default() -> Self {
        Self {
            sigma_b: 1.0,
            sigma_coeff: 1.0,
            sigma_delta: 0.0,
            degree_cap: 16,
            block: BlockPolicy::Size(100),
            conditioning: Conditioning::default(),
        }
    }
}

impl KeygenConfig {
    pub fn degree_for(&self, p: usize) -> usize {
        p.min(self.degree_cap).max(1)
    }
}

/// Shared bases every agency derives from the common seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskBases {
    pub b_basis: Mat,
    pub c_basis: Mat,
    pub seed: SharedSeed,
    b_cond: f64,
    c_cond: f64,
}

impl MaskBases {
    pub fn p(&self) -> usize {
        self.b_basis.rows()
    }

    pub fn b_cond(&self) -> f64 {
        self.b_cond
    }

    pub fn c_cond(&self) -> f64 {
        self.c_cond
    }

    /// Identity bases for unmasked debug runs.
    pub fn identity(p: usize, seed: SharedSeed) -> Self {
        Self {
            b_basis: Mat::identity(p),
            c_basis: Mat::identity(3),
            seed,
            b_cond: 1.0,
            c_cond: 1.0,
        }
    }
}

pub fn derive_bases(seed: SharedSeed, p: usize, cfg: &KeygenConfig) -> Result<MaskBases> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be >= 1".into()));
    }
    let b_basis = random_gaussian_basis(p, cfg.sigma_b, &cfg.conditioning, &mut stream(seed.0, "basis-b", p as u64))?;
    let c_basis = random_gaussian_basis(3, 1.0, &cfg.conditioning, &mut stream(seed.0, "basis-c", 3))?;
    Ok(MaskBases {
        b_cond: b_basis.condition_number(),
        c_cond: c_basis.condition_number(),
        b_basis,
        c_basis,
        seed,
    })
}

/// Ring order `Q_i`: a permutation of `1..=K` starting at the owner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ring(Vec<AgencyId>);

impl Ring {
    /// `i, i+1, …, K, 1, …, i−1`.
    pub fn rotation(owner: AgencyId, k: usize) -> Self {
        let start = owner.index();
        Ring((0..k).map(|j| AgencyId::from_index((start + j) % k)).collect())
    }

    pub fn new(order: Vec<AgencyId>, owner: AgencyId) -> Result<Self> {
        let k = order.len();
        if order.first() != Some(&owner) {
            return Err(Error::InvalidArgument(format!("ring must start at agency {owner}")));
        }
        let mut seen = vec![false; k];
        for id in &order {
            if id.0 == 0 || id.index() >= k || std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::InvalidArgument(format!(
                    "ring {order:?} is not a permutation of 1..={k}"
                )));
            }
        }
        Ok(Ring(order))
    }

    pub fn order(&self) -> &[AgencyId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One agency's secret material. Never serialized.
#[derive(Clone, Debug)]
pub struct AgencyKeys {
    pub agency_id: AgencyId,
    /// `A_{self, j}` for every target shard `j`.
    pub a_blocks_for: BTreeMap<AgencyId, OrthoBlocks>,
    pub b_key: CommutativeKey,
    pub c_key: CommutativeKey,
    pub delta: Mat,
    pub ring: Ring,
    b_matrix: Mat,
    c_matrix: Mat,
}

impl AgencyKeys {
    /// Materialized `B_i`.
    pub fn b_matrix(&self) -> &Mat {
        &self.b_matrix
    }

    /// Materialized `C_i`.
    pub fn c_matrix(&self) -> &Mat {
        &self.c_matrix
    }

    pub fn k(&self) -> usize {
        self.a_blocks_for.len()
    }

    pub fn blocks_for(&self, target: AgencyId) -> Result<&OrthoBlocks> {
        self.a_blocks_for
            .get(&target)
            .ok_or_else(|| Error::InvalidArgument(format!("agency {} has no blocks for {target}", self.agency_id)))
    }

    /// Replaces the materialized masks with arbitrary matrices. Used by
    /// tamper drills to break commutativity.
    pub fn override_masks(&mut self, b: Mat, c: Mat) -> Result<()> {
        if b.shape() != self.b_matrix.shape() || c.shape() != self.c_matrix.shape() {
            return Err(Error::dims("replacement masks have wrong shape"));
        }
        self.b_matrix = b;
        self.c_matrix = c;
        Ok(())
    }

    pub fn with_ring(mut self, ring: Ring) -> Result<Self> {
        if ring.order()[0] != self.agency_id || ring.len() != self.k() {
            return Err(Error::InvalidArgument("ring does not fit this agency".into()));
        }
        self.ring = ring;
        Ok(self)
    }

    /// Keys that leave data unmasked (A = I, B = I, C = I, Δ = 0).
    pub fn identity(agency_id: AgencyId, sample_sizes: &[usize], p: usize, block: BlockPolicy) -> Result<Self> {
        let k = sample_sizes.len();
        let mut a_blocks_for = BTreeMap::new();
        for (j, &n) in sample_sizes.iter().enumerate() {
            a_blocks_for.insert(AgencyId::from_index(j), OrthoBlocks::identity(&block.block_sizes(n)?)?);
        }
        Ok(Self {
            agency_id,
            a_blocks_for,
            b_key: CommutativeKey::unit(),
            c_key: CommutativeKey::unit(),
            delta: Mat::zeros(sample_sizes[agency_id.index()], p),
            ring: Ring::rotation(agency_id, k),
            b_matrix: Mat::identity(p),
            c_matrix: Mat::identity(3),
        })
    }

    /// Audit fingerprint over non-secret metadata only (ids, layout, degrees).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update([self.agency_id.0]);
        for (target, blocks) in &self.a_blocks_for {
            h.update([target.0]);
            for s in blocks.block_sizes() {
                h.update((s as u64).to_le_bytes());
            }
        }
        h.update((self.b_key.degree() as u64).to_le_bytes());
        h.update((self.c_key.degree() as u64).to_le_bytes());
        for id in self.ring.order() {
            h.update([id.0]);
        }
        hex::encode(h.finalize())
    }
}

fn draw_key<R: Rng + ?Sized>(basis: &Mat, degree: usize, sigma: f64, limit: f64, rng: &mut R) -> Result<(CommutativeKey, Mat)> {
    for _ in 0..MAX_RESAMPLE {
        let key = match CommutativeKey::random(degree, sigma, rng) {
            Ok(k) => k,
            Err(_) => continue,
        };
        let m = commute_materialize(basis, &key)?;
        if m.condition_number() <= limit {
            return Ok((key, m));
        }
    }
    Err(Error::ResampleExhausted {
        limit,
        attempts: MAX_RESAMPLE,
    })
}

pub fn gen_agency_keys<R: Rng + ?Sized>(
    bases: &MaskBases,
    agency_id: AgencyId,
    sample_sizes: &[usize],
    cfg: &KeygenConfig,
    rng: &mut R,
) -> Result<AgencyKeys> {
    let k = sample_sizes.len();
    if k == 0 || agency_id.0 == 0 || agency_id.index() >= k {
        return Err(Error::InvalidArgument(format!("agency {agency_id} outside 1..={k}")));
    }
    if sample_sizes.contains(&0) {
        return Err(Error::InvalidArgument("every agency needs at least one sample".into()));
    }
    if !(cfg.sigma_coeff > 0.0) || cfg.sigma_delta < 0.0 {
        return Err(Error::InvalidArgument("sigma_coeff must be > 0 and sigma_delta >= 0".into()));
    }
    let p = bases.p();

    let (b_key, b_matrix) = draw_key(
        &bases.b_basis,
        cfg.degree_for(p),
        cfg.sigma_coeff,
        cfg.conditioning.key_limit(bases.b_cond),
        rng,
    )?;
    let (c_key, c_matrix) = draw_key(
        &bases.c_basis,
        3,
        cfg.sigma_coeff,
        cfg.conditioning.key_limit(bases.c_cond),
        rng,
    )?;

    let mut a_blocks_for = BTreeMap::new();
    for (j, &n) in sample_sizes.iter().enumerate() {
        let sizes = cfg.block.block_sizes(n)?;
        a_blocks_for.insert(AgencyId::from_index(j), random_ortho_blocks(&sizes, rng)?);
    }

    let n_own = sample_sizes[agency_id.index()];
    let delta = if cfg.sigma_delta > 0.0 {
        Mat::gaussian(n_own, p, cfg.sigma_delta, rng)
    } else {
        Mat::zeros(n_own, p)
    };

    Ok(AgencyKeys {
        agency_id,
        a_blocks_for,
        b_key,
        c_key,
        delta,
        ring: Ring::rotation(agency_id, k),
        b_matrix,
        c_matrix,
    })
}

/// The three response columns `[y, Y_s1, Y_s2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseBundle {
    pub y_true: Vec<f64>,
    pub y_verify: Vec<f64>,
    pub y_decoy: Vec<f64>,
    pub mode: Mode,
}

impl ResponseBundle {
    /// n×3 matrix with columns `[y_true, y_verify, y_decoy]`.
    pub fn to_mat(&self) -> Mat {
        Mat::from_columns(&[&self.y_true, &self.y_verify, &self.y_decoy]).expect("equal-length responses")
    }
}

pub fn make_responses<R: Rng + ?Sized>(x_tilde: &Mat, y: &[f64], mode: Mode, rng: &mut R) -> Result<ResponseBundle> {
    if x_tilde.rows() != y.len() {
        return Err(Error::dims(format!("{} rows but {} responses", x_tilde.rows(), y.len())));
    }
    let y_verify = match mode {
        Mode::Linear => x_tilde.row_sums(),
        Mode::Ridge => vec![0.0; y.len()],
    };
    let y_decoy = (0..y.len()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(ResponseBundle {
        y_true: y.to_vec(),
        y_verify,
        y_decoy,
        mode,
    })
}
