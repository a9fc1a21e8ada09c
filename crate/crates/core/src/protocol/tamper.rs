use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keygen::{AgencyId, AgencyKeys, KeygenConfig, MaskBases};
use crate::matrix::{commute_materialize, CommutativeKey, Mat, MAX_RESAMPLE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Agency(AgencyId),
    Cloud,
}

/// How a malicious cloud alters the encrypted estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Adds `magnitude · N(0, 1)` to every entry.
    Gaussian { magnitude: f64 },
    /// Adds `delta` to a single entry.
    Entry { row: usize, col: usize, delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperAction {
    Honest,
    /// Random `Y_s1` instead of the row sums (or zeros).
    SkipPseudoResponse,
    /// `B_i`, `C_i` replaced by invertible matrices that are not polynomials
    /// in the shared bases.
    NonCommutativeKey,
    PerturbResult(Perturbation),
    /// Decrypts with a freshly drawn coefficient vector.
    WrongDecrypt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamperPlan {
    pub actor: Actor,
    pub action: TamperAction,
}

impl TamperPlan {
    pub fn honest() -> Self {
        Self {
            actor: Actor::Cloud,
            action: TamperAction::Honest,
        }
    }

    pub fn is_honest(&self) -> bool {
        self.action == TamperAction::Honest
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match (self.actor, self.action) {
            (_, TamperAction::Honest) => Ok(()),
            (Actor::Cloud, TamperAction::PerturbResult(_)) => Ok(()),
            (Actor::Cloud, a) => Err(Error::InvalidArgument(format!("the cloud cannot perform {a:?}"))),
            (Actor::Agency(_), TamperAction::PerturbResult(_)) => {
                Err(Error::InvalidArgument("only the cloud can perturb the result".into()))
            }
            (Actor::Agency(id), _) if id.0 == 0 || id.index() >= k => {
                Err(Error::InvalidArgument(format!("agency {id} outside 1..={k}")))
            }
            (Actor::Agency(_), _) => Ok(()),
        }
    }

    pub fn targets(&self, id: AgencyId) -> Option<TamperAction> {
        match self.actor {
            Actor::Agency(a) if a == id && !self.is_honest() => Some(self.action),
            _ => None,
        }
    }

    pub fn cloud_perturbation(&self) -> Option<Perturbation> {
        match (self.actor, self.action) {
            (Actor::Cloud, TamperAction::PerturbResult(p)) => Some(p),
            _ => None,
        }
    }
}

pub fn apply_perturbation<R: Rng + ?Sized>(values: &Mat, p: Perturbation, rng: &mut R) -> Result<Mat> {
    let mut out = values.clone();
    match p {
        Perturbation::Gaussian { magnitude } => {
            for r in 0..out.rows() {
                for c in 0..out.cols() {
                    let z: f64 = rng.sample(StandardNormal);
                    out[(r, c)] += magnitude * z;
                }
            }
        }
        Perturbation::Entry { row, col, delta } => {
            if row >= out.rows() || col >= out.cols() {
                return Err(Error::InvalidArgument(format!("entry ({row}, {col}) outside estimate")));
            }
            out[(row, col)] += delta;
        }
    }
    Ok(out)
}

/// Dense Gaussian matrix scaled to `like`'s spectral norm, resampled until
/// its conditioning is no worse than `limit`.
fn rogue_matrix<R: Rng + ?Sized>(like: &Mat, limit: f64, rng: &mut R) -> Result<Mat> {
    let dim = like.rows();
    for _ in 0..MAX_RESAMPLE {
        let g = Mat::gaussian(dim, dim, 1.0, rng);
        let cond = g.condition_number();
        if cond.is_finite() && cond <= limit {
            return Ok(g.scale(like.spectral_norm() / g.spectral_norm()));
        }
    }
    Err(Error::ResampleExhausted {
        limit,
        attempts: MAX_RESAMPLE,
    })
}

/// Non-polynomial replacements for an agency's `B_i` and `C_i`.
pub fn non_commutative_masks<R: Rng + ?Sized>(keys: &AgencyKeys, cfg: &KeygenConfig, rng: &mut R) -> Result<(Mat, Mat)> {
    let limit = cfg.conditioning.cond_max;
    let b = rogue_matrix(keys.b_matrix(), limit.min(1e4 * keys.b_matrix().rows() as f64), rng)?;
    let c = rogue_matrix(keys.c_matrix(), limit.min(1e4), rng)?;
    Ok((b, c))
}

/// Masks from a fresh coefficient draw over the right bases.
pub fn wrong_decrypt_masks<R: Rng + ?Sized>(bases: &MaskBases, cfg: &KeygenConfig, rng: &mut R) -> Result<(Mat, Mat)> {
    let p = bases.p();
    for _ in 0..MAX_RESAMPLE {
        let bk = CommutativeKey::random(cfg.degree_for(p), cfg.sigma_coeff, rng)?;
        let ck = CommutativeKey::random(3, cfg.sigma_coeff, rng)?;
        let b = commute_materialize(&bases.b_basis, &bk)?;
        let c = commute_materialize(&bases.c_basis, &ck)?;
        if b.condition_number() <= cfg.conditioning.cond_max && c.condition_number() <= cfg.conditioning.cond_max {
            return Ok((b, c));
        }
    }
    Err(Error::ResampleExhausted {
        limit: cfg.conditioning.cond_max,
        attempts: MAX_RESAMPLE,
    })
}
