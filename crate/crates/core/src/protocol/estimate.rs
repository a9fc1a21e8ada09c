use serde::Serialize;

use crate::error::{Error, Result};
use crate::keygen::{AgencyId, AgencyKeys, Mode};
use crate::matrix::Mat;

/// Default verification tolerance on the pseudo-response column.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Encrypted,
    PartiallyDecrypted(usize),
    Plain,
}

/// `p×3` coefficients: true estimate, verification estimate, decoy.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateMatrix {
    pub values: Mat,
    pub applied: Vec<AgencyId>,
    k: usize,
}

impl EstimateMatrix {
    pub fn encrypted(values: Mat, k: usize) -> Self {
        Self {
            values,
            applied: Vec::new(),
            k,
        }
    }

    /// An estimate whose decryption rounds were completed elsewhere.
    pub fn plain(values: Mat) -> Self {
        Self {
            values,
            applied: Vec::new(),
            k: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn stage(&self) -> Stage {
        match self.applied.len() {
            n if n >= self.k => Stage::Plain,
            0 => Stage::Encrypted,
            n => Stage::PartiallyDecrypted(n),
        }
    }

    pub fn beta(&self) -> Vec<f64> {
        self.values.column(0)
    }
}

/// `β ← B_i · β · C_i⁻¹`.
pub fn decrypt_round(est: &EstimateMatrix, keys: &AgencyKeys) -> Result<EstimateMatrix> {
    let id = keys.agency_id;
    if est.applied.contains(&id) {
        return Err(Error::DoubleDecrypt(id));
    }
    if est.stage() == Stage::Plain {
        return Err(Error::ProtocolOrderViolation("estimate is already plain".into()));
    }
    let mut applied = est.applied.clone();
    applied.push(id);
    Ok(EstimateMatrix {
        values: unmask_with(&est.values, keys.b_matrix(), keys.c_matrix())?,
        applied,
        k: est.k,
    })
}

pub(crate) fn unmask_with(values: &Mat, b: &Mat, c: &Mat) -> Result<Mat> {
    let left = b.try_matmul(values)?;
    c.solve_right(&left).map_err(|_| Error::Singular)
}

/// Residual-Gram round: `S ← C_i⁻ᵀ · S · C_i⁻¹`.
pub fn decrypt_residual_gram_round(s: &Mat, keys: &AgencyKeys) -> Result<Mat> {
    let c = keys.c_matrix();
    if s.shape() != c.shape() {
        return Err(Error::dims("residual Gram must be 3x3"));
    }
    let right = c.solve_right(s).map_err(|_| Error::Singular)?;
    Ok(c.solve_right(&right.transpose()).map_err(|_| Error::Singular)?.transpose())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Tampered,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Verification {
    pub verdict: Verdict,
    /// `max|β_s1 − target|`.
    pub max_deviation: f64,
    pub tol: f64,
}

/// Checks the verification column against `𝟙` (linear) or `0` (ridge).
pub fn verify_estimate(est: &EstimateMatrix, mode: Mode, tol: f64) -> Result<Verification> {
    if est.stage() != Stage::Plain {
        return Err(Error::ProtocolOrderViolation("verification needs a plain estimate".into()));
    }
    Ok(verify_values(&est.values, mode, tol))
}

pub(crate) fn verify_values(values: &Mat, mode: Mode, tol: f64) -> Verification {
    let target = match mode {
        Mode::Linear => 1.0,
        Mode::Ridge => 0.0,
    };
    // A NaN deviation must not pass.
    let max_deviation = values
        .column(1)
        .iter()
        .map(|v| (v - target).abs())
        .fold(0.0, |a: f64, d| if d.is_nan() { f64::INFINITY } else { a.max(d) });
    let verdict = if values.cols() == 3 && max_deviation <= tol {
        Verdict::Accepted
    } else {
        Verdict::Tampered
    };
    Verification {
        verdict,
        max_deviation,
        tol,
    }
}
