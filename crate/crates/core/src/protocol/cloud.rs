use std::ops::Range;

use crate::error::{Error, Result};
use crate::keygen::{AgencyId, AgencyKeys, Mode};
use crate::matrix::Mat;

use super::estimate::EstimateMatrix;
use super::shard::EncryptedShard;

/// One orthogonal block of the aggregate, by owning agency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowBlock {
    pub agency: AgencyId,
    /// Position of the block within its agency's shard.
    pub index: usize,
    pub rows: Range<usize>,
}

/// Released mask factor: upper-triangular `R` with `RᵀR = BᵀB`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskFactor {
    pub r: Mat,
}

impl MaskFactor {
    pub fn btb(&self) -> Mat {
        self.r.gram()
    }
}

/// Starting value for the factor ring.
pub fn mask_factor_seed(p: usize) -> Mat {
    Mat::identity(p)
}

/// One factor hop: `M ← R(M·B_i)`. After every agency has applied its
/// hop, `MᵀM = (ΠB_i)ᵀ(ΠB_i)`.
pub fn mask_factor_round(m: &Mat, keys: &AgencyKeys) -> Result<Mat> {
    if m.cols() != keys.b_matrix().rows() {
        return Err(Error::dims("mask factor width does not match B"));
    }
    Ok(m.matmul(keys.b_matrix()).qr_r_factor())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncryptedAggregate {
    pub x_star: Mat,
    pub y_star: Mat,
    pub blocks: Vec<RowBlock>,
    pub mask_factor: Option<MaskFactor>,
    k: usize,
}

impl EncryptedAggregate {
    /// Row-stacks fully passed shards in agency order.
    pub fn assemble(mut shards: Vec<EncryptedShard>, k: usize) -> Result<Self> {
        if shards.len() != k {
            return Err(Error::ProtocolOrderViolation(format!(
                "expected {k} shards, got {}",
                shards.len()
            )));
        }
        shards.sort_by_key(|s| s.origin);
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (i, s) in shards.iter().enumerate() {
            if s.origin != AgencyId::from_index(i) {
                return Err(Error::ProtocolOrderViolation(format!("duplicate shard from {}", s.origin)));
            }
            if !s.is_complete(k) {
                return Err(Error::ProtocolOrderViolation(format!(
                    "shard {} carries {} of {k} passes",
                    s.origin,
                    s.applied.len()
                )));
            }
            if s.block_sizes.iter().sum::<usize>() != s.n() {
                return Err(Error::dims(format!("shard {} block layout does not cover its rows", s.origin)));
            }
            for (index, &len) in s.block_sizes.iter().enumerate() {
                blocks.push(RowBlock {
                    agency: s.origin,
                    index,
                    rows: offset..offset + len,
                });
                offset += len;
            }
        }
        let x_star = Mat::vstack(&shards.iter().map(|s| &s.x_star).collect::<Vec<_>>())?;
        let y_star = Mat::vstack(&shards.iter().map(|s| &s.y_star).collect::<Vec<_>>())?;
        Ok(Self {
            x_star,
            y_star,
            blocks,
            mask_factor: None,
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.x_star.rows()
    }

    pub fn p(&self) -> usize {
        self.x_star.cols()
    }

    pub fn with_mask_factor(mut self, r: Mat) -> Result<Self> {
        if r.shape() != (self.p(), self.p()) {
            return Err(Error::dims("mask factor must be p x p"));
        }
        self.mask_factor = Some(MaskFactor { r });
        Ok(self)
    }

    /// Released `BᵀB`, if any.
    pub fn btb(&self) -> Option<Mat> {
        self.mask_factor.as_ref().map(MaskFactor::btb)
    }

    /// Row ranges of `folds` folds. Fold `f` holds every block whose index
    /// within its agency is congruent to `f` modulo `folds`, so each agency
    /// contributes to each fold.
    pub fn fold_rows(&self, folds: usize) -> Result<Vec<Vec<Range<usize>>>> {
        if folds < 2 {
            return Err(Error::InvalidArgument("need at least 2 folds".into()));
        }
        for agency in AgencyId::all(self.k) {
            let count = self.blocks.iter().filter(|b| b.agency == agency).count();
            if count < folds {
                return Err(Error::FoldBlockMisaligned(format!(
                    "agency {agency} has {count} blocks, fewer than {folds} folds"
                )));
            }
        }
        let mut out = vec![Vec::new(); folds];
        for b in &self.blocks {
            out[b.index % folds].push(b.rows.clone());
        }
        Ok(out)
    }
}

/// Rows of `0..n` not covered by `held_out`.
pub fn complement(n: usize, held_out: &[Range<usize>]) -> Vec<Range<usize>> {
    let mut sorted = held_out.to_vec();
    sorted.sort_by_key(|r| r.start);
    let mut out = Vec::new();
    let mut at = 0;
    for r in sorted {
        if r.start > at {
            out.push(at..r.start);
        }
        at = at.max(r.end);
    }
    if at < n {
        out.push(at..n);
    }
    out
}

/// Encrypted fit on the whole aggregate.
pub fn cloud_fit(agg: &EncryptedAggregate, mode: Mode, lambda: f64) -> Result<EstimateMatrix> {
    cloud_fit_rows(agg, &[0..agg.n()], mode, lambda)
}

/// Encrypted fit restricted to `rows`.
///
/// Linear: least squares of `Y*` on `X*`. Ridge: least squares of
/// `[Y*; 0]` on `[X*; √λ·R]`, whose normal equations are
/// `(X*ᵀX* + λ·BᵀB) β* = X*ᵀY*`.
pub fn cloud_fit_rows(agg: &EncryptedAggregate, rows: &[Range<usize>], mode: Mode, lambda: f64) -> Result<EstimateMatrix> {
    let x = agg.x_star.select_rows(rows);
    let y = agg.y_star.select_rows(rows);
    let values = match mode {
        Mode::Linear => x.qr_least_squares(&y)?,
        Mode::Ridge => {
            if !(lambda >= 0.0) || !lambda.is_finite() {
                return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
            }
            let factor = agg
                .mask_factor
                .as_ref()
                .ok_or_else(|| Error::ProtocolOrderViolation("ridge fit before BᵀB release".into()))?;
            let xa = Mat::vstack(&[&x, &factor.r.scale(lambda.sqrt())])?;
            let ya = Mat::vstack(&[&y, &Mat::zeros(agg.p(), y.cols())])?;
            xa.qr_least_squares(&ya)?
        }
    };
    Ok(EstimateMatrix::encrypted(values, agg.k))
}

/// Encrypted residual Gram `S = R*ᵀR*` with `R* = Y*_f − X*_f β*`.
pub fn residual_gram(agg: &EncryptedAggregate, rows: &[Range<usize>], beta_star: &Mat) -> Result<Mat> {
    let x = agg.x_star.select_rows(rows);
    let y = agg.y_star.select_rows(rows);
    let r = y.sub(&x.try_matmul(beta_star)?);
    Ok(r.gram())
}
