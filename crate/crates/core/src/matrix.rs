//! Dense real-matrix kernel.
//!
//! [`Mat`] is a small row-major `f64` matrix used for every masked and
//! plaintext quantity in the crate. Factorizations (QR, LU, Cholesky, SVD)
//! are delegated to `nalgebra`; products, block application and polynomial
//! materialization are done here so that results are bit-reproducible for a
//! fixed seed regardless of where a computation runs.

use std::fmt;
use std::ops::{Index, IndexMut, Mul, Range};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of draws before a conditioned sampler gives up.
pub const MAX_RESAMPLE: usize = 100;

/// Absolute condition-number cap for generated bases and keys.
pub const DEFAULT_COND_MAX: f64 = 1e8;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                write!(f, "{:>12.6} ", self[(r, c)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Mat {
    /// Builds a matrix from row-major entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dims(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Panics on ragged input; meant for literals and tests.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data).expect("valid literal matrix")
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self::new(values.len(), 1, values.to_vec()).expect("valid column vector")
    }

    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::dims("columns of unequal length"));
        }
        let mut m = Self::zeros(rows.max(1), columns.len().max(1));
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(rows, cols);
        for v in &mut m.data {
            let z: f64 = rng.sample(StandardNormal);
            *v = sigma * z;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (r, v) in values.iter().enumerate() {
            self[(r, c)] = *v;
        }
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Matrix product; panics if inner dimensions differ.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "matmul {}x{} by {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn try_matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::dims(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.matmul(other))
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Mat {
        self.transpose().matmul(self)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    /// Max-norm: largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self[(r, c)].powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contiguous block of rows.
    pub fn rows_range(&self, range: Range<usize>) -> Mat {
        assert!(range.end <= self.rows && range.start < range.end);
        Mat {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }

    /// Rows from several ranges, concatenated in the given order.
    pub fn select_rows(&self, ranges: &[Range<usize>]) -> Mat {
        let n: usize = ranges.iter().map(|r| r.len()).sum();
        let mut data = Vec::with_capacity(n * self.cols);
        for r in ranges {
            assert!(r.end <= self.rows);
            data.extend_from_slice(&self.data[r.start * self.cols..r.end * self.cols]);
        }
        Mat {
            rows: n,
            cols: self.cols,
            data,
        }
    }

    pub fn vstack(parts: &[&Mat]) -> Result<Mat> {
        let cols = parts
            .first()
            .map(|m| m.cols)
            .ok_or_else(|| Error::dims("vstack of nothing"))?;
        if parts.iter().any(|m| m.cols != cols) {
            return Err(Error::dims("vstack column mismatch"));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Mat { rows, cols, data })
    }

    /// Largest absolute entry of `self - other` divided by the largest
    /// absolute entry of `other`.
    pub fn rel_max_diff(&self, other: &Mat) -> f64 {
        let scale = other.max_abs();
        let diff = self.sub(other).max_abs();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.to_nalgebra()
            .singular_values()
            .iter()
            .copied()
            .collect()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.singular_values().into_iter().fold(0.0, f64::max)
    }

    /// 2-norm condition number; `inf` for singular input.
    pub fn condition_number(&self) -> f64 {
        let sv = self.singular_values();
        let max = sv.iter().copied().fold(0.0, f64::max);
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if min == 0.0 || !min.is_finite() {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn determinant(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::dims("determinant of non-square matrix"));
        }
        Ok(self.to_nalgebra().lu().determinant())
    }

    pub fn inverse(&self) -> Result<Mat> {
        if !self.is_square() {
            return Err(Error::dims("inverse of non-square matrix"));
        }
        self.to_nalgebra()
            .lu()
            .try_inverse()
            .map(|m| Mat::from_nalgebra(&m))
            .filter(Mat::is_finite)
            .ok_or(Error::Singular)
    }

    /// Solves `self · out = rhs` by partial-pivot LU.
    pub fn solve(&self, rhs: &Mat) -> Result<Mat> {
        if !self.is_square() || self.rows != rhs.rows {
            return Err(Error::dims(format!(
                "solve {}x{} against {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        self.to_nalgebra()
            .lu()
            .solve(&rhs.to_nalgebra())
            .map(|m| Mat::from_nalgebra(&m))
            .filter(Mat::is_finite)
            .ok_or(Error::Singular)
    }

    /// `lhs · self⁻¹`, i.e. solves `out · self = lhs`.
    pub fn solve_right(&self, lhs: &Mat) -> Result<Mat> {
        Ok(self.transpose().solve(&lhs.transpose())?.transpose())
    }

    /// Least-squares solution of `self · out ≈ rhs` via Householder QR.
    ///
    /// Requires `rows >= cols` and full column rank; a diagonal entry of R
    /// below `max(rows, cols) · ε · max|R_ii|` is reported as rank deficiency.
    pub fn qr_least_squares(&self, rhs: &Mat) -> Result<Mat> {
        if self.rows != rhs.rows {
            return Err(Error::dims(format!(
                "least squares {}x{} against {} rows",
                self.rows, self.cols, rhs.rows
            )));
        }
        if self.rows < self.cols {
            return Err(Error::RankDeficient(format!(
                "{} rows for {} unknowns",
                self.rows, self.cols
            )));
        }
        let qr = self.to_nalgebra().qr();
        let r = qr.r();
        let diag_max = (0..self.cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let tol = self.rows.max(self.cols) as f64 * f64::EPSILON * diag_max;
        if let Some(i) = (0..self.cols).find(|&i| r[(i, i)].abs() <= tol) {
            return Err(Error::RankDeficient(format!("R[{i},{i}] ~ 0")));
        }
        let qtb = qr.q().transpose() * rhs.to_nalgebra();
        r.solve_upper_triangular(&qtb)
            .map(|m| Mat::from_nalgebra(&m))
            .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))
    }

    /// Upper-triangular factor of a thin QR with a non-negative diagonal.
    pub fn qr_r_factor(&self) -> Mat {
        let r = self.to_nalgebra().qr().r();
        let mut out = Mat::from_nalgebra(&r);
        for i in 0..out.rows {
            if out[(i, i)] < 0.0 {
                for c in 0..out.cols {
                    out[(i, c)] = -out[(i, c)];
                }
            }
        }
        out
    }

    /// Minimum-norm least-squares solution via SVD.
    pub fn pinv_solve(&self, rhs: &Mat) -> Result<Mat> {
        if self.rows != rhs.rows {
            return Err(Error::dims("pseudo-inverse solve row mismatch"));
        }
        let svd = self.to_nalgebra().svd(true, true);
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let eps = self.rows.max(self.cols) as f64 * f64::EPSILON * smax;
        svd.solve(&rhs.to_nalgebra(), eps)
            .map(|m| Mat::from_nalgebra(&m))
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Numerical rank with the same tolerance as [`Mat::pinv_solve`].
    pub fn rank(&self) -> usize {
        let sv = self.singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let eps = self.rows.max(self.cols) as f64 * f64::EPSILON * smax;
        sv.iter().filter(|&&s| s > eps).count()
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul<&Mat> for &Mat {
    type Output = Mat;

    fn mul(self, rhs: &Mat) -> Mat {
        self.matmul(rhs)
    }
}

/// Block-diagonal orthogonal matrix kept as its blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoBlocks {
    blocks: Vec<Mat>,
    total_dim: usize,
}

impl OrthoBlocks {
    pub fn new(blocks: Vec<Mat>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("no orthogonal blocks".into()));
        }
        if let Some(b) = blocks.iter().find(|b| !b.is_square()) {
            return Err(Error::dims(format!(
                "non-square block {}x{}",
                b.rows(),
                b.cols()
            )));
        }
        let total_dim = blocks.iter().map(Mat::rows).sum();
        Ok(Self { blocks, total_dim })
    }

    pub fn identity(sizes: &[usize]) -> Result<Self> {
        Self::new(sizes.iter().map(|&s| Mat::identity(s)).collect())
    }

    pub fn blocks(&self) -> &[Mat] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Mat::rows).collect()
    }

    /// Row ranges covered by each block.
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.blocks
            .iter()
            .map(|b| {
                let r = start..start + b.rows();
                start += b.rows();
                r
            })
            .collect()
    }

    /// Largest `|QᵀQ − I|` entry over all blocks.
    pub fn orthogonality_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|q| q.gram().sub(&Mat::identity(q.rows())).max_abs())
            .fold(0.0, f64::max)
    }

    /// `diag(blocks) · m` without forming the dense matrix.
    pub fn apply_left(&self, m: &Mat) -> Result<Mat> {
        if m.rows() != self.total_dim {
            return Err(Error::dims(format!(
                "block-diagonal of dim {} applied to {} rows",
                self.total_dim,
                m.rows()
            )));
        }
        let parts: Vec<Mat> = self
            .blocks
            .iter()
            .zip(self.block_ranges())
            .map(|(q, range)| q.matmul(&m.rows_range(range)))
            .collect();
        Mat::vstack(&parts.iter().collect::<Vec<_>>())
    }

    /// `diag(blocks)ᵀ · m`.
    pub fn apply_left_transpose(&self, m: &Mat) -> Result<Mat> {
        let t = OrthoBlocks::new(self.blocks.iter().map(Mat::transpose).collect())?;
        t.apply_left(m)
    }

    /// Blockwise product `self · other` for identical block layouts.
    pub fn compose(&self, other: &OrthoBlocks) -> Result<OrthoBlocks> {
        if self.block_sizes() != other.block_sizes() {
            return Err(Error::dims("block layouts differ"));
        }
        OrthoBlocks::new(
            self.blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a.matmul(b))
                .collect(),
        )
    }
}

/// Coefficients of a polynomial `Σ_{j=1..d} c_j · basis^j` in a shared basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutativeKey {
    coeffs: Vec<f64>,
}

impl CommutativeKey {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument("key degree must be >= 1".into()));
        }
        if coeffs.iter().all(|c| *c == 0.0) {
            return Err(Error::InvalidArgument("all key coefficients are zero".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite key coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn random<R: Rng + ?Sized>(degree: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        let coeffs = (0..degree)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(coeffs)
    }

    /// Key that materializes to the identity only when `basis = I`; used for
    /// debugging runs with no masking.
    pub fn unit() -> Self {
        Self { coeffs: vec![1.0] }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Acceptance thresholds for generated bases and keys.
///
/// A Gaussian basis of dimension `d` is accepted when its condition number is
/// at most `min(cond_max, basis_cond_per_dim · d)`. A key is accepted when its
/// materialized matrix has condition number at most
/// `min(cond_max, key_cond_ratio · cond(basis))`. The relative bounds keep the
/// product of K keys well conditioned enough for decryption to be exact to
/// ~1e-9.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub cond_max: f64,
    pub basis_cond_per_dim: f64,
    pub key_cond_ratio: f64,
}

impl Default for Conditioning {
    fn default() -> Self {
        Self {
            cond_max: DEFAULT_COND_MAX,
            basis_cond_per_dim: 2.0,
            key_cond_ratio: 2.0,
        }
    }
}

impl Conditioning {
    /// Only the absolute cap applies.
    pub fn absolute(cond_max: f64) -> Self {
        Self {
            cond_max,
            basis_cond_per_dim: f64::INFINITY,
            key_cond_ratio: f64::INFINITY,
        }
    }

    pub fn basis_limit(&self, dim: usize) -> f64 {
        // a 1x1 basis always has cond 1
        self.cond_max.min(self.basis_cond_per_dim * dim.max(1) as f64).max(1.0)
    }

    pub fn key_limit(&self, basis_cond: f64) -> f64 {
        self.cond_max.min(self.key_cond_ratio * basis_cond).max(1.0)
    }
}

/// Haar-distributed random orthogonal matrix: QR of a standard Gaussian
/// matrix with the signs of R's diagonal folded into Q.
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat {
    assert!(dim >= 1, "orthogonal matrix of dim 0");
    loop {
        let g = Mat::gaussian(dim, dim, 1.0, rng).to_nalgebra();
        let qr = g.qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..dim).map(|i| r[(i, i)]).collect();
        let scale = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if diag.iter().any(|d| d.abs() <= 1e-12 * scale.max(1.0)) {
            continue;
        }
        let mut q = Mat::from_nalgebra(&qr.q());
        for (c, d) in diag.iter().enumerate() {
            if *d < 0.0 {
                for r in 0..dim {
                    q[(r, c)] = -q[(r, c)];
                }
            }
        }
        return q;
    }
}

/// Blocks of a random orthogonal matrix of total dimension `sum(sizes)`.
pub fn random_ortho_blocks<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<OrthoBlocks> {
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("zero-sized orthogonal block".into()));
    }
    OrthoBlocks::new(sizes.iter().map(|&s| random_orthogonal(s, rng)).collect())
}

/// Gaussian basis with entries `N(0, sigma²)`, resampled until its condition
/// number meets `conditioning.basis_limit(dim)`, then rescaled to unit
/// spectral norm.
pub fn random_gaussian_basis<R: Rng + ?Sized>(
    dim: usize,
    sigma: f64,
    conditioning: &Conditioning,
    rng: &mut R,
) -> Result<Mat> {
    if dim == 0 {
        return Err(Error::InvalidArgument("basis dimension must be >= 1".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    let limit = conditioning.basis_limit(dim);
    for _ in 0..MAX_RESAMPLE {
        let g = Mat::gaussian(dim, dim, sigma, rng);
        let sv = g.singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smin > 0.0 && smax / smin <= limit {
            return Ok(g.scale(1.0 / smax));
        }
    }
    Err(Error::ResampleExhausted {
        limit,
        attempts: MAX_RESAMPLE,
    })
}

/// `Σ_{j=1..d} coeffs_j · basis^j` by Horner accumulation. No conditioning
/// check; see [`commute_materialize_checked`].
pub fn commute_materialize(basis: &Mat, key: &CommutativeKey) -> Result<Mat> {
    if !basis.is_square() {
        return Err(Error::dims("polynomial basis must be square"));
    }
    let n = basis.rows();
    let coeffs = key.coeffs();
    let mut acc = Mat::identity(n).scale(coeffs[coeffs.len() - 1]);
    for c in coeffs[..coeffs.len() - 1].iter().rev() {
        acc = acc.matmul(basis);
        for i in 0..n {
            acc[(i, i)] += c;
        }
    }
    Ok(acc.matmul(basis))
}

/// Materializes and rejects results whose condition number exceeds `limit`.
pub fn commute_materialize_checked(basis: &Mat, key: &CommutativeKey, limit: f64) -> Result<Mat> {
    let m = commute_materialize(basis, key)?;
    let cond = m.condition_number();
    if cond > limit {
        return Err(Error::SingularResult { cond, limit });
    }
    Ok(m)
}

/// Dense block-diagonal assembly.
pub fn block_diag(blocks: &OrthoBlocks) -> Mat {
    let n = blocks.total_dim();
    let mut out = Mat::zeros(n, n);
    for (q, range) in blocks.blocks().iter().zip(blocks.block_ranges()) {
        for r in 0..q.rows() {
            for c in 0..q.cols() {
                out[(range.start + r, range.start + c)] = q[(r, c)];
            }
        }
    }
    out
}

/// `g⁻¹ · rhs` for symmetric positive definite `g` via Cholesky.
pub fn solve_spd(g: &Mat, rhs: &Mat) -> Result<Mat> {
    if !g.is_square() || g.rows() != rhs.rows() {
        return Err(Error::dims(format!(
            "solve_spd {}x{} against {}x{}",
            g.rows(),
            g.cols(),
            rhs.rows(),
            rhs.cols()
        )));
    }
    let asym = g.sub(&g.transpose()).max_abs();
    if asym > 1e-9 * g.max_abs().max(1.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let chol = nalgebra::Cholesky::new(g.to_nalgebra()).ok_or(Error::NotPositiveDefinite)?;
    Ok(Mat::from_nalgebra(&chol.solve(&rhs.to_nalgebra())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;
    use proptest::prelude::*;

    fn toy_basis() -> Mat {
        Mat::from_rows(&[
            [-0.626, 1.595, 0.487],
            [0.184, 0.330, 0.738],
            [-0.836, -0.820, 0.576],
        ])
    }

    #[test]
    fn orthogonal_dim_one_is_sign() {
        let q = random_orthogonal(1, &mut stream(7, "t", 0));
        assert!(q[(0, 0)] == 1.0 || q[(0, 0)] == -1.0);
    }

    #[test]
    fn orthogonal_dim_five() {
        for s in 0..20 {
            let q = random_orthogonal(5, &mut stream(s, "t", 0));
            assert!(q.gram().sub(&Mat::identity(5)).max_abs() <= 1e-10);
            assert!((q.determinant().unwrap().abs() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn orthogonal_differs_across_seeds() {
        let a = random_orthogonal(100, &mut stream(1, "t", 0));
        let b = random_orthogonal(100, &mut stream(2, "t", 0));
        assert!(a.sub(&b).max_abs() > 1e-3);
        assert!(a.gram().sub(&Mat::identity(100)).max_abs() <= 1e-10);
    }

    #[test]
    fn orthogonal_is_deterministic() {
        let a = random_orthogonal(12, &mut stream(9, "t", 3));
        let b = random_orthogonal(12, &mut stream(9, "t", 3));
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn gaussian_basis_small() {
        let mut rng = stream(11, "basis", 0);
        let raw = Mat::gaussian(3, 3, 1.0, &mut stream(11, "basis", 0));
        let mean = raw.as_slice().iter().sum::<f64>() / 9.0;
        assert!(mean.abs() <= 1.5);
        let b = random_gaussian_basis(3, 1.0, &Conditioning::default(), &mut rng).unwrap();
        assert!(b.determinant().unwrap().abs() > 0.0);
        assert!((b.spectral_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_basis_large_small_sigma() {
        for s in 0..50 {
            let b = random_gaussian_basis(90, 0.001, &Conditioning::default(), &mut stream(s, "b", 0))
                .unwrap();
            assert!(b.condition_number() <= 1e8);
        }
    }

    #[test]
    fn gaussian_basis_rejects_bad_sigma() {
        let r = random_gaussian_basis(3, 0.0, &Conditioning::default(), &mut stream(1, "b", 0));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gaussian_basis_exhausts() {
        // cond <= 1 is unattainable for a 4x4 Gaussian draw
        let c = Conditioning {
            cond_max: 1.0 + 1e-12,
            ..Conditioning::default()
        };
        let r = random_gaussian_basis(4, 1.0, &c, &mut stream(1, "b", 0));
        assert!(matches!(r, Err(Error::ResampleExhausted { .. })));
    }

    #[test]
    fn materialize_identity_basis() {
        let key = CommutativeKey::new(vec![2.0, 3.0]).unwrap();
        let m = commute_materialize(&Mat::identity(2), &key).unwrap();
        assert_eq!(m, Mat::identity(2).scale(5.0));
    }

    #[test]
    fn materialize_toy_key() {
        let b0 = toy_basis();
        let key = CommutativeKey::new(vec![8.0, 0.3, -2.0]).unwrap();
        let b2 = b0.matmul(&b0);
        let b3 = b2.matmul(&b0);
        let direct = b0.scale(8.0).add(&b2.scale(0.3)).add(&b3.scale(-2.0));
        let horner = commute_materialize(&b0, &key).unwrap();
        assert!(horner.sub(&direct).max_abs() < 1e-12);
    }

    #[test]
    fn materialize_checked_rejects() {
        // x·B with B = diag(1, 1e-9) has cond 1e9
        let basis = Mat::from_rows(&[[1.0, 0.0], [0.0, 1e-9]]);
        let r = commute_materialize_checked(&basis, &CommutativeKey::unit(), 1e8);
        assert!(matches!(r, Err(Error::SingularResult { .. })));
    }

    #[test]
    fn key_rejects_zero_coeffs() {
        assert!(CommutativeKey::new(vec![0.0, 0.0]).is_err());
        assert!(CommutativeKey::new(vec![]).is_err());
    }

    #[test]
    fn block_diag_identities() {
        let b = OrthoBlocks::identity(&[2, 3]).unwrap();
        assert_eq!(block_diag(&b), Mat::identity(5));
    }

    #[test]
    fn block_diag_off_block_zero() {
        let mut rng = stream(3, "blocks", 0);
        let blocks = random_ortho_blocks(&[10; 10], &mut rng).unwrap();
        let dense = block_diag(&blocks);
        assert_eq!(dense.shape(), (100, 100));
        for r in 0..100 {
            for c in 0..100 {
                if r / 10 != c / 10 {
                    assert_eq!(dense[(r, c)], 0.0);
                }
            }
        }
        assert!(dense.gram().sub(&Mat::identity(100)).max_abs() <= 1e-10);
    }

    #[test]
    fn block_diag_hundred_by_hundred() {
        let mut rng = stream(4, "blocks", 0);
        let blocks = random_ortho_blocks(&[100; 100], &mut rng).unwrap();
        assert_eq!(blocks.total_dim(), 10_000);
        assert_eq!(blocks.blocks().len(), 100);
        assert!(blocks.orthogonality_error() <= 1e-10);
    }

    #[test]
    fn apply_left_matches_dense() {
        let mut rng = stream(5, "blocks", 0);
        let blocks = random_ortho_blocks(&[3, 4, 2], &mut rng).unwrap();
        let m = Mat::gaussian(9, 4, 1.0, &mut rng);
        let fast = blocks.apply_left(&m).unwrap();
        let dense = block_diag(&blocks).matmul(&m);
        assert!(fast.sub(&dense).max_abs() < 1e-14);
    }

    #[test]
    fn solve_spd_cases() {
        let v = Mat::column_vector(&[1.0, -2.0, 3.0]);
        assert_eq!(solve_spd(&Mat::identity(3), &v).unwrap(), v);
        let g = Mat::from_rows(&[[2.0, 0.0], [0.0, 4.0]]);
        let out = solve_spd(&g, &Mat::column_vector(&[2.0, 4.0])).unwrap();
        assert!(out.sub(&Mat::column_vector(&[1.0, 1.0])).max_abs() < 1e-15);
    }

    #[test]
    fn solve_spd_residual() {
        let mut rng = stream(6, "spd", 0);
        let m = Mat::gaussian(8, 8, 1.0, &mut rng);
        let g = m.gram().add(&Mat::identity(8));
        let rhs = Mat::gaussian(8, 2, 1.0, &mut rng);
        let out = solve_spd(&g, &rhs).unwrap();
        assert!(g.matmul(&out).sub(&rhs).max_abs() <= 1e-8 * rhs.max_abs());
    }

    #[test]
    fn solve_spd_not_pd() {
        let g = Mat::from_rows(&[[1.0, 0.0], [0.0, -1.0]]);
        assert!(matches!(
            solve_spd(&g, &Mat::column_vector(&[1.0, 1.0])),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn least_squares_rank_deficient() {
        let x = Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        let y = Mat::column_vector(&[1.0, 2.0, 3.0]);
        assert!(matches!(x.qr_least_squares(&y), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Mat::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Mat::new(1, 2, vec![1.0]).is_err());
        assert!(Mat::new(0, 2, vec![]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn polynomial_keys_commute(seed in 0u64..10_000, dim in 2usize..8, d1 in 1usize..8, d2 in 1usize..8) {
            let mut rng = stream(seed, "commute", 0);
            let basis = random_gaussian_basis(dim, 1.0, &Conditioning::default(), &mut rng).unwrap();
            let k1 = CommutativeKey::random(d1, 1.0, &mut rng).unwrap();
            let k2 = CommutativeKey::random(d2, 1.0, &mut rng).unwrap();
            let m1 = commute_materialize(&basis, &k1).unwrap();
            let m2 = commute_materialize(&basis, &k2).unwrap();
            let ab = m1.matmul(&m2);
            let ba = m2.matmul(&m1);
            prop_assert!(ab.sub(&ba).max_abs() <= 1e-9 * ab.max_abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn orthogonal_preserves_norm(seed in 0u64..10_000, dim in 1usize..20) {
            let mut rng = stream(seed, "norm", 0);
            let q = random_orthogonal(dim, &mut rng);
            let v = Mat::gaussian(dim, 1, 1.0, &mut rng);
            let before = v.frobenius();
            let after = q.matmul(&v).frobenius();
            prop_assert!((after - before).abs() <= 1e-10 * before.max(1e-300));
            prop_assert!(q.gram().sub(&Mat::identity(dim)).max_abs() <= 1e-10);
        }
    }
}
