use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{commute_materialize, random_gaussian_basis, random_orthogonal, CommutativeKey, Conditioning, Mat};

/// Residual threshold, relative to `‖w_j‖`, above which a column has no solution.
pub const NO_SOLUTION_TOL: f64 = 1e-6;
/// Max-norm agreement required between column solutions.
pub const CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSolution {
    Solved(Vec<f64>),
    NoSolution,
}

impl ColumnSolution {
    pub fn coeffs(&self) -> Option<&[f64]> {
        match self {
            ColumnSolution::Solved(c) => Some(c),
            ColumnSolution::NoSolution => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CpaReport {
    pub per_column_solution: Vec<ColumnSolution>,
    /// `‖R_j b − w_j‖ / ‖w_j‖` at the least-squares solution.
    pub per_column_residual: Vec<f64>,
    pub consistent: bool,
    pub true_coeffs: Option<Vec<f64>>,
    /// `‖R_j b_true − w_j‖ / ‖w_j‖`, when the truth is supplied.
    pub true_coeff_residual: Option<Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-column attack on `X*_new = A⁺ X*_1 B̂` with `B̂ = Σ_k b_k basis^k`.
///
/// Column `j` gives the `n×d` system `w_j = Σ_k b_k · col_j(A⁺ X*_1 basis^k)`,
/// solved by minimum-norm least squares.
pub fn cpa_attack(
    x_star_1: &Mat,
    x_star_new: &Mat,
    basis: &Mat,
    a_plus: &Mat,
    degree: usize,
    true_coeffs: Option<&[f64]>,
) -> Result<CpaReport> {
    let (n, p) = x_star_1.shape();
    if x_star_new.shape() != (n, p) || basis.shape() != (p, p) || a_plus.shape() != (n, n) {
        return Err(Error::dims("cpa inputs disagree on n and p"));
    }
    if degree == 0 {
        return Err(Error::InvalidArgument("degree must be >= 1".into()));
    }
    if let Some(t) = true_coeffs {
        if t.len() != degree {
            return Err(Error::dims(format!("{} true coefficients for degree {degree}", t.len())));
        }
    }
    let base = a_plus.matmul(x_star_1);
    let mut terms = Vec::with_capacity(degree);
    let mut power = basis.clone();
    for k in 0..degree {
        if k > 0 {
            power = power.matmul(basis);
        }
        terms.push(base.matmul(&power));
    }

    let mut per_column_solution = Vec::with_capacity(p);
    let mut per_column_residual = Vec::with_capacity(p);
    let mut true_res = Vec::with_capacity(p);
    for j in 0..p {
        let w = x_star_new.column(j);
        let cols: Vec<Vec<f64>> = terms.iter().map(|t| t.column(j)).collect();
        let r = Mat::from_columns(&cols.iter().map(Vec::as_slice).collect::<Vec<_>>())?;
        let wn = norm(&w).max(f64::MIN_POSITIVE);
        let resid = |b: &[f64]| {
            let fit = r.mul_vec(b);
            norm(&fit.iter().zip(&w).map(|(a, b)| a - b).collect::<Vec<_>>()) / wn
        };
        let b = r.pinv_solve(&Mat::column_vector(&w))?.into_vec();
        let res = resid(&b);
        per_column_residual.push(res);
        per_column_solution.push(if res > NO_SOLUTION_TOL {
            ColumnSolution::NoSolution
        } else {
            ColumnSolution::Solved(b)
        });
        if let Some(t) = true_coeffs {
            true_res.push(resid(t));
        }
    }

    let solved: Vec<&[f64]> = per_column_solution.iter().filter_map(ColumnSolution::coeffs).collect();
    let consistent = !solved.is_empty()
        && solved.iter().all(|s| {
            s.iter()
                .zip(solved[0])
                .all(|(a, b)| (a - b).abs() <= CONSISTENCY_TOL)
        });
    Ok(CpaReport {
        per_column_solution,
        per_column_residual,
        consistent,
        true_coeffs: true_coeffs.map(<[f64]>::to_vec),
        true_coeff_residual: true_coeffs.map(|_| true_res),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankClass {
    NoSolution,
    Infinite,
    Unique,
}

/// Solvability of the unconstrained per-column system `w_j = R u_j`,
/// `R = X*_1 [B₀ … B₀^p]` (`n × p²`, rank equal to `rank(X*_1)`).
///
/// A generic right-hand side is reachable only when `rank == n`; the
/// solution is unique only when additionally `rank == p²`, which needs
/// `n = p = 1`.
pub fn cpa_rank_analysis(n: usize, p: usize, rank_xstar: usize) -> Result<RankClass> {
    if n == 0 || p == 0 || rank_xstar > n.min(p) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank_xstar} impossible for an {n}x{p} matrix"
        )));
    }
    Ok(if rank_xstar < n {
        RankClass::NoSolution
    } else if rank_xstar == p * p {
        RankClass::Unique
    } else {
        RankClass::Infinite
    })
}

/// An honestly generated attack instance.
#[derive(Clone, Debug)]
pub struct CpaInstance {
    pub basis: Mat,
    pub x_star_1: Mat,
    pub x_star_new: Mat,
    /// The orthogonal pass actually applied by the victim.
    pub a_true: Mat,
    pub true_coeffs: Vec<f64>,
}

/// Victim encrypts `X*_1` (entries `N(1, 1)`) as `A X*_1 B` with
/// `B = Σ b_k basis^k`, `b_k ~ N(0, 1)`.
pub fn cpa_instance<R: Rng + ?Sized>(n: usize, p: usize, degree: usize, rng: &mut R) -> Result<CpaInstance> {
    let basis = random_gaussian_basis(p, 1.0, &Conditioning::default(), rng)?;
    let x_star_1 = Mat::gaussian(n, p, 1.0, rng).add(&Mat::from_fn(n, p, |_, _| 1.0));
    let key = CommutativeKey::random(degree, 1.0, rng)?;
    let b = commute_materialize(&basis, &key)?;
    let a_true = random_orthogonal(n, rng);
    let x_star_new = a_true.matmul(&x_star_1).matmul(&b);
    Ok(CpaInstance {
        basis,
        x_star_1,
        x_star_new,
        a_true,
        true_coeffs: key.coeffs().to_vec(),
    })
}
