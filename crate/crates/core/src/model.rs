//! Plaintext fitters, metrics and cross validation.

use std::ops::Range;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::keygen::Mode;
use crate::matrix::{solve_spd, Mat};
use crate::protocol::{cloud_fit_rows, complement, residual_gram, verify_estimate, Decryptor, EncryptedAggregate, EstimateMatrix, Verdict, VERIFY_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub gram_cond: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub mode: Mode,
    pub lambda: f64,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn predict(&self, x: &Mat) -> Vec<f64> {
        predict(x, &self.beta)
    }
}

pub fn predict(x: &Mat, beta: &[f64]) -> Vec<f64> {
    x.mul_vec(beta)
}

/// Least squares via Householder QR.
pub fn ols_fit(x: &Mat, y: &[f64]) -> Result<FitResult> {
    if x.rows() != y.len() {
        return Err(Error::dims(format!("{} rows but {} responses", x.rows(), y.len())));
    }
    let beta = x.qr_least_squares(&Mat::column_vector(y))?.into_vec();
    Ok(FitResult {
        beta,
        mode: Mode::Linear,
        lambda: 0.0,
        diagnostics: Diagnostics {
            gram_cond: x.gram().condition_number(),
        },
    })
}

/// `(XᵀX + λI)⁻¹Xᵀy`.
pub fn ridge_fit(x: &Mat, y: &[f64], lambda: f64) -> Result<FitResult> {
    if x.rows() != y.len() {
        return Err(Error::dims(format!("{} rows but {} responses", x.rows(), y.len())));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge needs lambda > 0, got {lambda}")));
    }
    let g = x.gram().add(&Mat::identity(x.cols()).scale(lambda));
    let rhs = x.transpose().matmul(&Mat::column_vector(y));
    let beta = solve_spd(&g, &rhs)?.into_vec();
    Ok(FitResult {
        beta,
        mode: Mode::Ridge,
        lambda,
        diagnostics: Diagnostics {
            gram_cond: g.condition_number(),
        },
    })
}

pub fn fit(x: &Mat, y: &[f64], mode: Mode, lambda: f64) -> Result<FitResult> {
    match mode {
        Mode::Linear => ols_fit(x, y),
        Mode::Ridge => ridge_fit(x, y, lambda),
    }
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::dims(format!("mse over {} and {} values", y_true.len(), y_pred.len())));
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / y_true.len() as f64)
}

/// The two classes of a binary response, `(negative, positive)`.
pub fn binary_classes(y: &[f64]) -> Option<(f64, f64)> {
    let mut vals: Vec<f64> = y.to_vec();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    match vals[..] {
        [lo, hi] => Some((lo, hi)),
        _ => None,
    }
}

/// Mann–Whitney AUC; the larger label is the positive class, ties in
/// score count one half.
pub fn auc(y_true: &[f64], score: &[f64]) -> Result<f64> {
    if y_true.len() != score.len() {
        return Err(Error::dims("auc labels and scores differ in length"));
    }
    let (_, pos) = match binary_classes(y_true) {
        Some(c) => c,
        None if y_true.iter().all(|&v| v == y_true[0]) || y_true.is_empty() => return Err(Error::SingleClass),
        None => return Err(Error::InvalidArgument("auc needs a binary response".into())),
    };
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut ranks = vec![0.0; score.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && score[order[j + 1]] == score[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let n_pos = y_true.iter().filter(|&&v| v == pos).count() as f64;
    let n_neg = y_true.len() as f64 - n_pos;
    let rank_sum: f64 = y_true.iter().zip(&ranks).filter(|(&v, _)| v == pos).map(|(_, r)| r).sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub fold_metric: Vec<f64>,
    pub mean_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvReport {
    pub k: usize,
    pub fold_metric: Vec<f64>,
    pub mean_metric: f64,
    pub lambda_grid: Option<Vec<LambdaScore>>,
    pub chosen_lambda: Option<f64>,
    /// Every fold's decrypted estimate passed verification.
    pub verified: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn lambdas(mode: Mode, grid: &[f64]) -> Result<Vec<f64>> {
    match mode {
        Mode::Linear => Ok(vec![0.0]),
        Mode::Ridge if grid.is_empty() => Err(Error::InvalidConfig("ridge CV needs a lambda grid".into())),
        Mode::Ridge => {
            if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return Err(Error::InvalidConfig("lambda grid values must be > 0".into()));
            }
            Ok(grid.to_vec())
        }
    }
}

/// Picks the λ with the smallest mean metric; ties go to the smallest λ.
fn assemble(k: usize, mode: Mode, scores: Vec<LambdaScore>, verified: bool) -> CvReport {
    let best = scores
        .iter()
        .min_by(|a, b| a.mean_metric.total_cmp(&b.mean_metric).then(a.lambda.total_cmp(&b.lambda)))
        .expect("at least one lambda")
        .clone();
    let ridge = mode == Mode::Ridge;
    CvReport {
        k,
        fold_metric: best.fold_metric,
        mean_metric: best.mean_metric,
        chosen_lambda: ridge.then_some(best.lambda),
        lambda_grid: ridge.then_some(scores),
        verified,
    }
}

/// Plaintext CV over explicit fold row sets.
pub fn cross_validate_plain(data: &Dataset, folds: &[Vec<Range<usize>>], mode: Mode, lambda_grid: &[f64]) -> Result<CvReport> {
    let mut scores = Vec::new();
    for lambda in lambdas(mode, lambda_grid)? {
        let mut fold_metric = Vec::with_capacity(folds.len());
        for held in folds {
            let train = complement(data.n(), held);
            let x_train = data.x.select_rows(&train);
            let y_train: Vec<f64> = train.iter().flat_map(|r| data.y[r.clone()].iter().copied()).collect();
            let fitted = fit(&x_train, &y_train, mode, lambda)?;
            let x_test = data.x.select_rows(held);
            let y_test: Vec<f64> = held.iter().flat_map(|r| data.y[r.clone()].iter().copied()).collect();
            fold_metric.push(mse(&y_test, &fitted.predict(&x_test))?);
        }
        scores.push(LambdaScore {
            lambda,
            mean_metric: mean(&fold_metric),
            fold_metric,
        });
    }
    Ok(assemble(folds.len(), mode, scores, true))
}

/// CV entirely on the encrypted aggregate. Per fold the cloud fits on the
/// training rows, forms the encrypted residual Gram of the held-out rows,
/// and only that 3×3 matrix and the estimate are decrypted.
pub fn cross_validate_encrypted(
    agg: &EncryptedAggregate,
    decryptor: &dyn Decryptor,
    k: usize,
    mode: Mode,
    lambda_grid: &[f64],
) -> Result<CvReport> {
    let folds = agg.fold_rows(k)?;
    let mut verified = true;
    let mut scores = Vec::new();
    for lambda in lambdas(mode, lambda_grid)? {
        let mut fold_metric = Vec::with_capacity(k);
        for held in &folds {
            let train = complement(agg.n(), held);
            let est = cloud_fit_rows(agg, &train, mode, lambda)?;
            let plain = EstimateMatrix::plain(decryptor.decrypt_estimate(&est.values)?);
            verified &= verify_estimate(&plain, mode, VERIFY_TOL)?.verdict == Verdict::Accepted;
            let s = decryptor.decrypt_residual_gram(&residual_gram(agg, held, &est.values)?)?;
            let rows: usize = held.iter().map(|r| r.len()).sum();
            fold_metric.push(s[(0, 0)] / rows as f64);
        }
        scores.push(LambdaScore {
            lambda,
            mean_metric: mean(&fold_metric),
            fold_metric,
        });
    }
    Ok(assemble(k, mode, scores, verified))
}
