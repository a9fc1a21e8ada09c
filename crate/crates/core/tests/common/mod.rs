#![allow(dead_code)]

use maskreg::keygen::AgencyId;
use maskreg::matrix::Mat;
use maskreg::protocol::{Federation, FederationConfig, InProcessBus};
use maskreg::seed::stream;
use maskreg::{Dataset, Mode};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Plaintext OLS via SVD pseudo-inverse, independent of the library's QR path.
pub fn oracle_ols(x: &Mat, y: &[f64]) -> Vec<f64> {
    let svd = to_na(x).svd(true, true);
    let b = DMatrix::from_column_slice(y.len(), 1, y);
    svd.solve(&b, 1e-14).unwrap().iter().copied().collect()
}

/// `(XᵀX + λI)⁻¹Xᵀy` via LU of the regularized Gram.
pub fn oracle_ridge(x: &Mat, y: &[f64], lambda: f64) -> Vec<f64> {
    let xn = to_na(x);
    let g = xn.transpose() * &xn + DMatrix::identity(x.cols(), x.cols()) * lambda;
    let rhs = xn.transpose() * DMatrix::from_column_slice(y.len(), 1, y);
    g.lu().solve(&rhs).unwrap().iter().copied().collect()
}

pub fn rel_max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// `y = Xβ + 0.1·noise` with standard-normal `X`.
pub fn synthetic(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = stream(seed, "synthetic", 0);
    let x = Mat::gaussian(n, p, 1.0, &mut rng);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = x
        .mul_vec(&beta)
        .into_iter()
        .map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new(x, y).unwrap()
}

/// Contiguous near-equal split.
pub fn split(d: &Dataset, k: usize) -> Vec<Dataset> {
    let n = d.n();
    let mut out = Vec::new();
    let mut at = 0;
    for i in 0..k {
        let len = n / k + usize::from(i < n % k);
        out.push(d.rows(at..at + len));
        at += len;
    }
    out
}

pub fn federation(data: &Dataset, k: usize, mode: Mode, lambda: f64, seed: u64) -> Federation {
    let cfg = FederationConfig {
        mode,
        lambda,
        seed,
        ..FederationConfig::default()
    };
    Federation::setup(split(data, k), cfg).unwrap()
}

pub fn bus() -> InProcessBus {
    InProcessBus
}

pub fn ids(v: &[u8]) -> Vec<AgencyId> {
    v.iter().map(|&i| AgencyId(i)).collect()
}
