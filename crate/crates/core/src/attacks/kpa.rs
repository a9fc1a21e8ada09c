use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{Mat, DEFAULT_COND_MAX, MAX_RESAMPLE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum KpaScenario {
    /// Known rows: the adversary sees `(X₂₂B)ᵀ(X₂₂B)`.
    I,
    /// Known block: `X̂₂₂ = X₁₁ Z*₁₁⁻¹ Z*₂₂`.
    II,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KpaReport {
    pub scenario: KpaScenario,
    pub recovered: Mat,
    pub truth: Mat,
    pub deviation_max: f64,
    pub sigma_b: Option<f64>,
    /// How `B` was sampled.
    pub convention: &'static str,
}

impl KpaReport {
    /// `(recovered, truth)` entry pairs in row-major order.
    pub fn deviation_pairs(&self) -> Vec<(f64, f64)> {
        self.recovered
            .as_slice()
            .iter()
            .copied()
            .zip(self.truth.as_slice().iter().copied())
            .collect()
    }
}

fn raw_gaussian_invertible<R: Rng + ?Sized>(p: usize, sigma: f64, rng: &mut R) -> Result<Mat> {
    for _ in 0..MAX_RESAMPLE {
        let b = Mat::gaussian(p, p, sigma, rng);
        if b.condition_number() <= DEFAULT_COND_MAX {
            return Ok(b);
        }
    }
    Err(Error::ResampleExhausted {
        limit: DEFAULT_COND_MAX,
        attempts: MAX_RESAMPLE,
    })
}

/// Recovered Gram `BᵀX₂₂ᵀX₂₂B` for raw `B` with i.i.d. `N(0, σ_b²)` entries
/// (no spectral rescale), against the true `X₂₂ᵀX₂₂`.
pub fn kpa_scenario_one<R: Rng + ?Sized>(x22: &Mat, sigma_b: f64, rng: &mut R) -> Result<KpaReport> {
    if !(sigma_b > 0.0) || !sigma_b.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma_b must be > 0, got {sigma_b}")));
    }
    let b = raw_gaussian_invertible(x22.cols(), sigma_b, rng)?;
    let z = x22.matmul(&b);
    let recovered = z.gram();
    let truth = x22.gram();
    Ok(KpaReport {
        scenario: KpaScenario::I,
        deviation_max: recovered.sub(&truth).max_abs(),
        recovered,
        truth,
        sigma_b: Some(sigma_b),
        convention: "raw N(0, sigma_b^2) entries, no rescale",
    })
}

/// `X̂₂₂ = X₁₁ · Z*₁₁⁻¹ · Z*₂₂`.
pub fn kpa_scenario_two(x11: &Mat, z_star_11: &Mat, z_star_22: &Mat, x22_truth: &Mat) -> Result<KpaReport> {
    if !x11.is_square() || z_star_11.shape() != x11.shape() || z_star_22.rows() != x11.cols() {
        return Err(Error::dims("scenario II needs square X11, Z11 of the same size, and Z22 with matching rows"));
    }
    let recovered = x11.matmul(&z_star_11.solve(z_star_22).map_err(|_| Error::Singular)?);
    if recovered.shape() != x22_truth.shape() {
        return Err(Error::dims("recovered block and truth differ in shape"));
    }
    Ok(KpaReport {
        scenario: KpaScenario::II,
        deviation_max: recovered.sub(x22_truth).max_abs(),
        recovered,
        truth: x22_truth.clone(),
        sigma_b: None,
        convention: "given ciphertexts",
    })
}

#[derive(Clone, Debug)]
pub struct KpaTwoInstance {
    pub x11: Mat,
    pub x22: Mat,
    pub z_star_11: Mat,
    pub z_star_22: Mat,
}

/// Standard-normal `X₁₁`, `X₂₂` (`m×m`) encrypted under separate masks
/// `Z*₁₁ = X₁₁B₁`, `Z*₂₂ = X₂₂B₂`, or unmasked when `masked` is false.
pub fn kpa_two_instance<R: Rng + ?Sized>(m: usize, masked: bool, rng: &mut R) -> Result<KpaTwoInstance> {
    let x11 = raw_gaussian_invertible(m, 1.0, rng)?;
    let x22 = Mat::gaussian(m, m, 1.0, rng);
    let (b1, b2) = if masked {
        (raw_gaussian_invertible(m, 1.0, rng)?, raw_gaussian_invertible(m, 1.0, rng)?)
    } else {
        (Mat::identity(m), Mat::identity(m))
    };
    Ok(KpaTwoInstance {
        z_star_11: x11.matmul(&b1),
        z_star_22: x22.matmul(&b2),
        x11,
        x22,
    })
}

/// Sample variance of `x·b` over `samples` draws of `b ~ N(0, σ²I)`.
pub fn projection_variance<R: Rng + ?Sized>(x: &[f64], sigma: f64, samples: usize, rng: &mut R) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let draws: Vec<f64> = (0..samples)
        .map(|_| x.iter().map(|xi| xi * normal.sample(rng)).sum())
        .collect();
    let mean = draws.iter().sum::<f64>() / samples as f64;
    Ok(draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (samples - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn zero_data_recovers_zero_gram() {
        let r = kpa_scenario_one(&Mat::zeros(5, 3), 0.1, &mut stream(1, "kpa", 0)).unwrap();
        assert_eq!(r.recovered.max_abs(), 0.0);
    }

    #[test]
    fn tiny_sigma_crushes_the_gram() {
        let x = Mat::gaussian(100, 4, 3.0, &mut stream(2, "kpa", 0));
        assert!(x.gram().max_abs() <= 1e4);
        let r = kpa_scenario_one(&x, 1e-6, &mut stream(2, "kpa", 1)).unwrap();
        assert!(r.recovered.max_abs() <= 1e-3);
        assert!(kpa_scenario_one(&x, 0.0, &mut stream(2, "kpa", 1)).is_err());
    }

    #[test]
    fn unmasked_scenario_two_is_exact() {
        let inst = kpa_two_instance(4, false, &mut stream(3, "kpa", 0)).unwrap();
        let r = kpa_scenario_two(&inst.x11, &inst.z_star_11, &inst.z_star_22, &inst.x22).unwrap();
        assert!(r.deviation_max <= 1e-10);
    }

    #[test]
    fn masked_scenario_two_matches_closed_form() {
        let mut rng = stream(4, "kpa", 0);
        let x11 = Mat::gaussian(3, 3, 1.0, &mut rng);
        let x22 = Mat::gaussian(3, 3, 1.0, &mut rng);
        let b1 = Mat::gaussian(3, 3, 1.0, &mut rng);
        let b2 = Mat::gaussian(3, 3, 1.0, &mut rng);
        let r = kpa_scenario_two(&x11, &x11.matmul(&b1), &x22.matmul(&b2), &x22).unwrap();
        let expected = x11
            .matmul(&b1.inverse().unwrap())
            .matmul(&x11.inverse().unwrap())
            .matmul(&x22)
            .matmul(&b2);
        assert!(r.recovered.rel_max_diff(&expected) <= 1e-8);
    }

    #[test]
    fn singular_z11() {
        let r = kpa_scenario_two(&Mat::identity(2), &Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0]]), &Mat::identity(2), &Mat::identity(2));
        assert!(matches!(r, Err(Error::Singular)));
    }

    #[test]
    fn projection_variance_tracks_norm() {
        let x = [1.0, 2.0, -2.0];
        let v = projection_variance(&x, 0.5, 10_000, &mut stream(5, "var", 0)).unwrap();
        let expected = 9.0 * 0.25;
        assert!((v - expected).abs() <= 0.2 * expected);
    }
}
