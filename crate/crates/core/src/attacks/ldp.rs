use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// `P(|x⁽¹⁾·b| < t) / P(|x⁽²⁾·b| < t)` for `b ~ N(0, σ²I)`:
/// `erf(t / (√2‖x⁽¹⁾‖σ)) / erf(t / (√2‖x⁽²⁾‖σ))`.
pub fn ldp_ratio(t: f64, norm1: f64, norm2: f64, sigma: f64) -> Result<f64> {
    for (name, v) in [("t", t), ("norm1", norm1), ("norm2", norm2), ("sigma", sigma)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("{name} must be a positive finite number, got {v}")));
        }
    }
    if norm1 == norm2 {
        return Ok(1.0);
    }
    let s = std::f64::consts::SQRT_2 * sigma;
    Ok(erf(t / (s * norm1)) / erf(t / (s * norm2)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LdpCurve {
    pub t: f64,
    pub norm1: f64,
    pub norm2: f64,
    pub sigmas: Vec<f64>,
    pub ratios: Vec<f64>,
    /// `|ln ratio|`, the implied ε for this event family.
    pub epsilons: Vec<f64>,
}

impl LdpCurve {
    /// `|ratio − 1|` never grows as σ shrinks, and every ratio sits on the
    /// side of 1 fixed by the norm ordering.
    pub fn is_monotone(&self) -> bool {
        let gaps: Vec<f64> = self.ratios.iter().map(|r| (r - 1.0).abs()).collect();
        let shrinking = gaps.windows(2).all(|w| w[1] <= w[0]);
        let side = self.ratios.iter().all(|&r| {
            if self.norm1 < self.norm2 {
                r >= 1.0
            } else if self.norm1 > self.norm2 {
                r <= 1.0
            } else {
                r == 1.0
            }
        });
        shrinking && side
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,ratio,epsilon\n");
        for ((s, r), e) in self.sigmas.iter().zip(&self.ratios).zip(&self.epsilons) {
            out.push_str(&format!("{s:e},{r:.17e},{e:.17e}\n"));
        }
        out
    }
}

/// Ratios over `sigmas`, which must be strictly descending.
pub fn ldp_sweep(t: f64, norm1: f64, norm2: f64, sigmas: &[f64]) -> Result<LdpCurve> {
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("empty sigma grid".into()));
    }
    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("sigmas must be sorted descending".into()));
    }
    let ratios = sigmas
        .iter()
        .map(|&s| ldp_ratio(t, norm1, norm2, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(LdpCurve {
        t,
        norm1,
        norm2,
        sigmas: sigmas.to_vec(),
        epsilons: ratios.iter().map(|r| r.ln().abs()).collect(),
        ratios,
    })
}
