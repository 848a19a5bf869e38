//! Control-arm stratum outcome means from the outcome mixture equation
//! `κ₀ᴿ = π₀₁ᴿ μ₀₁ + π₀₀ᴿ μ₀₀`, one solver per principal identification assumption.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::missingness::ResponseWeights;
use crate::nuisance::NuisancePredictions;

/// Sensitivity values this close to neutral fall back to PI.
pub const NEUTRAL_TOLERANCE: f64 = 1e-10;
/// ER divides by π₀₁ᴿ; smaller weights abort the analysis.
pub const MIN_COMPLIER_SHARE: f64 = 1e-12;
pub const RADICAND_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutcomeAssumption {
    #[serde(rename = "ER")]
    Er,
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "PIsens_GOR")]
    Gor,
    #[serde(rename = "PIsens_MR")]
    Mr,
    #[serde(rename = "PIsens_SMDe")]
    Smde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlMeans {
    pub assumption: OutcomeAssumption,
    pub sensitivity: Option<f64>,
    /// μ₀₁: control-arm complier mean.
    pub mu01: Vec<f64>,
    /// μ₀₀: control-arm noncomplier mean.
    pub mu00: Vec<f64>,
}

fn check_len(p: &NuisancePredictions, w: &ResponseWeights) -> Result<()> {
    if p.len() != w.len() {
        return Err(Error::Validation(format!(
            "{} predictions but {} response weights",
            p.len(),
            w.len()
        )));
    }
    Ok(())
}

/// Exclusion restriction: μ₀₀ = μ₁₀, μ₀₁ solved from the mixture.
pub fn mu0_er(p: &NuisancePredictions, w: &ResponseWeights) -> Result<ControlMeans> {
    check_len(p, w)?;
    let mut mu01 = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let share = w.p01r[i];
        if share < MIN_COMPLIER_SHARE {
            return Err(Error::Estimation(format!(
                "complier share of control responders {share:e} at unit {i} leaves μ₀₁ unidentified"
            )));
        }
        mu01.push(p.mu10[i] + (p.kappa0r[i] - p.mu10[i]) / share);
    }
    Ok(ControlMeans {
        assumption: OutcomeAssumption::Er,
        sensitivity: None,
        mu01,
        mu00: p.mu10.clone(),
    })
}

/// Principal ignorability: both strata share the control-responder mean.
/// Needs no mixture weights.
pub fn mu0_pi(p: &NuisancePredictions) -> ControlMeans {
    ControlMeans {
        assumption: OutcomeAssumption::Pi,
        sensitivity: None,
        mu01: p.kappa0r.clone(),
        mu00: p.kappa0r.clone(),
    }
}

fn neutral(mut m: ControlMeans, assumption: OutcomeAssumption, value: f64) -> ControlMeans {
    m.assumption = assumption;
    m.sensitivity = Some(value);
    m
}

/// Rescaled mean of one stratum under a generalized odds ratio `psi_c`
/// (this stratum's odds over the other's), given its share among control
/// responders and the rescaled responder mean `kappa`.
///
/// Root `(α − β) / (2(ψ_c − 1) share)` of
/// `(ψ_c − 1) share · t² − α t + κ ψ_c = 0`.
pub fn gor_stratum_mean(share: f64, kappa: f64, psi_c: f64) -> Result<f64> {
    let pm1 = psi_c - 1.0;
    let alpha = (share + kappa) * pm1 + 1.0;
    let mut radicand = alpha * alpha - 4.0 * share * kappa * psi_c * pm1;
    if radicand < -RADICAND_TOLERANCE {
        return Err(Error::Numerical(format!(
            "negative radicand {radicand:e} in generalized odds ratio solve"
        )));
    }
    radicand = radicand.max(0.0);
    let beta = radicand.sqrt();
    let t = if alpha > 0.0 {
        // conjugate form; also covers share → 0
        2.0 * kappa * psi_c / (alpha + beta)
    } else {
        (alpha - beta) / (2.0 * pm1 * share)
    };
    Ok(t.clamp(0.0, 1.0))
}

/// Generalized odds ratio sensitivity model on the outcome support `(l, h)`.
pub fn mu0_pisens_gor(p: &NuisancePredictions, w: &ResponseWeights, psi: f64) -> Result<ControlMeans> {
    check_len(p, w)?;
    if !(psi.is_finite() && psi > 0.0) {
        return Err(Error::Config(format!("GOR parameter must be > 0, got {psi}")));
    }
    if (psi - 1.0).abs() < NEUTRAL_TOLERANCE {
        return Ok(neutral(mu0_pi(p), OutcomeAssumption::Gor, psi));
    }
    let b = p.bounds;
    let mut mu01 = Vec::with_capacity(p.len());
    let mut mu00 = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let kappa = b.rescale(p.kappa0r[i]).clamp(0.0, 1.0);
        mu01.push(b.unscale(gor_stratum_mean(w.p01r[i], kappa, psi)?));
        mu00.push(b.unscale(gor_stratum_mean(w.p00r[i], kappa, 1.0 / psi)?));
    }
    Ok(ControlMeans {
        assumption: OutcomeAssumption::Gor,
        sensitivity: Some(psi),
        mu01,
        mu00,
    })
}

/// Mean ratio sensitivity model; requires a strictly positive responder mean.
pub fn mu0_pisens_mr(p: &NuisancePredictions, w: &ResponseWeights, rho: f64) -> Result<ControlMeans> {
    check_len(p, w)?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::Config(format!("MR parameter must be > 0, got {rho}")));
    }
    if let Some((i, k)) = p.kappa0r.iter().enumerate().find(|(_, k)| **k <= 0.0) {
        return Err(Error::Domain(format!(
            "mean ratio needs positive outcomes; κ₀ᴿ = {k} at unit {i}"
        )));
    }
    if (rho - 1.0).abs() < NEUTRAL_TOLERANCE {
        return Ok(neutral(mu0_pi(p), OutcomeAssumption::Mr, rho));
    }
    let rho0 = 1.0 / rho;
    let (mu01, mu00) = (0..p.len())
        .map(|i| {
            let k = p.kappa0r[i];
            (
                rho * k / ((rho - 1.0) * w.p01r[i] + 1.0),
                rho0 * k / ((rho0 - 1.0) * w.p00r[i] + 1.0),
            )
        })
        .unzip();
    Ok(ControlMeans {
        assumption: OutcomeAssumption::Mr,
        sensitivity: Some(rho),
        mu01,
        mu00,
    })
}

/// Standardized mean difference sensitivity model with equal stratum
/// variances, using the pooled control-responder sd `ς₀ᴿ`.
pub fn mu0_pisens_smde(p: &NuisancePredictions, w: &ResponseWeights, eta: f64) -> Result<ControlMeans> {
    check_len(p, w)?;
    if !eta.is_finite() {
        return Err(Error::Config(format!("SMD parameter must be finite, got {eta}")));
    }
    if eta == 0.0 {
        return Ok(neutral(mu0_pi(p), OutcomeAssumption::Smde, eta));
    }
    let (mu01, mu00) = (0..p.len())
        .map(|i| {
            let (s1, s0) = (w.p01r[i], w.p00r[i]);
            let shift = eta * p.sigma0r[i] / (1.0 + eta * eta * s1 * s0).sqrt();
            (p.kappa0r[i] + s0 * shift, p.kappa0r[i] - s1 * shift)
        })
        .unzip();
    Ok(ControlMeans {
        assumption: OutcomeAssumption::Smde,
        sensitivity: Some(eta),
        mu01,
        mu00,
    })
}
