//! Plug-in effect estimates and percentile bootstrap intervals.
//!
//! Every nuisance function is evaluated at every unit (both arms) and the
//! population expectations are replaced by sample averages over all `n` units.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AnalysisConfig, BootstrapSettings, Missingness, PrincipalId};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::missingness::{weights_near_scr, weights_near_snr, weights_rpi, weights_rpo, ResponseWeights};
use crate::nuisance::{fit_nuisance, predict_nuisance, NuisancePredictions};
use crate::outcome::{mu0_er, mu0_pi, mu0_pisens_gor, mu0_pisens_mr, mu0_pisens_smde, ControlMeans};

/// Minimum fraction of bootstrap replicates that must succeed.
pub const MIN_BOOTSTRAP_SUCCESS: f64 = 0.95;

/// Point estimates for one sensitivity value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Effects {
    pub cace: f64,
    pub nace: f64,
    pub ate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEntry {
    /// Sensitivity value; `None` for ER and PI.
    pub param: Option<f64>,
    pub cace: f64,
    pub nace: f64,
    pub ate: f64,
    pub ci_cace: Option<[f64; 2]>,
    pub ci_nace: Option<[f64; 2]>,
    pub ci_ate: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Fraction of units where near-SNR/near-SCR restricted a probability.
    pub clamp_fraction: f64,
    pub mixture_violation_count: usize,
    /// Nuisance fits that needed a ridge or hit the iteration limit.
    pub unconverged_fits: usize,
    pub bootstrap_attempted: usize,
    pub bootstrap_succeeded: usize,
    pub bootstrap_failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimates {
    pub config_echo: AnalysisConfig,
    pub estimates: Vec<EffectEntry>,
    pub diagnostics: Diagnostics,
}

/// Identified control-arm quantities for one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Identified {
    /// Absent under PI, which bypasses the response mixture equation.
    pub weights: Option<ResponseWeights>,
    /// One entry per sensitivity value (a single entry for ER and PI).
    pub means: Vec<ControlMeans>,
}

pub fn response_weights(p: &NuisancePredictions, m: Missingness) -> Result<ResponseWeights> {
    match m {
        Missingness::NearSnr { epsilon } => weights_near_snr(p, epsilon),
        Missingness::NearScr { epsilon } => weights_near_scr(p, epsilon),
        Missingness::Rpi => Ok(weights_rpi(p)),
        Missingness::Rpo => weights_rpo(p),
        Missingness::None => Err(Error::Config(
            "a specific missingness mechanism is required unless the assumption is PI".into(),
        )),
    }
}

/// Solves both mixture equations for the configured assumption pair.
pub fn identify(p: &NuisancePredictions, cfg: &AnalysisConfig) -> Result<Identified> {
    if cfg.principal_id == PrincipalId::Pi {
        return Ok(Identified {
            weights: None,
            means: vec![mu0_pi(p)],
        });
    }
    let w = response_weights(p, cfg.missingness)?;
    let means = match &cfg.principal_id {
        PrincipalId::Pi => unreachable!(),
        PrincipalId::Er => vec![mu0_er(p, &w)?],
        PrincipalId::PiSensGor(v) => v.iter().map(|&psi| mu0_pisens_gor(p, &w, psi)).collect::<Result<_>>()?,
        PrincipalId::PiSensMr(v) => v.iter().map(|&rho| mu0_pisens_mr(p, &w, rho)).collect::<Result<_>>()?,
        PrincipalId::PiSensSmde(v) => v.iter().map(|&eta| mu0_pisens_smde(p, &w, eta)).collect::<Result<_>>()?,
    };
    Ok(Identified {
        weights: Some(w),
        means,
    })
}

/// Stratum effects as π-weighted averages of `μ₁c − μ₀c`, and the ATE as
/// the average of `π₁(μ₁₁ − μ₀₁) + π₀(μ₁₀ − μ₀₀)`.
pub fn plug_in_effects(p: &NuisancePredictions, m: &ControlMeans) -> Effects {
    let n = p.len() as f64;
    let (mut s1, mut s0, mut d1, mut d0, mut total) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..p.len() {
        let e1 = p.pi1[i] * (p.mu11[i] - m.mu01[i]);
        let e0 = p.pi0[i] * (p.mu10[i] - m.mu00[i]);
        s1 += p.pi1[i];
        s0 += p.pi0[i];
        d1 += e1;
        d0 += e0;
        total += e1 + e0;
    }
    Effects {
        cace: d1 / s1,
        nace: d0 / s0,
        ate: total / n,
    }
}

/// The PI-specific forms: stratum effects against `κ₀ᴿ` and the ATE as the
/// average of `π₁μ₁₁ + π₀μ₁₀ − κ₀ᴿ`.
pub fn pi_effects(p: &NuisancePredictions) -> Effects {
    let n = p.len() as f64;
    let (mut s1, mut s0, mut d1, mut d0, mut total) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..p.len() {
        s1 += p.pi1[i];
        s0 += p.pi0[i];
        d1 += p.pi1[i] * (p.mu11[i] - p.kappa0r[i]);
        d0 += p.pi0[i] * (p.mu10[i] - p.kappa0r[i]);
        total += p.pi1[i] * p.mu11[i] + p.pi0[i] * p.mu10[i] - p.kappa0r[i];
    }
    Effects {
        cace: d1 / s1,
        nace: d0 / s0,
        ate: total / n,
    }
}

struct Run {
    effects: Vec<Effects>,
    clamp_fraction: f64,
    mixture_violations: usize,
    unconverged: usize,
}

fn check_config(d: &Dataset, cfg: &AnalysisConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.outcome_bounds != d.bounds() {
        return Err(Error::Config(format!(
            "config outcome bounds {:?} differ from dataset bounds {:?}",
            <[f64; 2]>::from(cfg.outcome_bounds),
            <[f64; 2]>::from(d.bounds())
        )));
    }
    Ok(())
}

fn run_pipeline(d: &Dataset, cfg: &AnalysisConfig) -> Result<Run> {
    let fit = fit_nuisance(d)?;
    let p = predict_nuisance(&fit, d)?;
    let id = identify(&p, cfg)?;
    let effects = if cfg.principal_id == PrincipalId::Pi {
        vec![pi_effects(&p)]
    } else {
        id.means.iter().map(|m| plug_in_effects(&p, m)).collect()
    };
    if effects
        .iter()
        .any(|e| !(e.cace.is_finite() && e.nace.is_finite() && e.ate.is_finite()))
    {
        return Err(Error::Numerical("non-finite effect estimate".into()));
    }
    Ok(Run {
        effects,
        clamp_fraction: id.weights.as_ref().map_or(0.0, ResponseWeights::clamp_fraction),
        mixture_violations: id.weights.as_ref().map_or(0, ResponseWeights::mixture_violation_count),
        unconverged: fit.unconverged(),
    })
}

fn params(cfg: &AnalysisConfig) -> Vec<Option<f64>> {
    match cfg.principal_id.params() {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    }
}

/// Fits the nuisance models once and evaluates every sensitivity value.
pub fn point_estimates(d: &Dataset, cfg: &AnalysisConfig) -> Result<EffectEstimates> {
    check_config(d, cfg)?;
    let run = run_pipeline(d, cfg)?;
    let estimates = params(cfg)
        .into_iter()
        .zip(&run.effects)
        .map(|(param, e)| EffectEntry {
            param,
            cace: e.cace,
            nace: e.nace,
            ate: e.ate,
            ci_cace: None,
            ci_nace: None,
            ci_ate: None,
        })
        .collect();
    Ok(EffectEstimates {
        config_echo: cfg.clone(),
        estimates,
        diagnostics: Diagnostics {
            clamp_fraction: run.clamp_fraction,
            mixture_violation_count: run.mixture_violations,
            unconverged_fits: run.unconverged,
            ..Diagnostics::default()
        },
    })
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of bootstrap replicate `r`: the SplitMix64 output at position `r + 1`
/// of the stream started at `master`, i.e. `mix64(master + (r+1)·γ)` with
/// `γ = 0x9E3779B97F4A7C15`. Independent of scheduling.
pub fn replicate_seed(master: u64, r: u64) -> u64 {
    mix64(master.wrapping_add(r.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Resampling indices of replicate `r` for a sample of size `n`.
pub fn replicate_indices(master: u64, r: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(master, r));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Linear interpolation between order statistics (`(m-1)q` positioning).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentile_interval(values: &mut [f64], level: f64) -> [f64; 2] {
    values.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    [quantile(values, a), quantile(values, 1.0 - a)]
}

/// Point estimates plus percentile intervals from `s.replicates` resamples
/// of the units, each re-running every model fit. Failed replicates are
/// skipped and tallied by error kind.
pub fn bootstrap_ci(d: &Dataset, cfg: &AnalysisConfig, s: &BootstrapSettings) -> Result<EffectEstimates> {
    let mut out = point_estimates(d, cfg)?;
    s.validate()?;
    if s.replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let n = d.len();
    let results: Vec<Result<Vec<Effects>>> = (0..s.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let sample = d.resample(&replicate_indices(s.seed, r, n));
            run_pipeline(&sample, cfg).map(|run| run.effects)
        })
        .collect();

    let mut failures = BTreeMap::new();
    let mut ok = Vec::with_capacity(results.len());
    for res in results {
        match res {
            Ok(e) => ok.push(e),
            Err(e) => *failures.entry(e.kind().to_owned()).or_insert(0) += 1,
        }
    }
    let diag = &mut out.diagnostics;
    diag.bootstrap_attempted = s.replicates;
    diag.bootstrap_succeeded = ok.len();
    diag.bootstrap_failures = failures.clone();
    if (ok.len() as f64) < MIN_BOOTSTRAP_SUCCESS * s.replicates as f64 {
        return Err(Error::Inference {
            attempted: s.replicates,
            succeeded: ok.len(),
            failures,
        });
    }
    for (k, entry) in out.estimates.iter_mut().enumerate() {
        let mut cace: Vec<f64> = ok.iter().map(|e| e[k].cace).collect();
        let mut nace: Vec<f64> = ok.iter().map(|e| e[k].nace).collect();
        let mut ate: Vec<f64> = ok.iter().map(|e| e[k].ate).collect();
        entry.ci_cace = Some(percentile_interval(&mut cace, s.level));
        entry.ci_nace = Some(percentile_interval(&mut nace, s.level));
        entry.ci_ate = Some(percentile_interval(&mut ate, s.level));
    }
    out.config_echo.bootstrap = *s;
    Ok(out)
}

/// Runs [`bootstrap_ci`] when the config asks for replicates, otherwise
/// [`point_estimates`].
pub fn estimate(d: &Dataset, cfg: &AnalysisConfig) -> Result<EffectEstimates> {
    if cfg.bootstrap.replicates > 0 {
        bootstrap_ci(d, cfg, &cfg.bootstrap)
    } else {
        point_estimates(d, cfg)
    }
}
