//! Control-arm stratum response probabilities and mixture weights.
//!
//! Under one-sided noncompliance the control-arm response rate is the mixture
//! `λ₀ = π₁ ϖ₀₁ + π₀ ϖ₀₀`. Each specific missingness mechanism supplies the
//! second equation needed to pin down `(ϖ₀₁, ϖ₀₀)`; the mixture weights of
//! the control responders then follow as `π₀cᴿ = π_c ϖ₀c / λ₀`.

use serde::Serialize;

use crate::config::check_epsilon;
use crate::error::{Error, Result};
use crate::glm::logit;
use crate::nuisance::NuisancePredictions;

/// Strata with probability at or below this are treated as empty.
pub const MIN_STRATUM_PROB: f64 = 1e-12;
/// Below this distance from 1 the treated odds ratio is taken to be exactly 1.
pub const ODDS_RATIO_TOLERANCE: f64 = 1e-8;
pub const DISCRIMINANT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mechanism {
    #[serde(rename = "near_SNR")]
    NearSnr,
    #[serde(rename = "near_SCR")]
    NearScr,
    #[serde(rename = "rPI")]
    Rpi,
    #[serde(rename = "rPO")]
    Rpo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseWeights {
    pub mechanism: Mechanism,
    /// ϖ₀₁: response probability of control-arm compliers.
    pub w01: Vec<f64>,
    /// ϖ₀₀: response probability of control-arm noncompliers.
    pub w00: Vec<f64>,
    /// π₀₁ᴿ: share of compliers among control-arm responders.
    pub p01r: Vec<f64>,
    /// π₀₀ᴿ = 1 − π₀₁ᴿ.
    pub p00r: Vec<f64>,
    /// The solved stratum probability was restricted to `[ε, 1]`.
    pub clamp_flags: Vec<bool>,
    /// The re-solved probability of the other stratum also left `[ε, 1]` and
    /// was restricted too; the response mixture equation does not hold here.
    pub mixture_violations: Vec<bool>,
}

impl ResponseWeights {
    pub fn len(&self) -> usize {
        self.w01.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w01.is_empty()
    }

    pub fn clamp_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.clamp_flags.iter().filter(|&&f| f).count() as f64 / self.len() as f64
    }

    pub fn mixture_violation_count(&self) -> usize {
        self.mixture_violations.iter().filter(|&&f| f).count()
    }

    fn with_capacity(mechanism: Mechanism, n: usize) -> Self {
        Self {
            mechanism,
            w01: Vec::with_capacity(n),
            w00: Vec::with_capacity(n),
            p01r: Vec::with_capacity(n),
            p00r: Vec::with_capacity(n),
            clamp_flags: Vec::with_capacity(n),
            mixture_violations: Vec::with_capacity(n),
        }
    }
}

fn check_strata(i: usize, pi1: f64, pi0: f64) -> Result<()> {
    if pi1 <= MIN_STRATUM_PROB || pi0 <= MIN_STRATUM_PROB {
        return Err(Error::Numerical(format!(
            "degenerate stratum at unit {i}: π₁ = {pi1:e}, π₀ = {pi0:e}"
        )));
    }
    Ok(())
}

/// Per-unit result of a near-stable response solve, expressed for the
/// stratum whose probability is solved (`solved`) and the stratum whose
/// probability is borrowed from the treatment arm (`pinned`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearStableUnit {
    pub solved: f64,
    pub pinned: f64,
    /// Share of the solved stratum among control responders.
    pub solved_share: f64,
    pub clamped: bool,
    pub violation: bool,
}

/// Pins one stratum at its treated-arm probability, solves the mixture for
/// the other, and restricts it to `[ε, 1]`. When restriction happens the
/// pinned stratum is re-solved from the mixture and restricted in turn.
pub fn near_stable_unit(
    pi_solved: f64,
    pi_pinned: f64,
    lambda0: f64,
    w_treated_pinned: f64,
    epsilon: f64,
) -> NearStableUnit {
    let raw = (lambda0 - pi_pinned * w_treated_pinned) / pi_solved;
    let solved = raw.clamp(epsilon, 1.0);
    let clamped = solved != raw;
    let (pinned, violation) = if clamped {
        let re = (lambda0 - pi_solved * solved) / pi_pinned;
        let r = re.clamp(epsilon, 1.0);
        (r, r != re)
    } else {
        (w_treated_pinned, false)
    };
    let share = if violation {
        // λ₀ is not reachable; normalize by the implied response rate instead
        pi_solved * solved / (pi_solved * solved + pi_pinned * pinned)
    } else {
        pi_solved * solved / lambda0
    };
    NearStableUnit {
        solved,
        pinned,
        solved_share: share.clamp(0.0, 1.0),
        clamped,
        violation,
    }
}

/// Near stable noncomplier response: ϖ₀₀ tracks ϖ₁₀ unless that forces ϖ₀₁ out of `[ε, 1]`.
pub fn weights_near_snr(p: &NuisancePredictions, epsilon: f64) -> Result<ResponseWeights> {
    check_epsilon(epsilon)?;
    let n = p.len();
    let mut w = ResponseWeights::with_capacity(Mechanism::NearSnr, n);
    for i in 0..n {
        check_strata(i, p.pi1[i], p.pi0[i])?;
        let u = near_stable_unit(p.pi1[i], p.pi0[i], p.lambda0[i], p.w10[i], epsilon);
        w.w01.push(u.solved);
        w.w00.push(u.pinned);
        w.p01r.push(u.solved_share);
        w.p00r.push(1.0 - u.solved_share);
        w.clamp_flags.push(u.clamped);
        w.mixture_violations.push(u.violation);
    }
    Ok(w)
}

/// Near stable complier response: the mirror image of [`weights_near_snr`].
pub fn weights_near_scr(p: &NuisancePredictions, epsilon: f64) -> Result<ResponseWeights> {
    check_epsilon(epsilon)?;
    let n = p.len();
    let mut w = ResponseWeights::with_capacity(Mechanism::NearScr, n);
    for i in 0..n {
        check_strata(i, p.pi1[i], p.pi0[i])?;
        let u = near_stable_unit(p.pi0[i], p.pi1[i], p.lambda0[i], p.w11[i], epsilon);
        w.w00.push(u.solved);
        w.w01.push(u.pinned);
        w.p00r.push(u.solved_share);
        w.p01r.push(1.0 - u.solved_share);
        w.clamp_flags.push(u.clamped);
        w.mixture_violations.push(u.violation);
    }
    Ok(w)
}

/// Response principal ignorability: both strata respond at the control-arm rate.
pub fn weights_rpi(p: &NuisancePredictions) -> ResponseWeights {
    let n = p.len();
    ResponseWeights {
        mechanism: Mechanism::Rpi,
        w01: p.lambda0.clone(),
        w00: p.lambda0.clone(),
        p01r: p.pi1.clone(),
        p00r: p.pi0.clone(),
        clamp_flags: vec![false; n],
        mixture_violations: vec![false; n],
    }
}

/// Root in `[0, 1]` of `π(ϱ-1)u² − [(π+λ)(ϱ-1)+1]u + λϱ = 0`, the admissible
/// one `(γ − ω) / (2π(ϱ-1))`. Evaluated in whichever algebraically equivalent
/// form avoids cancellation.
pub fn rpo_root(pi: f64, lambda0: f64, odds_ratio: f64) -> Result<f64> {
    let rm1 = odds_ratio - 1.0;
    let gamma = (pi + lambda0) * rm1 + 1.0;
    let mut disc = gamma * gamma - 4.0 * pi * lambda0 * odds_ratio * rm1;
    if disc < -DISCRIMINANT_TOLERANCE {
        return Err(Error::Numerical(format!(
            "negative discriminant {disc:e} in proportional response odds solve"
        )));
    }
    disc = disc.max(0.0);
    let omega = disc.sqrt();
    let u = if gamma >= 0.0 {
        2.0 * lambda0 * odds_ratio / (gamma + omega)
    } else {
        (gamma - omega) / (2.0 * pi * rm1)
    };
    Ok(u.clamp(0.0, 1.0))
}

/// Proportional response odds: the control-arm complier-to-noncomplier odds
/// ratio of response equals the treated-arm one.
pub fn weights_rpo(p: &NuisancePredictions) -> Result<ResponseWeights> {
    let n = p.len();
    let mut w = ResponseWeights::with_capacity(Mechanism::Rpo, n);
    for i in 0..n {
        let (pi1, pi0, lambda0) = (p.pi1[i], p.pi0[i], p.lambda0[i]);
        check_strata(i, pi1, pi0)?;
        let rho1 = (logit(p.w11[i]) - logit(p.w10[i])).exp();
        let (u, v) = if (rho1 - 1.0).abs() < ODDS_RATIO_TOLERANCE {
            (lambda0, lambda0)
        } else if pi1 >= pi0 {
            // solve the quadratic for the larger stratum, divide by the smaller one last
            let u = rpo_root(pi1, lambda0, rho1)?;
            (u, ((lambda0 - pi1 * u) / pi0).clamp(0.0, 1.0))
        } else {
            let v = rpo_root(pi0, lambda0, 1.0 / rho1)?;
            (((lambda0 - pi0 * v) / pi1).clamp(0.0, 1.0), v)
        };
        let share = (pi1 * u / lambda0).clamp(0.0, 1.0);
        w.w01.push(u);
        w.w00.push(v);
        w.p01r.push(share);
        w.p00r.push(1.0 - share);
        w.clamp_flags.push(false);
        w.mixture_violations.push(false);
    }
    Ok(w)
}

/// How often exact stable response would imply an improper probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismReport {
    pub mechanism: String,
    pub violation_fraction: f64,
    pub min_implied: f64,
    pub max_implied: f64,
    pub n_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableResponseReport {
    pub snr: MechanismReport,
    pub scr: MechanismReport,
}

fn report(mechanism: &str, implied: impl Iterator<Item = f64>, epsilon: f64) -> MechanismReport {
    let mut n = 0usize;
    let mut bad = 0usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in implied {
        n += 1;
        if !(epsilon..=1.0).contains(&v) {
            bad += 1;
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    MechanismReport {
        mechanism: mechanism.to_owned(),
        violation_fraction: if n == 0 { 0.0 } else { bad as f64 / n as f64 },
        min_implied: if n == 0 { f64::NAN } else { lo },
        max_implied: if n == 0 { f64::NAN } else { hi },
        n_units: n,
    }
}

/// Implied control-arm probabilities under exact SNR (for compliers) and
/// exact SCR (for noncompliers), compared against `[ε, 1]`.
pub fn diagnose_stable_response(p: &NuisancePredictions, epsilon: f64) -> StableResponseReport {
    let snr = (0..p.len()).map(|i| (p.lambda0[i] - p.pi0[i] * p.w10[i]) / p.pi1[i]);
    let scr = (0..p.len()).map(|i| (p.lambda0[i] - p.pi1[i] * p.w11[i]) / p.pi0[i]);
    StableResponseReport {
        snr: report("SNR", snr, epsilon),
        scr: report("SCR", scr, epsilon),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeBounds;
    use approx::assert_abs_diff_eq;

    fn preds(pi1: f64, w11: f64, w10: f64, lambda0: f64) -> NuisancePredictions {
        NuisancePredictions::constant(
            1,
            pi1,
            w11,
            w10,
            lambda0,
            0.5,
            0.5,
            0.5,
            0.1,
            OutcomeBounds::new(0.0, 1.0).unwrap(),
        )
    }

    #[test]
    fn near_snr_interior() {
        let w = weights_near_snr(&preds(0.5, 0.5, 0.8, 0.6), 0.01).unwrap();
        assert_abs_diff_eq!(w.w01[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(w.w00[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(w.p01r[0], 1.0 / 3.0, epsilon = 1e-12);
        assert!(!w.clamp_flags[0]);
    }

    #[test]
    fn near_snr_clamps_then_resolves() {
        let w = weights_near_snr(&preds(0.5, 0.5, 0.9, 0.4), 0.01).unwrap();
        assert_eq!(w.w01[0], 0.01);
        assert!(w.clamp_flags[0]);
        assert_abs_diff_eq!(w.w00[0], 0.79, epsilon = 1e-12);
        assert!(!w.mixture_violations[0]);
    }

    #[test]
    fn near_snr_homogeneous() {
        let w = weights_near_snr(&preds(0.3, 0.5, 0.7, 0.7), 0.01).unwrap();
        assert_abs_diff_eq!(w.w01[0], 0.7, epsilon = 1e-12);
        assert_eq!(w.w00[0], 0.7);
        assert!(!w.clamp_flags[0]);
    }

    #[test]
    fn near_scr_interior_and_clamped() {
        let w = weights_near_scr(&preds(0.5, 0.8, 0.5, 0.6), 0.01).unwrap();
        assert_abs_diff_eq!(w.w00[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(w.w01[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(w.p00r[0], 1.0 / 3.0, epsilon = 1e-12);

        let w = weights_near_scr(&preds(0.5, 0.05, 0.5, 0.6), 0.01).unwrap();
        assert_eq!(w.w00[0], 1.0);
        assert!(w.clamp_flags[0]);
        assert_abs_diff_eq!(w.w01[0], 0.2, epsilon = 1e-12);

        let w = weights_near_scr(&preds(0.4, 0.65, 0.5, 0.65), 0.01).unwrap();
        assert_abs_diff_eq!(w.w00[0], 0.65, epsilon = 1e-12);
        assert_abs_diff_eq!(w.w01[0], 0.65, epsilon = 1e-12);
    }

    #[test]
    fn double_infeasibility_sets_both_flags() {
        // raw ϖ₀₁ > 1 and the re-solved ϖ₀₀ falls below ε
        let w = weights_near_snr(&preds(0.5, 0.5, 0.001, 0.502), 0.01).unwrap();
        assert!(w.clamp_flags[0] && w.mixture_violations[0]);
        assert_eq!(w.w01[0], 1.0);
        assert_eq!(w.w00[0], 0.01);
        assert_abs_diff_eq!(w.p01r[0] + w.p00r[0], 1.0, epsilon = 1e-15);
        assert!(w.p01r[0] <= 1.0);
        assert_eq!(w.mixture_violation_count(), 1);
    }

    #[test]
    fn degenerate_strata_rejected() {
        assert!(weights_near_snr(&preds(1e-12, 0.5, 0.5, 0.5), 0.01).is_err());
        assert!(weights_rpo(&preds(1e-12, 0.6, 0.5, 0.5)).is_err());
        assert!(weights_near_snr(&preds(0.5, 0.5, 0.5, 0.5), 0.0).is_err());
    }

    #[test]
    fn rpi_reproduces_stratum_shares() {
        let p = preds(0.3, 0.9, 0.2, 0.7);
        let w = weights_rpi(&p);
        assert_eq!((w.p01r[0], w.p00r[0]), (p.pi1[0], p.pi0[0]));
        assert_eq!((w.w01[0], w.w00[0]), (0.7, 0.7));
        let w = weights_rpi(&preds(0.3, 0.9, 0.2, 1.0));
        assert_eq!((w.w01[0], w.w00[0]), (1.0, 1.0));
        let w = weights_rpi(&preds(0.0, 0.9, 0.2, 0.5));
        assert_eq!(w.p01r[0], 0.0);
    }

    fn odds(p: f64) -> f64 {
        p / (1.0 - p)
    }

    #[test]
    fn rpo_equal_treated_response_is_rpi() {
        let w = weights_rpo(&preds(0.6, 0.7, 0.7, 0.55)).unwrap();
        assert_eq!((w.w01[0], w.w00[0]), (0.55, 0.55));
    }

    #[test]
    fn rpo_worked_example() {
        let w = weights_rpo(&preds(0.6, 0.8, 2.0 / 3.0, 0.7)).unwrap();
        assert_abs_diff_eq!(w.w01[0], 0.75896, epsilon = 1e-5);
        assert_abs_diff_eq!(w.w00[0], 0.61155, epsilon = 1e-5);
        assert_abs_diff_eq!(w.p01r[0], 0.65054, epsilon = 1e-5);
        assert_abs_diff_eq!(odds(w.w01[0]) / odds(w.w00[0]), 2.0, epsilon = 1e-6);
        // direct evaluation of the displayed root
        let (pi, lam, rho) = (0.6f64, 0.7f64, 2.0f64);
        let g = (pi + lam) * (rho - 1.0) + 1.0;
        let om = (g * g - 4.0 * pi * lam * rho * (rho - 1.0)).sqrt();
        assert_abs_diff_eq!(w.w01[0], (g - om) / (2.0 * pi * (rho - 1.0)), epsilon = 1e-14);
    }

    #[test]
    fn rpo_single_stratum_limit() {
        let w = weights_rpo(&preds(1.0 - 1e-9, 0.8, 0.3, 0.6)).unwrap();
        assert_abs_diff_eq!(w.w01[0], 0.6, epsilon = 1e-6);
    }

    #[test]
    fn rpo_root_branches_agree() {
        // γ < 0 only happens for ϱ < 1 with large π + λ
        for &(pi, lam, rho) in &[(0.9, 0.9, 0.1), (0.7, 0.95, 0.2), (0.5, 0.5, 3.0), (0.99, 0.01, 50.0)] {
            let u = rpo_root(pi, lam, rho).unwrap();
            let v = (lam - pi * u) / (1.0 - pi);
            assert!((0.0..=1.0).contains(&u) && (-1e-12..=1.0 + 1e-12).contains(&v));
            let q = pi * (rho - 1.0) * u * u - ((pi + lam) * (rho - 1.0) + 1.0) * u + lam * rho;
            assert!(q.abs() < 1e-12, "{pi} {lam} {rho}: {q}");
        }
    }

    #[test]
    fn diagnostics_count_violations() {
        let homog = preds(0.5, 0.5, 0.6, 0.6);
        let r = diagnose_stable_response(&homog, 0.01);
        assert_eq!(r.snr.violation_fraction, 0.0);

        let bad = preds(0.5, 0.5, 0.9, 0.4);
        let r = diagnose_stable_response(&bad, 0.01);
        assert_eq!(r.snr.violation_fraction, 1.0);
        assert_abs_diff_eq!(r.snr.min_implied, -0.1, epsilon = 1e-12);

        let mut mixed = homog.clone();
        for (dst, src) in [
            (&mut mixed.pi1, &bad.pi1),
            (&mut mixed.pi0, &bad.pi0),
            (&mut mixed.w11, &bad.w11),
            (&mut mixed.w10, &bad.w10),
            (&mut mixed.lambda0, &bad.lambda0),
        ] {
            dst.extend_from_slice(src);
        }
        let r = diagnose_stable_response(&mixed, 0.01);
        assert_eq!(r.snr.violation_fraction, 0.5);
        assert_eq!(r.snr.n_units, 2);
        let json = serde_json::to_value(&r.snr).unwrap();
        for key in ["mechanism", "violation_fraction", "min_implied", "max_implied", "n_units"] {
            assert!(json.get(key).is_some());
        }
    }
}
