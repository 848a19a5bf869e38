#![allow(dead_code)]

use lmar_core::nuisance::NuisancePredictions;
use lmar_core::simulation::{ControlOutcome, ControlResponse, DgpConfig};
use lmar_core::OutcomeBounds;
use rand::Rng;

pub const LAMBDA0: [f64; 3] = [0.76, 0.06, 0.11];

/// Two covariates, moderate slopes: every derived control probability and
/// mean stays well inside its range for all four response rules.
pub fn oracle_dgp(n: usize, seed: u64, response: ControlResponse, outcome: ControlOutcome) -> DgpConfig {
    DgpConfig {
        n,
        p: 2,
        seed,
        n_pop: 1_000_000,
        outcome_bounds: OutcomeBounds::new(0.0, 1.0).unwrap(),
        assignment_prob: 0.5,
        epsilon: 0.01,
        precision: 8.0,
        compliance: vec![0.1, 0.2, -0.15],
        response_w11: vec![0.9, 0.15, 0.1],
        response_w10: vec![0.6, -0.05, 0.15],
        mu11: vec![0.6, 0.3, 0.2],
        mu10: vec![0.0, 0.2, -0.2],
        control_response: response,
        control_outcome: outcome,
    }
}

pub fn response_rule(name: &str) -> ControlResponse {
    let lambda0 = LAMBDA0.to_vec();
    match name {
        "near_SNR" => ControlResponse::NearSnr { lambda0 },
        "near_SCR" => ControlResponse::NearScr { lambda0 },
        "rPI" => ControlResponse::Rpi { lambda0 },
        "rPO" => ControlResponse::Rpo { lambda0 },
        "free" => ControlResponse::Free {
            w01: vec![0.3, 0.2, 0.0],
            w00: vec![0.9, -0.1, 0.1],
        },
        other => panic!("unknown rule {other}"),
    }
}

pub fn er_outcome() -> ControlOutcome {
    ControlOutcome::Er {
        kappa0r: vec![-0.1, 0.2, -0.15],
    }
}

pub fn pi_outcome() -> ControlOutcome {
    ControlOutcome::Pi {
        kappa0r: vec![0.0, 0.1, 0.0],
    }
}

pub fn smde_outcome(eta: f64) -> ControlOutcome {
    ControlOutcome::Smde {
        kappa0r: vec![0.1, 0.15, -0.1],
        eta,
    }
}

pub fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

/// Random per-unit nuisance values with outcome means strictly inside `b`.
pub fn random_predictions(rng: &mut impl Rng, n: usize, b: OutcomeBounds) -> NuisancePredictions {
    let mut p = NuisancePredictions::constant(n, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.1, b);
    let inside = |u: f64| b.unscale(0.02 + 0.96 * u);
    for i in 0..n {
        p.pi1[i] = 0.02 + 0.96 * rng.random::<f64>();
        p.pi0[i] = 1.0 - p.pi1[i];
        p.w11[i] = 0.02 + 0.96 * rng.random::<f64>();
        p.w10[i] = 0.02 + 0.96 * rng.random::<f64>();
        p.lambda0[i] = 0.02 + 0.96 * rng.random::<f64>();
        p.mu11[i] = inside(rng.random());
        p.mu10[i] = inside(rng.random());
        p.kappa0r[i] = inside(rng.random());
        let k = b.rescale(p.kappa0r[i]);
        p.sigma0r[i] = b.width() * (k * (1.0 - k)).sqrt() * rng.random::<f64>();
    }
    p
}

/// Bisection solve of `π₁u + π₀v = λ₀` with `odds(u)/odds(v) = ρ` over `u ∈ (0,1)`.
pub fn rpo_bisection(pi1: f64, lambda0: f64, rho: f64) -> (f64, f64) {
    let v_of = |u: f64| u / (u + rho * (1.0 - u));
    let f = |u: f64| pi1 * u + (1.0 - pi1) * v_of(u) - lambda0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    (u, v_of(u))
}
