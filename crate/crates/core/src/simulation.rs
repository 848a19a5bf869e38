//! Synthetic trials in which a chosen principal assumption and response
//! mechanism hold by construction, with Monte Carlo ground truth.
//!
//! Every model the estimator fits is correctly specified: compliance and
//! treated-arm response are logistic in `x`; `λ₀` is logistic and the
//! stratum control response probabilities are derived from it; `μ₁₁`, `μ₁₀`
//! and `κ₀ᴿ` are generalized-logit linear and the control stratum means are
//! derived from `κ₀ᴿ`. Outcomes are scaled beta draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, OutcomeBounds, UnitRecord};
use crate::error::{Error, Result};
use crate::glm::{logit, sigmoid};

/// Number of covariate draws used to check feasibility.
pub const PILOT_DRAWS: usize = 10_000;

const PILOT_STREAM: u64 = 1;
const BISECTION_STEPS: usize = 200;

/// How the control-arm stratum response probabilities relate to the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlResponse {
    /// `ϖ₀₀ = ϖ₁₀`, `ϖ₀₁` from the mixture.
    NearSnr { lambda0: Vec<f64> },
    /// `ϖ₀₁ = ϖ₁₁`, `ϖ₀₀` from the mixture.
    NearScr { lambda0: Vec<f64> },
    /// `ϖ₀₁ = ϖ₀₀ = λ₀`.
    Rpi { lambda0: Vec<f64> },
    /// Control odds ratio equal to the treated one.
    Rpo { lambda0: Vec<f64> },
    /// Both probabilities logistic in `x`, no constraint.
    Free { w01: Vec<f64>, w00: Vec<f64> },
}

/// How the control-arm stratum outcome means relate to the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlOutcome {
    /// `μ₀₀ = μ₁₀`, `μ₀₁` from the mixture.
    Er { kappa0r: Vec<f64> },
    /// `μ₀₁ = μ₀₀ = κ₀ᴿ`.
    Pi { kappa0r: Vec<f64> },
    /// Rescaled odds of `μ₀₁` over those of `μ₀₀` equal `psi`.
    Gor { kappa0r: Vec<f64>, psi: f64 },
    /// `μ₀₁ = rho · μ₀₀`.
    Mr { kappa0r: Vec<f64>, rho: f64 },
    /// `μ₀₁ − μ₀₀ = eta · s` with a common within-stratum sd `s`.
    Smde { kappa0r: Vec<f64>, eta: f64 },
    /// Both means generalized-logit linear, no constraint.
    Free { mu01: Vec<f64>, mu00: Vec<f64> },
}

fn default_n_pop() -> usize {
    1_000_000
}

fn default_assignment() -> f64 {
    0.5
}

fn default_epsilon() -> f64 {
    0.01
}

/// Coefficient vectors hold an intercept followed by `p` slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_pop")]
    pub n_pop: usize,
    pub outcome_bounds: OutcomeBounds,
    #[serde(default = "default_assignment")]
    pub assignment_prob: f64,
    /// Lower bound on the control response probabilities.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Beta precision `φ`: rescaled variance is `μ(1−μ)/(1+φ)`.
    pub precision: f64,
    pub compliance: Vec<f64>,
    pub response_w11: Vec<f64>,
    pub response_w10: Vec<f64>,
    pub mu11: Vec<f64>,
    pub mu10: Vec<f64>,
    pub control_response: ControlResponse,
    pub control_outcome: ControlOutcome,
}

/// Every true conditional quantity at one covariate value. Means are on the
/// original outcome scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitTruth {
    pub pi1: f64,
    pub w11: f64,
    pub w10: f64,
    pub w01: f64,
    pub w00: f64,
    pub lambda0: f64,
    pub p01r: f64,
    pub p00r: f64,
    pub mu11: f64,
    pub mu10: f64,
    pub mu01: f64,
    pub mu00: f64,
    pub kappa0r: f64,
    /// Beta precisions of the control strata.
    pub phi01: f64,
    pub phi00: f64,
}

impl UnitTruth {
    pub fn pi0(&self) -> f64 {
        1.0 - self.pi1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    pub cace: f64,
    pub nace: f64,
    pub ate: f64,
    pub se_cace: f64,
    pub se_nace: f64,
    pub se_ate: f64,
    /// Population complier share `E[π₁(X)]`.
    pub complier_share: f64,
    pub n_pop: usize,
}

fn lin(coef: &[f64], x: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Smallest `t` in `[lo, hi]` with `f(t) ≥ 0` for increasing `f`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl DgpConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(s).map_err(|e| Error::Config(format!("DGP config: {e}")))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.assignment_prob > 0.0 && self.assignment_prob < 1.0) {
            return bad(format!("assignment_prob must lie in (0,1), got {}", self.assignment_prob));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad(format!("epsilon must lie in (0,0.5), got {}", self.epsilon));
        }
        if !(self.precision.is_finite() && self.precision > 0.0) {
            return bad(format!("precision must be positive, got {}", self.precision));
        }
        let mut vectors: Vec<(&str, &[f64])> = vec![
            ("compliance", &self.compliance),
            ("response_w11", &self.response_w11),
            ("response_w10", &self.response_w10),
            ("mu11", &self.mu11),
            ("mu10", &self.mu10),
        ];
        match &self.control_response {
            ControlResponse::NearSnr { lambda0 }
            | ControlResponse::NearScr { lambda0 }
            | ControlResponse::Rpi { lambda0 }
            | ControlResponse::Rpo { lambda0 } => vectors.push(("lambda0", lambda0)),
            ControlResponse::Free { w01, w00 } => {
                vectors.push(("w01", w01));
                vectors.push(("w00", w00));
            }
        }
        match &self.control_outcome {
            ControlOutcome::Er { kappa0r } | ControlOutcome::Pi { kappa0r } => vectors.push(("kappa0r", kappa0r)),
            ControlOutcome::Gor { kappa0r, psi } => {
                if !(psi.is_finite() && *psi > 0.0) {
                    return bad(format!("psi must be positive, got {psi}"));
                }
                vectors.push(("kappa0r", kappa0r));
            }
            ControlOutcome::Mr { kappa0r, rho } => {
                if !(rho.is_finite() && *rho > 0.0) {
                    return bad(format!("rho must be positive, got {rho}"));
                }
                if self.outcome_bounds.lower() < 0.0 {
                    return bad("mean ratio needs nonnegative outcome bounds".into());
                }
                vectors.push(("kappa0r", kappa0r));
            }
            ControlOutcome::Smde { kappa0r, eta } => {
                if !eta.is_finite() {
                    return bad(format!("eta must be finite, got {eta}"));
                }
                vectors.push(("kappa0r", kappa0r));
            }
            ControlOutcome::Free { mu01, mu00 } => {
                vectors.push(("mu01", mu01));
                vectors.push(("mu00", mu00));
            }
        }
        for (name, v) in vectors {
            if v.len() != self.p + 1 {
                return bad(format!("{name} has {} coefficients, expected {}", v.len(), self.p + 1));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return bad(format!("{name} has a non-finite coefficient"));
            }
        }
        Ok(())
    }

    fn rescaled_mean(&self, coef: &[f64], x: &[f64]) -> f64 {
        sigmoid(lin(coef, x))
    }

    /// True conditional quantities at `x`, or the violated constraint.
    pub fn truth(&self, x: &[f64]) -> Result<UnitTruth> {
        let infeasible = |m: String| Err(Error::Infeasible(m));
        let b = self.outcome_bounds;
        let pi1 = sigmoid(lin(&self.compliance, x));
        let pi0 = 1.0 - pi1;
        let w11 = sigmoid(lin(&self.response_w11, x));
        let w10 = sigmoid(lin(&self.response_w10, x));
        let (w01, w00) = match &self.control_response {
            ControlResponse::NearSnr { lambda0 } => {
                let l0 = sigmoid(lin(lambda0, x));
                ((l0 - pi0 * w10) / pi1, w10)
            }
            ControlResponse::NearScr { lambda0 } => {
                let l0 = sigmoid(lin(lambda0, x));
                (w11, (l0 - pi1 * w11) / pi0)
            }
            ControlResponse::Rpi { lambda0 } => {
                let l0 = sigmoid(lin(lambda0, x));
                (l0, l0)
            }
            ControlResponse::Rpo { lambda0 } => {
                let l0 = sigmoid(lin(lambda0, x));
                let log_or = logit(w11) - logit(w10);
                let t = bisect(-60.0, 60.0, |t| pi1 * sigmoid(t) + pi0 * sigmoid(t - log_or) - l0);
                (sigmoid(t), sigmoid(t - log_or))
            }
            ControlResponse::Free { w01, w00 } => (sigmoid(lin(w01, x)), sigmoid(lin(w00, x))),
        };
        let floor = match self.control_response {
            ControlResponse::Free { .. } => 0.0,
            _ => self.epsilon,
        };
        for (name, w) in [("w01", w01), ("w00", w00)] {
            if !(w >= floor && w <= 1.0) || w <= 0.0 {
                return infeasible(format!("control response probability {name} = {w} outside [{floor}, 1]"));
            }
        }
        let lambda0 = pi1 * w01 + pi0 * w00;
        let p01r = pi1 * w01 / lambda0;
        let p00r = 1.0 - p01r;

        let mu11 = b.unscale(self.rescaled_mean(&self.mu11, x));
        let mu10t = self.rescaled_mean(&self.mu10, x);
        let phi = self.precision;
        let (mu01t, mu00t, kt, phi01, phi00) = match &self.control_outcome {
            ControlOutcome::Er { kappa0r } => {
                let k = self.rescaled_mean(kappa0r, x);
                (mu10t + (k - mu10t) / p01r, mu10t, k, phi, phi)
            }
            ControlOutcome::Pi { kappa0r } => {
                let k = self.rescaled_mean(kappa0r, x);
                (k, k, k, phi, phi)
            }
            ControlOutcome::Gor { kappa0r, psi } => {
                let k = self.rescaled_mean(kappa0r, x);
                let lp = psi.ln();
                let d = bisect(-60.0, 60.0, |d| p01r * sigmoid(d + lp) + p00r * sigmoid(d) - k);
                (sigmoid(d + lp), sigmoid(d), k, phi, phi)
            }
            ControlOutcome::Mr { kappa0r, rho } => {
                let k = self.rescaled_mean(kappa0r, x);
                let m00 = b.unscale(k) / (rho * p01r + p00r);
                (b.rescale(rho * m00), b.rescale(m00), k, phi, phi)
            }
            ControlOutcome::Smde { kappa0r, eta } => {
                let k = self.rescaled_mean(kappa0r, x);
                let pooled = k * (1.0 - k) / (1.0 + phi);
                let s2 = pooled / (1.0 + eta * eta * p01r * p00r);
                let s = s2.sqrt();
                let m01 = k + eta * p00r * s;
                let m00 = k - eta * p01r * s;
                (m01, m00, k, m01 * (1.0 - m01) / s2 - 1.0, m00 * (1.0 - m00) / s2 - 1.0)
            }
            ControlOutcome::Free { mu01, mu00 } => {
                let m01 = self.rescaled_mean(mu01, x);
                let m00 = self.rescaled_mean(mu00, x);
                (m01, m00, p01r * m01 + p00r * m00, phi, phi)
            }
        };
        for (name, m) in [("mu01", mu01t), ("mu00", mu00t)] {
            if !(m > 0.0 && m < 1.0) {
                return infeasible(format!("control stratum mean {name} = {} outside the outcome bounds", b.unscale(m)));
            }
        }
        for (name, v) in [("mu01", phi01), ("mu00", phi00)] {
            if v.is_nan() || v <= 0.0 {
                return infeasible(format!("no beta law matches the variance required of {name}"));
            }
        }
        Ok(UnitTruth {
            pi1,
            w11,
            w10,
            w01,
            w00,
            lambda0,
            p01r,
            p00r,
            mu11,
            mu10: b.unscale(mu10t),
            mu01: b.unscale(mu01t),
            mu00: b.unscale(mu00t),
            kappa0r: b.unscale(kt),
            phi01,
            phi00,
        })
    }

    /// Checks feasibility on [`PILOT_DRAWS`] covariate draws.
    pub fn check_feasible(&self, seed: u64) -> Result<()> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PILOT_STREAM);
        for _ in 0..PILOT_DRAWS {
            let x = draw_x(&mut rng, self.p);
            self.truth(&x)?;
        }
        Ok(())
    }
}

fn draw_x(rng: &mut impl Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.sample(StandardNormal)).collect()
}

fn draw_outcome(rng: &mut impl Rng, mean: f64, precision: f64) -> Result<f64> {
    let beta = Beta::new(mean * precision, (1.0 - mean) * precision)
        .map_err(|e| Error::Infeasible(format!("beta law with mean {mean}: {e}")))?;
    Ok(beta.sample(rng))
}

/// One simulated unit before masking: compliance and outcome always known.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentUnit {
    pub x: Vec<f64>,
    pub z: bool,
    pub c: bool,
    pub r: bool,
    pub y: f64,
}

/// Draws `g.n` unmasked units. Runs the pilot feasibility check first.
pub fn simulate_latent(g: &DgpConfig, seed: u64) -> Result<Vec<LatentUnit>> {
    g.check_feasible(seed)?;
    let b = g.outcome_bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::with_capacity(g.n);
    for _ in 0..g.n {
        let x = draw_x(&mut rng, g.p);
        let t = g.truth(&x)?;
        let c = rng.random::<f64>() < t.pi1;
        let z = rng.random::<f64>() < g.assignment_prob;
        let (mean, phi, resp) = match (z, c) {
            (true, true) => (b.rescale(t.mu11), g.precision, t.w11),
            (true, false) => (b.rescale(t.mu10), g.precision, t.w10),
            (false, true) => (b.rescale(t.mu01), t.phi01, t.w01),
            (false, false) => (b.rescale(t.mu00), t.phi00, t.w00),
        };
        let y = b.unscale(draw_outcome(&mut rng, mean, phi)?).clamp(b.lower(), b.upper());
        // drawn after y and independently of it
        let r = rng.random::<f64>() < resp;
        units.push(LatentUnit { x, z, c, r, y });
    }
    Ok(units)
}

/// [`simulate_latent`] with `c` masked in the control arm and `y` masked for
/// nonresponders.
pub fn simulate_dataset(g: &DgpConfig, seed: u64) -> Result<Dataset> {
    let records = simulate_latent(g, seed)?
        .into_iter()
        .map(|u| UnitRecord {
            x: u.x,
            z: u.z,
            c: u.z.then_some(u.c),
            r: u.r,
            y: u.r.then_some(u.y),
        })
        .collect();
    let names = (1..=g.p).map(|j| format!("x{j}")).collect();
    Dataset::new(records, names, g.outcome_bounds)
}

/// Monte Carlo population effects over `n_pop` covariate draws, with
/// delta-method standard errors for the stratum ratios.
pub fn true_effects(g: &DgpConfig, n_pop: usize, seed: u64) -> Result<TrueEffects> {
    g.validate()?;
    if n_pop < 2 {
        return Err(Error::Config("n_pop must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a1 = Vec::with_capacity(n_pop);
    let mut a0 = Vec::with_capacity(n_pop);
    let mut s1 = Vec::with_capacity(n_pop);
    for _ in 0..n_pop {
        let x = draw_x(&mut rng, g.p);
        let t = g.truth(&x)?;
        a1.push(t.pi1 * (t.mu11 - t.mu01));
        a0.push(t.pi0() * (t.mu10 - t.mu00));
        s1.push(t.pi1);
    }
    let n = n_pop as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (m1, m0, share) = (mean(&a1), mean(&a0), mean(&s1));
    let cace = m1 / share;
    let nace = m0 / (1.0 - share);
    let ate = m1 + m0;
    let sd = |f: &dyn Fn(usize) -> f64| {
        let vals: Vec<f64> = (0..n_pop).map(f).collect();
        let m = mean(&vals);
        (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let se_cace = sd(&|i| a1[i] - cace * s1[i]) / (share * n.sqrt());
    let se_nace = sd(&|i| a0[i] - nace * (1.0 - s1[i])) / ((1.0 - share) * n.sqrt());
    let se_ate = sd(&|i| a1[i] + a0[i]) / n.sqrt();
    Ok(TrueEffects {
        cace,
        nace,
        ate,
        se_cace,
        se_nace,
        se_ate,
        complier_share: share,
        n_pop,
    })
}
