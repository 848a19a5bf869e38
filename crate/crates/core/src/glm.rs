//! Binary logistic regression and bounded-outcome quasibinomial regression.
//!
//! Both families share one IRLS solver: the outcome is mapped onto `[0, 1]`,
//! the link is the logit and the variance function is `μ(1-μ)`. For the
//! bounded family this is the generalized logit `log((μ-l)/(h-μ))` on the
//! original scale.

use nalgebra::{DMatrix, DVector};

use crate::data::OutcomeBounds;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 20;
pub const DEVIANCE_TOLERANCE: f64 = 1e-8;
pub const RIDGE_FACTOR: f64 = 1e-6;
pub const DISPERSION_FLOOR: f64 = 1e-8;
/// Probability-scale clamp applied to every prediction.
pub const PROB_CLAMP: f64 = 1e-12;
/// Clamp for rescaled outcomes when the link has to be evaluated at them.
pub const OUTCOME_CLAMP: f64 = 1e-6;
/// Linear predictors beyond this magnitude are treated as a sign of separation.
const SEPARATION_ETA: f64 = 30.0;

/// `n × (p+1)` design with a leading intercept column, plus optional prior weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
    weights: Option<Vec<f64>>,
}

impl DesignMatrix {
    /// Builds the design from covariate rows of dimension `p`, prepending the intercept.
    pub fn new<I, R>(rows: I, p: usize) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let ncols = p + 1;
        let mut values = Vec::new();
        let mut nrows = 0;
        for row in rows {
            let row = row.as_ref();
            if row.len() != p {
                return Err(Error::Validation(format!(
                    "design row {nrows} has dimension {}, expected {p}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("design row {nrows} is not finite")));
            }
            values.push(1.0);
            values.extend_from_slice(row);
            nrows += 1;
        }
        Ok(Self {
            values,
            nrows,
            ncols,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.nrows {
            return Err(Error::Validation("weight vector length mismatch".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("weights must be finite and nonnegative".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn linear_predictor(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| dot(self.row(i), coef)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Logistic,
    /// Quasibinomial with generalized logit link on the given support.
    GenLogit(OutcomeBounds),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub family: Family,
    /// Quasi-likelihood dispersion on the rescaled outcome; 1 for the logistic family.
    pub dispersion: f64,
    /// False when the iteration limit was hit or a ridge had to be added.
    pub converged: bool,
    pub iterations: usize,
    /// Ridge added to the information matrix (0 for a regular fit).
    pub ridge: f64,
}

impl FittedModel {
    /// A logistic model that predicts `prob` everywhere (after the prediction
    /// clamp). Used for cells where every unit shares the same binary outcome.
    pub fn constant_probability(prob_one: bool, p: usize) -> Self {
        // |40| saturates the logistic well past PROB_CLAMP, so the prediction
        // is exactly the clamped boundary.
        let mut coefficients = vec![0.0; p + 1];
        coefficients[0] = if prob_one { 40.0 } else { -40.0 };
        Self {
            coefficients,
            family: Family::Logistic,
            dispersion: 1.0,
            converged: true,
            iterations: 0,
            ridge: 0.0,
        }
    }

    /// Number of covariates (excluding the intercept).
    pub fn dim(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Validation(format!(
                "covariate dimension {} does not match model dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.coefficients[0] + dot(&self.coefficients[1..], x))
    }

    /// Probability (logistic) or mean (bounded family) at `x`, kept strictly
    /// inside the range by [`PROB_CLAMP`] on the probability scale.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let p = sigmoid(self.linear_predictor(x)?).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        Ok(match self.family {
            Family::Logistic => p,
            Family::GenLogit(b) => b.unscale(p),
        })
    }

    /// Conditional standard deviation `sqrt(φ (μ-l)(h-μ))` of the bounded family.
    pub fn conditional_sd(&self, x: &[f64]) -> Result<f64> {
        let Family::GenLogit(b) = self.family else {
            return Err(Error::Validation(
                "conditional_sd requires a generalized-logit model".into(),
            ));
        };
        let mu = self.predict_mean(x)?;
        Ok((self.dispersion * (mu - b.lower()) * (b.upper() - mu)).sqrt())
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

/// Binomial (quasi-)log-likelihood of `y ∈ [0,1]^n` at `coef`.
pub fn log_likelihood(x: &DesignMatrix, y: &[f64], coef: &[f64]) -> f64 {
    x.linear_predictor(coef)
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (&eta, &yi))| -x.weight(i) * (yi * softplus(-eta) + (1.0 - yi) * softplus(eta)))
        .sum()
}

/// Gradient of [`log_likelihood`]: `Xᵀ w (y - μ)`.
pub fn score(x: &DesignMatrix, y: &[f64], coef: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.ncols()];
    for (i, eta) in x.linear_predictor(coef).into_iter().enumerate() {
        let r = x.weight(i) * (y[i] - sigmoid(eta));
        for (gj, xij) in g.iter_mut().zip(x.row(i)) {
            *gj += r * xij;
        }
    }
    g
}

/// Binomial deviance, `2 Σ w [y log(y/μ) + (1-y) log((1-y)/(1-μ))]`.
pub fn deviance(x: &DesignMatrix, y: &[f64], coef: &[f64]) -> f64 {
    x.linear_predictor(coef)
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (&eta, &yi))| {
            let sat = xlogx(yi) + xlogx(1.0 - yi);
            2.0 * x.weight(i) * (sat + yi * softplus(-eta) + (1.0 - yi) * softplus(eta))
        })
        .sum::<f64>()
        .max(0.0)
}

struct IrlsOutcome {
    coef: Vec<f64>,
    converged: bool,
    iterations: usize,
    ridge: f64,
}

fn normal_equations(x: &DesignMatrix, y: &[f64], coef: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let k = x.ncols();
    let mut info = DMatrix::<f64>::zeros(k, k);
    let mut grad = DVector::<f64>::zeros(k);
    for (i, &yi) in y.iter().enumerate().take(x.nrows()) {
        let row = x.row(i);
        let mu = sigmoid(dot(row, coef));
        let w = x.weight(i);
        let wv = w * mu * (1.0 - mu);
        let r = w * (yi - mu);
        for a in 0..k {
            grad[a] += r * row[a];
            let wa = wv * row[a];
            for b in a..k {
                info[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
    (info, grad)
}

/// Newton step for the ridge-penalized deviance.
fn newton_step(
    info: &DMatrix<f64>,
    grad: &DVector<f64>,
    coef: &[f64],
    ridge: f64,
) -> Option<DVector<f64>> {
    let k = coef.len();
    let mut h = info.clone();
    let mut g = grad.clone();
    for a in 0..k {
        h[(a, a)] += ridge;
        g[a] -= ridge * coef[a];
    }
    let step = h.cholesky()?.solve(&g);
    step.iter().all(|v| v.is_finite()).then_some(step)
}

fn objective(x: &DesignMatrix, y: &[f64], coef: &[f64], ridge: f64) -> f64 {
    deviance(x, y, coef) + ridge * coef.iter().map(|b| b * b).sum::<f64>()
}

/// Penalty used once separation is detected; scaled like the information at μ = 1/2.
fn separation_ridge(x: &DesignMatrix) -> f64 {
    let k = x.ncols();
    let mut diag = 0.0;
    for i in 0..x.nrows() {
        diag += x.weight(i) * x.row(i).iter().map(|v| v * v).sum::<f64>();
    }
    RIDGE_FACTOR * 0.25 * diag / k as f64
}

fn irls(x: &DesignMatrix, y: &[f64]) -> Result<IrlsOutcome> {
    let k = x.ncols();
    let total_w: f64 = (0..x.nrows()).map(|i| x.weight(i)).sum();
    if total_w <= 0.0 {
        return Err(Error::Estimation("no observations with positive weight".into()));
    }
    let ybar = (0..x.nrows()).map(|i| x.weight(i) * y[i]).sum::<f64>() / total_w;
    let mut coef = vec![0.0; k];
    coef[0] = logit(ybar.clamp(OUTCOME_CLAMP, 1.0 - OUTCOME_CLAMP));

    let mut ridge = 0.0;
    let mut obj = objective(x, y, &coef, ridge);
    let mut converged = false;
    let mut iterations = 0;
    let mut polishing = false;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (info, grad) = normal_equations(x, y, &coef);
        let step = match newton_step(&info, &grad, &coef, ridge) {
            Some(s) => s,
            None => {
                // singular information: stabilize with a ridge
                let mean_diag = info.diagonal().mean();
                let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
                ridge = ridge.max(RIDGE_FACTOR * base);
                obj = objective(x, y, &coef, ridge);
                newton_step(&info, &grad, &coef, ridge).ok_or_else(|| {
                    Error::Numerical("information matrix singular after ridge fallback".into())
                })?
            }
        };

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = coef
                .iter()
                .zip(step.iter())
                .map(|(b, d)| b + scale * d)
                .collect();
            let trial_obj = objective(x, y, &trial, ridge);
            if trial_obj.is_finite() && trial_obj <= obj + 1e-12 * obj.abs() {
                accepted = Some((trial, trial_obj));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_obj)) = accepted else {
            // no descent possible along the Newton direction: numerically at the optimum
            converged = true;
            break;
        };
        if next.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("non-finite IRLS iterate".into()));
        }
        let rel = (obj - next_obj).abs() / (next_obj.abs() + 0.1);
        coef = next;
        obj = next_obj;

        if ridge == 0.0
            && x.linear_predictor(&coef)
                .iter()
                .any(|eta| eta.abs() > SEPARATION_ETA)
        {
            ridge = separation_ridge(x);
            obj = objective(x, y, &coef, ridge);
            polishing = false;
            continue;
        }
        if polishing {
            converged = true;
            break;
        }
        if rel <= DEVIANCE_TOLERANCE {
            // one extra Newton step drives the score to roundoff level
            polishing = true;
        }
    }

    Ok(IrlsOutcome {
        coef,
        converged: converged && ridge == 0.0,
        iterations,
        ridge,
    })
}

fn check_lengths(x: &DesignMatrix, n: usize) -> Result<()> {
    if x.nrows() != n {
        return Err(Error::Validation(format!(
            "design has {} rows but response has {n}",
            x.nrows()
        )));
    }
    if n == 0 {
        return Err(Error::Estimation("cannot fit a model to zero observations".into()));
    }
    Ok(())
}

/// Maximum-likelihood logistic regression of `t` on the design.
pub fn fit_logistic(x: &DesignMatrix, t: &[bool]) -> Result<FittedModel> {
    check_lengths(x, t.len())?;
    let (mut ones, mut zeros) = (0.0, 0.0);
    for (i, &ti) in t.iter().enumerate() {
        if ti {
            ones += x.weight(i);
        } else {
            zeros += x.weight(i);
        }
    }
    if ones == 0.0 || zeros == 0.0 {
        return Err(Error::Estimation(
            "degenerate response: logistic fit needs both classes".into(),
        ));
    }
    let y: Vec<f64> = t.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let fit = irls(x, &y)?;
    Ok(FittedModel {
        coefficients: fit.coef,
        family: Family::Logistic,
        dispersion: 1.0,
        converged: fit.converged,
        iterations: fit.iterations,
        ridge: fit.ridge,
    })
}

/// Quasibinomial regression of a bounded outcome with the generalized logit
/// link. Dispersion is the Pearson statistic over `n - p - 1`.
pub fn fit_genlogit(x: &DesignMatrix, y: &[f64], bounds: OutcomeBounds) -> Result<FittedModel> {
    check_lengths(x, y.len())?;
    if let Some(v) = y.iter().find(|v| !(v.is_finite() && bounds.contains(**v))) {
        return Err(Error::Domain(format!(
            "outcome {v} outside [{}, {}]",
            bounds.lower(),
            bounds.upper()
        )));
    }
    let yt: Vec<f64> = y.iter().map(|&v| bounds.rescale(v).clamp(0.0, 1.0)).collect();
    let fit = irls(x, &yt)?;

    let mut pearson = 0.0;
    for (i, eta) in x.linear_predictor(&fit.coef).into_iter().enumerate() {
        let mu = sigmoid(eta).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        pearson += x.weight(i) * (yt[i] - mu).powi(2) / (mu * (1.0 - mu));
    }
    let df = x.nrows().saturating_sub(x.ncols()).max(1) as f64;
    let dispersion = (pearson / df).max(DISPERSION_FLOOR);

    Ok(FittedModel {
        coefficients: fit.coef,
        family: Family::GenLogit(bounds),
        dispersion,
        converged: fit.converged,
        iterations: fit.iterations,
        ridge: fit.ridge,
    })
}
