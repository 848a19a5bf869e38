//! The seven conditional models and their per-unit predictions.

use serde::Serialize;

use crate::data::{Dataset, OutcomeBounds, UnitRecord};
use crate::error::{Error, Result};
use crate::glm::{fit_genlogit, fit_logistic, DesignMatrix, FittedModel, PROB_CLAMP};

/// Row counts of the subsample each model was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SubsampleSizes {
    pub treated: usize,
    pub treated_compliers: usize,
    pub treated_noncompliers: usize,
    pub control: usize,
    pub treated_complier_responders: usize,
    pub treated_noncomplier_responders: usize,
    pub control_responders: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    /// P(C=1 | X) fitted on Z=1.
    pub pi: FittedModel,
    /// P(R=1 | X) on Z=1, C=1.
    pub w11: FittedModel,
    /// P(R=1 | X) on Z=1, C=0.
    pub w10: FittedModel,
    /// P(R=1 | X) on Z=0.
    pub lambda0: FittedModel,
    /// E[Y | X] on Z=1, C=1, R=1.
    pub mu11: FittedModel,
    /// E[Y | X] on Z=1, C=0, R=1.
    pub mu10: FittedModel,
    /// E[Y | X] on Z=0, R=1; its dispersion gives the pooled control-responder sd.
    pub kappa0r: FittedModel,
    pub sizes: SubsampleSizes,
}

impl NuisanceFit {
    pub fn models(&self) -> [(&'static str, &FittedModel); 7] {
        [
            ("pi", &self.pi),
            ("w11", &self.w11),
            ("w10", &self.w10),
            ("lambda0", &self.lambda0),
            ("mu11", &self.mu11),
            ("mu10", &self.mu10),
            ("kappa0r", &self.kappa0r),
        ]
    }

    /// Number of fits that did not converge cleanly (ridge or iteration limit).
    pub fn unconverged(&self) -> usize {
        self.models().iter().filter(|(_, m)| !m.converged).count()
    }
}

fn design(rows: &[&UnitRecord], p: usize) -> Result<DesignMatrix> {
    DesignMatrix::new(rows.iter().map(|r| r.x.as_slice()), p)
}

/// Response model for one cell, with the perfect-response rule: a cell where
/// every unit responds (or none does) gets a constant clamped probability.
fn fit_response(cell: &str, rows: &[&UnitRecord], p: usize) -> Result<FittedModel> {
    if rows.is_empty() {
        return Err(Error::Estimation(format!("no units among {cell}")));
    }
    let t: Vec<bool> = rows.iter().map(|r| r.r).collect();
    if t.iter().all(|&b| b) {
        return Ok(FittedModel::constant_probability(true, p));
    }
    if t.iter().all(|&b| !b) {
        return Ok(FittedModel::constant_probability(false, p));
    }
    fit_logistic(&design(rows, p)?, &t)
}

fn fit_outcome(cell: &str, rows: &[&UnitRecord], p: usize, b: OutcomeBounds) -> Result<FittedModel> {
    let responders: Vec<&UnitRecord> = rows.iter().copied().filter(|r| r.r).collect();
    if responders.is_empty() {
        return Err(Error::Estimation(format!("no responders among {cell}")));
    }
    let y: Vec<f64> = responders.iter().map(|r| r.y.unwrap_or(f64::NAN)).collect();
    fit_genlogit(&design(&responders, p)?, &y, b)
}

/// Fits all seven models on their subsamples. All share the full covariate set.
pub fn fit_nuisance(d: &Dataset) -> Result<NuisanceFit> {
    let p = d.dim();
    let b = d.bounds();
    let mut treated = Vec::new();
    let mut compliers = Vec::new();
    let mut noncompliers = Vec::new();
    let mut control = Vec::new();
    for rec in d.records() {
        match (rec.z, rec.c) {
            (true, c) => {
                treated.push(rec);
                if c == Some(true) {
                    compliers.push(rec);
                } else {
                    noncompliers.push(rec);
                }
            }
            (false, _) => control.push(rec),
        }
    }
    if treated.is_empty() {
        return Err(Error::Estimation("no units among Z=1".into()));
    }
    if compliers.is_empty() {
        return Err(Error::Estimation("no compliers among Z=1".into()));
    }
    if noncompliers.is_empty() {
        return Err(Error::Estimation("no noncompliers among Z=1".into()));
    }
    let c: Vec<bool> = treated.iter().map(|r| r.c == Some(true)).collect();
    let pi = fit_logistic(&design(&treated, p)?, &c)?;

    let w11 = fit_response("Z=1,C=1", &compliers, p)?;
    let w10 = fit_response("Z=1,C=0", &noncompliers, p)?;
    let lambda0 = fit_response("Z=0", &control, p)?;
    let mu11 = fit_outcome("Z=1,C=1", &compliers, p, b)?;
    let mu10 = fit_outcome("Z=1,C=0", &noncompliers, p, b)?;
    let kappa0r = fit_outcome("Z=0", &control, p, b)?;

    let responders = |rows: &[&UnitRecord]| rows.iter().filter(|r| r.r).count();
    let sizes = SubsampleSizes {
        treated: treated.len(),
        treated_compliers: compliers.len(),
        treated_noncompliers: noncompliers.len(),
        control: control.len(),
        treated_complier_responders: responders(&compliers),
        treated_noncomplier_responders: responders(&noncompliers),
        control_responders: responders(&control),
    };
    Ok(NuisanceFit {
        pi,
        w11,
        w10,
        lambda0,
        mu11,
        mu10,
        kappa0r,
        sizes,
    })
}

/// Every nuisance function evaluated at every unit's covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisancePredictions {
    pub pi1: Vec<f64>,
    /// Exactly `1 - pi1`.
    pub pi0: Vec<f64>,
    pub w11: Vec<f64>,
    pub w10: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub mu11: Vec<f64>,
    pub mu10: Vec<f64>,
    pub kappa0r: Vec<f64>,
    pub sigma0r: Vec<f64>,
    pub bounds: OutcomeBounds,
}

impl NuisancePredictions {
    pub fn len(&self) -> usize {
        self.pi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi1.is_empty()
    }

    /// Predictions that are the same at every unit; handy for exercising the
    /// identification formulas directly.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        n: usize,
        pi1: f64,
        w11: f64,
        w10: f64,
        lambda0: f64,
        mu11: f64,
        mu10: f64,
        kappa0r: f64,
        sigma0r: f64,
        bounds: OutcomeBounds,
    ) -> Self {
        Self {
            pi1: vec![pi1; n],
            pi0: vec![1.0 - pi1; n],
            w11: vec![w11; n],
            w10: vec![w10; n],
            lambda0: vec![lambda0; n],
            mu11: vec![mu11; n],
            mu10: vec![mu10; n],
            kappa0r: vec![kappa0r; n],
            sigma0r: vec![sigma0r; n],
            bounds,
        }
    }
}

pub fn predict_nuisance(fit: &NuisanceFit, d: &Dataset) -> Result<NuisancePredictions> {
    let n = d.len();
    let mut out = NuisancePredictions {
        pi1: Vec::with_capacity(n),
        pi0: Vec::with_capacity(n),
        w11: Vec::with_capacity(n),
        w10: Vec::with_capacity(n),
        lambda0: Vec::with_capacity(n),
        mu11: Vec::with_capacity(n),
        mu10: Vec::with_capacity(n),
        kappa0r: Vec::with_capacity(n),
        sigma0r: Vec::with_capacity(n),
        bounds: d.bounds(),
    };
    for rec in d.records() {
        let x = rec.x.as_slice();
        let pi1 = fit.pi.predict_mean(x)?;
        out.pi1.push(pi1);
        out.pi0.push(1.0 - pi1);
        out.w11.push(fit.w11.predict_mean(x)?);
        out.w10.push(fit.w10.predict_mean(x)?);
        out.lambda0.push(fit.lambda0.predict_mean(x)?);
        out.mu11.push(fit.mu11.predict_mean(x)?);
        out.mu10.push(fit.mu10.predict_mean(x)?);
        out.kappa0r.push(fit.kappa0r.predict_mean(x)?);
        out.sigma0r.push(fit.kappa0r.conditional_sd(x)?);
    }
    debug_assert!(out.pi1.iter().all(|p| *p >= PROB_CLAMP && *p <= 1.0 - PROB_CLAMP));
    Ok(out)
}
