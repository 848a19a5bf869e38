//! Analysis configuration: which principal identification assumption and which
//! specific missingness mechanism to combine.

use serde::{Deserialize, Serialize};

use crate::data::OutcomeBounds;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Assumption used to solve the outcome mixture equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrincipal", into = "RawPrincipal")]
pub enum PrincipalId {
    /// Exclusion restriction: noncomplier control mean equals the treated one.
    Er,
    /// Principal ignorability.
    Pi,
    /// Generalized odds ratio of the control-arm stratum means, one analysis per value.
    PiSensGor(Vec<f64>),
    /// Mean ratio of the control-arm stratum means.
    PiSensMr(Vec<f64>),
    /// Standardized mean difference with equal stratum variances.
    PiSensSmde(Vec<f64>),
}

impl PrincipalId {
    pub fn name(&self) -> &'static str {
        match self {
            PrincipalId::Er => "ER",
            PrincipalId::Pi => "PI",
            PrincipalId::PiSensGor(_) => "PIsens_GOR",
            PrincipalId::PiSensMr(_) => "PIsens_MR",
            PrincipalId::PiSensSmde(_) => "PIsens_SMDe",
        }
    }

    /// Sensitivity values, or `None` for the parameter-free assumptions.
    pub fn params(&self) -> Option<&[f64]> {
        match self {
            PrincipalId::Er | PrincipalId::Pi => None,
            PrincipalId::PiSensGor(v) | PrincipalId::PiSensMr(v) | PrincipalId::PiSensSmde(v) => {
                Some(v)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            PrincipalId::Er | PrincipalId::Pi => Ok(()),
            PrincipalId::PiSensGor(v) | PrincipalId::PiSensMr(v) if v.is_empty() => {
                bad(format!("{} needs at least one parameter", self.name()))
            }
            PrincipalId::PiSensSmde(v) if v.is_empty() => {
                bad(format!("{} needs at least one parameter", self.name()))
            }
            PrincipalId::PiSensGor(v) | PrincipalId::PiSensMr(v) => {
                match v.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                    Some(p) => bad(format!("{} parameters must be > 0, got {p}", self.name())),
                    None => Ok(()),
                }
            }
            PrincipalId::PiSensSmde(v) => match v.iter().find(|p| !p.is_finite()) {
                Some(p) => bad(format!("PIsens_SMDe parameters must be finite, got {p}")),
                None => Ok(()),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrincipal {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    params: Vec<f64>,
}

impl TryFrom<RawPrincipal> for PrincipalId {
    type Error = Error;
    fn try_from(raw: RawPrincipal) -> Result<Self> {
        let need_empty = |p: PrincipalId| {
            if raw.params.is_empty() {
                Ok(p)
            } else {
                Err(Error::Config(format!("{} takes no parameters", raw.kind)))
            }
        };
        let p = match raw.kind.as_str() {
            "ER" => need_empty(PrincipalId::Er)?,
            "PI" => need_empty(PrincipalId::Pi)?,
            "PIsens_GOR" => PrincipalId::PiSensGor(raw.params),
            "PIsens_MR" => PrincipalId::PiSensMr(raw.params),
            "PIsens_SMDe" => PrincipalId::PiSensSmde(raw.params),
            other => {
                return Err(Error::Config(format!(
                    "unknown principal identification assumption `{other}`"
                )))
            }
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<PrincipalId> for RawPrincipal {
    fn from(p: PrincipalId) -> Self {
        RawPrincipal {
            kind: p.name().to_owned(),
            params: p.params().map(<[f64]>::to_vec).unwrap_or_default(),
        }
    }
}

/// Specific missingness mechanism used to solve the response mixture equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMissingness", into = "RawMissingness")]
pub enum Missingness {
    NearSnr { epsilon: f64 },
    NearScr { epsilon: f64 },
    Rpi,
    Rpo,
    /// No specific mechanism; only legal with PI.
    None,
}

impl Missingness {
    pub fn name(&self) -> &'static str {
        match self {
            Missingness::NearSnr { .. } => "near_SNR",
            Missingness::NearScr { .. } => "near_SCR",
            Missingness::Rpi => "rPI",
            Missingness::Rpo => "rPO",
            Missingness::None => "none",
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Missingness::NearSnr { epsilon } | Missingness::NearScr { epsilon } => Some(*epsilon),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.epsilon() {
            Some(e) if !(e > 0.0 && e < 0.5) => Err(Error::Config(format!(
                "epsilon must lie in (0, 0.5), got {e}"
            ))),
            _ => Ok(()),
        }
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    Missingness::NearSnr { epsilon }.validate()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMissingness {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
}

impl TryFrom<RawMissingness> for Missingness {
    type Error = Error;
    fn try_from(raw: RawMissingness) -> Result<Self> {
        let epsilon = raw.epsilon.unwrap_or(DEFAULT_EPSILON);
        let m = match raw.kind.as_str() {
            "near_SNR" => Missingness::NearSnr { epsilon },
            "near_SCR" => Missingness::NearScr { epsilon },
            "rPI" => Missingness::Rpi,
            "rPO" => Missingness::Rpo,
            "none" => Missingness::None,
            other => {
                return Err(Error::Config(format!(
                    "unknown missingness mechanism `{other}`"
                )))
            }
        };
        m.validate()?;
        Ok(m)
    }
}

impl From<Missingness> for RawMissingness {
    fn from(m: Missingness) -> Self {
        RawMissingness {
            kind: m.name().to_owned(),
            epsilon: m.epsilon(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    /// Number of resamples; 0 disables interval estimation.
    #[serde(default)]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    DEFAULT_LEVEL
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replicates: 0,
            seed: 0,
            level: DEFAULT_LEVEL,
        }
    }
}

impl BootstrapSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "bootstrap level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub principal_id: PrincipalId,
    pub missingness: Missingness,
    pub outcome_bounds: OutcomeBounds,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
}

impl AnalysisConfig {
    pub fn new(principal_id: PrincipalId, missingness: Missingness, bounds: OutcomeBounds) -> Self {
        Self {
            principal_id,
            missingness,
            outcome_bounds: bounds,
            bootstrap: BootstrapSettings::default(),
        }
    }

    pub fn with_bootstrap(mut self, bootstrap: BootstrapSettings) -> Self {
        self.bootstrap = bootstrap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.principal_id.validate()?;
        self.missingness.validate()?;
        self.bootstrap.validate()?;
        if self.missingness == Missingness::None && self.principal_id != PrincipalId::Pi {
            return Err(Error::Config(format!(
                "{} requires a specific missingness mechanism; `none` is only valid with PI",
                self.principal_id.name()
            )));
        }
        Ok(())
    }
}
