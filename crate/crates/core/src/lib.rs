//! Principal causal effects (CACE, NACE, ATE) for one-sided noncompliance
//! trials whose outcomes are latent missing at random.
//!
//! Identification pairs a principal identification assumption (ER, PI or a
//! PI sensitivity model) with a specific missingness mechanism (near-SNR,
//! near-SCR, rPI, rPO). The mechanism solves the control-arm response
//! mixture equation for the stratum response probabilities; the principal
//! assumption then solves the outcome mixture equation for the stratum
//! control means. Effects are plug-in averages over the sample, with
//! percentile bootstrap intervals.

pub mod config;
pub mod data;
pub mod error;
pub mod estimation;
pub mod glm;
pub mod missingness;
pub mod nuisance;
pub mod outcome;
pub mod simulation;

pub use config::{AnalysisConfig, BootstrapSettings, Missingness, PrincipalId};
pub use data::{load_csv, read_csv, save_csv, validate_dataset, write_csv, DataWarning, Dataset, OutcomeBounds, UnitRecord};
pub use error::{Error, Result};
pub use estimation::{bootstrap_ci, estimate, point_estimates, Diagnostics, EffectEntry, EffectEstimates};
