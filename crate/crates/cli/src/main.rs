use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lmar_core::missingness::diagnose_stable_response;
use lmar_core::nuisance::{fit_nuisance, predict_nuisance};
use lmar_core::simulation::{simulate_dataset, true_effects, DgpConfig};
use lmar_core::{
    estimate, load_csv, save_csv, validate_dataset, AnalysisConfig, BootstrapSettings, EffectEstimates, Error,
    Missingness, OutcomeBounds, PrincipalId,
};

const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Parser)]
#[command(name = "lmar", version, about = "Principal causal effects under latent missing at random outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate CACE, NACE and ATE from a CSV dataset.
    Estimate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw a synthetic dataset and its true effects.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Report how often exact stable response would imply improper probabilities.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CliConfig {
    principal_id: PrincipalId,
    missingness: Missingness,
    outcome_bounds: OutcomeBounds,
    #[serde(default)]
    bootstrap: BootstrapSettings,
    input_csv: PathBuf,
    output_json: PathBuf,
}

impl CliConfig {
    fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig::new(self.principal_id.clone(), self.missingness, self.outcome_bounds)
            .with_bootstrap(self.bootstrap)
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Validation(_) | Error::Io(_) => 3,
            Error::Estimation(_) | Error::Numerical(_) | Error::Domain(_) | Error::Infeasible(_) => 4,
            Error::Inference { .. } => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: String) -> Failure {
    Failure { code: 2, message }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| config_failure(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_failure(format!("invalid config {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| config_failure(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| config_failure(format!("cannot write {}: {e}", path.display())))
}

fn load(cfg: &CliConfig) -> Result<lmar_core::Dataset, Failure> {
    let d = load_csv(&cfg.input_csv, cfg.outcome_bounds).map_err(|e| match e {
        Error::Io(m) => Failure {
            code: 3,
            message: format!("cannot read {}: {m}", cfg.input_csv.display()),
        },
        other => other.into(),
    })?;
    for w in validate_dataset(&d) {
        eprintln!("warning: {w}");
    }
    Ok(d)
}

fn cell(v: f64, ci: Option<[f64; 2]>) -> String {
    match ci {
        Some([lo, hi]) => format!("{v:.3} ({lo:.3}, {hi:.3})"),
        None => format!("{v:.3}"),
    }
}

fn table(e: &EffectEstimates) -> String {
    let width = e
        .estimates
        .iter()
        .flat_map(|r| [cell(r.cace, r.ci_cace), cell(r.nace, r.ci_nace), cell(r.ate, r.ci_ate)])
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}  {:>w$}  {:>w$}  {:>w$}",
        "param",
        "CACE",
        "NACE",
        "ATE",
        w = width
    );
    for r in &e.estimates {
        let param = r.param.map_or("-".to_owned(), |p| format!("{p:.3}"));
        let _ = writeln!(
            out,
            "{:<8}  {:>w$}  {:>w$}  {:>w$}",
            param,
            cell(r.cace, r.ci_cace),
            cell(r.nace, r.ci_nace),
            cell(r.ate, r.ci_ate),
            w = width
        );
    }
    out
}

fn run_estimate(config: &Path) -> Result<(), Failure> {
    let cfg: CliConfig = read_config(config)?;
    let analysis = cfg.analysis();
    analysis.validate()?;
    let d = load(&cfg)?;
    let e = estimate(&d, &analysis)?;
    write_json(&cfg.output_json, &e)?;
    print!(
        "{} / {}\n{}",
        analysis.principal_id.name(),
        analysis.missingness.name(),
        table(&e)
    );
    Ok(())
}

#[derive(Serialize)]
struct TruthReport {
    cace: f64,
    nace: f64,
    ate: f64,
    se_cace: f64,
    se_nace: f64,
    se_ate: f64,
    complier_share: f64,
    n_pop: usize,
    seed: u64,
}

fn run_simulate(config: &Path, out: &Path, truth: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(|e| config_failure(format!("cannot read {}: {e}", config.display())))?;
    let g = DgpConfig::from_json(&text)?;
    let d = simulate_dataset(&g, g.seed)?;
    let truth_seed = g.seed.wrapping_add(1);
    let t = true_effects(&g, g.n_pop, truth_seed)?;
    save_csv(&d, out).map_err(|e| config_failure(format!("cannot write {}: {e}", out.display())))?;
    write_json(
        truth,
        &TruthReport {
            cace: t.cace,
            nace: t.nace,
            ate: t.ate,
            se_cace: t.se_cace,
            se_nace: t.se_nace,
            se_ate: t.se_ate,
            complier_share: t.complier_share,
            n_pop: t.n_pop,
            seed: truth_seed,
        },
    )?;
    println!(
        "{} units written; true CACE {:.3}, NACE {:.3}, ATE {:.3}",
        d.len(),
        t.cace,
        t.nace,
        t.ate
    );
    Ok(())
}

fn run_diagnose(config: &Path) -> Result<(), Failure> {
    let cfg: CliConfig = read_config(config)?;
    cfg.missingness.validate()?;
    let d = load(&cfg)?;
    let fit = fit_nuisance(&d)?;
    let p = predict_nuisance(&fit, &d)?;
    let eps = cfg.missingness.epsilon().unwrap_or(DEFAULT_EPSILON);
    let report = diagnose_stable_response(&p, eps);
    write_json(&cfg.output_json, &report)?;
    println!("{:<6}  {:>10}  {:>10}  {:>10}", "rule", "violated", "min", "max");
    for m in [&report.snr, &report.scr] {
        println!(
            "{:<6}  {:>10.3}  {:>10.3}  {:>10.3}",
            m.mechanism, m.violation_fraction, m.min_implied, m.max_implied
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Estimate { config } => run_estimate(config),
        Command::Simulate { config, out, truth } => run_simulate(config, out, truth),
        Command::Diagnose { config } => run_diagnose(config),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
