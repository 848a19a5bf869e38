use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn lmar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmar")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dgp(n: usize, seed: u64, response: Value, outcome: Value) -> Value {
    json!({
        "n": n,
        "p": 2,
        "seed": seed,
        "n_pop": 200000,
        "outcome_bounds": [0.0, 1.0],
        "precision": 8.0,
        "compliance": [0.1, 0.2, -0.15],
        "response_w11": [0.9, 0.15, 0.1],
        "response_w10": [0.6, -0.05, 0.15],
        "mu11": [0.6, 0.3, 0.2],
        "mu10": [0.0, 0.2, -0.2],
        "control_response": response,
        "control_outcome": outcome
    })
}

fn pi_dgp(n: usize, seed: u64) -> Value {
    dgp(
        n,
        seed,
        json!({"type": "free", "w01": [0.3, 0.2, 0.0], "w00": [0.9, -0.1, 0.1]}),
        json!({"type": "pi", "kappa0r": [0.0, 0.1, 0.0]}),
    )
}

/// Simulates into `dir`, returning (csv, truth json).
fn simulate(dir: &Path, g: &Value) -> (PathBuf, Value) {
    let cfg = write_json(dir, "dgp.json", g);
    let csv = dir.join("data.csv");
    let truth = dir.join("truth.json");
    let o = lmar(&["simulate", "--config", s(&cfg), "--out", s(&csv), "--truth", s(&truth)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (csv, serde_json::from_str(&fs::read_to_string(&truth).unwrap()).unwrap())
}

fn analysis(csv: &Path, out: &Path, principal: Value, missingness: Value) -> Value {
    json!({
        "principal_id": principal,
        "missingness": missingness,
        "outcome_bounds": [0.0, 1.0],
        "input_csv": csv,
        "output_json": out
    })
}

#[test]
fn missing_config_exits_2() {
    let o = lmar(&["estimate", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = TempDir::new().unwrap();
    let mut v = analysis(Path::new("x.csv"), Path::new("o.json"), json!({"type": "PI"}), json!({"type": "none"}));
    v["extra"] = json!(1);
    let cfg = write_json(dir.path(), "cfg.json", &v);
    assert_eq!(code(&lmar(&["estimate", "--config", s(&cfg)])), 2);
}

#[test]
fn pi_estimate_matches_truth_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (csv, truth) = simulate(dir.path(), &pi_dgp(50_000, 7));
    let out = dir.path().join("est.json");
    let cfg = write_json(
        dir.path(),
        "cfg.json",
        &analysis(&csv, &out, json!({"type": "PI"}), json!({"type": "none"})),
    );
    let o = lmar(&["estimate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("CACE") && stdout.contains("NACE") && stdout.contains("ATE"));
    let first = fs::read(&out).unwrap();
    let est: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(est["config_echo"]["principal_id"]["type"], "PI");
    let e = &est["estimates"][0];
    for k in ["cace", "nace", "ate"] {
        let got = e[k].as_f64().unwrap();
        let want = truth[k].as_f64().unwrap();
        assert!((got - want).abs() <= 0.02, "{k}: {got} vs {want}");
    }
    assert_eq!(code(&lmar(&["estimate", "--config", s(&cfg)])), 0);
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn smde_pair_gives_two_entries_with_intervals() {
    let dir = TempDir::new().unwrap();
    let g = dgp(
        2000,
        3,
        json!({"type": "rpo", "lambda0": [0.76, 0.06, 0.11]}),
        json!({"type": "smde", "kappa0r": [0.1, 0.15, -0.1], "eta": 0.5}),
    );
    let (csv, _) = simulate(dir.path(), &g);
    let out = dir.path().join("est.json");
    let mut v = analysis(&csv, &out, json!({"type": "PIsens_SMDe", "params": [-0.5, 0.5]}), json!({"type": "rPO"}));
    v["bootstrap"] = json!({"replicates": 20, "seed": 4, "level": 0.95});
    let cfg = write_json(dir.path(), "cfg.json", &v);
    let o = lmar(&["estimate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let est: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let entries = est["estimates"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0]["param"], -0.5);
    assert_eq!(entries[1]["param"], 0.5);
    assert_eq!(entries[0]["ci_cace"].as_array().unwrap().len(), 2);
    assert_eq!(est["diagnostics"]["bootstrap_succeeded"], 20);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("-0.500") && table.contains("0.500"));
}

#[test]
fn simulate_rejects_n_zero_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "zero.json", &pi_dgp(0, 1));
    let o = lmar(&["simulate", "--config", s(&cfg), "--out", "/tmp/never.csv", "--truth", "/tmp/never.json"]);
    assert_eq!(code(&o), 2);

    let (csv, truth) = simulate(dir.path(), &pi_dgp(3000, 5));
    let first = fs::read(&csv).unwrap();
    let (csv2, _) = simulate(dir.path(), &pi_dgp(3000, 5));
    assert_eq!(fs::read(csv2).unwrap(), first);

    let share = truth["complier_share"].as_f64().unwrap();
    let mix = share * truth["cace"].as_f64().unwrap() + (1.0 - share) * truth["nace"].as_f64().unwrap();
    let ate = truth["ate"].as_f64().unwrap();
    assert!((ate - mix).abs() <= 1e-12 + truth["se_ate"].as_f64().unwrap());
}

#[test]
fn infeasible_dgp_exits_4() {
    let dir = TempDir::new().unwrap();
    let g = dgp(
        1000,
        1,
        json!({"type": "near_snr", "lambda0": [-3.0, 0.0, 0.0]}),
        json!({"type": "pi", "kappa0r": [0.0, 0.0, 0.0]}),
    );
    let cfg = write_json(dir.path(), "dgp.json", &g);
    let o = lmar(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("a.csv")), "--truth", s(&dir.path().join("t.json"))]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("w01"));
}

fn diagnose(dir: &Path, csv: &Path) -> Value {
    let out = dir.join("diag.json");
    let cfg = write_json(
        dir,
        "diag_cfg.json",
        &analysis(csv, &out, json!({"type": "ER"}), json!({"type": "near_SNR", "epsilon": 0.01})),
    );
    let o = lmar(&["diagnose", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn diagnose_reports_violations() {
    let dir = TempDir::new().unwrap();
    // control response equal to the treated rates: exact SNR is comfortably feasible
    let homogeneous = dgp(
        20_000,
        2,
        json!({"type": "near_snr", "lambda0": [0.76, 0.06, 0.11]}),
        json!({"type": "pi", "kappa0r": [0.0, 0.1, 0.0]}),
    );
    let (csv, _) = simulate(dir.path(), &homogeneous);
    let r = diagnose(dir.path(), &csv);
    assert!(r["snr"]["violation_fraction"].as_f64().unwrap() < 0.01);

    let mut extreme = dgp(
        20_000,
        3,
        json!({"type": "free", "w01": [0.0, 0.0, 0.0], "w00": [-2.5, 0.0, 0.0]}),
        json!({"type": "pi", "kappa0r": [0.0, 0.1, 0.0]}),
    );
    extreme["response_w10"] = json!([2.5, 0.2, 0.0]);
    let (csv, _) = simulate(dir.path(), &extreme);
    let r = diagnose(dir.path(), &csv);
    assert!(r["snr"]["violation_fraction"].as_f64().unwrap() > 0.0);
    assert!(r["snr"]["min_implied"].as_f64().unwrap() < 0.01);
}

#[test]
fn empty_csv_exits_3() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, "").unwrap();
    let cfg = write_json(
        dir.path(),
        "cfg.json",
        &analysis(&csv, &dir.path().join("o.json"), json!({"type": "PI"}), json!({"type": "none"})),
    );
    assert_eq!(code(&lmar(&["diagnose", "--config", s(&cfg)])), 3);
    assert_eq!(code(&lmar(&["estimate", "--config", s(&cfg)])), 3);
}

#[test]
fn estimation_and_inference_failures() {
    let dir = TempDir::new().unwrap();
    // one treated complier: the point estimate works, most resamples lose it
    let mut rows = String::from("z,c,r,y\n1,1,1,0.8\n");
    for i in 0..30 {
        rows.push_str(&format!("1,0,1,{}\n0,,1,{}\n", 0.4 + 0.01 * i as f64, 0.45 + 0.01 * i as f64));
    }
    let csv = dir.path().join("fragile.csv");
    fs::write(&csv, rows).unwrap();
    let out = dir.path().join("o.json");
    let mut v = analysis(&csv, &out, json!({"type": "PI"}), json!({"type": "none"}));
    v["bootstrap"] = json!({"replicates": 200, "seed": 1});
    let cfg = write_json(dir.path(), "boot.json", &v);
    let o = lmar(&["estimate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));

    // mean ratio needs positive responder means
    let csv = dir.path().join("signed.csv");
    let mut rows = String::from("z,c,r,y\n");
    for i in 0..20 {
        let y = -0.9 + 0.05 * i as f64;
        rows.push_str(&format!("1,{},1,{y}\n", i % 2));
        if i % 3 == 0 {
            rows.push_str("0,,0,\n");
        } else {
            rows.push_str(&format!("0,,1,{y}\n"));
        }
    }
    fs::write(&csv, rows).unwrap();
    let mut v = analysis(&csv, &out, json!({"type": "PIsens_MR", "params": [1.2]}), json!({"type": "rPI"}));
    v["outcome_bounds"] = json!([-1.0, 1.0]);
    let cfg = write_json(dir.path(), "mr.json", &v);
    let o = lmar(&["estimate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
