use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use overbook::model::{reference_config, validate_params};
use overbook::RawConfig;
use tempfile::TempDir;

fn overbook(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overbook")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, raw: &RawConfig) -> PathBuf {
    let text: String = raw.iter().map(|(k, v)| format!("{k} = {v:e}\n")).collect();
    let path = dir.join("market.toml");
    fs::write(&path, text).unwrap();
    path
}

/// The reference market on a coarse price ladder, so a negotiation takes milliseconds.
fn coarse() -> RawConfig {
    let mut raw = reference_config();
    let pmm = validate_params::<f64>(&raw).unwrap().p_mem_max();
    raw.insert("granularity_dp".into(), pmm / 25.0);
    raw.insert("granularity_dq".into(), pmm / 20.0);
    raw.insert("granularity_dr".into(), pmm / 20.0);
    raw
}

fn data_rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(2).map(str::to_string).collect()
}

#[test]
fn negotiate_writes_contract_and_trace() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &coarse());
    let out = dir.path().join("out");
    let o = overbook(&["negotiate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("kappa*"));

    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("contract.json")).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    let kappa = doc["kappa"].as_u64().unwrap();
    assert_eq!(doc["contract"]["members"].as_u64(), Some(kappa));
    assert!(kappa > 15 && kappa <= 30);

    let trace = fs::read_to_string(out.join("cterm.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("# overbook-cterm v1"));
    assert_eq!(trace.lines().nth(1), Some("p,q,r,kappa,seller_eu,member_eu,srisk,mrisk,vrisk"));
    assert_eq!(data_rows(&out.join("cterm.csv")).len() as u64, doc["candidates"].as_u64().unwrap());
}

#[test]
fn forced_member_count_is_respected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &coarse());
    let out = dir.path().join("eq");
    let o = overbook(&[
        "negotiate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--kappa",
        "15",
        "--no-trace",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("contract.json")).unwrap()).unwrap();
    assert_eq!(doc["kappa"], 15);
    assert!(!out.join("cterm.csv").exists());
}

#[test]
fn infeasible_negotiation_exits_3() {
    let dir = TempDir::new().unwrap();
    let mut raw = coarse();
    raw.insert("risk_threshold_xiM".into(), 0.0);
    let cfg = write_config(dir.path(), &raw);
    let out = dir.path().join("out");
    let o = overbook(&["negotiate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("negotiation failed"));
    assert!(!out.join("contract.json").exists());

    let o = overbook(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--rounds",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_config_exits_1() {
    let o = overbook(&["validate", "--config", "/nonexistent/market.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn empty_config_lists_missing_keys() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, "").unwrap();
    let o = overbook(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["seller_capacity_S", "num_buyers", "task_arrival_prob_a", "e2e_delay_high"] {
        assert!(err.contains(&format!("{key}: missing key")), "{err}");
    }
}

#[test]
fn malformed_arguments_exit_2() {
    assert_eq!(overbook(&["simulate", "--mode", "barter"]).status.code(), Some(2));
    assert_eq!(overbook(&["simulate", "--rounds", "0"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seller_capacity_S = [").unwrap();
    assert_eq!(overbook(&["validate", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn failing_suite_exits_4_and_is_named() {
    let dir = TempDir::new().unwrap();
    let mut raw = reference_config();
    raw.insert("tol_knapsack".into(), -1.0);
    let cfg = write_config(dir.path(), &raw);
    let o = overbook(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("failed suites: knapsack"), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL knapsack")));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn reference_config_validates() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/reference.toml");
    let o = overbook(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn simulation_files_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let run = |sub: &str, workers: &str| {
        let out = dir.path().join(sub);
        let o = overbook(&[
            "--workers",
            workers,
            "simulate",
            "--mode",
            "spot-uniform",
            "--rounds",
            "100",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            fs::read(out.join("spot-uniform_7_100.csv")).unwrap(),
            fs::read(out.join("spot-uniform_7_100.json")).unwrap(),
        )
    };
    let (csv, json) = run("a", "1");
    assert_eq!(data_rows(&dir.path().join("a/spot-uniform_7_100.csv")).len(), 100);
    assert!(csv.starts_with(b"# overbook-rounds v1\nround,members,"));
    let doc: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(doc["rounds"], 100);
    assert_eq!(doc["mode"], "spot-uniform");
    assert_eq!(run("b", "1"), (csv.clone(), json.clone()));
    assert_eq!(run("c", "3"), (csv, json));
}

#[test]
fn tables_have_the_requested_size() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = overbook(&["lambda-sweep", "--prices", "20", "--gammas", "3", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = data_rows(&dir.path().join("lambda_sweep.csv"));
    assert_eq!(rows.len(), 60);
    for r in &rows {
        let lambda: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&lambda));
    }

    let o = overbook(&["risk-table", "--points", "3", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    // 3 prices x 2 penalties x 3 compensations x 30 member counts.
    let rows = data_rows(&dir.path().join("risk_table.csv"));
    assert_eq!(rows.len(), 540);
    for r in &rows {
        for x in r.split(',').skip(4) {
            let v: f64 = x.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
