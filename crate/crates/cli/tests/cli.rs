use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rmd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, content: &str) {
    std::fs::write(dir.join(name), content).unwrap();
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn simulate(dir: &Path, dgp: &str, n: usize) {
    let out = rmd(dir, &["simulate-game", "--dgp", dgp, "--n", &n.to_string(), "--seed", "11", "--output", "data.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulated_csv_layout() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "identified", 50);
    let text = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "market_id,state,a1,a2");
    assert_eq!(lines.len(), 51);
    for line in &lines[1..] {
        let f: Vec<u32> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((1..=3).contains(&f[1]) && f[2] <= 1 && f[3] <= 1);
    }
    // Same seed, same bytes.
    let again = rmd(dir.path(), &["simulate-game", "--n", "50", "--seed", "11"]);
    assert_eq!(again.stdout, text.as_bytes());
}

#[test]
fn test_from_data_and_from_moments() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "identified", 2000);
    write(dir.path(), "t.json", r#"{"data_csv": "data.csv", "beta0": [1.5]}"#);
    let v = json(&rmd(dir.path(), &["test", "--input", "t.json"]));
    assert_eq!(v["df_hat"], 3);
    assert_eq!(v["tau"], 0.05);
    let p = v["p_value"].as_f64().unwrap();
    assert_eq!(v["reject"].as_bool().unwrap(), p < 0.05);

    // The toy SMM model's nuisance enters only through a1 + a2: three moments, one nuisance direction.
    let smm = |beta0: f64| {
        format!(
            r#"{{"model": {{"name": "smm_toy", "draws": 500}},
                "theta_hat": [0.4, 1.0, 1.4], "sigma_hat": [[1,0,0],[0,1,0],[0,0,1]], "n": 400,
                "beta0": [{beta0}]}}"#
        )
    };
    write(dir.path(), "smm.json", &smm(1.0));
    let v = json(&rmd(dir.path(), &["test", "--input", "smm.json"]));
    assert_eq!(v["df_hat"], 2);
    assert_eq!(v["reject"], false);
    write(dir.path(), "smm.json", &smm(3.0));
    let v = json(&rmd(dir.path(), &["test", "--input", "smm.json"]));
    assert_eq!(v["reject"], true);

    write(dir.path(), "short.json", r#"{"data_csv": "data.csv", "beta0": [1.5, 0.0]}"#);
    assert_eq!(rmd(dir.path(), &["test", "--input", "short.json"]).status.code(), Some(2));
}

#[test]
fn ci_and_grid_csv() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "identified", 2000);
    write(
        dir.path(),
        "c.json",
        r#"{"data_csv": "data.csv", "beta_grid": [0.5, 1.0, 1.5, 2.0, 2.5]}"#,
    );
    let v = json(&rmd(dir.path(), &["ci", "--input", "c.json", "--csv", "points.csv"]));
    let accepted: Vec<f64> = v["accepted"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(accepted.contains(&1.5));
    assert!(!accepted.contains(&0.5));
    let points = std::fs::read_to_string(dir.path().join("points.csv")).unwrap();
    assert_eq!(points.lines().next().unwrap(), "beta,statistic,df_hat,p_value,reject");
    assert_eq!(points.lines().count(), 6);
}

#[test]
fn power_local_from_population() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "p.json", r#"{"dgp": "identified", "n": 1000, "scales": [0.0, 2.0]}"#);
    let v = json(&rmd(dir.path(), &["power-local", "--input", "p.json", "--weights", "w.csv"]));
    assert_eq!(v["df"], 3);
    assert_eq!(v["trivial_dim"], 0);
    let curve = v["predicted_power"].as_array().unwrap();
    assert!((curve[0][1].as_f64().unwrap() - 0.05).abs() < 1e-12);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("w.csv")).unwrap(),
        "component,delta_star,relative_weight\n1,1.0,1.0\n"
    );
}

#[test]
fn monte_carlo_outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "mc.json",
        r#"{"dgp": "identified", "sample_sizes": [300], "replications": 12, "tests": ["Robust"],
            "output": {"csv": "size.csv"}}"#,
    );
    let out = rmd(dir.path(), &["--threads", "3", "mc-size", "--config", "mc.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(dir.path().join("size.csv")).unwrap();
    let meta: Value = serde_json::from_slice(&std::fs::read(dir.path().join("size.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "mc-size");
    assert_eq!(meta["threads"], 3);
    assert_eq!(meta["config"]["replications"], 12);
    assert!(meta["csv_hash"].as_str().unwrap().starts_with("sha256:"));

    let out = rmd(dir.path(), &["--threads", "1", "mc-size", "--config", "mc.json", "--output", "again.csv"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(dir.path().join("again.csv")).unwrap(), first);
    let meta2: Value = serde_json::from_slice(&std::fs::read(dir.path().join("again.json")).unwrap()).unwrap();
    assert_eq!(meta2["csv_hash"], meta["csv_hash"]);
    assert_eq!(meta2["config_hash"], meta["config_hash"]);

    let out = rmd(dir.path(), &["--seed", "99", "mc-size", "--config", "mc.json", "--output", "seeded.csv"]);
    assert!(out.status.success());
    let meta3: Value = serde_json::from_slice(&std::fs::read(dir.path().join("seeded.json")).unwrap()).unwrap();
    assert_eq!(meta3["config"]["master_seed"], 99);
    assert_ne!(meta3["config_hash"], meta["config_hash"]);
}

#[test]
fn rank_and_null_experiments_write_their_tables() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "r.json", r#"{"dgp": "unidentified", "sample_sizes": [200], "replications": 10}"#);
    let out = rmd(dir.path(), &["mc-rank", "--config", "r.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("n,replications,failures,true_r_alpha,true_r_sigma,"));

    let out = rmd(dir.path(), &["mc-null", "--config", "r.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("n,replications,failures,df,ks_statistic,"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(rmd(d, &["mc-size", "--config", "missing.json"]).status.code(), Some(2));
    write(d, "typo.json", r#"{"replication": 3}"#);
    assert_eq!(rmd(d, &["mc-size", "--config", "typo.json"]).status.code(), Some(2));
    write(d, "nogrid.json", r#"{"sample_sizes": [100], "replications": 5}"#);
    assert_eq!(rmd(d, &["mc-power", "--config", "nogrid.json"]).status.code(), Some(2));
    write(
        d,
        "budget.json",
        r#"{"dgp": {"beta": 1.5, "alpha1": -0.5, "alpha2": 0.5, "alpha3": 0.0, "state_probs": [0.96, 0.02, 0.02]},
            "sample_sizes": [100], "replications": 20, "tests": ["Robust"]}"#,
    );
    assert_eq!(rmd(d, &["mc-size", "--config", "budget.json"]).status.code(), Some(3));
    write(d, "tau.json", r#"{"theta_hat": [0.1], "sigma_hat": [[1.0]], "n": 10, "beta0": [0.0], "tau": 1.5}"#);
    assert_eq!(rmd(d, &["test", "--input", "tau.json"]).status.code(), Some(2));
    write(d, "nomoments.json", r#"{"beta0": [1.5]}"#);
    assert_eq!(rmd(d, &["test", "--input", "nomoments.json"]).status.code(), Some(2));
    assert_eq!(rmd(d, &["simulate-game", "--dgp", "dgp9"]).status.code(), Some(2));
}
