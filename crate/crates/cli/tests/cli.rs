use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn cmj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmj"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, sub: &str, file: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        sub,
        "--scenario",
        file.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cmj(&args)
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

#[test]
fn analyze_s1_reports_single_super_class() {
    let out = TempDir::new().unwrap();
    let o = run_in(out.path(), "analyze", &scenario("s1_indicator.toml"), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(out.path().join("analyze.json"));
    assert!((doc["rho"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(doc["classes"], serde_json::json!(["super"]));
    assert_eq!(doc["assumptions_hold"], Value::Bool(true));
}

#[test]
fn analyze_s2_lists_critical_eigenvalue() {
    let out = TempDir::new().unwrap();
    let o = run_in(out.path(), "analyze", &scenario("s2_critical.toml"), &[]);
    assert!(o.status.success());
    let doc = json(out.path().join("analyze.json"));
    let critical: Vec<&Value> = doc["eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["class"] == "critical")
        .collect();
    assert_eq!(critical.len(), 1);
    assert!((critical[0]["value"][0].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!(critical[0]["margin"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn constants_for_s1_and_s2() {
    let out = TempDir::new().unwrap();
    assert!(
        run_in(out.path(), "constants", &scenario("s1_indicator.toml"), &[])
            .status
            .success()
    );
    let s1 = json(out.path().join("constants.json"));
    assert!((s1["sigma2"]["value"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(s1["l_star"], Value::Null);
    assert_eq!(s1["case"], "case i, sigma > 0");

    assert!(
        run_in(out.path(), "constants", &scenario("s2_critical.toml"), &[])
            .status
            .success()
    );
    let s2 = json(out.path().join("constants.json"));
    assert_eq!(s2["l_star"], 0);
    assert_eq!(s2["case"], "case ii, l*=0");
    assert_eq!(s2["rate"], "n^(0+1/2) rho^(n/2)");
    assert!(s2["sigma2"]["value"].as_f64().unwrap().abs() < 1e-12);
    assert!((s2["sigma_l"][0].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn missing_offspring_column_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(scenario("s2_critical.toml")).unwrap();
    let broken: String = text
        .lines()
        .filter(|l| !l.starts_with("\"2\""))
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.path().join("broken.toml");
    fs::write(&path, broken).unwrap();
    let o = run_in(dir.path(), "analyze", &path, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.offspring.2"));
}

#[test]
fn kesten_stigum_row_must_be_orthogonal() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(scenario("s2_critical.toml")).unwrap();
    let path = dir.path().join("tilted.toml");
    fs::write(&path, text.replace("row = [1, -1]", "row = [1, 0]")).unwrap();
    let o = run_in(dir.path(), "constants", &path, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("characteristic.row"));
}

#[test]
fn unmet_assumptions_exit_with_two() {
    let out = TempDir::new().unwrap();
    let o = run_in(out.path(), "analyze", &scenario("deterministic.toml"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(out.path().join("analyze.json").exists());
}

#[test]
fn replicate_csv_is_independent_of_worker_count() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let file = scenario("s2_critical.toml");
    let common = ["--seed", "42", "--replicates", "300"];
    let one = [&common[..], &["--workers", "1"]].concat();
    let eight = [&common[..], &["--workers", "8"]].concat();
    assert!(run_in(a.path(), "simulate", &file, &one).status.success());
    assert!(run_in(b.path(), "simulate", &file, &eight).status.success());
    let x = fs::read(a.path().join("replicates.csv")).unwrap();
    let y = fs::read(b.path().join("replicates.csv")).unwrap();
    assert_eq!(x, y);
    assert_eq!(
        fs::read(a.path().join("summary.json")).unwrap(),
        fs::read(b.path().join("summary.json")).unwrap()
    );
}

#[test]
fn verify_from_csv_matches_direct_verification() {
    let out = TempDir::new().unwrap();
    let file = scenario("s1_indicator.toml");
    let flags = ["--replicates", "600", "--seed", "9"];
    assert!(run_in(out.path(), "simulate", &file, &flags)
        .status
        .success());
    let direct = TempDir::new().unwrap();
    run_in(direct.path(), "verify", &file, &flags);
    let csv = out.path().join("replicates.csv");
    let replay = TempDir::new().unwrap();
    run_in(
        replay.path(),
        "verify",
        &file,
        &[&flags[..], &["--from-csv", csv.to_str().unwrap()]].concat(),
    );
    let d = json(direct.path().join("verify.json"));
    let r = json(replay.path().join("verify.json"));
    assert_eq!(d["verification"]["ks"], r["verification"]["ks"]);
    assert_eq!(d["verdict"], r["verdict"]);
}

#[test]
fn verify_emits_histogram() {
    let out = TempDir::new().unwrap();
    let o = run_in(
        out.path(),
        "verify",
        &scenario("s1_indicator.toml"),
        &["--replicates", "400", "--emit-hist"],
    );
    assert!(o.status.code() == Some(0) || o.status.code() == Some(2));
    let hist = fs::read_to_string(out.path().join("residual_hist.csv")).unwrap();
    assert!(hist.starts_with("lower,upper,count,density"));
    let counted: u64 = hist
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap())
        .sum();
    assert!(counted > 350);
    let doc = json(out.path().join("verify.json"));
    assert!(doc["verification"]["checks"].as_array().unwrap().len() >= 4);
}

#[test]
fn star_check_passes_on_s1() {
    let out = TempDir::new().unwrap();
    let o = run_in(
        out.path(),
        "star-check",
        &scenario("s1_indicator.toml"),
        &["--replicates", "50", "--n", "10"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(out.path().join("star_check.json"));
    assert_eq!(doc["passed"], Value::Bool(true));
    assert_eq!(doc["checks"].as_array().unwrap().len(), 2);
}

#[test]
fn every_bundled_scenario_parses() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = TempDir::new().unwrap();
        let o = run_in(out.path(), "constants", &path, &[]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&o.stderr)
        );
    }
}
