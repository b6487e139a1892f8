use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clt-lab"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_config(text: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, text).unwrap();
    let out = dir.join("out");
    bin().arg("run").arg(&cfg).arg("--out").arg(&out).args(extra).output().unwrap()
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.lines().last().expect("stderr has a line")).expect("stderr is JSON")
}

const SMALL_RATE: &str = r#"
experiment = "rate"
seed = 9
name = "small"

[rate]
p = 1.0
n_grid = [8, 16, 32, 64]
reps = 8
m = 64
bootstrap = 50
acceptance = { min = -10.0, max = 10.0 }
setting = { kind = "indep_w1", delta = 1.0 }
source = { source = "iid", d = 1, profile = { family = "centered-exponential" } }
"#;

#[test]
fn selftest_subcommand() {
    let o = bin().arg("selftest").output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("100/100 instances exact"));
}

#[test]
fn selftest_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("st");
    let o = bin().arg("run").arg(configs().join("selftest.toml")).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("100/100 instances exact"));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("instances,exact,max_abs_diff\n100,100,"));
}

#[test]
fn missing_seed_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(&SMALL_RATE.replace("seed = 9", ""), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "validation");
    assert_eq!(e["field"], "seed");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn seed_override_supplies_missing_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(&SMALL_RATE.replace("seed = 9", ""), dir.path(), &["--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn rate_artifacts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(SMALL_RATE, dir.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let first = fs::read(out.join("results.json")).unwrap();

    let results: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(results["experiment"], "rate");
    assert_eq!(results["result"]["points"].as_array().unwrap().len(), 4);
    assert!(results["rate"]["slope"].is_number());

    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,log_n,estimate,log_estimate,stderr,flagged,marginal_lower"));
    assert_eq!(lines.count(), 4);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 9);
    assert!(manifest["wall_time_secs"].as_f64().unwrap() >= 0.0);
    assert!(manifest["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));

    // a different worker count must not change the bytes
    let o = run_config(SMALL_RATE, dir.path(), &["--threads", "2"]);
    assert!(o.status.success());
    assert_eq!(first, fs::read(out.join("results.json")).unwrap());
}

#[test]
fn threads_env_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL_RATE).unwrap();
    let o = bin().env("CLT_LAB_THREADS", "many").arg("run").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["field"], "CLT_LAB_THREADS");
}

#[test]
fn budget_exceeded_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let heavy = SMALL_RATE.replace("reps = 8", "reps = 400").replace("[8, 16, 32, 64]", "[64, 128, 256, 512, 1024]");
    let o = run_config(&heavy, dir.path(), &["--budget-secs", "0.05"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "budget_exceeded");
}

#[test]
fn report_tables() {
    let dir = tempfile::tempdir().unwrap();
    let empty = bin().arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(empty.status.code(), Some(1));
    assert_eq!(stderr_json(&empty)["error"], "missing_results");

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL_RATE).unwrap();
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("a")).output().unwrap();
    assert!(o.status.success());
    let r = bin().arg("report").arg(dir.path()).output().unwrap();
    assert!(r.status.success());
    let table = String::from_utf8_lossy(&r.stdout).to_string();
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.contains("✓"));

    let failing = SMALL_RATE.replace("{ min = -10.0, max = 10.0 }", "{ min = 5.0 }");
    fs::write(&cfg, &failing).unwrap();
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("b")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let r = bin().arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
    let table = String::from_utf8_lossy(&r.stdout).to_string();
    assert!(table.contains("✓") && table.contains("✗"), "{table}");
}

#[test]
fn other_kinds_run() {
    for (file, header) in [
        ("blocks.toml", "block,kind,start,end,sum_norm"),
        ("ustat.toml", "n,log_n,q_nr,log_gap"),
        ("split_chain.toml", "ell,survival,log_survival"),
        ("dependence.toml", "n,log_n,estimate,log_estimate,stderr,w1"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let o = bin().arg("run").arg(configs().join(file)).arg("--out").arg(&out).output().unwrap();
        assert!(
            o.status.success(),
            "{file}: {}{}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        );
        let csv = fs::read_to_string(out.join("results.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some(header), "{file}");
        let results: Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
        assert_eq!(results["passed"], true, "{file}: {}", results["summary"]);
    }
}

#[test]
fn blocks_reports_the_optimal_length() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = bin().arg("run").arg(configs().join("blocks.toml")).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success());
    let results: Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["result"]["block_length"]["ell"], 96);
}
