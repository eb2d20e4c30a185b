use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
seed = 3
n_paths = 40
[diffusion]
diffusion_steps = 20
[diffusion.net]
hidden = [16, 16]
[diffusion.train]
steps = 100
[eval]
n_repeats = 2
n_per_side = 30
n_generate = 50
"#;

const MARKET: &str = r#"
seed = 4
kind = "gbm"
n_paths = 30
[gbm]
drift = [0.08]
vol = [0.2]
[grid]
t0 = 0.0
dt = 0.003968253968253968
n_steps = 126
"#;

fn diffsde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffsde")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = diffsde(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap_or_default()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.toml"), SMALL).unwrap();
    fs::write(tmp.path().join("market.toml"), MARKET).unwrap();
    tmp
}

#[test]
fn zero_paths_is_a_validation_error_and_leaves_nothing_behind() {
    let tmp = workspace();
    let out = diffsde(tmp.path(), &["simulate", "--seed", "1", "--n-paths", "0", "--out", "sim"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "validation");
    assert_eq!(err["exit_code"], 2);
    assert!(!tmp.path().join("sim").exists());
}

#[test]
fn seed_is_mandatory() {
    let tmp = workspace();
    let out = diffsde(tmp.path(), &["simulate", "--out", "sim"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("seed"));
}

#[test]
fn bad_config_keys_and_values_are_rejected() {
    let tmp = workspace();
    fs::write(tmp.path().join("bad.toml"), "seed = 1\nsede = 2\n").unwrap();
    assert_eq!(diffsde(tmp.path(), &["simulate", "--config", "bad.toml"]).status.code(), Some(2));
    let out = diffsde(tmp.path(), &["simulate", "--seed", "1", "--set", "ou.vol=-1", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = workspace();
    let out = diffsde(tmp.path(), &["train", "--config", "small.toml", "--data", "nope.bin", "--out", "t"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "io");
    assert!(!tmp.path().join("t").exists());
}

#[test]
fn pipeline_writes_its_artifacts_and_leaves_inputs_alone() {
    let tmp = workspace();
    let dir = tmp.path();
    ok(dir, &["simulate", "--config", "small.toml", "--csv", "--out", "sim"]);
    let before = fs::read(dir.join("sim/paths.bin")).unwrap();
    // The CSV copy carries the same paths; its time axis comes from the config.
    ok(dir, &["train", "--config", "small.toml", "--data", "sim/paths.csv", "--out", "train_csv"]);
    ok(dir, &["train", "--config", "small.toml", "--data", "sim/paths.bin", "--out", "train"]);
    assert_eq!(fs::read(dir.join("sim/paths.bin")).unwrap(), before);
    assert_eq!(
        fs::read(dir.join("train/training_report.json")).unwrap(),
        fs::read(dir.join("train_csv/training_report.json")).unwrap()
    );
    assert!(dir.join("train/bundle/bundle.json").exists());

    ok(dir, &["generate", "--config", "small.toml", "--bundle", "train/bundle", "--n", "30", "--out", "gen"]);
    let report: Value = serde_json::from_slice(&fs::read(dir.join("gen/generate_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_requested"], 30);

    ok(dir, &["eval-kl", "--config", "small.toml", "--bundle", "train/bundle", "--data", "sim/paths.bin", "--out", "kl"]);
    let kl: Value = serde_json::from_slice(&fs::read(dir.join("kl/kl_report.json")).unwrap()).unwrap();
    assert!(kl["mean"].is_f64() && kl["std_error"].is_f64());
    assert_eq!(kl["n_repeats"], 2);
    assert!(kl["baselines"]["gaussian_increments"]["mean"].is_f64());
    assert!(kl["baselines"]["sdm_mc"]["mean"].is_f64());

    ok(dir, &["eval-moments", "--config", "small.toml", "--real", "sim/paths.bin", "--synthetic", "gen/synthetic.bin", "--out", "mom"]);
    let csv = fs::read_to_string(dir.join("mom/moments.csv")).unwrap();
    assert!(csv.starts_with("t,dim,real_mean,synth_mean,real_std,synth_std"));
    assert_eq!(csv.lines().count(), 1 + 21);

    let manifest: Value = serde_json::from_slice(&fs::read(dir.join("kl/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"], "eval-kl");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["inputs"]["bundle"].is_string());
    assert!(manifest["outputs"]["kl_report.json"].is_string());
}

#[test]
fn failed_run_removes_partial_output() {
    let tmp = workspace();
    let dir = tmp.path();
    ok(dir, &["simulate", "--config", "small.toml", "--out", "sim"]);
    ok(dir, &["train", "--config", "small.toml", "--data", "sim/paths.bin", "--out", "train"]);
    // A bundle for the OU process does not match a GBM simulator.
    let out = diffsde(dir, &["eval-kl", "--config", "small.toml", "--kind", "gbm", "--bundle", "train/bundle", "--out", "kl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("kl").exists());
    // Existing directories keep what they had.
    fs::create_dir(dir.join("keep")).unwrap();
    fs::write(dir.join("keep/notes.txt"), "x").unwrap();
    let out = diffsde(dir, &["generate", "--config", "small.toml", "--bundle", "train/bundle", "--n", "0", "--out", "keep"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read_dir(dir.join("keep")).unwrap().count(), 1);
}

#[test]
fn refuses_to_overwrite_an_input() {
    let tmp = workspace();
    let dir = tmp.path();
    ok(dir, &["simulate", "--config", "market.toml", "--out", "m"]);
    ok(dir, &["mv", "ingest", "--config", "small.toml", "--paths", "m/paths.bin", "--out", "p"]);
    let before = fs::read(dir.join("p/pool.bin")).unwrap();
    let out = diffsde(dir, &["mv", "ingest", "--config", "small.toml", "--paths", "p/pool.bin", "--out", "p"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(dir.join("p/pool.bin")).unwrap(), before);
}

#[test]
fn unusable_generator_is_a_numeric_error() {
    let tmp = workspace();
    let dir = tmp.path();
    ok(dir, &["simulate", "--config", "market.toml", "--out", "m"]);
    ok(dir, &["mv", "ingest", "--config", "small.toml", "--paths", "m/paths.bin", "--out", "p"]);
    // Far too little training for 126 autoregressive steps: most paths go negative.
    let out = diffsde(
        dir,
        &[
            "mv", "pool", "--config", "small.toml", "--source", "p/pool.bin", "--type", "synthetic", "--n", "20",
            "--set", "mv.diffusion.diffusion_steps=20", "--set", "mv.diffusion.net.hidden=[8]", "--set", "mv.diffusion.train.steps=20",
            "--out", "syn",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["error"], "numeric");
    assert!(!dir.join("syn").exists());
}

#[test]
fn mv_pipeline_end_to_end() {
    let tmp = workspace();
    let dir = tmp.path();
    ok(dir, &["simulate", "--config", "market.toml", "--out", "m"]);
    ok(dir, &["simulate", "--config", "market.toml", "--seed", "40", "--n-paths", "200", "--out", "mt"]);
    ok(dir, &["mv", "ingest", "--config", "small.toml", "--paths", "m/paths.bin", "--out", "split"]);
    ok(dir, &["mv", "ingest", "--config", "small.toml", "--paths", "mt/paths.bin", "--out", "test"]);
    ok(dir, &["mv", "pool", "--config", "small.toml", "--source", "split/pool.bin", "--type", "bootstrap", "--n", "50", "--out", "boot"]);
    let boot: Value = serde_json::from_slice(&fs::read(dir.join("boot/pool_report.json")).unwrap()).unwrap();
    assert_eq!(boot["kind"], "bootstrap");
    assert_eq!(boot["n_paths"], 50);
    ok(dir, &["mv", "train", "--config", "small.toml", "--episodes", "300", "--pool", "split/pool.bin", "--out", "pol"]);
    ok(dir, &["mv", "evaluate", "--config", "small.toml", "--policy", "a=pol/policy.json", "--pool", "test/pool.bin", "--out", "ev"]);
    let table = fs::read_to_string(dir.join("ev/mv_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "policy,pool,mean,variance,sharpe");
    assert!(lines[1].starts_with("a/emv,test/pool,"));
    assert!(lines[2].starts_with("a/plugin,test/pool,"));
}

#[test]
fn ingest_reads_index_csv() {
    let tmp = workspace();
    let dir = tmp.path();
    // 300 trading days on a made-up calendar.
    let mut clean = String::from("date,close\n");
    let mut price = 100.0;
    for i in 0..300 {
        clean += &format!("2001-{:02}-{:02},{price}\n", 1 + i / 28, 1 + i % 28);
        price *= 1.0 + 0.001 * ((i % 7) as f64 - 3.0);
    }
    fs::write(dir.join("index.csv"), clean).unwrap();
    ok(dir, &["mv", "ingest", "--config", "small.toml", "--csv", "index.csv", "--set", "mv.window=100", "--out", "p"]);
    let report: Value = serde_json::from_slice(&fs::read(dir.join("p/pool_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_paths"], 2);
    assert_eq!(report["window"], 100);
}

#[test]
fn help_and_version_succeed() {
    let tmp = workspace();
    assert!(diffsde(tmp.path(), &["--help"]).status.success());
    assert!(diffsde(tmp.path(), &["mv", "--help"]).status.success());
    assert!(diffsde(tmp.path(), &["--version"]).status.success());
}
