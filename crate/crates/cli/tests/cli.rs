use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nnr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnr"))
        .current_dir(dir)
        .env_remove("NNR_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let out = nnr(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn gen(dir: &Path, prefix: &str, args: &[&str]) {
    let mut all = vec!["gen", "--out", prefix];
    all.extend_from_slice(args);
    let out = nnr(dir, &all);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path, prefix: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{prefix}.json"))).unwrap()).unwrap()
}

#[test]
fn gen_orthonormal_writes_scaled_identity() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "o", &["orthonormal", "n=4", "p=4"]);
    let bytes = fs::read(dir.path().join("o.bin")).unwrap();
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(vals[j * 4 + i], if i == j { 2.0 } else { 0.0 });
        }
    }
    let m = manifest(dir.path(), "o");
    assert_eq!(m["n"], 4);
    assert_eq!(m["config"]["seed"], "0");
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["ens-plus", "ensemble=E1", "a=1", "n=100", "p=300", "--seed", "7"];
    gen(dir.path(), "a", &args);
    gen(dir.path(), "b", &args);
    assert_eq!(fs::read(dir.path().join("a.bin")).unwrap(), fs::read(dir.path().join("b.bin")).unwrap());
    let (ma, mb) = (manifest(dir.path(), "a"), manifest(dir.path(), "b"));
    assert_eq!(ma["matrix_sha256"], mb["matrix_sha256"]);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "flag", &["gaussian", "n=5", "p=3", "--seed", "11"]);
    let out = Command::new(env!("CARGO_BIN_EXE_nnr"))
        .current_dir(dir.path())
        .env("NNR_SEED", "11")
        .args(["gen", "--out", "env", "gaussian", "n=5", "p=3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(dir.path(), "flag")["matrix_sha256"], manifest(dir.path(), "env")["matrix_sha256"]);
}

#[test]
fn appendix_block_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "c", &["appendix-i", "s=3", "n=6", "p=6"]);
    let g = &manifest(dir.path(), "c")["config"]["gramSS"];
    assert_eq!(g[0][1].as_f64().unwrap(), -0.5);
    assert_eq!(g[2][0].as_f64().unwrap(), -0.5);
    assert_eq!(g[1][2].as_f64().unwrap(), 0.0);
}

#[test]
fn solve_reads_back_generated_matrix() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "g", &["ens-plus", "n=40", "p=60", "s=3", "beta=2", "--seed", "3"]);
    let m = manifest(dir.path(), "g");
    let r = ok_json(dir.path(), &["solve", "g.json", "method=nnls"]);
    assert_eq!(r["matrixSha256"], m["matrix_sha256"]);
    assert!(r["errors"]["linf"].as_f64().unwrap() < 1e-8);
    assert_eq!(r["details"]["kkt"]["optimal"], true);

    let r = ok_json(dir.path(), &["solve", "g.json", "method=nnlasso", "lambda=1000"]);
    assert!(r["beta"].as_array().unwrap().iter().all(|b| b.as_f64().unwrap() == 0.0));

    let r = ok_json(dir.path(), &["solve", "g.json", "method=omp", "steps=3"]);
    assert_eq!(r["activeSet"].as_array().unwrap().len(), 3);
}

#[test]
fn solve_csv_output() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "g", &["gaussian", "n=10", "p=4", "s=1", "sigma=0.1"]);
    let out = nnr(dir.path(), &["solve", "g.json", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("j,beta\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn diagnose_orthonormal_margin() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "o", &["orthonormal", "n=8", "p=8", "s=2"]);
    let r = ok_json(dir.path(), &["diagnose", "o.json"]);
    assert!((r["tau0Sq"].as_f64().unwrap() - 0.125).abs() < 1e-9);
    assert_eq!(r["constants"]["K_S"].as_f64().unwrap(), 1.0);
}

#[test]
fn recover_noiseless_support() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "g", &["ens-plus", "n=50", "p=100", "s=4", "beta=1"]);
    let r = ok_json(dir.path(), &["recover", "g.json"]);
    assert_eq!(r["exactRecovery"], true);
    assert_eq!(r["sHat"], 4);
}

#[test]
fn config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "n = 6\np = 6\nseed = 9\n").unwrap();
    gen(dir.path(), "o", &["orthonormal", "--config", "run.cfg", "p=5"]);
    let m = manifest(dir.path(), "o");
    assert_eq!((m["n"].as_u64(), m["p"].as_u64()), (Some(6), Some(5)));
    assert_eq!(m["config"]["seed"], "9");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = nnr(dir.path(), &["gen", "--out", "x", "orthonormal", "n=4", "p=4", "colour=red"]);
    assert_eq!(unknown.status.code(), Some(2));
    let bad = nnr(dir.path(), &["gen", "--out", "x", "orthonormal", "n=3", "p=4"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = nnr(dir.path(), &["solve", "nothing.json"]);
    assert_eq!(missing.status.code(), Some(2));
    // identical columns make the support block singular
    gen(dir.path(), "ones", &["group-testing", "pi=1", "n=5", "p=4"]);
    let singular = nnr(dir.path(), &["diagnose", "ones.json", "support=0,1"]);
    assert_eq!(singular.status.code(), Some(3), "{}", String::from_utf8_lossy(&singular.stderr));
}

#[test]
fn experiment_csv_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, out: &str| {
        let o = nnr(
            dir.path(),
            &[
                "experiment", "prop2", "n=40", "p=40", "s=4", "rho=0.5", "reps=8", "band_draws=200", "--seed", "5",
                "--threads", threads, "--out", out,
            ],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(out).join("prop2_seed5.csv")).unwrap()
    };
    let a = run("1", "one");
    let b = run("3", "three");
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("# config_hash="));
}

#[test]
fn flag_forms_match_settings() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "a", &["ens-plus", "E1", "a=1", "n=30", "p=50", "s=2", "beta=1", "--seed", "7"]);
    gen(dir.path(), "b", &["ens-plus", "ensemble=E1", "a=1", "n=30", "p=50", "s=2", "beta=1", "--seed", "7"]);
    assert_eq!(manifest(dir.path(), "a")["matrix_sha256"], manifest(dir.path(), "b")["matrix_sha256"]);

    let r = ok_json(dir.path(), &["solve", "a.json", "--method", "nnlasso", "--lambda", "1000"]);
    assert!(r["beta"].as_array().unwrap().iter().all(|b| b.as_f64().unwrap() == 0.0));
    let flag = ok_json(dir.path(), &["solve", "a.json", "--method", "omp", "--steps", "2"]);
    let kv = ok_json(dir.path(), &["solve", "a.json", "method=omp", "steps=2"]);
    assert_eq!(flag["beta"], kv["beta"]);
    let r = ok_json(dir.path(), &["recover", "a.json", "--sigma", "0.5", "--m", "1"]);
    assert!(r["sHat"].as_u64().is_some());
}
