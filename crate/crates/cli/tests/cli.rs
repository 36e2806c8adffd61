use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_typicality"));
    c.env("RUST_LOG", "warn");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn small(mode: &str, n: usize) -> String {
    format!(
        r#"{{
            "schema_version": 1,
            "mode": "{mode}",
            "system": {{ "dim_e": 6 }},
            "ensemble": {{ "kind": "wigner", "sigma_w": 0.2 }},
            "times": {{ "t_max": 10.0, "n_points": 21 }},
            "n_realizations": {n},
            "master_seed": 1
        }}"#
    )
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let out = bin().arg("validate").arg("--config").arg(&path).output().unwrap();
        assert_eq!(code(&out), 0, "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn negative_sigma_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("speckle", 2).replace("0.2", "-0.2"));
    let out = bin().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_w"));
}

#[test]
fn huge_environment_reports_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("speckle", 2).replace("\"dim_e\": 6", "\"dim_e\": 1000000"));
    let out = bin().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("GiB"));
}

#[test]
fn parse_error_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("speckle", 2).replace("\"t_max\": 10.0", "\"t_max\": \"ten\""));
    let out = bin().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("times.t_max") && err.contains("line"), "{err}");
}

#[test]
fn concentration_with_one_realization_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("concentration", 1));
    let out = bin()
        .args(["concentration", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn concentration_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("concentration", 4));
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["concentration", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS variance_bound"));
    let csv = std::fs::read_to_string(out_dir.join("statistics.csv")).unwrap();
    assert!(csv.starts_with("time,sigma_rho_sq,sigma_rho_sq_se,bound_eq3,exceeds_bound,n"));
    assert_eq!(csv.lines().count(), 22);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["mode"], "concentration");
}

#[test]
fn seed_and_workers_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("speckle", 2));
    let run = |seed: &str, workers: &str, out: &str| {
        let o = bin()
            .args(["speckle", "--config"])
            .arg(&cfg)
            .args(["--seed", seed, "--workers", workers, "--out"])
            .arg(dir.path().join(out))
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join(out).join("trajectory_0001.csv")).unwrap()
    };
    let a = run("5", "1", "a");
    let b = run("5", "4", "b");
    let c = run("6", "1", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn unknown_test_function_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = small("poincare-check", 2).replace(
        "\"master_seed\": 1",
        "\"master_seed\": 1, \"poincare\": { \"functions\": [\"cubic\"], \"n\": 10 }",
    );
    let cfg = write_config(dir.path(), &body);
    let out = bin().args(["poincare-check", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cubic"));
}

#[test]
fn missing_config_file() {
    let out = bin().args(["speckle", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(code(&out), 2);
}
