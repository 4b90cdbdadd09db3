use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lfd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn config(initial: &str, extra: &str, out_dir: &str) -> String {
    format!(
        "t_final = 2.0\nsnapshot_every = 2\n{extra}\n[grid]\nL = 8.0\nN = 16\neps = 1.0\n\n[initial]\n{initial}\n\n[output]\ndir = \"{out_dir}\"\ncheckpoints = true\nfield_csv = true\n"
    )
}

const EQUILIBRIUM: &str = "kind = \"equilibrium\"\nrho = 1.0\nE = 1.5";
const PERTURBED: &str = "kind = \"perturbed_equilibrium\"\nrho = 1.0\nE = 1.5\namplitude = 0.05";

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn fit_reports_the_maxwellian_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lfd(&["fit", "--rho", "1", "--E", "1.5", "--eps", "1e-6"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let a = v["params"]["a"].as_f64().unwrap();
    let b = v["params"]["b"].as_f64().unwrap();
    assert!((a - 0.17959).abs() < 1e-5, "{a}");
    assert!((b - 1.0).abs() < 1e-5, "{b}");
}

#[test]
fn fit_above_saturation_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lfd(&["fit", "--rho", "1", "--E", "0.3", "--eps", "5"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("saturation"), "{}", stderr(&out));
}

#[test]
fn equilibrium_run_is_stationary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "eq.toml", &config(EQUILIBRIUM, "", "eq"));
    let out = lfd(&["run", &cfg], tmp.path());
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}{}", stderr(&out));
    assert!(text.contains("PASS stationarity"), "{text}");
    for name in ["diagnostics.csv", "summary.json", "final_field.csv", "checkpoint_00000004.bin"] {
        assert!(tmp.path().join("eq").join(name).exists(), "{name}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("eq/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 4);
    assert!(summary["verdicts"].as_array().unwrap().iter().all(|v| v["pass"] == true));
}

#[test]
fn perturbed_run_has_monotone_entropy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.toml", &config(PERTURBED, "", "p"));
    let out = lfd(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("p/diagnostics.csv")).unwrap();
    let h = column(&csv, "H");
    assert_eq!(h.len(), 5);
    assert!(h.windows(2).all(|w| w[1] < w[0]), "{h:?}");
    assert!(!stdout(&out).contains("stationarity"));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.toml", &config(PERTURBED, "", "a"));
    let b = write_config(tmp.path(), "b.toml", &config(PERTURBED, "", "b"));
    assert!(lfd(&["run", &a], tmp.path()).status.success());
    assert!(lfd(&["run", &b], tmp.path()).status.success());
    for name in ["diagnostics.csv", "summary.json", "final_field.csv", "checkpoint_00000004.bin"] {
        let x = fs::read(tmp.path().join("a").join(name)).unwrap();
        let y = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = write_config(tmp.path(), "full.toml", &config(PERTURBED, "", "full"));
    assert!(lfd(&["run", &full], tmp.path()).status.success());
    let resumed = write_config(tmp.path(), "resumed.toml", &config(PERTURBED, "", "resumed"));
    let ckpt = tmp.path().join("full/checkpoint_00000002.bin");
    let out = lfd(&["run", &resumed, "--resume", ckpt.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["final_field.csv", "checkpoint_00000004.bin"] {
        let x = fs::read(tmp.path().join("full").join(name)).unwrap();
        let y = fs::read(tmp.path().join("resumed").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    let full_csv = fs::read_to_string(tmp.path().join("full/diagnostics.csv")).unwrap();
    let resumed_csv = fs::read_to_string(tmp.path().join("resumed/diagnostics.csv")).unwrap();
    let tail: Vec<&str> = full_csv.lines().skip(3).collect();
    let resumed_tail: Vec<&str> = resumed_csv.lines().skip(1).collect();
    // The first resumed row describes the restored state without a step,
    // so only its solver counters differ.
    let state_columns = |row: &str| row.split(',').take(12).collect::<Vec<_>>().join(",");
    assert_eq!(state_columns(tail[0]), state_columns(resumed_tail[0]));
    assert_eq!(tail[1..], resumed_tail[1..]);
}

#[test]
fn resume_rejects_a_foreign_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.toml", &config(PERTURBED, "", "a"));
    assert!(lfd(&["run", &a], tmp.path()).status.success());
    let b = write_config(tmp.path(), "b.toml", &config(PERTURBED, "[stepper]\ntau = 0.25\n", "b"));
    let ckpt = tmp.path().join("a/checkpoint_00000002.bin");
    let out = lfd(&["run", &b, "--resume", ckpt.to_str().unwrap()], tmp.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("different configuration"), "{}", stderr(&out));
}

#[test]
fn negative_tau_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &config(EQUILIBRIUM, "[stepper]\ntau = -0.1\n", "bad"));
    let out = lfd(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("stepper.tau"), "{}", stderr(&out));
    assert!(!tmp.path().join("bad").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config(EQUILIBRIUM, "", "typo").replace("eps = 1.0", "eps = 1.0\ndelta_1 = 0.1");
    let cfg = write_config(tmp.path(), "typo.toml", &text);
    let out = lfd(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("grid") && err.contains("delta_1"), "{err}");
}

#[test]
fn missing_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lfd(&["run", "nowhere.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn picard_failure_is_a_numerical_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.toml", &config(PERTURBED, "[stepper]\npicard_max = 1\n", "p"));
    let out = lfd(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("Picard"), "{}", stderr(&out));
}

#[test]
fn gap_is_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lfd(&["gap", "--seeds", "2", "--iters", "6", "--N", "12"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["estimate"].as_f64().unwrap() > 0.0);
    assert_eq!(v["seeds"], 2);
    assert_eq!(v["iters"], 6);
    assert_eq!(v["per_seed_values"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_reports_the_anisotropic_slopes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lfd(&["verify", "--profile", "gaussian", "--N", "32"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let perp = v["anisotropy"]["slope_perp"].as_f64().unwrap();
    let par = v["anisotropy"]["slope_par"].as_f64().unwrap();
    assert!((perp + 1.0).abs() < 0.3, "{perp}");
    assert!((par + 3.0).abs() < 0.3, "{par}");
    assert!(v["ellipticity"]["value"].as_f64().unwrap() > 0.0);
    assert!(v["structure"]["trace_err"].as_f64().unwrap() < 1e-10);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = lfd_core::config::RunConfig::from_path(&path).unwrap();
            cfg.initial_field().unwrap();
            count += 1;
        }
    }
    assert!(count >= 4);
}
