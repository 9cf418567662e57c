use std::path::Path;
use std::process::{Command, Output};

use pmeinv::RunReport;

fn pmeinv(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pmeinv"));
    c.current_dir(dir).args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("PMEINV_") {
            c.env_remove(k);
        }
    }
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const WAVE: &str = r#"
stages = ["forward"]
[forward]
horizon = 0.5
boundary = "max((t - x1)/2, 0)"
exact = "max((t - x1)/2, 0)"
[forward.grid]
dim = 1
counts = [101]
extents = [2.0]
"#;

const SMALL_VERIFY: &str = r#"
stages = ["fit", "verify"]
[grid]
counts = [9, 9]
"#;

#[test]
fn invalid_exponent_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pmeinv(dir.path(), &["run"], &[("PMEINV_M", "0.5")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`m`"), "{err}");
    assert!(!dir.path().join("pmeinv-out/report.json").exists());
}

#[test]
fn unknown_keys_and_stages_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.toml", "[grid]\ncount = [9, 9]\n");
    assert_eq!(pmeinv(dir.path(), &["run", "--config", "bad.toml"], &[]).status.code(), Some(2));
    assert_eq!(pmeinv(dir.path(), &["run", "--stage", "forwards"], &[]).status.code(), Some(2));
}

#[test]
fn forward_run_reports_the_wave_error_and_empty_plot_selection_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "wave.toml", WAVE);
    let out = pmeinv(dir.path(), &["run", "--config", "wave.toml", "--output", "w"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = RunReport::read(&dir.path().join("w/report.json")).unwrap();
    assert!(r.errors["forward.linf"] <= 2e-2);
    assert!(r.manifest.contains(&"forward/u.tfield".to_string()));
    assert!(dir.path().join("w/timings.json").exists());

    let out = pmeinv(dir.path(), &["plot-data", "--report", "w"], &[]);
    assert!(out.status.success());
    let man: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("w/plots/manifest.json")).unwrap()).unwrap();
    assert_eq!(man["files"], serde_json::json!([]));

    // no verify stage ran, so the remainder plot names what is missing
    let out = pmeinv(dir.path(), &["plot-data", "--report", "w", "--select", "remainder"], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
}

#[test]
fn report_config_round_trips_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "wave.toml", WAVE);
    assert!(pmeinv(dir.path(), &["run", "--config", "wave.toml", "--output", "w", "--seed", "7"], &[]).status.success());
    let first = std::fs::read(dir.path().join("w/report.json")).unwrap();
    let r = RunReport::read(&dir.path().join("w/report.json")).unwrap();
    assert_eq!(r.config.seed, 7);
    assert_eq!(r.config.forward.horizon, 0.5);
    // the embedded config is complete: re-running it reproduces the report
    std::fs::copy(dir.path().join("w/report.json"), dir.path().join("saved.json")).unwrap();
    assert!(pmeinv(dir.path(), &["run", "--config", "saved.json"], &[]).status.success());
    assert_eq!(std::fs::read(dir.path().join("w/report.json")).unwrap(), first);
    let back = pmeinv::ExperimentConfig::from_toml(&r.config.to_toml()).unwrap();
    assert_eq!(back, r.config);
}

#[test]
fn strict_verify_passes_and_feeds_the_plots() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "v.toml", SMALL_VERIFY);
    let out = pmeinv(dir.path(), &["run", "--config", "v.toml", "--output", "v", "--strict", "--jobs", "2"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let r = RunReport::read(&dir.path().join("v/report.json")).unwrap();
    assert_eq!(r.stages, ["transform", "fit", "verify"]);
    assert!(r.failed_checks().is_empty());
    let out = pmeinv(dir.path(), &["plot-data", "--report", "v", "--select", "remainder,dn-fit"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<String> = String::from_utf8_lossy(&out.stdout).lines().map(String::from).collect();
    assert!(files.iter().any(|f| f.starts_with("plots/remainder_")));
    assert!(files.iter().any(|f| f.starts_with("plots/dn_fit_")));
    for f in &files {
        let text = std::fs::read_to_string(dir.path().join("v").join(f)).unwrap();
        assert!(text.lines().skip(1).all(|l| l.split('\t').count() == 2), "{f}");
    }
}

#[test]
fn environment_overrides_nested_keys() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "wave.toml", WAVE);
    let out = pmeinv(
        dir.path(),
        &["run", "--config", "wave.toml", "--output", "w"],
        &[("PMEINV_FORWARD__HORIZON", "0.25"), ("PMEINV_SEED", "11")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = RunReport::read(&dir.path().join("w/report.json")).unwrap();
    assert_eq!(r.config.forward.horizon, 0.25);
    assert_eq!(r.config.seed, 11);
}
