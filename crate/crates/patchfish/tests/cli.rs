use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use patchfish::commands;
use patchfish::config::RunConfig;

fn patchfish(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchfish")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    serde_json::from_str(&stderr).unwrap()
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let start = Instant::now();
    let out = patchfish(&["simulate", "--data-dir", path(&a)]);
    let elapsed = start.elapsed();
    assert!(out.status.success());
    assert!(elapsed.as_secs_f64() < 5.0, "simulate took {elapsed:?}");
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("simulated "));
    assert!(patchfish(&["simulate", "--data-dir", path(&b)]).status.success());
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 6);
    assert_eq!(fa, fb);
    assert_ne!(fa, files(&{
        let c = dir.path().join("c");
        assert!(patchfish(&["simulate", "--seed", "2", "--data-dir", path(&c)]).status.success());
        c
    }));
}

#[test]
fn two_months_one_vessel_gives_two_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[scenario]\nhorizon = 2\nvessels = [1, 0, 0, 0]\n").unwrap();
    let data = dir.path().join("data");
    let out = patchfish(&["simulate", "--config", path(&cfg), "--data-dir", path(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trips = std::fs::read_to_string(data.join("trips.csv")).unwrap();
    assert_eq!(trips.lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 records over 2 months"));
}

#[test]
fn missing_distances_is_a_data_error_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(patchfish(&["simulate", "--data-dir", path(&data)]).status.success());
    std::fs::remove_file(data.join("distances.csv")).unwrap();
    let out = patchfish(&["estimate", "--data-dir", path(&data), "--out-dir", path(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_json(&out);
    assert_eq!(e["exit_code"], 3);
    assert_eq!(e["error"]["class"], "data");
    assert!(e["error"]["file"].as_str().unwrap().ends_with("distances.csv"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[estimation]\nlevel = 0.5\n").unwrap();
    let out = patchfish(&["simulate", "--config", path(&cfg), "--data-dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["class"], "config");
}

#[test]
fn init_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    assert!(patchfish(&["init-config", "--seed", "5", "--output", path(&cfg)]).status.success());
    let loaded = RunConfig::load(&cfg).unwrap();
    assert_eq!(loaded.seed, 5);
    assert_eq!(RunConfig::from_toml(&loaded.to_toml()).unwrap(), loaded);
}

#[test]
fn estimate_is_deterministic_and_mapping_touches_only_structural_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(patchfish(&["simulate", "--data-dir", path(&data)]).status.success());
    let run = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["estimate", "--data-dir", path(&data), "--out-dir", path(&out_dir)];
        args.extend(extra);
        let out = patchfish(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files(&out_dir)
    };
    let a = run("a", &[]);
    assert_eq!(a, run("b", &[]));
    let paper = run("p", &["--paper-mapping"]);
    let changed: Vec<&String> = a.keys().filter(|k| a[*k] != paper[*k]).collect();
    assert_eq!(changed, ["structural.csv", "structural.txt"]);
}

#[test]
fn montecarlo_reports_every_replication() {
    let mut cfg = RunConfig::default();
    cfg.scenario.horizon = 24;
    cfg.montecarlo.reps = 2;
    cfg.montecarlo.threads = 2;
    let report = commands::montecarlo(&cfg).unwrap();
    assert_eq!(report.replications.len(), 2);
    assert_eq!(report.replications.iter().map(|r| r.seed).collect::<Vec<_>>(), [1, 2]);
    assert_eq!(report.replications_csv().lines().count(), 3);
    assert!(report.calibration_csv().starts_with("parameter,truth,mean,bias,rmse,coverage90,n_ok\n"));
}

/// Without sampling noise every parameter is exact except those fed by the
/// aggregate logistic fit: `r`, the own rates and the capacities inherit its
/// approximation error because the sum of patch logistics is not itself
/// logistic.
#[test]
fn noiseless_montecarlo_rmse_vanishes() {
    let mut cfg = RunConfig::default();
    cfg.scenario.noiseless = true;
    cfg.montecarlo.reps = 2;
    let report = commands::montecarlo(&cfg).unwrap();
    assert_eq!(report.n_ok(), 2);
    for p in &report.parameters {
        let own = p.name.starts_with("d_") && {
            let ids: Vec<&str> = p.name[2..].split('_').collect();
            ids[0] == ids[1]
        };
        if p.name == "r" || own {
            assert!(p.rmse <= 1e-4, "{}: {}", p.name, p.rmse);
        } else if p.name.starts_with('K') {
            assert!(p.rmse <= 5e-3 * p.truth, "{}: {}", p.name, p.rmse);
        } else {
            assert!(p.rmse <= 1e-6, "{}: {}", p.name, p.rmse);
        }
    }
}
