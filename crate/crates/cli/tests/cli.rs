use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn stwind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stwind"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = stwind(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str, extra: &[&str]) {
    let mut args = vec!["simulate", "--seed", seed, "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let small = ["--stations", "2", "--grid", "4", "--days", "3", "--hours", "6"];
    simulate(&a, "7", &small);
    simulate(&b, "7", &small);
    simulate(&c, "8", &small);
    for f in ["obs.csv", "obs.toml", "nwp.csv", "nwp.toml", "truth.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("obs.csv")).unwrap(), fs::read(c.join("obs.csv")).unwrap());
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("config_hash"));
    assert!(manifest.contains("seed = 7"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = stwind(&["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(stwind(&[]).status.code(), Some(1));
}

#[test]
fn version_and_help_succeed() {
    let out = ok(&["--version"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
    ok(&["pipeline", "--help"]);
}

#[test]
fn data_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing.csv");
    let out = stwind(&["fit", "--obs", p(&missing), "--nwp", p(&missing), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");

    // Panels still in transformed space are rejected.
    let sim = tmp.path().join("sim");
    simulate(&sim, "1", &["--stations", "1", "--grid", "3", "--days", "3", "--hours", "6", "--transformed"]);
    let out = stwind(&["fit", "--obs", p(&sim.join("obs.csv")), "--nwp", p(&sim.join("nwp.csv")), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_validated_and_overridden() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 5\n[geometry]\nstations = 1\ngrid = 3\ndays = 2\nhours = 4\n").unwrap();
    let out = tmp.path().join("out");
    ok(&["simulate", "--config", p(&cfg), "--days", "3", "--out", p(&out)]);
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 5"));
    assert!(manifest.contains("days = 3"));

    fs::write(&cfg, "[geometry]\nstation = 1\n").unwrap();
    let bad = stwind(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(1));
}

/// The full experiment, then `predict` and `score` from the written files.
#[test]
fn pipeline_predict_score_roundtrip() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "3", &["--stations", "2", "--grid", "3", "--days", "9", "--hours", "8"]);
    let (obs, nwp) = (sim.join("obs.csv"), sim.join("nwp.csv"));
    let run = tmp.path().join("run");
    let out = ok(&[
        "pipeline", "--seed", "4", "--obs", p(&obs), "--nwp", p(&nwp), "--out", p(&run), "--no-se", "--scenarios", "20",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("improvement over NWP"));
    for f in ["scores.csv", "scenarios.csv", "rank_histogram.csv", "spectrum.csv", "manifest.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }
    for r in 1..=3 {
        assert!(run.join(format!("rotation_{r}")).join("theta.txt").exists());
    }
    let scores = fs::read_to_string(run.join("scores.csv")).unwrap();
    assert!(scores.contains("nwp"));

    // Day 1 is a test day of the first rotation; predicting it from the
    // written fit must reproduce the pipeline's scenarios exactly.
    let pred = tmp.path().join("pred");
    ok(&[
        "predict", "--seed", "4", "--fit", p(&run.join("rotation_1")), "--nwp", p(&nwp), "--day", "1", "--out", p(&pred),
        "--scenarios", "20",
    ]);
    let from_pipeline: Vec<String> = fs::read_to_string(run.join("scenarios.csv"))
        .unwrap()
        .lines()
        .filter(|l| l.split(',').nth(1) == Some("1"))
        .map(String::from)
        .collect();
    let predicted: Vec<String> = fs::read_to_string(pred.join("scenarios.csv")).unwrap().lines().skip(1).map(String::from).collect();
    assert!(!predicted.is_empty());
    assert_eq!(from_pipeline, predicted);
    let summary = fs::read_to_string(pred.join("summary.csv")).unwrap();
    assert!(summary.starts_with("day,hour,station_id,mean,sd,q05,q95"));
    assert_eq!(summary.lines().count(), 1 + 2 * 8);

    let scored = tmp.path().join("scored");
    ok(&["score", "--scenarios", p(&pred.join("scenarios.csv")), "--obs", p(&obs), "--out", p(&scored)]);
    let scores = fs::read_to_string(scored.join("scores.csv")).unwrap();
    assert!(scores.contains("rmse") && scores.contains("energy"));
    assert!(scored.join("correlation_scenarios.csv").exists());
}

#[test]
fn fit_with_rotations_and_trace() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "2", &["--stations", "1", "--grid", "3", "--days", "9", "--hours", "6"]);
    let (obs, nwp) = (sim.join("obs.csv"), sim.join("nwp.csv"));
    let fit = tmp.path().join("fit");
    let trace = tmp.path().join("trace.csv");
    ok(&[
        "fit", "--obs", p(&obs), "--nwp", p(&nwp), "--out", p(&fit), "--cv", "rolling3", "--loglik-trace", p(&trace), "--no-se",
    ]);
    for r in 1..=3 {
        let model = fs::read_to_string(fit.join(format!("rotation_{r}")).join("model.toml")).unwrap();
        assert!(model.contains("test_days"));
    }
    let rows = fs::read_to_string(&trace).unwrap();
    assert!(rows.starts_with("rotation,part,iteration,loglik"));
    assert!(rows.lines().count() > 3);

    // A refit started from the written parameters.
    let refit = tmp.path().join("refit");
    ok(&[
        "fit", "--obs", p(&obs), "--nwp", p(&nwp), "--out", p(&refit), "--no-se", "--init-params",
        p(&fit.join("rotation_1").join("theta.txt")),
    ]);
    assert!(refit.join("theta.txt").exists());

    let bad = stwind(&["fit", "--obs", p(&obs), "--nwp", p(&nwp), "--out", p(&fit), "--cv", "kfold"]);
    assert_eq!(bad.status.code(), Some(1));
    let bad = stwind(&["fit", "--obs", p(&obs), "--nwp", p(&nwp), "--out", p(&fit), "--variant", "spatial"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn ingest_builds_aligned_panels() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("stations.csv"), "id,lat,long\nAAA,41.9,-87.9\nBBB,41.2,-88.8\nCCC,41.5,-88.1\n").unwrap();
    let grid = [(41.0, -89.0, 1), (41.0, -88.0, 2), (42.0, -89.0, 1), (42.0, -88.0, 2)];
    let mut nwp = String::from("day,hour,grid_lat,grid_long,land_use,speed_ms\n");
    let mut obs = String::from("timestamp,station,speed_kn\n");
    for day in 1..=3 {
        for hour in 0..24 {
            for (g, &(lat, long, lu)) in grid.iter().enumerate() {
                let v = 4.0 + g as f64 + (hour as f64 / 4.0).sin();
                writeln!(nwp, "2012-01-0{day},{hour},{lat},{long},{lu},{v}").unwrap();
            }
            for (s, id) in ["AAA", "BBB", "CCC"].iter().enumerate() {
                for minute in (0..60).step_by(10) {
                    let kn = 8.0 + 2.0 * s as f64 + (hour as f64 / 3.0).cos();
                    writeln!(obs, "2012-01-0{day} {hour:02}:{minute:02},{id},{kn}").unwrap();
                }
            }
        }
    }
    fs::write(dir.join("nwp_table.csv"), nwp).unwrap();
    fs::write(dir.join("obs_raw.csv"), obs).unwrap();
    let out = dir.join("panels");
    ok(&[
        "ingest", "--obs", p(&dir.join("obs_raw.csv")), "--stations", p(&dir.join("stations.csv")), "--nwp",
        p(&dir.join("nwp_table.csv")), "--out", p(&out), "--clusters", "2",
    ]);
    let sidecar = fs::read_to_string(out.join("obs.toml")).unwrap();
    assert!(sidecar.contains("cluster"));
    let rows = fs::read_to_string(out.join("obs.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 3 * 24 * 3);
    let nwp_rows = fs::read_to_string(out.join("nwp.csv")).unwrap().lines().count();
    assert_eq!((nwp_rows - 1) % (3 * 24), 0);
}
