use std::path::Path;
use std::process::{Command, Output};

use seir_kdpf::config::ObservationConfig;
use seir_kdpf::summary::{read_summary_csv, Quantity};

fn kdpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdpf"))
        .args(args)
        .env_remove("KDPF_CONFIG")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_on_bundled_guinea() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = kdpf(&["fit", "--seed", "1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["state_trajectory.csv", "param_trajectory.csv", "r0_trajectory.csv", "diagnostics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let r0 = read_summary_csv(std::fs::File::open(out.join("r0_trajectory.csv")).unwrap()).unwrap();
    assert_eq!(r0.days.first().unwrap().day_index, 0);
    assert_eq!(r0.days.last().unwrap().day_index, 403);
    for day in &r0.days {
        let s = day.get(Quantity::R0).unwrap();
        assert!(s.quantiles.iter().all(|q| *q > 0.0) && s.median > 0.0);
        assert!(s.quantiles[0] <= s.median && s.median <= s.quantiles[1]);
    }
    assert_eq!(r0.days.iter().filter(|d| d.observed).count(), 170);
    let diag = read_json(&out.join("diagnostics.json"));
    let steps = diag["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 170);
    for s in steps {
        let ess = s["ess"].as_f64().unwrap();
        assert!((1.0..=5000.0).contains(&ess));
        assert!(s["param_projections"].is_u64() && s["state_projections"].is_u64());
    }
}

#[test]
fn simulate_then_fit_writes_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = kdpf(&["simulate", "--days", "120", "--seed", "7", "--out", p(&sim)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = dir.path().join("fit");
    let o = kdpf(&[
        "fit",
        "--data",
        p(&sim.join("reports.csv")),
        "--truth",
        p(&sim.join("truth.json")),
        "--particles",
        "500",
        "--out",
        p(&fit),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = read_json(&fit.join("recovery.json"));
    assert!(rec["r0_rmse"].as_f64().unwrap().is_finite());
    assert_eq!(rec["params"].as_array().unwrap().len(), 5);

    let o = kdpf(&["calibrate", "--data", p(&sim.join("reports.csv")), "--latent", p(&sim.join("truth.json"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let link: ObservationConfig = serde_json::from_slice(&o.stdout).unwrap();
    assert!(link.zeta_i > 0.0 && link.sigma_i > 0.0);

    let o = kdpf(&[
        "calibrate",
        "--data",
        p(&sim.join("reports.csv")),
        "--latent",
        p(&fit.join("state_trajectory.csv")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn decreasing_cumulatives_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "date,cum_cases,cum_deaths\n2014-03-23,49,29\n2014-03-31,40,30\n").unwrap();
    let o = kdpf(&["fit", "--data", p(&data), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3"), "{err}");
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(kdpf(&["fit", "--bogus"]).status.code(), Some(64));
    assert_eq!(kdpf(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(kdpf(&[]).status.code(), Some(64));
    let help = kdpf(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("simulate"));
}

#[test]
fn degenerate_filter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"observation": {"sigma_I": 1e-300, "sigma_D": 1e-300, "sigma_scale": "log"}, "filter": {"num_particles": 20}}"#,
    )
    .unwrap();
    let o = kdpf(&["fit", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_name_the_key_and_env_var_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"priors": {"params": {"gamma": {"dist": "beta", "shape1": 0, "shape2": 2}}}}"#).unwrap();
    let o = kdpf(&["fit", "--config", p(&bad), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("priors.params.gamma.shape1"));

    let small = dir.path().join("small.json");
    std::fs::write(&small, r#"{"filter": {"num_particles": 40}}"#).unwrap();
    let out = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_kdpf"))
        .args(["fit", "--out", p(&out)])
        .env("KDPF_CONFIG", &small)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_json(&out.join("diagnostics.json"))["num_particles"], 40);
}

#[test]
fn same_seed_gives_identical_files_and_summarize_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(kdpf(&["simulate", "--days", "40", "--seed", "3", "--out", p(&sim)]).status.code(), Some(0));
    let data = sim.join("reports.csv");
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = kdpf(&["fit", "--data", p(&data), "--particles", "200", "--seed", "5", "--snapshots", "--out", p(&out)]);
            assert_eq!(o.status.code(), Some(0));
            out
        })
        .collect();
    for f in ["state_trajectory.csv", "param_trajectory.csv", "r0_trajectory.csv", "diagnostics.json", "snapshots.csv"] {
        assert_eq!(std::fs::read(runs[0].join(f)).unwrap(), std::fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    let again = dir.path().join("again");
    let o = kdpf(&["summarize", "--snapshots", p(&runs[0].join("snapshots.csv")), "--out", p(&again)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["state_trajectory.csv", "param_trajectory.csv", "r0_trajectory.csv"] {
        assert_eq!(std::fs::read(runs[0].join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}
