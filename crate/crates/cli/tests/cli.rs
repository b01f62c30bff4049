//! End-to-end checks of the `wflab` binary: determinism, the exit-code
//! contract, and the simulate -> estimate round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_wflab")
}

struct Workdir(PathBuf);

impl Workdir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("wflab_cli_{tag}_{}", std::process::id()));
        fs::remove_dir_all(&dir).ok();
        fs::create_dir_all(&dir).unwrap();
        Workdir(dir)
    }

    fn file(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.0.join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        fs::remove_dir_all(&self.0).ok();
    }
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(bin())
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

#[test]
fn simulate_twice_is_byte_identical() {
    let wd = Workdir::new("sim");
    let cfg = wd.file(
        "sim.json",
        r#"{"cmd":"simulate","s":4,"theta1":2,"theta2":2,"T":0.5,"dt":0.001,"seed":42}"#,
    );
    let out1 = run(&cfg, &wd.path("a"), &[]);
    assert!(out1.status.success(), "{out1:?}");
    let out2 = run(&cfg, &wd.path("b"), &[]);
    assert!(out2.status.success());
    let a = fs::read(wd.path("a/path.csv")).unwrap();
    let b = fs::read(wd.path("b/path.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8_lossy(&a).starts_with("t,x\n"));
}

#[test]
fn seed_flag_overrides_config() {
    let wd = Workdir::new("seed");
    let cfg = wd.file(
        "sim.json",
        r#"{"cmd":"simulate","s":4,"theta1":2,"theta2":2,"T":0.5,"seed":42}"#,
    );
    run(&cfg, &wd.path("a"), &[]);
    run(&cfg, &wd.path("b"), &["--seed", "43"]);
    let a = fs::read(wd.path("a/path.csv")).unwrap();
    let b = fs::read(wd.path("b/path.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn estimate_demo_path_gives_riemann_value() {
    let wd = Workdir::new("demo");
    let csv = wd.file(
        "demo.csv",
        "t,x\n0.0000000000000000e0,5.0000000000000000e-1\n1.0000000000000000e0,6.0000000000000000e-1\n",
    );
    let cfg = wd.file(
        "est.json",
        &format!(
            r#"{{"cmd":"estimate","input":{:?},"theta1":1,"theta2":1}}"#,
            csv.to_str().unwrap()
        ),
    );
    let out = run(&cfg, &wd.path("o"), &[]);
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(wd.path("o/estimate.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["method"], "mle_riemann");
    assert!((v["estimate"].as_f64().unwrap() - 1.25).abs() < 1e-12);
}

#[test]
fn simulate_estimate_round_trip_matches_in_memory() {
    let wd = Workdir::new("roundtrip");
    let cfg = wd.file(
        "sim.json",
        r#"{"cmd":"simulate","s":4,"theta1":2,"theta2":2,"T":2,"dt":0.001,"seed":11}"#,
    );
    assert!(run(&cfg, &wd.path("o"), &[]).status.success());

    // in-memory reference through the library
    let params = wflab_core::wright_fisher::WfParams::new(4.0, 2.0, 2.0).unwrap();
    let sim = wflab_core::simulate::SimConfig {
        t_end: 2.0,
        dt: 0.001,
        start: wflab_core::diffusion::InitialLaw::Fixed(0.25),
        seed: 11,
    };
    let path = wflab_core::simulate::simulate_path(&params, &sim).unwrap();
    let reference = wflab_core::estimate::mle_riemann(&path, 2.0, 2.0).unwrap();

    let est_cfg = wd.file(
        "est.json",
        &format!(
            r#"{{"cmd":"estimate","input":{:?},"theta1":2,"theta2":2}}"#,
            wd.path("o/path.csv").to_str().unwrap()
        ),
    );
    assert!(run(&est_cfg, &wd.path("o"), &[]).status.success());
    let text = fs::read_to_string(wd.path("o/estimate.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let from_csv = v["estimate"].as_f64().unwrap();
    assert!(
        (from_csv - reference.estimate).abs() <= 1e-12,
        "csv {} vs memory {}",
        from_csv,
        reference.estimate
    );
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let wd = Workdir::new("badcfg");
    let bad_theta = wd.file(
        "t.json",
        r#"{"cmd":"simulate","s":0,"theta1":-1,"theta2":2,"T":1}"#,
    );
    let out = run(&bad_theta, &wd.path("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta1"));

    let empty = wd.file("e.json", "");
    let out = run(&empty, &wd.path("o"), &[]);
    assert_eq!(out.status.code(), Some(1));

    let unknown = wd.file(
        "u.json",
        r#"{"cmd":"simulate","s":0,"theta1":2,"theta2":2,"T":1,"mystery":1}"#,
    );
    let out = run(&unknown, &wd.path("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

#[test]
fn minimal_experiment_config_applies_defaults() {
    let wd = Workdir::new("expdef");
    // tiny T grid so the defaulted dt = 0.001 stays cheap
    let cfg = wd.file(
        "x.json",
        r#"{"cmd":"experiment","s":4,"theta1":2,"theta2":2,"T":[0.1,0.2],"replicates":20,"seed":42}"#,
    );
    let out = run(&cfg, &wd.path("o"), &[]);
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(wd.path("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["dt"], 0.001);
    assert_eq!(report["config"]["start"]["fixed"], 0.25);
    assert_eq!(report["config"]["replicates"][0], 20);
    assert!(wd.path("o/errors_T0.1.csv").exists());
    assert!(wd.path("o/kde_T0.2.csv").exists());
}

#[test]
fn failed_conditions_exit_two_with_report() {
    let wd = Workdir::new("cond");
    let cfg = wd.file(
        "c.json",
        r#"{"cmd":"check-conditions","s":0,"theta1":1.0,"theta2":2,"h":"(1-x)/x","b":0.5,"x":0.25,"nu":"stationary"}"#,
    );
    let out = run(&cfg, &wd.path("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(wd.path("o/conditions.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn passing_conditions_exit_zero() {
    let wd = Workdir::new("condok");
    let cfg = wd.file(
        "c.json",
        r#"{"cmd":"check-conditions","s":[-1,1],"theta1":[1.5,2],"theta2":2}"#,
    );
    let out = run(&cfg, &wd.path("o"), &[]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(wd.path("o/conditions.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["grid"].as_array().unwrap().len(), 4);
}

#[test]
fn stationary_sample_writes_draws() {
    let wd = Workdir::new("draws");
    let cfg = wd.file(
        "d.json",
        r#"{"cmd":"stationary-sample","s":4,"theta1":2,"theta2":2,"n":50,"seed":9}"#,
    );
    let out = run(&cfg, &wd.path("o"), &[]);
    assert!(out.status.success());
    let text = fs::read_to_string(wd.path("o/draws.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x"));
    let draws: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
    assert_eq!(draws.len(), 50);
    assert!(draws.iter().all(|&x| 0.0 < x && x < 1.0));
}
