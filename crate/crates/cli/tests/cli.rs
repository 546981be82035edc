use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const PDE: &str = r#"
version = 1
experiment = "two-mode pde"

[system]
kind = "pde"
lambdas = [0.1, 0.03333333333333333]
points = 60

[grid]
start = 0.0
end = 35.0
samples = 351

[dictionary]
kind = "truncated_linear"
lambda_min = 0.011
lambda_max = 0.9
count = 60
spacing = "log"
include = [0.1, 0.03333333333333333]

[dmd]
rank = 2
sweep = [1, 2, 3]
"#;

const CUBIC: &str = r#"
version = 1
experiment = "cubic control"

[system]
kind = "cubic"

[grid]
start = 0.0
end = 20.0
samples = 2001

[control]
x0 = -0.5
target = 0.7
cancel = "analytic"
"#;

fn koopdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopdyn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = koopdyn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// simulate, dmd, sparse, kef, compare on the two-mode example.
fn pipeline(dir: &Path) {
    let cfg = write(dir, "pde.toml", PDE);
    ok(&["simulate", "--config", s(&cfg), "--out", s(dir)]);
    let traj = dir.join("trajectory.csv");
    ok(&["dmd", s(&traj), "--config", s(&cfg), "--out", s(dir)]);
    ok(&["sparse", s(&traj), "--config", s(&cfg), "--out", s(dir)]);
    ok(&["kef", s(&dir.join("sparse.json")), s(&traj), "--config", s(&cfg), "--out", s(dir)]);
    ok(&["compare", s(&dir.join("dmd_error.csv")), s(&dir.join("sparse_error.csv")), "--out", s(dir)]);
}

#[test]
fn pde_pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    pipeline(dir);

    let dmd = json(&dir.join("dmd.json"));
    assert_eq!(dmd["command"], "dmd");
    assert_eq!(dmd["config"]["experiment"], "two-mode pde");
    assert_eq!(dmd["input_hash"].as_str().unwrap().len(), 64);
    assert_eq!(dmd["result"]["dmd"]["rank"], 2);
    assert!(dmd["result"]["relative_error"].as_f64().unwrap() >= 5e-2);
    assert_eq!(dmd["result"]["rank_sweep"].as_array().unwrap().len(), 3);
    // eigenvalues are decimal strings
    assert!(dmd["result"]["dmd"]["eigenvalues"][0][0].is_string());

    let sparse = json(&dir.join("sparse.json"));
    let dec = &sparse["result"]["decomposition"];
    let lambdas: Vec<f64> = dec["lambdas"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(lambdas.len(), 2, "{lambdas:?}");
    assert!((lambdas[0] - 1.0 / 30.0).abs() < 1e-12 && (lambdas[1] - 0.1).abs() < 1e-12);
    assert!(sparse["result"]["relative_error"].as_f64().unwrap() <= 1e-3);

    let kef = json(&dir.join("kef.json"));
    // phi = e^t along the flow; a central difference at dt = 0.1 is off by h^2/6
    let fd_error = 0.1f64 * 0.1 / 6.0;
    for r in kef["result"]["kefs"].as_array().unwrap() {
        let max = r["residual"]["max"].as_f64().unwrap();
        assert!((max - fd_error).abs() < 1e-5, "{max}");
    }
    for (m, l) in kef["result"]["series"].as_array().unwrap().iter().zip(&lambdas) {
        let slope = m["fit"]["slope"].as_f64().unwrap();
        assert!((slope + l).abs() < 1e-6, "slope {slope} for rate {l}");
        assert!(m["departure_time"].as_f64().unwrap() > 1.0 / l - 0.5);
    }
    let series = fs::read_to_string(dir.join("eigenfunctionals.csv")).unwrap();
    assert!(series.starts_with("t,lambda="));

    let cmp = json(&dir.join("compare.json"));
    assert!(cmp["config"].is_null());
    assert!(cmp["result"]["ratio"].as_f64().unwrap() >= 10.0);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 12);
    for name in names {
        if name == "pde.toml" {
            continue;
        }
        let x = fs::read(a.path().join(&name)).unwrap();
        let y = fs::read(b.path().join(&name)).unwrap();
        assert!(x == y, "{name:?} differs between runs");
    }
}

#[test]
fn trajectory_csv_has_full_precision() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "ft.toml",
        "version = 1\nexperiment = \"ft\"\nclosed_form = true\n[system]\nkind = \"finite_time\"\n[grid]\nstart = 0.0\nend = 1.5\nsamples = 4\n",
    );
    ok(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    let text = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].split(',').next().unwrap(), "0.0000000000000000e0");
    // x(0.5) = 0.25 exactly
    assert_eq!(rows[1].split(',').nth(1).unwrap(), "2.5000000000000000e-1");
}

#[test]
fn seed_controls_noise() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "noisy.toml", &PDE.replace("experiment =", "noise = 1e-3\nexperiment ="));
    let run = |seed: &str, sub: &str| {
        let out = tmp.path().join(sub);
        ok(&["simulate", "--config", s(&cfg), "--out", s(&out), "--seed", seed]);
        (fs::read(out.join("trajectory.csv")).unwrap(), json(&out.join("simulate.json")))
    };
    let (a, ja) = run("7", "a");
    let (b, _) = run("7", "b");
    let (c, _) = run("8", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(ja["config"]["seed"], 7);
}

#[test]
fn control_reaches_target() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "cubic.toml", CUBIC);
    ok(&["control", "--config", s(&cfg), "--out", s(tmp.path())]);
    let r = json(&tmp.path().join("control.json"));
    assert!(r["result"]["report"]["final_error"].as_f64().unwrap() <= 1e-3);
    assert!(r["result"]["max_compensated_rhs"].as_f64().unwrap() <= 1e-12);

    let numeric = write(tmp.path(), "numeric.toml", &CUBIC.replace("\"analytic\"", "\"numeric\""));
    let out = tmp.path().join("numeric");
    ok(&["control", "--config", s(&numeric), "--out", s(&out)]);
    let r = json(&out.join("control.json"));
    assert!(r["result"]["report"]["final_error"].as_f64().unwrap() <= 1e-3);
    assert!(r["result"]["max_compensated_rhs"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn validation_errors_exit_2_with_line() {
    let tmp = TempDir::new().unwrap();
    let bad = write(tmp.path(), "bad.toml", &CUBIC.replace("samples = 2001", "samples = 2"));
    let out = koopdyn(&["simulate", "--config", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config line 11"), "{err}");

    let typo = write(tmp.path(), "typo.toml", &CUBIC.replace("[grid]", "[grid]\nstepz = 1"));
    let out = koopdyn(&["simulate", "--config", s(&typo)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 9"));
}

#[test]
fn numerical_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "ft.toml",
        "version = 1\nexperiment = \"ft\"\n[system]\nkind = \"finite_time\"\n[grid]\nstart = 0.0\nend = 0.5\nsamples = 51\n[dmd]\nrank = 4\n",
    );
    ok(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    let out = koopdyn(&["dmd", s(&tmp.path().join("trajectory.csv")), "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn compare_without_overlap_fails() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "a.csv", "t,error,norm\n0,1,1\n1,1,1\n");
    let b = write(tmp.path(), "b.csv", "t,error,norm\n2,1,1\n3,1,1\n");
    let out = koopdyn(&["compare", s(&a), s(&b), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    ok(&["compare", s(&a), s(&a), "--out", s(tmp.path())]);
    assert_eq!(json(&tmp.path().join("compare.json"))["result"]["ratio"], 1.0);
}

#[test]
fn missing_input_file_exits_1() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "pde.toml", PDE);
    let out = koopdyn(&["dmd", "does-not-exist.csv", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}
