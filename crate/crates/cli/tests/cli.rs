use std::path::Path;
use std::process::{Command, Output};

fn geomhom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geomhom")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn coercivity_of_sin1() {
    let out = geomhom(&["coercivity", "--c", "builtin:sin1", "--n", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!(v["delta_est"].as_f64().unwrap() > 0.0);
}

#[test]
fn constant_force_cell() {
    let out = geomhom(&["cell", "--op", "mcf", "--c", "builtin:const1", "--p", "1,0", "--lambda", "1e-2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!((v["effective_estimate"].as_f64().unwrap() + 1.0).abs() <= 1e-6);
    assert_eq!(v["input"]["nodes"], 256);
    assert_eq!(v["input"]["tol"], 1e-8);
}

#[test]
fn non_convergence_exits_one_with_json() {
    let out =
        geomhom(&["cell", "--c", "builtin:sin1", "--p", "1,0", "--n", "16", "--tol", "1e-30", "--max-steps", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["status"], "not-converged");
    assert!(v["error"].as_str().unwrap().contains("not converged"));
}

#[test]
fn invalid_input_exits_two() {
    assert_eq!(geomhom(&["cell", "--p", "1,0", "--bogus"]).status.code(), Some(2));
    assert_eq!(geomhom(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(geomhom(&["cell", "--p", "1,0", "--lambda", "-1"]).status.code(), Some(2));
}

#[test]
fn oracle_csv() {
    let out = geomhom(&["oracle", "--which", "lambertw", "--params", "0,1,2.718281828459045"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "z,w");
    let w1: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!((w1 - 0.5671432904097838).abs() < 1e-12);
    let out = geomhom(&["oracle", "--which", "vshape", "--params", "-0.5,1,0.7853981633974483"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let u: f64 = text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((u - (0.5 + 2f64.sqrt())).abs() < 1e-12);
}

#[test]
fn command_config_file_and_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cell.json");
    std::fs::write(&cfg, r#"{"c": "builtin:const:2", "p": "0,1", "lambda": 0.05, "n": 32}"#).unwrap();
    let out = geomhom(&["cell", "--config", cfg.to_str().unwrap(), "--n", "16"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!((v["effective_estimate"].as_f64().unwrap() + 2.0).abs() <= 1e-6);
    assert_eq!(v["input"]["nodes"], 16);
}

fn write_sweep(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("sweep.json");
    std::fs::write(
        &path,
        r#"{"operator": {"kind": "mcf", "force": "builtin:const1"},
            "initial": {"kind": "cone"},
            "eps": [0.04, 0.02, 0.01], "horizon": 1.0,
            "reference": {"kind": "closed-form"},
            "solver": {"mode": "radial"},
            "seed": 11}"#,
    )
    .unwrap();
    path
}

#[test]
fn rate_report_dominates_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_sweep(dir.path());
    let out = geomhom(&["rate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("eps,error,h,flags,lower_bound"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (error, h, lb): (f64, f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap(), f[4].parse().unwrap());
        assert!(error >= lb - 5.0 * h, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 3);
}

#[test]
fn rate_is_deterministic() {
    let strip = |dir: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timestamp");
        for p in v["points"].as_array_mut().unwrap() {
            p.as_object_mut().unwrap().remove("runtime_s");
        }
        serde_json::to_string(&v).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = write_sweep(a.path());
    for (d, threads) in [(a.path(), "1"), (b.path(), "2")] {
        let out =
            geomhom(&["rate", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--threads", threads]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(strip(a.path()), strip(b.path()));
}

#[test]
fn evolve_and_radial_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = geomhom(&[
        "evolve",
        "--eps",
        "0.25",
        "--init",
        "plane",
        "--t",
        "0.1",
        "--snap",
        "0.05",
        "--half-width",
        "0.25",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["times"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("snap-002.json").exists());

    let out = geomhom(&["radial", "--eps", "0.05", "--t", "0.5", "--n", "1500"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("r,t,phi,closed_form"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn table_then_effective_evolution() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.json");
    let t = table.to_str().unwrap();
    let out = geomhom(&["table", "--c", "builtin:const1", "--m", "16", "--n", "16", "--table", t]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["reused"], false);
    let out = geomhom(&["table", "--c", "builtin:const1", "--m", "16", "--n", "16", "--table", t]);
    assert_eq!(stdout_json(&out)["reused"], true);
    let out = geomhom(&["evolve", "--effective", "--table", t, "--t", "0.2", "--h", "0.0625"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
