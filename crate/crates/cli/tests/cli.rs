use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dyson_taylor_core::dyson::{assemble_p_alpha, enumerate_indices, OperatorSpec};
use dyson_taylor_core::verify::exact_const_kernel;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dyson-taylor"))
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a CSV as floats, header dropped.
fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(|f| f.parse().unwrap()).collect())
        .collect()
}

fn sine_operator() -> Value {
    json!({
        "dim": 1,
        "a": [["1 + sin(x1)/4"]],
        "b": ["x1/3"],
        "c": "cos(x1)/5",
        "gamma": 0.5
    })
}

#[test]
fn order_zero_expansion_is_the_identity() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &json!({"schema": 1, "operator": sine_operator(), "mu": 0}));
    let out = run(&["expand"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let p0 = read_json(&dir.path().join("P_0.json"));
    assert_eq!(p0, json!([{"beta": [0], "gamma": [0], "coef": "1"}]));
    assert!(!dir.path().join("P_1.json").exists());
}

#[test]
fn third_order_expansion_sums_its_index_set() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({"schema": 1, "operator": sine_operator(), "mu": 3, "z": [0.25]}),
    );
    let out = run(&["expand"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for ell in 0..=3 {
        assert!(dir.path().join(format!("P_{ell}.json")).exists());
        let poly = read_json(&dir.path().join(format!("frakP_{ell}.json")));
        assert_eq!(poly["ell"], json!(ell));
        assert_eq!(poly["z"], json!([0.25]));
    }

    let spec = OperatorSpec::parse(1, &[vec!["1 + sin(x1)/4"]], &["x1/3"], "cos(x1)/5", 0.5).unwrap();
    let indices = enumerate_indices(3);
    assert_eq!(indices.len(), 4);
    let mut sum = assemble_p_alpha(&spec, &indices[0]).unwrap();
    for alpha in &indices[1..] {
        sum = sum.add(&assemble_p_alpha(&spec, alpha).unwrap()).unwrap();
    }
    let expected: Vec<Value> = sum
        .terms()
        .map(|(b, g, c)| json!({"beta": b.0, "gamma": g.0, "coef": c.to_string()}))
        .collect();
    assert_eq!(read_json(&dir.path().join("P_3.json")), Value::Array(expected));
}

#[test]
fn malformed_expression_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({"schema": 1, "operator": {"dim": 1, "a": [["1 + *x1"]], "b": ["0"], "c": "0", "gamma": 1}, "mu": 1}),
    );
    let out = run(&["expand"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("a[0][0]"), "{err}");
}

#[test]
fn unsupported_schema_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &json!({"schema": 2, "operator": sine_operator(), "mu": 1}));
    assert_eq!(run(&["expand"], &cfg, dir.path()).status.code(), Some(2));
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &json!({"schema": 1, "operator": sine_operator(), "mu": 1, "nu": 2}));
    let out = run(&["expand"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nu"));
}

#[test]
fn lost_ellipticity_is_a_numeric_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "schema": 1,
            "operator": {"dim": 1, "a": [["x1"]], "b": ["0"], "c": "0", "gamma": 0.5},
            "mu": 1,
            "t": [0.1],
            "kernel": {"x": {"lo": [-1], "hi": [1], "n": [3]}, "y": {"lo": [-1], "hi": [1], "n": [3]}}
        }),
    );
    let out = run(&["kernel"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

fn constant_2d(mu: usize) -> Value {
    json!({
        "schema": 1,
        "operator": {"dim": 2, "a": [["1", "1/4"], ["1/4", "1/2"]], "b": ["0", "0"], "c": "0", "gamma": 0.25},
        "mu": mu,
        "t": [0.5, 0.125, 0.03125],
        "kernel": {
            "x": {"lo": [-0.5, -0.5], "hi": [0.5, 0.5], "n": [3, 3]},
            "y": {"lo": [-1, -1], "hi": [1, 1], "n": [5, 5]}
        }
    })
}

#[test]
fn constant_coefficient_kernel_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &constant_2d(0));
    let out = run(&["kernel"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = fs::read(dir.path().join("kernel.csv")).unwrap();
    assert!(bytes.windows(2).any(|w| w == b"\r\n"));
    let rows = read_csv(&dir.path().join("kernel.csv"));
    assert_eq!(rows.len(), 3 * 9 * 25);
    let a = [1.0, 0.25, 0.25, 0.5];
    for r in &rows {
        let exact = exact_const_kernel(&a, &[0.0, 0.0], 0.0, r[0], &r[1..3], &r[3..5]).unwrap();
        assert!((r[5] - exact).abs() <= 1e-12 * exact.max(1e-300), "{r:?} vs {exact}");
    }
    // On the diagonal K(t, x, x) t^{N/2} does not depend on t.
    let diag: Vec<f64> = rows
        .iter()
        .filter(|r| r[1] == r[3] && r[2] == r[4] && r[1] == 0.0 && r[2] == 0.0)
        .map(|r| r[5] * r[0])
        .collect();
    assert_eq!(diag.len(), 3);
    for d in &diag {
        assert!((d - diag[0]).abs() <= 1e-13 * diag[0]);
    }
}

#[test]
fn lognormal_kernel_with_geometric_center() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "schema": 1,
            "operator": {
                "dim": 1, "a": [["0.08*x1^2"]], "b": ["0.05*x1"], "c": "-0.05",
                "gamma": 0.01, "positive_orthant": true
            },
            "mu": 2,
            "center": "geometric",
            "t": [0.02, 0.005],
            "kernel": {"x": {"lo": [0.9], "hi": [1.1], "n": [3]}, "y": {"lo": [0.9], "hi": [1.1], "n": [5]}}
        }),
    );
    let out = run(&["kernel"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("kernel.csv"));
    // In s = ln x the operator has constant coefficients.
    let exact = |t: f64, x: f64, y: f64| {
        exact_const_kernel(&[0.08], &[0.05 - 0.08], -0.05, t, &[x.ln()], &[y.ln()]).unwrap() / y
    };
    let mut worst = [0.0f64; 2];
    for r in &rows {
        assert!(r[3].is_finite());
        let e = exact(r[0], r[1], r[2]);
        let scale = exact(r[0], r[1], r[1]);
        let k = usize::from(r[0] < 0.01);
        worst[k] = worst[k].max((r[3] - e).abs() / scale);
    }
    assert!(worst[0] <= 2e-2, "relative error {worst:?}");
    assert!(worst[1] < worst[0], "error should shrink with t: {worst:?}");
}

#[test]
fn constant_diffusion_study_is_degenerate_and_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({
            "schema": 1,
            "operator": {"dim": 1, "a": [["3/2"]], "b": ["0"], "c": "0", "gamma": 1},
            "mus": [0, 1],
            "centers": ["x", "midpoint"],
            "t": {"k_min": 4, "k_max": 7},
            "grid": {"lo": [-8], "hi": [8], "h": [0.04]},
            "f": {"bump": {"center": [0], "radius": 3}}
        }),
    );
    let out = run(&["converge"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["pass"], json!(true));
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    for r in runs {
        assert_eq!(r["degenerate"], json!(true));
    }
    assert!(dir.path().join("converge_mu1_midpoint.csv").exists());
}

#[test]
fn selftest_passes_and_detects_an_injected_fault() {
    let dir = TempDir::new().unwrap();
    let ok = bin().args(["selftest", "--out"]).arg(dir.path()).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let report = fs::read_to_string(dir.path().join("selftest.txt")).unwrap();
    assert!(report.contains("0 failed"), "{report}");

    let bad = bin().args(["selftest", "--inject-fault", "simplex-table"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let mut cfg = constant_2d(2);
    cfg["operator"]["a"] = json!([["1 + sin(x1)/4", "x1*x2/10"], ["x1*x2/10", "3/4"]]);
    let cfg = write_config(dir.path(), &cfg);
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let status = bin()
            .args(["--threads", threads, "--seed", "11", "kernel", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(fs::read(out.join("kernel.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let reports: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("s{i}"));
            bin().args(["--seed", "5", "selftest", "--out"]).arg(&out).status().unwrap();
            fs::read(out.join("selftest.txt")).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn zero_threads_is_rejected() {
    let out = bin().args(["--threads", "0", "selftest"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
