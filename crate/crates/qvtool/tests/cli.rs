use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const WALK: &str = r#"
times = [0.25, 0.5]

[[paths]]
name = "w"
kind = "scaled_random_walk"
level = 10
sigma = [[1.0, 0.0], [0.3, 0.8]]

[partition]
kind = "dyadic"
n_min = 4
n_max = 10
"#;

fn run(dir: &TempDir, config: &str, args: &[&str]) -> Output {
    run_env(dir, config, args, None)
}

fn run_env(dir: &TempDir, config: &str, args: &[&str], threads: Option<&str>) -> Output {
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qvtool"));
    cmd.args(args).arg("--config").arg(&cfg).current_dir(dir.path());
    match threads {
        Some(n) => cmd.env("QVTOOL_THREADS", n),
        None => cmd.env_remove("QVTOOL_THREADS"),
    };
    cmd.output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a report CSV (provenance and header lines dropped).
fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|s| if s.is_empty() { 0.0 } else { s.parse().unwrap() }).collect())
        .collect()
}

fn status(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn step_path_limit_is_jump_energy() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
times = [0.5]
[[paths]]
kind = "step_fv"
jumps = [{ time = 0.25, delta = [1.0, -1.0] }, { time = 0.6, delta = [0.5, 2.0] }]
[partition]
kind = "dyadic"
n_max = 12
"#;
    let o = run(&dir, cfg, &["qv", "--strict", "--out", "o"]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("o/qv.json"));
    assert_eq!(v["report"]["estimate"]["verdict"], "Pass");
    let limit = &v["report"]["estimate"]["limit"];
    // times 0, 0.5, 1
    assert_eq!(limit[1][0].as_f64().unwrap(), 2.0);
    assert_eq!(limit[2][0].as_f64().unwrap(), 1.0 + 1.0 + 0.25 + 4.0);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn smooth_path_has_zero_limit() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
[[paths]]
kind = "smooth_fv"
level = 12
poly = [[0.0, 1.0, -2.0]]
[partition]
kind = "dyadic"
n_max = 12
[tolerances]
qv = 1e-5
richardson = true
"#;
    let o = run(&dir, cfg, &["qv", "--strict", "--out", "o"]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v = json(&dir.path().join("o/qv.json"));
    let at_t = v["report"]["estimate"]["limit"][1][0].as_f64().unwrap();
    assert!(at_t.abs() < 1e-6, "{at_t}");
}

#[test]
fn rough_fbm_is_inconclusive_under_strict() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
[[paths]]
kind = "fbm"
hurst = 0.8
level = 10
dim = 1
[partition]
kind = "dyadic"
n_max = 10
[tolerances]
qv = 1e-9
"#;
    assert_eq!(status(&run(&dir, cfg, &["qv", "--strict", "--out", "o"])), 2);
    let v = json(&dir.path().join("o/qv.json"));
    assert_eq!(v["report"]["estimate"]["verdict"], "Inconclusive");
    // without --strict the verdict is only reported
    assert_eq!(status(&run(&dir, cfg, &["qv", "--out", "o"])), 0);
}

#[test]
fn ito_norm_sq_residual_vanishes() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{WALK}\n[function]\npreset = \"norm_sq\"\n[tolerances]\nito = 1e-12\n");
    let o = run(&dir, &cfg, &["ito", "--strict", "--out", "o"]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let table = rows(&dir.path().join("o/ito_residuals.csv"));
    // level, t, then lhs/drift/integral/second_order/jumps/residual (q = 1)
    assert_eq!(table.len(), 7 * 4);
    for r in &table {
        assert!(r[7].abs() < 1e-12 * (1.0 + r[2].abs()), "{r:?}");
    }
}

#[test]
fn ito_linear_residual_is_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{WALK}\n[function]\npreset = \"linear\"\nmatrix = [[2.0, -1.0]]\n");
    assert_eq!(status(&run(&dir, &cfg, &["ito", "--strict", "--out", "o"])), 0);
    for r in rows(&dir.path().join("o/ito_residuals.csv")) {
        assert!(r[7].abs() <= 1e-14, "{r:?}");
    }
}

#[test]
fn decompose_identity_has_zero_fv_parts() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        "{WALK}\n[function]\npreset = \"linear\"\nmatrix = [[1.0, 0.0], [0.0, 1.0]]\n"
    );
    let o = run(&dir, &cfg, &["decompose", "--strict", "--out", "o"]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for file in ["decompose_c.csv", "decompose_d.csv"] {
        let table = rows(&dir.path().join("o").join(file));
        assert!(!table.is_empty());
        // drop the time column
        assert!(table.iter().all(|r| r[1..].iter().all(|&v| v == 0.0)), "{file}");
    }
    // the integral reproduces X
    let text = fs::read_to_string(dir.path().join("o/decompose_y.csv")).unwrap();
    let y = qvcore::io::read_path_csv(&text).unwrap();
    let exp = qvcore::generators::PathRecipe::new(
        qvcore::generators::RecipeKind::ScaledRandomWalk { level: 10, sigma: vec![vec![1.0, 0.0], vec![0.3, 0.8]] },
        0,
        1.0,
    )
    .generate()
    .unwrap();
    for t in [0.25, 0.5, 1.0] {
        let (a, b) = (y.evaluate(t).unwrap(), exp.evaluate(t).unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12, "{t}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn check_passes_on_continuous_path() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, WALK, &["check", "--strict", "--out", "o"]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for c in ["C1", "C2", "C3", "LeftApprox"] {
        assert!(stdout.contains(&format!("w {c} Pass")), "{stdout}");
    }
}

#[test]
fn density_of_scalar_walk_is_one() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
[[paths]]
kind = "scaled_random_walk"
level = 10
sigma = [[1.0]]
[partition]
kind = "dyadic"
n_min = 7
n_max = 10
[bilinear]
kind = "outer"
[density]
cells = 16
"#;
    let o = run(&dir, cfg, &["density", "--out", "o"]);
    assert_eq!(status(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = rows(&dir.path().join("o/density.csv"));
    assert_eq!(table.len(), 16);
    for r in table {
        assert!((r[4] - 1.0).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn c1_and_intqv_write_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{WALK}\n[function]\npreset = \"sin\"\n");
    for (cmd, file) in [("c1", "c1_gaps.csv"), ("intqv", "intqv.csv")] {
        let o = run(&dir, &cfg, &[cmd, "--out", "o"]);
        assert_eq!(status(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!rows(&dir.path().join("o").join(file)).is_empty());
    }
    let gaps = rows(&dir.path().join("o/c1_gaps.csv"));
    assert!(gaps.last().unwrap()[1] < 1e-2, "{gaps:?}");
}

#[test]
fn outputs_are_byte_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{WALK}\n[function]\npreset = \"sin\"\n");
    for cmd in ["qv", "ito", "c1"] {
        assert_eq!(status(&run_env(&dir, &cfg, &[cmd, "--out", "a"], Some("1"))), 0);
        assert_eq!(status(&run_env(&dir, &cfg, &[cmd, "--out", "b"], Some("4"))), 0);
    }
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for n in names {
        let a = fs::read(dir.path().join("a").join(&n)).unwrap();
        let b = fs::read(dir.path().join("b").join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}

#[test]
fn exported_paths_round_trip_through_config() {
    let dir = TempDir::new().unwrap();
    assert_eq!(status(&run(&dir, WALK, &["paths", "--out", "p"])), 0);
    assert_eq!(status(&run(&dir, WALK, &["qv", "--out", "a"])), 0);
    let from_csv = WALK.replace(
        "name = \"w\"\nkind = \"scaled_random_walk\"\nlevel = 10\nsigma = [[1.0, 0.0], [0.3, 0.8]]",
        "name = \"w\"\ncsv = \"p/w.csv\"",
    );
    assert_ne!(from_csv, WALK);
    assert_eq!(status(&run(&dir, &from_csv, &["qv", "--out", "b"])), 0);
    // identical apart from the config hash on the provenance line
    let body = |d: &str| -> String {
        let text = fs::read_to_string(dir.path().join(d).join("qv_levels.csv")).unwrap();
        text.lines().skip(1).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(body("a"), body("b"));
}

#[test]
fn config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, "paths = []\n[partition]\nkind = \"dyadic\"\nn_max = 3\n", &["qv", "--out", "o"]);
    assert_eq!(status(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    assert_eq!(status(&run(&dir, "not toml [", &["qv"])), 1);
    // function required
    assert_eq!(status(&run(&dir, WALK, &["ito", "--out", "o"])), 1);
    assert_eq!(status(&run_env(&dir, WALK, &["qv", "--out", "o"], Some("zero"))), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_qvtool")).arg("frobnicate").output().unwrap();
    assert_eq!(status(&o), 1);
}
