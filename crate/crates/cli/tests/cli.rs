use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use infrasec_core::scenario::reference_scenario;
use tempfile::TempDir;

fn infrasec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infrasec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn reference_file(dir: &Path) -> PathBuf {
    write_scenario(dir, "reference.toml", &reference_scenario().to_toml())
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn lp_value(o: &Output) -> f64 {
    let text = stdout(o);
    let line = text
        .lines()
        .find(|l| l.starts_with("game value (LP) = "))
        .expect("value line");
    line["game value (LP) = ".len()..].parse().unwrap()
}

fn csv_columns(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn build_reports_reference_dimensions() {
    let dir = TempDir::new().unwrap();
    let path = reference_file(dir.path());
    let out = infrasec(&["build", "--scenario", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("states n = 12"));
    assert!(text.contains("subsystems N = 6"));
    assert!(text.contains("finite eigenvalues (12)"));
}

fn density(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn decoupled_build_reports_zero_interdependency() {
    let dir = TempDir::new().unwrap();
    let path = write_scenario(dir.path(), "decoupled.toml", &reference_scenario().decoupled().to_toml());
    let out = infrasec(&["build", "--scenario", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(density(&stdout(&out), "interdependency density = "), 0.0);
    let coupled = stdout(&infrasec(&["build", "--scenario", reference_file(dir.path()).to_str().unwrap()]));
    assert!(density(&coupled, "interdependency density = ") > 0.0);
    // The electric areas still exchange power, so the subsystem coupling stays.
    assert!(density(&stdout(&out), "coupling-block density = ") > 0.0);
}

#[test]
fn invalid_scenarios_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let text = reference_scenario().to_toml();
    let unstable = text.replacen("damping = 30.0", "damping = -30.0", 1);
    assert_ne!(unstable, text);
    let path = write_scenario(dir.path(), "negative.toml", &unstable);
    let out = infrasec(&["build", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("damping"));

    let unstable = text.replacen("[200.0, 0.0, -20.0, -5.0]", "[-200.0, 0.0, -20.0, -5.0]", 1);
    assert_ne!(unstable, text);
    let path = write_scenario(dir.path(), "unstable.toml", &unstable);
    let out = infrasec(&["build", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eigenvalue"));

    let path = write_scenario(dir.path(), "typo.toml", &text.replacen("[solver]", "[solver]\ntoll = 1.0", 1));
    let out = infrasec(&["build", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn missing_file_exits_nonzero() {
    let out = infrasec(&["build", "--scenario", "/nonexistent/scenario.toml"]);
    assert!(!out.status.success());
}

#[test]
fn oversized_strategy_space_exits_with_code_four() {
    let dir = TempDir::new().unwrap();
    let path = reference_file(dir.path());
    let out_dir = dir.path().join("out");
    let out = infrasec(&[
        "solve", "--scenario", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--budget", "6000",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn repeated_solves_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let path = reference_file(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = infrasec(&["solve", "--scenario", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["summary.txt", "equilibrium.json", "payoff.csv", "mixtures.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn null_attack_produces_zero_deviation() {
    let dir = TempDir::new().unwrap();
    let path = reference_file(dir.path());
    let out_dir = dir.path().join("out");
    let out = infrasec(&[
        "simulate", "--scenario", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--attack", "none",
    ]);
    assert!(out.status.success());
    let (_, rows) = csv_columns(&out_dir.join("trajectory.csv"));
    assert!(rows.iter().all(|r| r[1..].iter().all(|&v| v == 0.0)));
}

#[test]
fn doubling_the_attack_doubles_the_response() {
    let dir = TempDir::new().unwrap();
    let path = reference_file(dir.path());
    let run = |name: &str, scale: &str| {
        let out_dir = dir.path().join(name);
        let out = infrasec(&[
            "simulate", "--scenario", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--attack",
            "hg[S1],hw[T2]", "--scale", scale,
        ]);
        assert!(out.status.success());
        csv_columns(&out_dir.join("trajectory.csv"))
    };
    let (header, one) = run("one", "1");
    let (_, two) = run("two", "2");
    assert_eq!(header.last().unwrap(), "dp_percent");
    for (r1, r2) in one.iter().zip(&two) {
        assert_eq!(r1[0], r2[0]);
        for (a, b) in r1[1..].iter().zip(&r2[1..]) {
            assert!((b - 2.0 * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}

#[test]
fn restricted_attacker_value_does_not_exceed_full_value() {
    let dir = TempDir::new().unwrap();
    let path = reference_file(dir.path());
    let solve = |extra: &[&str]| {
        let out_dir = dir.path().join(format!("out{}", extra.len()));
        let mut args = vec!["solve", "--scenario", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = infrasec(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        lp_value(&out)
    };
    let full = solve(&[]);
    let electric = solve(&["--restrict-attacker", "electric"]);
    assert!(electric <= full);
}

#[test]
fn sweep_value_is_nonincreasing_in_budget() {
    let dir = TempDir::new().unwrap();
    let path = reference_file(dir.path());
    let out_dir = dir.path().join("out");
    let out = infrasec(&[
        "sweep", "--scenario", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--budget", "900",
        "--budget", "1200", "--budget", "1500",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn sweep_needs_two_budgets() {
    let dir = TempDir::new().unwrap();
    let path = reference_file(dir.path());
    let out = infrasec(&["sweep", "--scenario", path.to_str().unwrap(), "--budget", "1200"]);
    assert_eq!(out.status.code(), Some(2));
}
