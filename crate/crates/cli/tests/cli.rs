use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumpfolio")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("jumpfolio-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn table() -> String {
    configs().join("power_ig.toml").display().to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn value_table_to_stdout() {
    let o = run(&["value-table", "--config", &table()]);
    assert_eq!(o.status.code(), Some(0));
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.contains("1.5,2,-0.568355,-0.568022,-0.484689,0.000333,0.083666"), "{s}");
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let (a, b) = (scratch("a"), scratch("b"));
    for d in [&a, &b] {
        let o = run(&["value-curve", "--config", &table(), "--out", d.to_str().unwrap(), "--t", "1.5", "--points", "21"]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &Path| std::fs::read(d.join("value_curve.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(String::from_utf8(read(&a)).unwrap().lines().count(), 22);
}

#[test]
fn portfolio_and_scheme_commands() {
    let o = run(&["portfolio", "--config", &table(), "--t", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let s = String::from_utf8(o.stdout).unwrap();
    let value: f64 = s.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!((-1.0076..=-1.0055).contains(&value), "{s}");
    let o = run(&["scheme", "--config", &table()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 22);
}

#[test]
fn validation_errors_exit_one() {
    let d = scratch("invalid");
    let unknown = write_config(&d, "[run]\nhorizon = 1.0\ny = 0.0\nspeed = 2\n");
    assert_eq!(run(&["value-table", "--config", &unknown]).status.code(), Some(1));
    let bare = write_config(&d, "[run]\nhorizon = 1.0\ny = 0.0\n");
    let o = run(&["value-table", "--config", &bare]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("utility, market, benchmark"));
    assert_eq!(run(&["value-table"]).status.code(), Some(1));
    let o = run(&["value-curve", "--config", &table(), "--t", "1.5", "--x-lo", "5", "--x-hi", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn log_utility_verify_passes() {
    let merton = configs().join("merton_log.toml").display().to_string();
    let d = scratch("merton");
    let body = std::fs::read_to_string(&merton).unwrap().replace("n_paths = 100000", "n_paths = 20000");
    let o = run(&["mc-verify", "--config", &write_config(&d, &body), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn criterion_failure_exits_two() {
    let d = scratch("fail");
    let body = std::fs::read_to_string(table())
        .unwrap()
        .replace("n_paths = 200000", "n_paths = 4000")
        .replace("horizons = [0.4, 0.2, 0.1, 0.05]", "horizons = [1.6, 0.8]")
        .replace("min_slope = 1.6", "min_slope = 10.0");
    let o = run(&["mc-verify", "--config", &write_config(&d, &body), "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let checks = std::fs::read_to_string(d.join("verify.csv")).unwrap();
    assert!(checks.contains("error-order,false"), "{checks}");
}

#[test]
fn residual_command_writes_grid() {
    let merton = configs().join("merton_log.toml").display().to_string();
    let o = run(&["residual", "--config", &merton, "--kind", "super"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 49);
}
