use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pilotwave::report::parse_csv;

fn pilotwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pilotwave")).args(args).output().expect("spawn pilotwave")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&pilotwave(&["--help"])), 0);
    assert_eq!(code(&pilotwave(&["--version"])), 0);
    assert_eq!(code(&pilotwave(&["bogus"])), 1);
    assert_eq!(code(&pilotwave(&[])), 1);
    assert_eq!(code(&pilotwave(&["equal-times"])), 1, "seed is mandatory");
    assert_eq!(code(&pilotwave(&["two-times", "--seed", "1", "--grid", "0:1"])), 1);
    assert_eq!(code(&pilotwave(&["two-times", "--seed", "1", "--count", "50"])), 1);
    assert_eq!(code(&pilotwave(&["two-times", "--seed", "1", "--rel-tol", "-1"])), 1);
    assert_eq!(code(&pilotwave(&["collapse-two-times", "--seed", "1", "--cutoff", "8"])), 1);
}

#[test]
fn io_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.conf");
    assert_eq!(code(&pilotwave(&["--config", missing.to_str().unwrap()])), 3);
    let out = dir.path().join("no/such/dir/x.csv");
    assert_eq!(code(&pilotwave(&["analytic-sweep", "--out", out.to_str().unwrap()])), 3);
}

#[test]
fn config_file_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "experiment = two-times\nseed = 1\nflavour = strange\n").unwrap();
    let out = pilotwave(&["--config", conf.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("flavour"));
}

#[test]
fn analytic_sweep_to_stdout() {
    let out = pilotwave(&["analytic-sweep", "--pattern", "two-times", "--grid", "0:pi/6:3"]);
    assert_eq!(code(&out), 0);
    let rows = parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let anchor = (8.0 / (3.0 * std::f64::consts::PI)).powi(3);
    assert_eq!(rows.len(), 3);
    assert!((rows[0].quantum + anchor).abs() < 1e-12);
    assert!((rows[2].quantum - anchor).abs() < 1e-12);
}

fn run_to(dir: &Path, name: &str, args: &[&str]) -> Vec<u8> {
    let csv = dir.join(name);
    let mut all: Vec<&str> = args.to_vec();
    let csv_str = csv.to_str().unwrap().to_string();
    all.extend(["--out", &csv_str]);
    let out = pilotwave(&all);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    fs::read(csv).unwrap()
}

#[test]
fn manifest_reproduces_csv() {
    let dir = tempfile::tempdir().unwrap();
    let first =
        run_to(dir.path(), "first.csv", &["fr", "--seed", "42", "--count", "300", "--grid", "0:pi/3:5"]);
    let manifest = dir.path().join("first.csv.manifest");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("seed = 42") && text.contains("version = "));
    let second = run_to(dir.path(), "second.csv", &["--config", manifest.to_str().unwrap()]);
    assert_eq!(first, second);
    let rows = parse_csv(std::str::from_utf8(&first).unwrap()).unwrap();
    assert_eq!(rows.len(), 4 + 5);
    assert!(rows.iter().all(|r| r.n_effective + r.n_failed == 300));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "# base\nexperiment = equal-times\nseed = 5\ncount = 200\ngrid = 0:2pi/9:4\n").unwrap();
    let csv = run_to(dir.path(), "a.csv", &["--config", conf.to_str().unwrap(), "--count", "150"]);
    let rows = parse_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].n_effective + rows[0].n_failed, 150);
}

#[test]
fn svg_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("plot.svg");
    let out = pilotwave(&["two-times", "--seed", "3", "--count", "200", "--svg", svg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg") || text.starts_with("<?xml"));
    assert!(text.trim_end().ends_with("</svg>"));
}
