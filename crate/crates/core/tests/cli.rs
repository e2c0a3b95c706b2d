//! End-to-end tests of the `structint` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_structint"))
}

/// Writes `config` and runs `subcommand` into `dir/out`; returns the exit code.
fn run_in(dir: &Path, subcommand: &str, config: &str, extra: &[&str]) -> (i32, PathBuf) {
    let cfg = dir.join("run.conf");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let status = binary()
        .arg(subcommand)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    (status.status.code().unwrap(), out)
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == name).unwrap();
    read_rows(path).iter().map(|r| r[j].parse().unwrap()).collect()
}

fn all_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).unwrap();
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

const DOUBLE_WELL: &str = "\
problem = double_well_gradient_flow
n = 6
seed = 3
k = 1
T = 2
N = 40
";

#[test]
fn oscillator_run_conserves_energy() {
    let dir = TempDir::new().unwrap();
    let config = "problem = harmonic_oscillator\nk = 1\nm = 2\naudit_m = 2\nT = 10\nN = 50\n";
    let (code, out) = run_in(dir.path(), "run", config, &[]);
    assert_eq!(code, 0);
    let residuals = column(&out.join("energy.csv"), "identity_residual");
    assert_eq!(residuals.len(), 51);
    assert!(residuals.iter().all(|r| r.abs() <= 1e-10));
    let t = column(&out.join("trajectory.csv"), "t");
    assert_eq!((t[0], t[50]), (0.0, 10.0));
    assert!(!out.join("constraint.csv").exists());
}

#[test]
fn constrained_run_writes_bounded_drift() {
    let dir = TempDir::new().unwrap();
    let config = "problem = constrained_pendulum\nk = 0\nm = 2\nT = 5\nN = 200\n";
    let (code, out) = run_in(dir.path(), "run", config, &[]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(out.join("constraint.csv")).unwrap();
    assert!(text.starts_with("n,t,g_1,drift\n"));
    let drift = column(&out.join("constraint.csv"), "drift");
    assert_eq!(drift.len(), 201);
    assert!(drift.iter().all(|d| *d <= 1e-10));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for sub in ["run", "reduce"] {
        let config = format!("{DOUBLE_WELL}reduce_r = 3\n");
        let (ca, oa) = run_in(a.path(), sub, &config, &[]);
        let (cb, ob) = run_in(b.path(), sub, &config, &[]);
        assert_eq!((ca, cb), (0, 0));
        let (fa, fb) = (all_files(&oa), all_files(&ob));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{sub}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let (_, out) = run_in(dir.path(), "run", DOUBLE_WELL, &[]);
    let base = fs::read(out.join("trajectory.csv")).unwrap();
    let (_, out) = run_in(dir.path(), "run", &DOUBLE_WELL.replace("seed = 3", "seed = 9"), &[]);
    let nine = fs::read(out.join("trajectory.csv")).unwrap();
    let (code, out) = run_in(dir.path(), "run", DOUBLE_WELL, &["--seed", "9"]);
    assert_eq!(code, 0);
    let flagged = fs::read(out.join("trajectory.csv")).unwrap();
    assert_ne!(base, nine);
    assert_eq!(nine, flagged);
}

#[test]
fn config_errors_exit_2_without_files() {
    for bad in [
        DOUBLE_WELL.replace("N = 40", "N = -5"),
        format!("{DOUBLE_WELL}colour = blue\n"),
        format!("{DOUBLE_WELL}gravity = 2\n"),
        DOUBLE_WELL.replace("k = 1", "k = one"),
        "problem = constrained_pendulum\nT = 1\nN = 4\nu0 = 0, 0, 0, 2, 0\n".to_string(),
    ] {
        let dir = TempDir::new().unwrap();
        let (code, out) = run_in(dir.path(), "run", &bad, &[]);
        assert_eq!(code, 2, "{bad}");
        assert!(!out.exists(), "{bad}");
    }
    // subcommand-specific requirements
    let dir = TempDir::new().unwrap();
    let (code, out) = run_in(dir.path(), "convergence", DOUBLE_WELL, &[]);
    assert_eq!(code, 2);
    assert!(!out.exists());
    let (code, _) = run_in(dir.path(), "reduce", DOUBLE_WELL, &[]);
    assert_eq!(code, 2);
    let missing = binary().args(["run", "--config", "/nonexistent.conf"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3_with_marker() {
    let dir = TempDir::new().unwrap();
    let config = format!("{DOUBLE_WELL}newton_max_iter = 1\n");
    let (code, out) = run_in(dir.path(), "run", &config, &[]);
    assert_eq!(code, 3);
    for file in ["trajectory.csv", "energy.csv"] {
        let text = fs::read_to_string(out.join(file)).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("FAILED,"), "{file}: {last}");
        assert!(text.lines().count() >= 3, "{file} lost the completed steps");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("status,failed"));
}

#[test]
fn convergence_orders_through_cli() {
    let dir = TempDir::new().unwrap();
    let config = "problem = nonlinear_pendulum\nk = 0\nm = 2\nT = 10\nN_list = 25, 50, 100, 200\n";
    let (code, out) = run_in(dir.path(), "convergence", config, &[]);
    assert_eq!(code, 0);
    let rows = read_rows(&out.join("convergence.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[0][3].is_empty());
    for row in &rows[1..] {
        let order: f64 = row[3].parse().unwrap();
        assert!((1.8..=2.2).contains(&order), "{order}");
    }

    let config = "problem = harmonic_oscillator\nk = 1\nm = 2\nT = 10\nN_list = 25, 50, 100, 200\n";
    let (_, out) = run_in(dir.path(), "convergence", config, &[]);
    for row in &read_rows(&out.join("convergence.csv"))[1..] {
        assert!(row[3].parse::<f64>().unwrap() >= 2.8);
    }
}

#[test]
fn single_entry_list_has_empty_order() {
    let dir = TempDir::new().unwrap();
    let config = "problem = harmonic_oscillator\nk = 1\nT = 1\nN_list = 10\n";
    let (code, out) = run_in(dir.path(), "convergence", config, &[]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "N,tau,error,observed_order");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("10,0.1,") && lines[1].ends_with(','));
}

#[test]
fn identity_basis_reproduces_full_run() {
    for config in [
        DOUBLE_WELL.to_string(),
        "problem = constrained_pendulum\nk = 1\nT = 1\nN = 20\n".to_string(),
        "problem = magnetoquasistatics_1d\nn_cells = 6\nsource_amplitude = 1\nk = 1\nT = 0.5\nN = 10\n"
            .to_string(),
        "problem = random_skew_quadratic\nn = 6\nk = 1\nT = 1\nN = 10\n".to_string(),
    ] {
        let dir = TempDir::new().unwrap();
        let (code, out) = run_in(dir.path(), "reduce", &format!("{config}reduce_identity = true\n"), &[]);
        assert_eq!(code, 0, "{config}");
        for file in ["energy.csv", "trajectory.csv"] {
            assert_eq!(
                fs::read(out.join("full").join(file)).unwrap(),
                fs::read(out.join("reduced").join(file)).unwrap(),
                "{config} {file}"
            );
        }
    }
}

#[test]
fn reduce_reports_lifted_energy_and_counterexample() {
    let dir = TempDir::new().unwrap();
    let config = "problem = random_skew_quadratic\nn = 10\nseed = 0\nreduce_r = 4\nk = 1\nm = 2\nT = 10\nN = 50\n";
    let (code, out) = run_in(dir.path(), "reduce", config, &[]);
    assert_eq!(code, 0);
    let reduced = column(&out.join("reduced/energy.csv"), "H");
    assert!(reduced.iter().all(|h| (h - reduced[0]).abs() <= 1e-10));
    let nonstructured = column(&out.join("nonstructured/energy.csv"), "H");
    assert!(nonstructured.iter().any(|h| (h - nonstructured[0]).abs() > 1e-6));
    let lifted = read_rows(&out.join("reduced/trajectory.csv"));
    assert_eq!(lifted[0].len(), 11);
    let basis = fs::read_to_string(out.join("basis.csv")).unwrap();
    assert!(basis.starts_with("10,4\n"));

    let fixture = include_str!("fixtures/counterexample.csv");
    assert_eq!(fs::read_to_string(out.join("counterexample.csv")).unwrap(), fixture);
    let discrepancy: f64 = fixture
        .lines()
        .find_map(|l| l.strip_prefix("relative_discrepancy,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(discrepancy >= 0.1);
}
