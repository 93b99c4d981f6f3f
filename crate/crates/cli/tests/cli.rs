//! End-to-end tests of the `bbafem` binary: exit codes, file outputs,
//! determinism, and the `table` subcommand.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bbafem"))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bbafem-cli-{}-{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_table_and_is_deterministic() {
    let dir = scratch_dir("run");
    let run = |out: &PathBuf| {
        bin()
            .args(["run", "--problem", "ex1", "--mode", "adaptive", "--max-dofs", "600"])
            .args(["--initial-n", "2", "--out"])
            .arg(out)
            .output()
            .unwrap()
    };
    let first = dir.join("a");
    let out = run(&first);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("fitted rates"));

    let dat = first.join("errors_ex1_adaptive.dat");
    let text = fs::read_to_string(&dat).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dofs error_y error_p error_u est_y est_p_2 est_p_inf eff_index iota fp_iters"
    );
    let mut prev = 0usize;
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields.len(), 10, "row: {line}");
        let dofs: usize = fields[0].parse().unwrap();
        assert!(dofs > prev, "dofs must increase: {line}");
        prev = dofs;
        for f in &fields[1..9] {
            let v: f64 = f.parse().unwrap();
            assert!(v.is_finite() && v > 0.0, "row: {line}");
        }
        rows += 1;
    }
    assert!(rows >= 3);
    assert!(prev >= 600);

    // identical invocation produces byte-identical output
    let second = dir.join("b");
    let out = run(&second);
    assert!(out.status.success());
    let text2 = fs::read(second.join("errors_ex1_adaptive.dat")).unwrap();
    assert_eq!(fs::read(&dat).unwrap(), text2);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn run_exports_meshes_when_asked() {
    let dir = scratch_dir("mesh");
    let out = bin()
        .args(["run", "--problem", "ex1", "--mode", "uniform", "--max-dofs", "100"])
        .args(["--initial-n", "2", "--export-meshes", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(dir.join("ex1_coor_0.dat").exists());
    assert!(dir.join("ex1_elem_0.dat").exists());
    // coordinates are two columns, connectivity three 1-based indices
    let coor = fs::read_to_string(dir.join("ex1_coor_0.dat")).unwrap();
    assert!(coor.lines().all(|l| l.split_whitespace().count() == 2));
    let elem = fs::read_to_string(dir.join("ex1_elem_0.dat")).unwrap();
    let n_vertices = coor.lines().count();
    for line in elem.lines() {
        let ids: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(ids.len(), 3);
        assert!(ids.iter().all(|&v| v >= 1 && v <= n_vertices));
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn run_without_exact_solution_writes_nan_errors() {
    let dir = scratch_dir("ex3");
    let out = bin()
        .args(["run", "--problem", "ex3", "--mode", "adaptive", "--max-dofs", "300"])
        .args(["--initial-n", "2", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = fs::read_to_string(dir.join("errors_ex3_adaptive.dat")).unwrap();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        // error_y error_p error_u eff_index are unavailable for ex3
        for idx in [1, 2, 3, 7] {
            assert_eq!(fields[idx], "nan", "row: {line}");
        }
        // estimators are still real numbers
        for idx in [4, 5, 6, 8] {
            let v: f64 = fields[idx].parse().unwrap();
            assert!(v.is_finite() && v > 0.0, "row: {line}");
        }
    }
    // error rates are n/a but estimator rates are printed
    let log = stdout(&out);
    assert!(log.contains("error_y    n/a"));
    assert!(log.contains("est_y"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn run_rejects_bad_mark_fraction() {
    let dir = scratch_dir("badfrac");
    let out = bin()
        .args(["run", "--problem", "ex1", "--mode", "adaptive", "--max-dofs", "600"])
        .args(["--mark-fraction", "1.5", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("mark-fraction"));
    assert!(!dir.join("errors_ex1_adaptive.dat").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn run_rejects_max_dofs_below_initial_mesh() {
    let dir = scratch_dir("small");
    let out = bin()
        .args(["run", "--problem", "ex1", "--mode", "adaptive", "--max-dofs", "5"])
        .args(["--initial-n", "4", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("max_ndofs"));
    assert!(!dir.join("errors_ex1_adaptive.dat").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unknown_problem_is_a_usage_error() {
    let out = bin()
        .args(["run", "--problem", "ex9", "--mode", "adaptive", "--max-dofs", "600", "--out", "/tmp"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

const HEADER: &str = "dofs error_y error_p error_u est_y est_p_2 est_p_inf eff_index iota fp_iters";

fn synthetic_file(dir: &PathBuf, name: &str, rows: &[(usize, f64)]) -> PathBuf {
    let mut text = String::from(HEADER);
    text.push('\n');
    for &(dofs, ey) in rows {
        text.push_str(&format!(
            "{dofs} {ey:e} 1.0 1.0 1.0 1.0 1.0 1.0 1.0 3\n"
        ));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn table_reports_exact_slope() {
    let dir = scratch_dir("slope");
    // error_y = 10 / dofs: exact log-log slope -1
    let path = synthetic_file(
        &dir,
        "errors_ex1_adaptive.dat",
        &[(10, 1.0), (100, 0.1), (1000, 0.01)],
    );
    let out = bin().arg("table").arg(&path).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let log = stdout(&out);
    assert!(log.contains("error_y    -1.000"), "output: {log}");
    // constant columns fit slope zero
    assert!(log.contains("est_y      +0.000"), "output: {log}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn table_merges_two_files_by_dofs() {
    let dir = scratch_dir("merge");
    let a = synthetic_file(&dir, "errors_ex1_uniform.dat", &[(10, 1.0), (40, 0.25)]);
    let b = synthetic_file(&dir, "errors_ex1_adaptive.dat", &[(10, 1.0), (30, 0.3)]);
    let out = bin().arg("table").arg(&a).arg(&b).output().unwrap();
    assert!(out.status.success());
    let log = stdout(&out);
    assert!(log.contains("error_y[errors_ex1_uniform]"));
    assert!(log.contains("error_y[errors_ex1_adaptive]"));
    // dofs 40 only exists in the first file; the second shows a dash
    let row40 = log.lines().find(|l| l.trim_start().starts_with("40")).unwrap();
    assert!(row40.contains('-'));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn table_rejects_empty_and_malformed_files() {
    let dir = scratch_dir("badtable");
    let empty = dir.join("empty.dat");
    fs::write(&empty, "").unwrap();
    let out = bin().arg("table").arg(&empty).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let headed = dir.join("headed.dat");
    fs::write(&headed, format!("{HEADER}\n")).unwrap();
    let out = bin().arg("table").arg(&headed).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no data rows"));

    let malformed = dir.join("short.dat");
    fs::write(&malformed, format!("{HEADER}\n10 1.0 1.0\n")).unwrap();
    let out = bin().arg("table").arg(&malformed).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("columns"));
    fs::remove_dir_all(&dir).unwrap();
}
