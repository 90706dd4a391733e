use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dirac_afem::cli::CSV_HEADER;

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirac-afem")).args(args).current_dir(dir).output().unwrap()
}

#[test]
fn run_rates_and_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ex2.cfg"), "# small run\npreset = example2\nmax_ndof = 3e3\nout = ex2.csv\n").unwrap();

    let out = bin(&["run", "ex2.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ex2.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 5);
    assert!(!csv.contains('\r'));
    assert!(rows.iter().all(|r| r.split(',').count() == CSV_HEADER.split(',').count()));

    let out = bin(&["rates", "ex2.csv", "eocp", "4"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let slope: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(slope < 0.0 && slope > -1.5, "{slope}");

    let out = bin(&["plot", "ex2.csv", "ex2.svg"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(dir.path().join("ex2.svg")).unwrap().contains("<svg "));
}

#[test]
fn data_only_preset_leaves_error_columns_empty() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ex1.cfg"), "preset = example1\nmax_iter = 1\n").unwrap();
    let out = bin(&["run", "ex1.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("example1.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.ends_with(",,,,,"), "{row}");
}

#[test]
fn config_and_io_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "preset = example2\ntheta = 1.5\n").unwrap();
    let out = bin(&["run", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(bin(&["run", "missing.cfg"], dir.path()).status.code(), Some(1));
    assert_eq!(bin(&["rates", "missing.csv", "eocp", "3"], dir.path()).status.code(), Some(1));
}

#[test]
fn rates_rejects_short_windows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("t.csv"), format!("{CSV_HEADER}\n0,10,4,1,1,1,1,,,,,\n1,20,8,0.5,0.5,0.5,1,,,,,\n")).unwrap();
    assert_eq!(bin(&["rates", "t.csv", "eocp", "2"], dir.path()).status.code(), Some(1));
    assert_eq!(bin(&["rates", "t.csv", "eocp", "5"], dir.path()).status.code(), Some(1));
}
