use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use manifold_ddm::analysis::from_csv;
use manifold_ddm::grid::FeFunction;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_manifold-ddm"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("flat.cfg");
    fs::write(&cfg, "# flat self-test\nmanifold = flat_square\noverlap = 0.125\nn2 = 8, 16, 32\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--n2",
        "8",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("PASS flat_square oracle h = 1/8"));
    let rows = from_csv(&fs::read_to_string(out_dir.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].h - 0.125).abs() < 1e-15);

    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("overlap = 0.125\n"));
    assert!(manifest.contains("n2 = 8\n"));
    assert!(manifest.contains("n2_8.oracle = pass"));

    let left = FeFunction::read_dump(BufReader::new(File::open(out_dir.join("solution_n2_8_chart_0.fef")).unwrap())).unwrap();
    assert_eq!(left.grid().counts(), vec![5, 8]);
    let at_center = left.eval(&[0.5, 0.5]).unwrap();
    assert!((at_center - 1.0).abs() < 1e-3, "{at_center}");
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&["run", "--n2", "10"]).status.code(), Some(2), "missing manifold");
    assert_eq!(cli(&["run", "--manifold", "torus"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--manifold", "b4", "--n2", "160"]).status.code(), Some(2));
    assert_eq!(
        cli(&["run", "--manifold", "b4", "--s", "0.1", "--delta", "0.2"]).status.code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "manifold = b4\ncolour = blue\n").unwrap();
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    let out = dir.path().join("out");
    let budget = cli(&[
        "run",
        "--manifold",
        "flat_square",
        "--n2",
        "8",
        "--max-outer",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(budget.status.code(), Some(1), "outer budget exhausted");
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("status = failed at n2 = 8"));
}

fn csv_of(dir: &Path, workers: &str) -> Vec<u8> {
    let out = cli(&[
        "run",
        "--manifold",
        "b4",
        "--n2",
        "10",
        "--workers",
        workers,
        "--no-dump",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    fs::read(dir.join("results.csv")).unwrap()
}

#[test]
fn csv_output_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let first = csv_of(a.path(), "1");
    assert_eq!(first, csv_of(b.path(), "3"));
    assert_eq!(first, csv_of(c.path(), "1"));
}

#[test]
fn table_renders_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("results.csv");
    fs::write(
        &csv,
        "h,linf,linf_order,l2,l2_order,h1,h1_order,energy,energy_order,n0\n\
         2.4e-1,1.049e-1,NA,6.04e-2,NA,3.642e-1,NA,2.278e-1,NA,13\n\
         1.2e-1,2.67e-2,NA,1.77e-2,NA,1.305e-1,NA,7.99e-2,NA,13\n",
    )
    .unwrap();
    let out = cli(&["table", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    let last = text.lines().last().unwrap();
    assert!(last.contains("0.0267") && last.contains("2.0") && last.contains("1.5"), "{text}");
    assert_eq!(cli(&["table", dir.path().join("missing.csv").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn verify_suites() {
    let out = cli(&["verify", "--suite", "transitions", "--points", "50"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
    assert_eq!(cli(&["verify", "--manifold", "klein"]).status.code(), Some(2));
}
