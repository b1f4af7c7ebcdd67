//! Runs a sweep over `n2` and writes tables, dumps and a manifest.
//!
//! Output directory layout:
//!
//! - `progress_n2_<N>.csv`: `n,chart,cg_iters,rel_residual` per outer step
//! - `solution_n2_<N>_chart_<j>.fef`: limit of chart `j`
//! - `results.csv`, `results.txt`: one row per `n2`
//! - `manifest.txt`: parameters, timings, `n0`, CG totals and status
//!
//! The manifest and tables are rewritten after every sweep entry so a
//! failure keeps everything finished before it.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;

use crate::analysis::{error_norms, to_csv, to_text_table, NormOptions, TableRow};
use crate::atlas::{make_builtin_atlas, BuiltinAtlas};
use crate::config::ExperimentConfig;
use crate::ddm::DdmSolver;
use crate::error::{Error, Result};
use crate::verify::{compare_with_global, OracleReport};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Bookkeeping for one sweep entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub n2: usize,
    pub n1: usize,
    pub h: f64,
    pub n0: usize,
    pub outer_steps: usize,
    pub cg_total: usize,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub analysis_seconds: f64,
    pub oracle: Option<OracleReport>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentSummary {
    pub rows: Vec<TableRow>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentSummary {
    /// `false` when any oracle comparison failed.
    pub fn oracles_passed(&self) -> bool {
        self.runs.iter().filter_map(|r| r.oracle.as_ref()).all(|o| o.passed())
    }
}

pub fn progress_path(out: &Path, n2: usize) -> PathBuf {
    out.join(format!("progress_n2_{n2}.csv"))
}

pub fn dump_path(out: &Path, n2: usize, chart: usize) -> PathBuf {
    out.join(format!("solution_n2_{n2}_chart_{chart}.fef"))
}

fn write_outputs(cfg: &ExperimentConfig, summary: &ExperimentSummary, status: &str) -> Result<()> {
    fs::write(cfg.out.join("results.csv"), to_csv(&summary.rows))?;
    fs::write(cfg.out.join("results.txt"), to_text_table(&summary.rows))?;
    let mut m = String::new();
    let _ = writeln!(m, "schema_version = {MANIFEST_SCHEMA_VERSION}");
    m.push_str(&cfg.to_text());
    for r in &summary.runs {
        let p = format!("n2_{}", r.n2);
        let _ = writeln!(m, "{p}.n1 = {}", r.n1);
        let _ = writeln!(m, "{p}.h = {}", r.h);
        let _ = writeln!(m, "{p}.n0 = {}", r.n0);
        let _ = writeln!(m, "{p}.outer_steps = {}", r.outer_steps);
        let _ = writeln!(m, "{p}.cg_iterations = {}", r.cg_total);
        let _ = writeln!(m, "{p}.setup_seconds = {:.3}", r.setup_seconds);
        let _ = writeln!(m, "{p}.solve_seconds = {:.3}", r.solve_seconds);
        let _ = writeln!(m, "{p}.analysis_seconds = {:.3}", r.analysis_seconds);
        if let Some(o) = &r.oracle {
            let _ = writeln!(m, "{p}.oracle_discrepancy = {:e}", o.discrepancy);
            let _ = writeln!(m, "{p}.oracle_global_error = {:e}", o.global_error);
            let _ = writeln!(m, "{p}.oracle = {}", if o.passed() { "pass" } else { "fail" });
        }
    }
    let _ = writeln!(m, "status = {status}");
    fs::write(cfg.out.join("manifest.txt"), m)?;
    Ok(())
}

/// Runs every `n2` of the sweep. `report` receives human-readable lines
/// (oracle verdicts, per-run summaries).
pub fn run_experiment(cfg: &ExperimentConfig, mut report: impl FnMut(&str)) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let kind = cfg.atlas_kind()?;
    let atlas = Arc::new(make_builtin_atlas(kind, cfg.b)?);
    fs::create_dir_all(&cfg.out)?;
    let mut summary = ExperimentSummary::default();
    for &n2 in &cfg.n2 {
        match run_one(cfg, kind, &atlas, n2, &mut report) {
            Ok((row, record)) => {
                summary.rows.push(row);
                summary.runs.push(record);
                write_outputs(cfg, &summary, "running")?;
            }
            Err(e) => {
                write_outputs(cfg, &summary, &format!("failed at n2 = {n2}: {e}"))?;
                return Err(e);
            }
        }
    }
    write_outputs(cfg, &summary, "ok")?;
    Ok(summary)
}

fn run_one(
    cfg: &ExperimentConfig,
    kind: BuiltinAtlas,
    atlas: &Arc<crate::atlas::Atlas>,
    n2: usize,
    report: &mut impl FnMut(&str),
) -> Result<(TableRow, RunRecord)> {
    let config = cfg.ddm_config(n2);
    let t0 = Instant::now();
    let solver = DdmSolver::new(atlas.clone(), config.clone())?;
    let setup_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut progress = BufWriter::new(File::create(progress_path(&cfg.out, n2))?);
    writeln!(progress, "n,chart,cg_iters,rel_residual")?;
    let mut io_error = None;
    let outcome = solver.iterate(|record| {
        for line in record.progress_lines() {
            if let Err(e) = writeln!(progress, "{line}") {
                io_error.get_or_insert(e);
            }
        }
    })?;
    progress.flush()?;
    if let Some(e) = io_error {
        return Err(Error::Io(e));
    }
    let cg_total = outcome.total_cg_iterations();
    let outer_steps = outcome.history.len();
    let (state, n0, _) = outcome.into_converged()?;
    let solve_seconds = t1.elapsed().as_secs_f64();
    info!("{}: n2 = {n2}, n0 = {n0}, {cg_total} CG iterations", atlas.name());

    if cfg.dump {
        for (j, u) in state.solutions.iter().enumerate() {
            let mut w = BufWriter::new(File::create(dump_path(&cfg.out, n2, j))?);
            u.write_dump(&mut w)?;
            w.flush()?;
        }
    }

    let t2 = Instant::now();
    let h = solver.grid_scale();
    let row = if atlas.has_exact() {
        let opts = NormOptions::new(config.quadrature_rule(atlas.dim())?, cfg.norms);
        TableRow::from(error_norms(atlas, &state, n0, &opts)?)
    } else {
        TableRow { h, n0, norms: None }
    };
    let oracle = if matches!(kind, BuiltinAtlas::FlatSquare { .. }) {
        let o = compare_with_global(atlas, &state, n0, &config)?;
        report(&o.outcome().to_string());
        Some(o)
    } else {
        None
    };
    let analysis_seconds = t2.elapsed().as_secs_f64();
    report(&format!(
        "{} n2 = {n2}: h = {h}, n0 = {n0}, {cg_total} CG iterations, {:.1} s",
        atlas.name(),
        setup_seconds + solve_seconds + analysis_seconds
    ));
    let record = RunRecord {
        n2,
        n1: config.n1(),
        h,
        n0,
        outer_steps,
        cg_total,
        setup_seconds,
        solve_seconds,
        analysis_seconds,
        oracle,
    };
    Ok((row, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FeFunction;

    fn config(dir: &Path, text: &str) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.apply_text(text).unwrap();
        c.out = dir.to_path_buf();
        c
    }

    #[test]
    fn flat_sweep_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "manifold = flat_square\noverlap = 0.125\nn2 = 8,16");
        let mut lines = Vec::new();
        let summary = run_experiment(&cfg, |l| lines.push(l.to_string())).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert!(summary.oracles_passed());
        assert!(lines.iter().any(|l| l.starts_with("PASS flat_square oracle")));
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.starts_with("schema_version = 1\n"));
        assert!(manifest.contains("status = ok"));
        assert!(manifest.contains("n2_16.n0 = "));
        let dump = File::open(dump_path(dir.path(), 8, 1)).unwrap();
        let u = FeFunction::read_dump(std::io::BufReader::new(dump)).unwrap();
        assert_eq!(u.grid().counts(), vec![5, 8]);
        let progress = fs::read_to_string(progress_path(dir.path(), 8)).unwrap();
        assert!(progress.starts_with("n,chart,cg_iters,rel_residual\n1,0,"));
    }

    #[test]
    fn missing_exact_solution_gives_n0_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "manifold = cp2\nn2 = 5\ndump = false");
        let summary = run_experiment(&cfg, |_| {}).unwrap();
        assert!(summary.rows[0].norms.is_none());
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("4.8e-1,NA,"));
    }

    #[test]
    fn failure_keeps_finished_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "manifold = flat_square\nn2 = 8,16\nmax_outer = 3");
        assert!(run_experiment(&cfg, |_| {}).is_err());
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains("status = failed at n2 = 8"));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let text = "manifold = flat_square\nn2 = 8\ndump = false";
        run_experiment(&config(a.path(), text), |_| {}).unwrap();
        run_experiment(&config(b.path(), &format!("{text}\nworkers = 1")), |_| {}).unwrap();
        let read = |d: &Path| fs::read(d.join("results.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }
}
