//! Self-checks for atlases and the decomposition solver.
//!
//! The geometric checks sample random points with a seeded generator, so a
//! failing run can be replayed exactly. The flat oracle compares the
//! decomposition limit against one global finite element solve on a grid
//! whose nodes coincide with every chart's nodes.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_load, assemble_operator, DirichletSystem};
use crate::atlas::{make_builtin_atlas, Atlas, BuiltinAtlas, Chart, NodeKind};
use crate::ddm::{DdmConfig, DdmSolver, DdmState};
use crate::error::{Error, Result};
use crate::grid::{FeFunction, Side, TensorGrid};
use crate::quadrature::QuadratureRule;
use crate::solver::{cg_solve, CgOptions};

/// Relative tolerance for metric compatibility.
pub const METRIC_TOLERANCE: f64 = 1e-5;
/// Relative tolerance for transition round trips.
pub const ROUNDTRIP_TOLERANCE: f64 = 1e-10;
/// Absolute tolerance for partition-of-unity sums.
pub const POU_TOLERANCE: f64 = 1e-10;
/// Allowed ratio of oracle discrepancy to the global discretization error.
pub const ORACLE_FACTOR: f64 = 3.0;

/// Result of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, worst: f64, tolerance: f64, samples: usize, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: worst <= tolerance && samples > 0,
            worst,
            tolerance,
            samples,
            detail,
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (tolerance {:.1e}, {} samples)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.samples
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

fn random_point(chart: &Chart, rng: &mut ChaCha8Rng) -> Vec<f64> {
    chart.bounds().iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Draws `(i, x, j)` with `x in D_i` mapped into `D_j`, `j != i`.
fn overlap_samples(atlas: &Atlas, count: usize, seed: u64) -> Vec<(usize, Vec<f64>, usize)> {
    let m = atlas.chart_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    if m < 2 {
        return out;
    }
    let budget = 1000 * count.max(1);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let i = rng.gen_range(0..m);
        let x = random_point(atlas.chart(i), &mut rng);
        let targets: Vec<usize> = (0..m)
            .filter(|&j| j != i && atlas.transition_apply(i, j, &x).is_some())
            .collect();
        if targets.is_empty() {
            continue;
        }
        let j = targets[rng.gen_range(0..targets.len())];
        out.push((i, x, j));
    }
    out
}

/// Central-difference Jacobian of the transition `i -> j` at `x`,
/// row-major `J[a][k] = d y_a / d x_k`.
fn transition_jacobian(atlas: &Atlas, i: usize, j: usize, x: &[f64]) -> Option<Vec<f64>> {
    let d = x.len();
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for k in 0..d {
        let (lo, hi) = atlas.chart(i).bounds()[k];
        let step = 1e-6 * (hi - lo);
        xp[k] = x[k] + step;
        let yp = atlas.transition_raw(i, j, &xp)?;
        xp[k] = x[k] - step;
        let ym = atlas.transition_raw(i, j, &xp)?;
        xp[k] = x[k];
        for a in 0..d {
            jac[a * d + k] = (yp[a] - ym[a]) / (2.0 * step);
        }
    }
    Some(jac)
}

/// Checks `J^T g_j(tau(x)) J = g_i(x)` at random overlap points.
pub fn metric_compatibility(atlas: &Atlas, points: usize, seed: u64) -> CheckOutcome {
    let d = atlas.dim();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut samples = 0;
    let mut failures = 0;
    for (i, x, j) in overlap_samples(atlas, points, seed) {
        let y = atlas.transition_apply(i, j, &x).expect("sampled inside the overlap");
        let Some(jac) = transition_jacobian(atlas, i, j, &x) else {
            failures += 1;
            continue;
        };
        let gi = atlas.chart(i).metric_matrix(&x);
        let gj = atlas.chart(j).metric_matrix(&y);
        let mut diff = 0.0;
        let mut norm = 0.0;
        for a in 0..d {
            for c in 0..d {
                let mut pulled = 0.0;
                for p in 0..d {
                    for q in 0..d {
                        pulled += jac[p * d + a] * gj[p * d + q] * jac[q * d + c];
                    }
                }
                diff += (gi[a * d + c] - pulled).powi(2);
                norm += gi[a * d + c].powi(2);
            }
        }
        let rel = (diff / norm).sqrt();
        samples += 1;
        if !rel.is_finite() || rel > worst {
            worst = if rel.is_finite() { rel } else { f64::INFINITY };
            worst_at = format!("(chart {i} -> {j} at {x:?})");
        }
    }
    if failures > 0 {
        worst = f64::INFINITY;
        worst_at = format!("({failures} points where the difference stencil left the transition domain)");
    }
    // A single chart has no overlap, so there is nothing to check.
    let vacuous = atlas.chart_count() < 2;
    let mut out = CheckOutcome::new(
        format!("{} metric compatibility", atlas.name()),
        worst,
        METRIC_TOLERANCE,
        samples,
        if samples == 0 && !vacuous { "(no overlap points found)".into() } else { worst_at },
    );
    out.passed |= vacuous;
    out
}

/// Checks `tau_{j->i}(tau_{i->j}(x)) = x` at random overlap points.
pub fn transition_roundtrips(atlas: &Atlas, points: usize, seed: u64) -> CheckOutcome {
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut samples = 0;
    for (i, x, j) in overlap_samples(atlas, points, seed) {
        let y = atlas.transition_apply(i, j, &x).expect("sampled inside the overlap");
        let err = match atlas.transition_raw(j, i, &y) {
            Some(back) => {
                let diff: Vec<f64> = back.iter().zip(&x).map(|(a, b)| a - b).collect();
                max_abs(&diff) / max_abs(&x).max(1.0)
            }
            None => f64::INFINITY,
        };
        samples += 1;
        if err > worst {
            worst = err;
            worst_at = format!("(chart {i} -> {j} at {x:?})");
        }
    }
    let vacuous = atlas.chart_count() < 2;
    let mut out = CheckOutcome::new(
        format!("{} transition round trips", atlas.name()),
        worst,
        ROUNDTRIP_TOLERANCE,
        samples,
        worst_at,
    );
    out.passed |= vacuous;
    out
}

/// Checks that the partition-of-unity weights sum to one at random points
/// of every chart. Uncovered points count as failures.
pub fn pou_sum(atlas: &Atlas, points: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = atlas.chart_count();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for _ in 0..points {
        let i = rng.gen_range(0..m);
        let x = random_point(atlas.chart(i), &mut rng);
        let err = match atlas.pou_weights(i, &x) {
            Ok(w) => (w.sum() - 1.0).abs(),
            Err(_) => f64::INFINITY,
        };
        if err > worst {
            worst = err;
            worst_at = format!("(chart {i} at {x:?})");
        }
    }
    CheckOutcome::new(format!("{} partition of unity", atlas.name()), worst, POU_TOLERANCE, points, worst_at)
}

/// Checks that each `sigma_i` vanishes on the artificial faces of `D_i`,
/// so that boundary data never feed back into themselves.
pub fn pou_subordination(atlas: &Atlas, points: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut samples = 0;
    for (i, chart) in atlas.charts().iter().enumerate() {
        let faces = chart.artificial_faces();
        if faces.is_empty() {
            continue;
        }
        for _ in 0..points {
            let face = faces[rng.gen_range(0..faces.len())];
            let mut x = random_point(chart, &mut rng);
            let (lo, hi) = chart.bounds()[face.axis];
            x[face.axis] = if face.side == Side::Low { lo } else { hi };
            let sigma = chart.sigma_at(&x).abs();
            samples += 1;
            if sigma > worst {
                worst = sigma;
                worst_at = format!("(chart {i} at {x:?})");
            }
        }
    }
    let mut out = CheckOutcome::new(format!("{} bump support", atlas.name()), worst, 0.0, samples, worst_at);
    out.passed |= samples == 0;
    out
}

/// One Dirichlet finite element solve on `chart` of `atlas`, using exactly
/// the operations of a decomposition step started from zero. The chart
/// must have no artificial boundary.
pub fn direct_dirichlet_solve(
    atlas: &Atlas,
    chart: usize,
    grid: Arc<TensorGrid>,
    rule: &QuadratureRule,
    cg: &CgOptions,
) -> Result<FeFunction> {
    let c = atlas.chart(chart);
    let data = atlas.data(chart);
    let kinds = c.node_kinds(&grid);
    if kinds.contains(&NodeKind::ArtificialBoundary) {
        return Err(Error::invalid(format!("chart {chart} has artificial boundary nodes")));
    }
    let operator = assemble_operator(c, &grid, atlas.b(), rule)?;
    let load = assemble_load(c, &grid, data.source.as_ref(), rule)?;
    let mask: Vec<bool> = kinds.iter().map(|k| *k != NodeKind::Interior).collect();
    let system = DirichletSystem::new(&operator, &mask)?;
    let mut u = FeFunction::zeros(grid.clone());
    if let Some(phi) = &data.boundary {
        let mut x = vec![0.0; grid.dim()];
        for &node in system.boundary_nodes() {
            grid.node_coords(node, &mut x);
            u.dofs_mut()[node] = phi(&x);
        }
    }
    let rhs = system.rhs(&load, u.dofs())?;
    let x0 = system.gather(u.dofs());
    let (x, report) = cg_solve(system.operator(), &rhs, &x0, cg)?;
    if !report.converged {
        return Err(Error::CgNotConverged {
            chart,
            iterations: report.iterations,
            residual: report.final_relative_residual,
        });
    }
    system.scatter(&x, u.dofs_mut());
    Ok(u)
}

/// Outcome of comparing the decomposition limit with a global solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub h: f64,
    pub n0: usize,
    /// Max nodal `|u_chart - U_global|` over all charts.
    pub discrepancy: f64,
    /// Max nodal `|U_global - u|` against the exact solution.
    pub global_error: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.discrepancy <= ORACLE_FACTOR * self.global_error
    }

    pub fn outcome(&self) -> CheckOutcome {
        let ratio = self.discrepancy / self.global_error;
        let mut out = CheckOutcome::new(
            format!("flat_square oracle h = 1/{}", (1.0 / self.h).round()),
            ratio,
            ORACLE_FACTOR,
            1,
            format!(
                "(discrepancy {:.3e}, global error {:.3e}, n0 {})",
                self.discrepancy, self.global_error, self.n0
            ),
        );
        out.passed = self.passed();
        out
    }
}

/// Runs the two-chart square with `n` cells per unit length and compares
/// the limit against a global solve on the uniform `n x n` grid. An
/// overlap that is a multiple of `1 / n` makes every chart node a global
/// node.
pub fn flat_oracle(overlap: f64, n: usize, config: &DdmConfig) -> Result<OracleReport> {
    let split = Arc::new(make_builtin_atlas(BuiltinAtlas::FlatSquare { overlap }, None)?);
    let config = DdmConfig { n2: n, ..config.clone() };
    let solver = DdmSolver::new(split.clone(), config.clone())?;
    let (state, n0, _) = solver.run()?;
    compare_with_global(&split, &state, n0, &config)
}

/// Compares a converged state on a flat unit-square atlas with one global
/// solve on the uniform `n2 x n2` grid.
pub fn compare_with_global(atlas: &Atlas, state: &DdmState, n0: usize, config: &DdmConfig) -> Result<OracleReport> {
    if atlas.dim() != 2 || !atlas.has_exact() {
        return Err(Error::invalid("the oracle needs a flat unit-square atlas with exact data"));
    }
    let n = config.n2;
    let single = make_builtin_atlas(BuiltinAtlas::FlatSingle, Some(atlas.b()))?;
    let grid = Arc::new(TensorGrid::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[n, n])?);
    let tight = CgOptions {
        tolerance: 1e-12,
        ..config.cg
    };
    let global = direct_dirichlet_solve(&single, 0, grid.clone(), &config.quadrature_rule(2)?, &tight)?;

    let exact = single.data(0).exact.clone().expect("flat data carry the exact solution");
    let mut x = vec![0.0; 2];
    let mut global_error = 0.0f64;
    for node in 0..grid.node_count() {
        grid.node_coords(node, &mut x);
        global_error = global_error.max((global.dofs()[node] - exact(&x)).abs());
    }
    let mut discrepancy = 0.0f64;
    for u in &state.solutions {
        let g = u.grid();
        for node in 0..g.node_count() {
            g.node_coords(node, &mut x);
            discrepancy = discrepancy.max((u.dofs()[node] - global.eval(&x)?).abs());
        }
    }
    Ok(OracleReport {
        h: 1.0 / n as f64,
        n0,
        discrepancy,
        global_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtin(kind: BuiltinAtlas) -> Atlas {
        make_builtin_atlas(kind, None).unwrap()
    }

    #[test]
    fn curved_atlases_pass_geometry_checks() {
        for kind in [
            BuiltinAtlas::B4 { s: 0.4, delta: 0.2, r: 1.2 },
            BuiltinAtlas::B2xS2 { s: 0.6, delta: 0.3, r: 1.2 },
            BuiltinAtlas::Cp2 { r: 1.2 },
        ] {
            let atlas = builtin(kind);
            for check in [
                metric_compatibility(&atlas, 100, 1),
                transition_roundtrips(&atlas, 100, 2),
                pou_sum(&atlas, 200, 3),
                pou_subordination(&atlas, 100, 4),
            ] {
                assert!(check.passed, "{check}");
            }
        }
    }

    #[test]
    fn broken_metric_is_detected() {
        use crate::atlas::{AtlasBuilder, ChartData};
        use crate::grid::Face;
        let one: crate::atlas::ScalarFn = Arc::new(|_: &[f64]| 1.0);
        let data = ChartData {
            source: one.clone(),
            boundary: Some(one.clone()),
            exact: None,
        };
        let metric = |scale: f64| -> crate::atlas::MetricFn { Arc::new(move |_: &[f64], g: &mut [f64]| g[0] = scale) };
        let left = Chart::new("l", vec![(0.0, 0.6)], metric(1.0), one.clone())
            .unwrap()
            .with_physical_faces(vec![Face::low(0)]);
        let right = Chart::new("r", vec![(0.4, 1.0)], metric(2.0), one.clone())
            .unwrap()
            .with_physical_faces(vec![Face::high(0)]);
        let id: crate::atlas::TransitionFn = Arc::new(|x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(x);
            true
        });
        let atlas = AtlasBuilder::new("broken")
            .chart(left, data.clone())
            .chart(right, data)
            .transition(0, 1, id.clone())
            .transition(1, 0, id)
            .build()
            .unwrap();
        let check = metric_compatibility(&atlas, 20, 5);
        assert!(!check.passed);
        assert!(check.to_string().starts_with("FAIL"));
        assert!(transition_roundtrips(&atlas, 20, 5).passed);
    }

    #[test]
    fn single_chart_checks_are_vacuous() {
        let atlas = builtin(BuiltinAtlas::FlatSingle);
        assert!(transition_roundtrips(&atlas, 10, 0).passed);
        assert!(metric_compatibility(&atlas, 10, 0).passed);
        assert!(pou_sum(&atlas, 10, 0).passed);
        assert!(pou_subordination(&atlas, 10, 0).passed);
    }

    #[test]
    fn sampling_is_reproducible() {
        let atlas = builtin(BuiltinAtlas::Cp2 { r: 1.2 });
        assert_eq!(metric_compatibility(&atlas, 20, 9), metric_compatibility(&atlas, 20, 9));
    }

    #[test]
    fn oracle_agrees_on_coarse_grid() {
        let report = flat_oracle(0.125, 8, &DdmConfig::default()).unwrap();
        assert!(report.passed(), "{}", report.outcome());
        assert!(report.global_error > 1e-5);
        assert!(report.discrepancy < 1e-6);
    }

    #[test]
    fn direct_solve_rejects_split_charts() {
        let atlas = builtin(BuiltinAtlas::FlatSquare { overlap: 0.1 });
        let grid = Arc::new(atlas.chart(0).build_grid(4, 10).unwrap());
        let rule = DdmConfig::default().quadrature_rule(2).unwrap();
        assert!(direct_dirichlet_solve(&atlas, 0, grid, &rule, &CgOptions::default()).is_err());
    }
}
