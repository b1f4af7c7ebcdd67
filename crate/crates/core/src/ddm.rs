//! Parallel overlapping Schwarz iteration over the charts of an atlas.
//!
//! Each outer step solves every chart's Dirichlet problem independently.
//! Artificial-boundary values come from the previous iterate through
//! `u_i(xi) = sum_j rho_j(phi_i(xi)) u_j(phi_j^{-1} phi_i(xi))`. Once every
//! chart's warm-started CG is converged on entry the iteration has
//! stabilized; the step before that is `n0`.

use std::sync::Arc;

use log::{debug, info};
use rayon::prelude::*;

use crate::assembly::{assemble_load, assemble_operator, DirichletSystem};
use crate::atlas::{Atlas, NodeKind};
use crate::error::{Error, Result};
use crate::grid::{shape_values, FeFunction, TensorGrid};
use crate::quadrature::{gauss_rule, CoefficientSampling, QuadratureRule};
use crate::solver::{cg_solve, CgOptions};

/// Upper bound on CG-free steps spent letting boundary values settle.
pub const SETTLE_STEPS: usize = 64;

/// Discretization and iteration parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DdmConfig {
    /// Cells along long axes.
    pub n2: usize,
    /// Short-axis cells as a fraction of `n2`.
    pub n1_ratio: f64,
    pub cg: CgOptions,
    pub max_outer: usize,
    /// Thread count; `None` uses the available parallelism capped at the
    /// chart count.
    pub workers: Option<usize>,
    /// Gauss points per axis.
    pub quad_points: usize,
    pub coefficients: CoefficientSampling,
}

impl Default for DdmConfig {
    fn default() -> Self {
        Self {
            n2: 10,
            n1_ratio: 0.4,
            cg: CgOptions::default(),
            max_outer: 500,
            workers: None,
            quad_points: 2,
            coefficients: CoefficientSampling::CellCenter,
        }
    }
}

impl DdmConfig {
    pub fn with_n2(n2: usize) -> Self {
        Self {
            n2,
            ..Self::default()
        }
    }

    /// `round(n1_ratio * n2)`, at least 1.
    pub fn n1(&self) -> usize {
        ((self.n1_ratio * self.n2 as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n2 == 0 {
            return Err(Error::InvalidConfig("n2 must be at least 1".into()));
        }
        if !(self.n1_ratio > 0.0 && self.n1_ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!("n1 ratio must be positive, got {}", self.n1_ratio)));
        }
        if !(self.cg.tolerance > 0.0 && self.cg.tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cg tolerance must be positive, got {}",
                self.cg.tolerance
            )));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidConfig("max outer iterations must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("worker count must be at least 1".into()));
        }
        if self.quad_points < 2 {
            return Err(Error::InvalidConfig("need at least 2 quadrature points per axis".into()));
        }
        Ok(())
    }

    /// Rule used for assembly.
    pub fn quadrature_rule(&self, dim: usize) -> Result<QuadratureRule> {
        Ok(gauss_rule(dim, self.quad_points)?.with_sampling(self.coefficients))
    }
}

/// Interpolation stencil of one artificial-boundary node.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTerm {
    pub chart: usize,
    pub dof: usize,
    pub coeff: f64,
}

/// One chart's discrete problem.
#[derive(Debug)]
pub struct Subproblem {
    chart: usize,
    grid: Arc<TensorGrid>,
    system: DirichletSystem,
    load: Vec<f64>,
    kinds: Vec<NodeKind>,
    physical: Vec<(usize, f64)>,
    artificial: Vec<usize>,
    transfer_ptr: Vec<usize>,
    transfer: Vec<TransferTerm>,
}

impl Subproblem {
    pub fn chart(&self) -> usize {
        self.chart
    }

    pub fn grid(&self) -> &Arc<TensorGrid> {
        &self.grid
    }

    pub fn system(&self) -> &DirichletSystem {
        &self.system
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn node_kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    /// `(node, phi value)` for every physical-boundary node.
    pub fn physical_values(&self) -> &[(usize, f64)] {
        &self.physical
    }

    pub fn artificial_nodes(&self) -> &[usize] {
        &self.artificial
    }

    /// Cached transfer stencil of the `k`-th artificial node.
    pub fn transfer_terms(&self, k: usize) -> &[TransferTerm] {
        &self.transfer[self.transfer_ptr[k]..self.transfer_ptr[k + 1]]
    }

    fn transfer_value(&self, k: usize, previous: &[FeFunction]) -> f64 {
        self.transfer_terms(k)
            .iter()
            .map(|t| t.coeff * previous[t.chart].dofs()[t.dof])
            .sum()
    }
}

/// The tuple `(u_1^n, ..., u_m^n)` with the CG work of step `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdmState {
    pub n: usize,
    pub solutions: Vec<FeFunction>,
    pub inner_iterations: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartStep {
    pub cg_iterations: usize,
    pub relative_residual: f64,
}

/// Diagnostics of one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub charts: Vec<ChartStep>,
    /// Max-norm DOF change from the previous iterate over all charts.
    pub max_change: f64,
    pub all_warm: bool,
}

impl StepRecord {
    /// Lines `n,chart,cg_iters,rel_residual`.
    pub fn progress_lines(&self) -> Vec<String> {
        self.charts
            .iter()
            .enumerate()
            .map(|(j, c)| format!("{},{},{},{:.6e}", self.n, j, c.cg_iterations, c.relative_residual))
            .collect()
    }
}

/// Result of iterating to stabilization, or as far as the budget allowed.
#[derive(Debug, Clone)]
pub struct DdmOutcome {
    pub state: DdmState,
    /// Last outer step before the first CG-free one; `None` if the budget
    /// ran out.
    pub n0: Option<usize>,
    pub history: Vec<StepRecord>,
}

impl DdmOutcome {
    pub fn total_cg_iterations(&self) -> usize {
        self.history
            .iter()
            .flat_map(|r| r.charts.iter().map(|c| c.cg_iterations))
            .sum()
    }

    /// Converts a budget overrun into an error.
    pub fn into_converged(self) -> Result<(DdmState, usize, Vec<StepRecord>)> {
        match self.n0 {
            Some(n0) => Ok((self.state, n0, self.history)),
            None => Err(Error::OuterNotConverged {
                iterations: self.history.len(),
                last_change: self.history.last().map_or(f64::NAN, |r| r.max_change),
                history: self.history.iter().map(|r| r.max_change).collect(),
            }),
        }
    }
}

/// Assembled subproblems plus the thread pool that runs them.
pub struct DdmSolver {
    atlas: Arc<Atlas>,
    config: DdmConfig,
    subproblems: Vec<Subproblem>,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for DdmSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DdmSolver")
            .field("atlas", &self.atlas.name())
            .field("config", &self.config)
            .field("workers", &self.pool.current_num_threads())
            .finish_non_exhaustive()
    }
}

impl DdmSolver {
    /// Builds grids, assembles every chart and caches the boundary transfer.
    pub fn new(atlas: Arc<Atlas>, config: DdmConfig) -> Result<Self> {
        config.validate()?;
        let m = atlas.chart_count();
        let workers = config.workers.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map_or(1, |n| n.get())
                .min(m)
                .max(1)
        });
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
        let (n1, n2) = (config.n1(), config.n2);
        let grids: Vec<Arc<TensorGrid>> = atlas
            .build_grids(n1, n2)?
            .into_iter()
            .map(Arc::new)
            .collect();
        let rule = config.quadrature_rule(atlas.dim())?;
        let subproblems = pool.install(|| {
            (0..m)
                .into_par_iter()
                .map(|i| build_subproblem(&atlas, i, grids[i].clone(), &grids, &rule))
                .collect::<Result<Vec<_>>>()
        })?;
        info!(
            "{}: {} charts, n1 = {n1}, n2 = {n2}, {} nodes, {workers} workers",
            atlas.name(),
            m,
            subproblems.iter().map(|s| s.grid.node_count()).sum::<usize>()
        );
        Ok(Self {
            atlas,
            config,
            subproblems,
            pool,
        })
    }

    pub fn atlas(&self) -> &Arc<Atlas> {
        &self.atlas
    }

    pub fn config(&self) -> &DdmConfig {
        &self.config
    }

    pub fn subproblems(&self) -> &[Subproblem] {
        &self.subproblems
    }

    pub fn grids(&self) -> Vec<Arc<TensorGrid>> {
        self.subproblems.iter().map(|s| s.grid.clone()).collect()
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Largest cell edge over all charts.
    pub fn grid_scale(&self) -> f64 {
        self.subproblems
            .iter()
            .map(|s| s.grid.max_spacing())
            .fold(0.0, f64::max)
    }

    /// `n = 0`: zeros, except physical-boundary nodes which take `phi`.
    pub fn initial_state(&self) -> DdmState {
        let solutions = self
            .subproblems
            .iter()
            .map(|s| {
                let mut u = FeFunction::zeros(s.grid.clone());
                for &(node, v) in &s.physical {
                    u.dofs_mut()[node] = v;
                }
                u
            })
            .collect();
        DdmState {
            n: 0,
            solutions,
            inner_iterations: vec![0; self.subproblems.len()],
        }
    }

    /// Value assigned to artificial node `node` of chart `chart` from `state`.
    pub fn boundary_transfer(&self, state: &DdmState, chart: usize, node: usize) -> Result<f64> {
        let sub = self
            .subproblems
            .get(chart)
            .ok_or_else(|| Error::invalid(format!("no chart {chart}")))?;
        let k = sub
            .artificial
            .binary_search(&node)
            .map_err(|_| Error::invalid(format!("node {node} of chart {chart} is not artificial")))?;
        Ok(sub.transfer_value(k, &state.solutions))
    }

    fn check_state(&self, state: &DdmState) -> Result<()> {
        if state.solutions.len() != self.subproblems.len()
            || state
                .solutions
                .iter()
                .zip(&self.subproblems)
                .any(|(u, s)| u.dofs().len() != s.grid.node_count())
        {
            return Err(Error::invalid("state does not match the subproblems"));
        }
        Ok(())
    }

    fn solve_chart(&self, i: usize, previous: &[FeFunction]) -> Result<(FeFunction, ChartStep)> {
        let sub = &self.subproblems[i];
        let mut u = previous[i].clone();
        {
            let dofs = u.dofs_mut();
            for (k, &node) in sub.artificial.iter().enumerate() {
                dofs[node] = sub.transfer_value(k, previous);
            }
            for &(node, v) in &sub.physical {
                dofs[node] = v;
            }
        }
        let rhs = sub.system.rhs(&sub.load, u.dofs())?;
        let x0 = sub.system.gather(u.dofs());
        let (x, report) = cg_solve(sub.system.operator(), &rhs, &x0, &self.config.cg)?;
        if !report.converged {
            return Err(Error::CgNotConverged {
                chart: i,
                iterations: report.iterations,
                residual: report.final_relative_residual,
            });
        }
        sub.system.scatter(&x, u.dofs_mut());
        let step = ChartStep {
            cg_iterations: report.iterations,
            relative_residual: report.final_relative_residual,
        };
        Ok((u, step))
    }

    fn finish_step(&self, state: &DdmState, results: Vec<(FeFunction, ChartStep)>) -> (DdmState, StepRecord) {
        let mut max_change = 0.0f64;
        for ((u, _), old) in results.iter().zip(&state.solutions) {
            for (a, b) in u.dofs().iter().zip(old.dofs()) {
                max_change = max_change.max((a - b).abs());
            }
        }
        let charts: Vec<ChartStep> = results.iter().map(|r| r.1).collect();
        let all_warm = charts.iter().all(|c| c.cg_iterations == 0);
        let n = state.n + 1;
        let next = DdmState {
            n,
            inner_iterations: charts.iter().map(|c| c.cg_iterations).collect(),
            solutions: results.into_iter().map(|r| r.0).collect(),
        };
        let record = StepRecord {
            n,
            charts,
            max_change,
            all_warm,
        };
        (next, record)
    }

    /// One parallel outer step `n - 1 -> n`.
    pub fn outer_step(&self, state: &DdmState) -> Result<(DdmState, StepRecord)> {
        self.check_state(state)?;
        let previous = &state.solutions;
        let results = self.pool.install(|| {
            (0..self.subproblems.len())
                .into_par_iter()
                .map(|i| self.solve_chart(i, previous))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(self.finish_step(state, results))
    }

    /// Serial outer step visiting charts in `order` (a permutation).
    pub fn outer_step_in_order(&self, state: &DdmState, order: &[usize]) -> Result<(DdmState, StepRecord)> {
        self.check_state(state)?;
        let m = self.subproblems.len();
        let mut seen = vec![false; m];
        if order.len() != m || order.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::invalid("chart order must be a permutation"));
        }
        let mut slots: Vec<Option<(FeFunction, ChartStep)>> = vec![None; m];
        for &i in order {
            slots[i] = Some(self.pool.install(|| self.solve_chart(i, &state.solutions))?);
        }
        Ok(self.finish_step(state, slots.into_iter().map(Option::unwrap).collect()))
    }

    /// Iterates from the initial state until a step needs no CG work, then
    /// keeps taking (CG-free) steps until the boundary values stop changing
    /// or `SETTLE_STEPS` have passed. Work resuming during settling restarts
    /// the search for `n0`. `progress` sees every step as it finishes.
    pub fn iterate(&self, mut progress: impl FnMut(&StepRecord)) -> Result<DdmOutcome> {
        let mut state = self.initial_state();
        let mut history: Vec<StepRecord> = Vec::new();
        let mut first_warm: Option<usize> = None;
        while history.len() < self.config.max_outer {
            let (next, record) = self.outer_step(&state)?;
            debug!(
                "step {}: max change {:.3e}, cg {:?}",
                record.n,
                record.max_change,
                next.inner_iterations
            );
            progress(&record);
            let (warm, settled) = (record.all_warm, record.max_change == 0.0);
            history.push(record);
            state = next;
            if !warm {
                first_warm = None;
                continue;
            }
            let first = *first_warm.get_or_insert(state.n);
            if settled || state.n - first >= SETTLE_STEPS {
                let n0 = first - 1;
                info!("{}: stabilized at n0 = {n0} (settled: {settled})", self.atlas.name());
                return Ok(DdmOutcome {
                    state,
                    n0: Some(n0),
                    history,
                });
            }
        }
        Ok(DdmOutcome {
            state,
            n0: None,
            history,
        })
    }

    /// `iterate` without progress reporting; budget overruns are errors.
    pub fn run(&self) -> Result<(DdmState, usize, Vec<StepRecord>)> {
        self.iterate(|_| {})?.into_converged()
    }
}

fn build_subproblem(
    atlas: &Atlas,
    i: usize,
    grid: Arc<TensorGrid>,
    grids: &[Arc<TensorGrid>],
    rule: &QuadratureRule,
) -> Result<Subproblem> {
    let chart = atlas.chart(i);
    let data = atlas.data(i);
    let operator = assemble_operator(chart, &grid, atlas.b(), rule)?;
    let load = assemble_load(chart, &grid, data.source.as_ref(), rule)?;
    let kinds = chart.node_kinds(&grid);
    let mask: Vec<bool> = kinds.iter().map(|k| *k != NodeKind::Interior).collect();
    let system = DirichletSystem::new(&operator, &mask)?;
    drop(operator);

    let mut physical = Vec::new();
    let mut artificial = Vec::new();
    let mut transfer_ptr = vec![0];
    let mut transfer = Vec::new();
    let mut x = vec![0.0; grid.dim()];
    for (node, kind) in kinds.iter().enumerate() {
        grid.node_coords(node, &mut x);
        match kind {
            NodeKind::Interior => {}
            NodeKind::PhysicalBoundary => {
                let phi = data.boundary.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!("chart {} has physical nodes but no boundary datum", chart.name()))
                })?;
                let v = phi(&x);
                if !v.is_finite() {
                    return Err(Error::InvalidData(format!("boundary datum is {v} at {x:?} in chart {i}")));
                }
                physical.push((node, v));
            }
            NodeKind::ArtificialBoundary => {
                let weights = atlas.pou_weights(i, &x)?;
                for term in &weights.terms {
                    let target = &grids[term.chart];
                    let loc = target.locate_cell(&term.point)?;
                    let shape = shape_values(&loc.local);
                    let mut corners = vec![0; shape.len()];
                    target.cell_corners(&loc.cell, &mut corners);
                    for (&dof, &n) in corners.iter().zip(&shape) {
                        if n != 0.0 {
                            transfer.push(TransferTerm {
                                chart: term.chart,
                                dof,
                                coeff: term.weight * n,
                            });
                        }
                    }
                }
                artificial.push(node);
                transfer_ptr.push(transfer.len());
            }
        }
    }
    Ok(Subproblem {
        chart: i,
        grid,
        system,
        load,
        kinds,
        physical,
        artificial,
        transfer_ptr,
        transfer,
    })
}
