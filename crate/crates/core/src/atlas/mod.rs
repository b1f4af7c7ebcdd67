//! Manifolds described as overlapping coordinate charts.
//!
//! Each chart is a d-rectangle `D_i` with a metric field, a nonnegative
//! bump `sigma_i` whose support stays away from the chart's artificial
//! faces, and the set of faces that map onto the physical boundary.
//! Transition maps between charts are partial functions: `None` means the
//! point has no image in the target chart.

mod builtin;

pub use builtin::{make_builtin_atlas, BuiltinAtlas};

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Face, NodeFaces, TensorGrid, LOCATE_TOLERANCE};

/// Scalar field on a chart domain.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Metric field: writes the row-major `d x d` matrix `g_ab(x)` into the buffer.
pub type MetricFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Transition map: writes the image into the buffer, or returns `false`
/// where the closed form is singular.
pub type TransitionFn = Arc<dyn Fn(&[f64], &mut [f64]) -> bool + Send + Sync>;

/// Metric tensor, its inverse and `sqrt(det g)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    dim: usize,
    pub g: Vec<f64>,
    pub g_inv: Vec<f64>,
    pub sqrt_det: f64,
    chol: Vec<f64>,
}

impl MetricSample {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            g: vec![0.0; dim * dim],
            g_inv: vec![0.0; dim * dim],
            sqrt_det: 0.0,
            chol: vec![0.0; dim * dim],
        }
    }

    /// Builds a sample from a row-major matrix.
    pub fn from_matrix(dim: usize, g: &[f64]) -> Result<Self> {
        let mut s = Self::new(dim);
        s.g.copy_from_slice(g);
        s.factor()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Recomputes `g_inv` and `sqrt_det` from `g` via Cholesky.
    pub fn factor(&mut self) -> Result<()> {
        let d = self.dim;
        let g = &self.g;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !scale.is_finite() || scale == 0.0 {
            return Err(Error::NumericDomain(format!("degenerate metric {g:?}")));
        }
        for a in 0..d {
            for b in 0..a {
                if (g[a * d + b] - g[b * d + a]).abs() > 1e-12 * scale {
                    return Err(Error::NumericDomain(format!("asymmetric metric {g:?}")));
                }
            }
        }
        let l = &mut self.chol;
        let mut sqrt_det = 1.0;
        for j in 0..d {
            let mut diag = g[j * d + j];
            for k in 0..j {
                diag -= l[j * d + k] * l[j * d + k];
            }
            if !(diag > 0.0) {
                return Err(Error::NumericDomain(format!(
                    "metric is not positive definite: {g:?}"
                )));
            }
            let ljj = diag.sqrt();
            l[j * d + j] = ljj;
            sqrt_det *= ljj;
            for i in j + 1..d {
                let mut v = g[i * d + j];
                for k in 0..j {
                    v -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = v / ljj;
            }
        }
        // Columns of the inverse by forward/back substitution.
        for col in 0..d {
            let inv = &mut self.g_inv;
            let mut y = [0.0f64; crate::grid::MAX_DIM];
            for i in 0..d {
                let mut v = if i == col { 1.0 } else { 0.0 };
                for k in 0..i {
                    v -= l[i * d + k] * y[k];
                }
                y[i] = v / l[i * d + i];
            }
            for i in (0..d).rev() {
                let mut v = y[i];
                for k in i + 1..d {
                    v -= l[k * d + i] * inv[k * d + col];
                }
                inv[i * d + col] = v / l[i * d + i];
            }
        }
        // Symmetrize the inverse exactly.
        for a in 0..d {
            for b in 0..a {
                let m = 0.5 * (self.g_inv[a * d + b] + self.g_inv[b * d + a]);
                self.g_inv[a * d + b] = m;
                self.g_inv[b * d + a] = m;
            }
        }
        self.sqrt_det = sqrt_det;
        Ok(())
    }
}

/// How many cells a chart axis receives for a given `(N1, N2)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisCount {
    /// `N1` cells (the `[-s, s]` and `[delta, 1]` axes).
    Short,
    /// `N2` cells (the `[-r, r]` axes).
    Long,
    /// `ceil(length * N2)` cells, i.e. spacing at most `1 / N2`.
    PerUnit,
}

impl AxisCount {
    fn cells(self, length: f64, n1: usize, n2: usize) -> usize {
        match self {
            AxisCount::Short => n1,
            AxisCount::Long => n2,
            AxisCount::PerUnit => ((length * n2 as f64) - 1e-9).ceil().max(1.0) as usize,
        }
    }
}

/// Classification of a grid node relative to the manifold boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    PhysicalBoundary,
    ArtificialBoundary,
}

/// One coordinate chart `phi_i: D_i -> M_i`.
#[derive(Clone)]
pub struct Chart {
    name: String,
    bounds: Vec<(f64, f64)>,
    metric: MetricFn,
    sigma: ScalarFn,
    physical_faces: Vec<Face>,
    axis_counts: Vec<AxisCount>,
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chart")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("physical_faces", &self.physical_faces)
            .finish_non_exhaustive()
    }
}

impl Chart {
    pub fn new(
        name: impl Into<String>,
        bounds: Vec<(f64, f64)>,
        metric: MetricFn,
        sigma: ScalarFn,
    ) -> Result<Self> {
        if bounds.is_empty() || bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::invalid("chart bounds must be non-degenerate intervals"));
        }
        let d = bounds.len();
        Ok(Self {
            name: name.into(),
            bounds,
            metric,
            sigma,
            physical_faces: Vec::new(),
            axis_counts: vec![AxisCount::PerUnit; d],
        })
    }

    pub fn with_physical_faces(mut self, faces: Vec<Face>) -> Self {
        self.physical_faces = faces;
        self
    }

    pub fn with_axis_counts(mut self, counts: Vec<AxisCount>) -> Self {
        self.axis_counts = counts;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn physical_faces(&self) -> &[Face] {
        &self.physical_faces
    }

    pub fn axis_counts(&self) -> &[AxisCount] {
        &self.axis_counts
    }

    pub fn is_physical(&self, face: Face) -> bool {
        self.physical_faces.contains(&face)
    }

    /// Faces not mapped to the physical boundary.
    pub fn artificial_faces(&self) -> Vec<Face> {
        (0..self.dim())
            .flat_map(|k| [Face::low(k), Face::high(k)])
            .filter(|f| !self.is_physical(*f))
            .collect()
    }

    pub fn sigma_at(&self, x: &[f64]) -> f64 {
        (self.sigma)(x)
    }

    pub fn metric_at(&self, x: &[f64]) -> Result<MetricSample> {
        let mut s = MetricSample::new(self.dim());
        self.metric_into(x, &mut s)?;
        Ok(s)
    }

    /// Evaluates the metric into a reusable sample.
    pub fn metric_into(&self, x: &[f64], sample: &mut MetricSample) -> Result<()> {
        (self.metric)(x, &mut sample.g);
        sample.factor().map_err(|e| match e {
            Error::NumericDomain(msg) => {
                Error::NumericDomain(format!("chart {} at {x:?}: {msg}", self.name))
            }
            other => other,
        })
    }

    /// Raw metric matrix without validation.
    pub fn metric_matrix(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim() * self.dim()];
        (self.metric)(x, &mut g);
        g
    }

    /// Whether `x` lies in `D_i` up to the location tolerance.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| {
                let tol = LOCATE_TOLERANCE * (hi - lo);
                v >= lo - tol && v <= hi + tol
            })
    }

    pub fn build_grid(&self, n1: usize, n2: usize) -> Result<TensorGrid> {
        let counts: Vec<usize> = self
            .bounds
            .iter()
            .zip(&self.axis_counts)
            .map(|(&(lo, hi), c)| c.cells(hi - lo, n1, n2))
            .collect();
        TensorGrid::uniform(&self.bounds, &counts)
    }

    pub fn classify_faces(&self, faces: NodeFaces) -> NodeKind {
        if faces.is_interior() {
            NodeKind::Interior
        } else if faces.faces().any(|f| self.is_physical(f)) {
            NodeKind::PhysicalBoundary
        } else {
            NodeKind::ArtificialBoundary
        }
    }

    pub fn classify_chart_node(&self, grid: &TensorGrid, node: usize) -> NodeKind {
        let mut index = vec![0; grid.dim()];
        grid.node_index(node, &mut index);
        let mut faces = Vec::new();
        for (k, axis) in grid.axes().iter().enumerate() {
            if index[k] == 0 {
                faces.push(Face::low(k));
            }
            if index[k] == axis.cells() {
                faces.push(Face::high(k));
            }
        }
        if faces.is_empty() {
            NodeKind::Interior
        } else if faces.iter().any(|f| self.is_physical(*f)) {
            NodeKind::PhysicalBoundary
        } else {
            NodeKind::ArtificialBoundary
        }
    }

    pub fn node_kinds(&self, grid: &TensorGrid) -> Vec<NodeKind> {
        grid.classify_nodes()
            .into_iter()
            .map(|f| self.classify_faces(f))
            .collect()
    }
}

/// One term of a partition-of-unity evaluation: chart `chart`, weight
/// `rho_chart`, and the point's coordinates in that chart.
#[derive(Debug, Clone, PartialEq)]
pub struct PouTerm {
    pub chart: usize,
    pub weight: f64,
    pub point: Vec<f64>,
}

/// Nonzero partition-of-unity weights at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PouWeights {
    pub terms: Vec<PouTerm>,
}

impl PouWeights {
    pub fn weight_of(&self, chart: usize) -> f64 {
        self.terms
            .iter()
            .find(|t| t.chart == chart)
            .map_or(0.0, |t| t.weight)
    }

    pub fn sum(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }
}

/// Problem data attached to one chart (all as functions of chart coordinates).
#[derive(Clone)]
pub struct ChartData {
    /// `f o phi_i`.
    pub source: ScalarFn,
    /// Dirichlet datum `phi o phi_i`; required when the chart has physical faces.
    pub boundary: Option<ScalarFn>,
    /// Exact solution `u o phi_i`, if known.
    pub exact: Option<ScalarFn>,
}

/// A decomposed manifold together with the problem `-Δu + bu = f`.
#[derive(Clone)]
pub struct Atlas {
    name: String,
    charts: Vec<Chart>,
    data: Vec<ChartData>,
    transitions: Vec<Option<TransitionFn>>,
    b: f64,
}

impl fmt::Debug for Atlas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Atlas")
            .field("name", &self.name)
            .field("charts", &self.charts)
            .field("b", &self.b)
            .finish_non_exhaustive()
    }
}

/// Programmatic atlas construction.
pub struct AtlasBuilder {
    name: String,
    charts: Vec<Chart>,
    data: Vec<ChartData>,
    transitions: Vec<(usize, usize, TransitionFn)>,
    b: f64,
}

impl AtlasBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            charts: Vec::new(),
            data: Vec::new(),
            transitions: Vec::new(),
            b: 0.0,
        }
    }

    pub fn reaction(mut self, b: f64) -> Self {
        self.b = b;
        self
    }

    /// Adds a chart; ids are assigned in insertion order.
    pub fn chart(mut self, chart: Chart, data: ChartData) -> Self {
        self.charts.push(chart);
        self.data.push(data);
        self
    }

    pub fn transition(mut self, from: usize, to: usize, map: TransitionFn) -> Self {
        self.transitions.push((from, to, map));
        self
    }

    pub fn build(self) -> Result<Atlas> {
        let m = self.charts.len();
        if m == 0 {
            return Err(Error::invalid("an atlas needs at least one chart"));
        }
        let d = self.charts[0].dim();
        if self.charts.iter().any(|c| c.dim() != d) {
            return Err(Error::invalid("all charts must share one dimension"));
        }
        if self.charts.iter().any(|c| c.axis_counts.len() != d) {
            return Err(Error::invalid("axis count policy must cover every axis"));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(Error::invalid(format!("reaction coefficient b = {} must be >= 0", self.b)));
        }
        let closed = self.charts.iter().all(|c| c.physical_faces.is_empty());
        if closed && self.b <= 0.0 {
            return Err(Error::invalid("closed manifolds need b > 0"));
        }
        for (chart, data) in self.charts.iter().zip(&self.data) {
            if !chart.physical_faces.is_empty() && data.boundary.is_none() {
                return Err(Error::InvalidConfig(format!(
                    "chart {} has physical faces but no boundary datum",
                    chart.name
                )));
            }
            if chart.physical_faces.iter().any(|f| f.axis >= d) {
                return Err(Error::invalid("physical face axis out of range"));
            }
        }
        let with_exact = self.data.iter().filter(|d| d.exact.is_some()).count();
        if with_exact != 0 && with_exact != m {
            return Err(Error::invalid("exact solution must be given on all charts or none"));
        }
        let mut transitions: Vec<Option<TransitionFn>> = vec![None; m * m];
        for (i, j, map) in self.transitions {
            if i >= m || j >= m || i == j {
                return Err(Error::invalid(format!("bad transition {i} -> {j}")));
            }
            transitions[i * m + j] = Some(map);
        }
        Ok(Atlas {
            name: self.name,
            charts: self.charts,
            data: self.data,
            transitions,
            b: self.b,
        })
    }
}

impl Atlas {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.charts[0].dim()
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn chart(&self, i: usize) -> &Chart {
        &self.charts[i]
    }

    pub fn chart_count(&self) -> usize {
        self.charts.len()
    }

    pub fn data(&self, i: usize) -> &ChartData {
        &self.data[i]
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn has_boundary(&self) -> bool {
        self.charts.iter().any(|c| !c.physical_faces.is_empty())
    }

    pub fn has_exact(&self) -> bool {
        self.data.iter().all(|d| d.exact.is_some())
    }

    pub fn has_transition(&self, i: usize, j: usize) -> bool {
        i == j || self.transitions[i * self.chart_count() + j].is_some()
    }

    /// Closed-form image of `x` under `phi_j^{-1} o phi_i`, without checking
    /// that it lands in `D_j`.
    pub fn transition_raw(&self, i: usize, j: usize, x: &[f64]) -> Option<Vec<f64>> {
        if i == j {
            return Some(x.to_vec());
        }
        let map = self.transitions[i * self.chart_count() + j].as_ref()?;
        let mut y = vec![0.0; self.dim()];
        if map(x, &mut y) && y.iter().all(|v| v.is_finite()) {
            Some(y)
        } else {
            None
        }
    }

    /// Image of `x in D_i` in `D_j`, or `None` when it is undefined or
    /// lands outside `D_j`. Images within roundoff of a face are clamped.
    pub fn transition_apply(&self, i: usize, j: usize, x: &[f64]) -> Option<Vec<f64>> {
        let mut y = self.transition_raw(i, j, x)?;
        let target = &self.charts[j];
        if !target.contains(&y) {
            return None;
        }
        for (v, &(lo, hi)) in y.iter_mut().zip(target.bounds()) {
            *v = v.clamp(lo, hi);
        }
        Some(y)
    }

    /// Partition-of-unity weights `rho_j(phi_i(x))` for all charts `j`.
    pub fn pou_weights(&self, i: usize, x: &[f64]) -> Result<PouWeights> {
        let mut terms = Vec::new();
        let mut total = 0.0;
        for j in 0..self.chart_count() {
            let Some(y) = self.transition_apply(i, j, x) else {
                continue;
            };
            let raw = self.charts[j].sigma_at(&y);
            if !raw.is_finite() || raw < 0.0 {
                return Err(Error::InvalidData(format!(
                    "sigma of chart {j} is {raw} at {y:?}"
                )));
            }
            if raw > 0.0 {
                total += raw;
                terms.push(PouTerm {
                    chart: j,
                    weight: raw,
                    point: y,
                });
            }
        }
        if total <= 0.0 {
            return Err(Error::UncoveredPoint {
                chart: i,
                point: x.to_vec(),
            });
        }
        for t in &mut terms {
            t.weight /= total;
        }
        Ok(PouWeights { terms })
    }

    /// One grid per chart under the `(N1, N2)` count policy.
    pub fn build_grids(&self, n1: usize, n2: usize) -> Result<Vec<TensorGrid>> {
        self.charts.iter().map(|c| c.build_grid(n1, n2)).collect()
    }
}
