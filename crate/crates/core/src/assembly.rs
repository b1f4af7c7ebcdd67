//! Per-chart Galerkin assembly of
//! `a_i(w, v) = ∫ (g^{ab} ∂_a w ∂_b v + b w v) sqrt(G) dx` and
//! `(f, v)_i = ∫ f v sqrt(G) dx`, plus Dirichlet elimination.
//!
//! Cells are axis-aligned boxes, so reference gradients map to physical
//! ones by a per-axis scaling. Coefficients are sampled as the rule's
//! [`CoefficientSampling`](crate::quadrature::CoefficientSampling) says. Matrix assembly processes cells in slabs
//! along the last axis: even slabs first, then odd ones. Slabs of equal
//! parity write disjoint row ranges, and within a slab cells are visited
//! in index order, so the result is bit-identical for any thread count.

use rayon::prelude::*;

use crate::atlas::{Chart, MetricSample};
use crate::error::{Error, Result};
use crate::grid::{shape_gradients_into, shape_values_into, TensorGrid};
use crate::quadrature::QuadratureRule;
use crate::sparse::CsrMatrix;

/// Shape values and reference gradients tabulated at quadrature points.
struct Tabulation {
    corners: usize,
    values: Vec<f64>,
    gradients: Vec<f64>,
}

impl Tabulation {
    fn new(rule: &QuadratureRule) -> Self {
        let d = rule.dim();
        let corners = 1 << d;
        let mut values = vec![0.0; rule.len() * corners];
        let mut gradients = vec![0.0; rule.len() * corners * d];
        for q in 0..rule.len() {
            shape_values_into(rule.point(q), &mut values[q * corners..(q + 1) * corners]);
            shape_gradients_into(
                rule.point(q),
                &mut gradients[q * corners * d..(q + 1) * corners * d],
            );
        }
        Self {
            corners,
            values,
            gradients,
        }
    }
}

fn check_dims(chart: &Chart, grid: &TensorGrid, rule: &QuadratureRule) -> Result<()> {
    if chart.dim() != grid.dim() || rule.dim() != grid.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: chart {}, grid {}, rule {}",
            chart.dim(),
            grid.dim(),
            rule.dim()
        )));
    }
    Ok(())
}

/// CSR pattern of the `3^d` nearest-neighbor stencil with zero values.
pub fn stencil_pattern(grid: &TensorGrid) -> CsrMatrix {
    let d = grid.dim();
    let n = grid.node_count();
    let counts = grid.counts();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    let mut index = vec![0; d];
    let mut lo = vec![0; d];
    let mut span = vec![0; d];
    let mut nb = vec![0; d];
    for id in 0..n {
        grid.node_index(id, &mut index);
        let mut total = 1;
        for k in 0..d {
            lo[k] = index[k].saturating_sub(1);
            span[k] = (index[k] + 1).min(counts[k]) - lo[k] + 1;
            total *= span[k];
        }
        for mut t in 0..total {
            for k in 0..d {
                nb[k] = lo[k] + t % span[k];
                t /= span[k];
            }
            col_idx.push(grid.node_id(&nb));
        }
        row_ptr.push(col_idx.len());
    }
    let nnz = col_idx.len();
    CsrMatrix::from_parts(n, n, row_ptr, col_idx, vec![0.0; nnz])
        .expect("stencil pattern is consistent")
}

/// Scratch space for one cell's element matrix.
struct ElementWork {
    x: Vec<f64>,
    h: Vec<f64>,
    metric: MetricSample,
    grad: Vec<f64>,
    flux: Vec<f64>,
    local: Vec<f64>,
    cell: Vec<usize>,
    row_index: Vec<usize>,
    row_stride: Vec<usize>,
    row_lo: Vec<usize>,
}

impl ElementWork {
    fn new(d: usize) -> Self {
        let corners = 1 << d;
        Self {
            x: vec![0.0; d],
            h: vec![0.0; d],
            metric: MetricSample::new(d),
            grad: vec![0.0; corners * d],
            flux: vec![0.0; corners * d],
            local: vec![0.0; corners * corners],
            cell: vec![0; d],
            row_index: vec![0; d],
            row_stride: vec![0; d],
            row_lo: vec![0; d],
        }
    }
}

/// Element matrix of cell `self.cell` into `work.local` (symmetric, exact).
fn element_matrix(
    chart: &Chart,
    grid: &TensorGrid,
    b: f64,
    rule: &QuadratureRule,
    tab: &Tabulation,
    work: &mut ElementWork,
) -> Result<()> {
    let d = grid.dim();
    let nc = tab.corners;
    let mut vol = 1.0;
    for k in 0..d {
        work.h[k] = grid.axis(k).spacing(work.cell[k]);
        vol *= work.h[k];
    }
    work.local.fill(0.0);
    for q in 0..rule.len() {
        if q == 0 || !rule.samples_once() {
            let p = rule.coefficient_point(q);
            for k in 0..d {
                work.x[k] = grid.axis(k).points()[work.cell[k]] + p[k] * work.h[k];
            }
            chart.metric_into(&work.x, &mut work.metric)?;
        }
        let wt = rule.weights()[q] * vol * work.metric.sqrt_det;
        let vals = &tab.values[q * nc..(q + 1) * nc];
        let rg = &tab.gradients[q * nc * d..(q + 1) * nc * d];
        for c in 0..nc {
            for k in 0..d {
                work.grad[c * d + k] = rg[c * d + k] / work.h[k];
            }
        }
        let ginv = &work.metric.g_inv;
        for c in 0..nc {
            for l in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += work.grad[c * d + k] * ginv[k * d + l];
                }
                work.flux[c * d + l] = acc;
            }
        }
        for a in 0..nc {
            for bb in a..nc {
                let mut s = 0.0;
                for l in 0..d {
                    s += work.flux[a * d + l] * work.grad[bb * d + l];
                }
                work.local[a * nc + bb] += wt * (s + b * vals[a] * vals[bb]);
            }
        }
    }
    for a in 0..nc {
        for bb in 0..a {
            work.local[a * nc + bb] = work.local[bb * nc + a];
        }
    }
    Ok(())
}

/// Stiffness-plus-mass operator of chart `chart` on `grid`.
pub fn assemble_operator(
    chart: &Chart,
    grid: &TensorGrid,
    b: f64,
    rule: &QuadratureRule,
) -> Result<CsrMatrix> {
    check_dims(chart, grid, rule)?;
    let d = grid.dim();
    let tab = Tabulation::new(rule);
    let mut matrix = stencil_pattern(grid);
    let row_ptr = matrix.row_ptr().to_vec();
    let counts = grid.counts();
    let last = d - 1;
    let slabs = counts[last];
    let layer = grid.node_strides()[last];
    let cells_per_slab = grid.cell_count() / slabs;

    for parity in 0..2 {
        // Carve the value array into disjoint per-slab row ranges.
        let mut jobs = Vec::new();
        {
            let values = matrix.values_mut();
            let start = row_ptr[(parity * layer).min(grid.node_count())];
            let mut rest = &mut values[start..];
            let mut offset = start;
            let mut k = parity;
            while k < slabs {
                let end = row_ptr[((k + 2) * layer).min(grid.node_count())];
                let (chunk, tail) = rest.split_at_mut(end - offset);
                jobs.push((k, offset, chunk));
                rest = tail;
                offset = end;
                k += 2;
            }
        }
        jobs.into_par_iter().try_for_each(|(slab, offset, chunk)| -> Result<()> {
            let mut work = ElementWork::new(d);
            let nc = tab.corners;
            for c in slab * cells_per_slab..(slab + 1) * cells_per_slab {
                grid.cell_index(c, &mut work.cell);
                element_matrix(chart, grid, b, rule, &tab, &mut work)?;
                for a in 0..nc {
                    // Row node of corner `a` and its clipped stencil box.
                    let mut stride = 1;
                    for k in 0..d {
                        let idx = work.cell[k] + (a >> k & 1);
                        work.row_index[k] = idx;
                        work.row_lo[k] = idx.saturating_sub(1);
                        work.row_stride[k] = stride;
                        stride *= (idx + 1).min(counts[k]) - work.row_lo[k] + 1;
                    }
                    let row = grid.node_id(&work.row_index);
                    let base = row_ptr[row] - offset;
                    for bb in 0..nc {
                        let mut pos = 0;
                        for k in 0..d {
                            pos += (work.cell[k] + (bb >> k & 1) - work.row_lo[k]) * work.row_stride[k];
                        }
                        chunk[base + pos] += work.local[a * nc + bb];
                    }
                }
            }
            Ok(())
        })?;
    }
    Ok(matrix)
}

/// Load vector `(f, phi_xi)_i` for every node.
pub fn assemble_load(
    chart: &Chart,
    grid: &TensorGrid,
    f: &(dyn Fn(&[f64]) -> f64 + Send + Sync),
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    check_dims(chart, grid, rule)?;
    let d = grid.dim();
    let tab = Tabulation::new(rule);
    let nc = tab.corners;
    let mut load = vec![0.0; grid.node_count()];
    let mut work = ElementWork::new(d);
    let mut corners = vec![0; nc];
    for c in 0..grid.cell_count() {
        grid.cell_index(c, &mut work.cell);
        grid.cell_corners(&work.cell, &mut corners);
        let mut vol = 1.0;
        for k in 0..d {
            work.h[k] = grid.axis(k).spacing(work.cell[k]);
            vol *= work.h[k];
        }
        let mut coeff = 0.0;
        for q in 0..rule.len() {
            if q == 0 || !rule.samples_once() {
                let p = rule.coefficient_point(q);
                for k in 0..d {
                    work.x[k] = grid.axis(k).points()[work.cell[k]] + p[k] * work.h[k];
                }
                chart.metric_into(&work.x, &mut work.metric)?;
                let fv = f(&work.x);
                if !fv.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "source is {fv} at {:?} in chart {}",
                        work.x,
                        chart.name()
                    )));
                }
                coeff = work.metric.sqrt_det * fv;
            }
            let wt = rule.weights()[q] * vol * coeff;
            for (a, &node) in corners.iter().enumerate() {
                load[node] += wt * tab.values[q * nc + a];
            }
        }
    }
    Ok(load)
}

/// Interior system obtained by eliminating prescribed boundary DOFs:
/// `A_II x = load_I - A_IB g_B`.
#[derive(Debug, Clone)]
pub struct DirichletSystem {
    interior: Vec<usize>,
    boundary: Vec<usize>,
    interior_index: Vec<Option<usize>>,
    a_ii: CsrMatrix,
    a_ib: CsrMatrix,
}

impl DirichletSystem {
    /// `boundary[node]` marks prescribed nodes.
    pub fn new(a: &CsrMatrix, boundary: &[bool]) -> Result<Self> {
        let n = a.rows();
        if boundary.len() != n || a.cols() != n {
            return Err(Error::invalid("boundary mask does not match operator size"));
        }
        let mut interior_index = vec![None; n];
        let mut interior = Vec::new();
        let mut bnodes = Vec::new();
        for (node, &is_b) in boundary.iter().enumerate() {
            if is_b {
                bnodes.push(node);
            } else {
                interior_index[node] = Some(interior.len());
                interior.push(node);
            }
        }
        if interior.is_empty() {
            return Err(Error::invalid("no interior degrees of freedom"));
        }
        let mut ii_ptr = vec![0];
        let mut ii_col = Vec::new();
        let mut ii_val = Vec::new();
        let mut ib_ptr = vec![0];
        let mut ib_col = Vec::new();
        let mut ib_val = Vec::new();
        for &node in &interior {
            let (cols, vals) = a.row(node);
            for (&c, &v) in cols.iter().zip(vals) {
                match interior_index[c] {
                    Some(j) => {
                        ii_col.push(j);
                        ii_val.push(v);
                    }
                    None => {
                        ib_col.push(c);
                        ib_val.push(v);
                    }
                }
            }
            ii_ptr.push(ii_col.len());
            ib_ptr.push(ib_col.len());
        }
        let m = interior.len();
        Ok(Self {
            a_ii: CsrMatrix::from_parts(m, m, ii_ptr, ii_col, ii_val)?,
            a_ib: CsrMatrix::from_parts(m, n, ib_ptr, ib_col, ib_val)?,
            interior,
            boundary: bnodes,
            interior_index,
        })
    }

    pub fn operator(&self) -> &CsrMatrix {
        &self.a_ii
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    /// `-A_IB g_B` for full-length nodal values (interior entries ignored).
    pub fn coupling(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.a_ib.spmv(values)?;
        for v in &mut out {
            *v = -*v;
        }
        Ok(out)
    }

    /// Reduced right-hand side from a full load vector and nodal values.
    pub fn rhs(&self, load: &[f64], values: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.coupling(values)?;
        for (r, &node) in rhs.iter_mut().zip(&self.interior) {
            *r += load[node];
        }
        Ok(rhs)
    }

    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&n| values[n]).collect()
    }

    pub fn scatter(&self, x: &[f64], values: &mut [f64]) {
        for (&node, &v) in self.interior.iter().zip(x) {
            values[node] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{make_builtin_atlas, BuiltinAtlas, MetricFn};
    use crate::quadrature::gauss_rule;
    use std::sync::Arc;

    fn flat_chart(bounds: Vec<(f64, f64)>) -> Chart {
        let d = bounds.len();
        let metric: MetricFn = Arc::new(move |_x: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            for k in 0..d {
                g[k * d + k] = 1.0;
            }
        });
        Chart::new("flat", bounds, metric, Arc::new(|_: &[f64]| 1.0)).unwrap()
    }

    #[test]
    fn one_dimensional_stiffness() {
        let chart = flat_chart(vec![(0.0, 1.0)]);
        let grid = TensorGrid::uniform(&[(0.0, 1.0)], &[2]).unwrap();
        let a = assemble_operator(&chart, &grid, 0.0, &gauss_rule(1, 2).unwrap()).unwrap();
        assert_eq!(a.get(1, 0), -2.0);
        assert_eq!(a.get(1, 1), 4.0);
        assert_eq!(a.get(1, 2), -2.0);
        assert_eq!(a.get(0, 0), 2.0);
    }

    #[test]
    fn one_dimensional_load_and_dirichlet() {
        let chart = flat_chart(vec![(0.0, 1.0)]);
        let rule = gauss_rule(1, 2).unwrap();
        let one = TensorGrid::uniform(&[(0.0, 1.0)], &[1]).unwrap();
        let load = assemble_load(&chart, &one, &|_| 1.0, &rule).unwrap();
        assert_eq!(load, vec![0.5, 0.5]);

        let grid = TensorGrid::uniform(&[(0.0, 1.0)], &[2]).unwrap();
        let a = assemble_operator(&chart, &grid, 0.0, &rule).unwrap();
        let load = assemble_load(&chart, &grid, &|_| 1.0, &rule).unwrap();
        let sys = DirichletSystem::new(&a, &[true, false, true]).unwrap();
        assert_eq!(sys.operator().rows(), 1);
        assert_eq!(sys.operator().get(0, 0), 4.0);
        let rhs = sys.rhs(&load, &[0.0; 3]).unwrap();
        assert_eq!(rhs, vec![0.5]);
        assert_eq!(sys.coupling(&[0.0; 3]).unwrap(), vec![0.0]);
        assert_eq!(rhs[0] / sys.operator().get(0, 0), 0.125);
    }

    #[test]
    fn dirichlet_rejects_empty_interior() {
        let a = CsrMatrix::identity(2);
        assert!(DirichletSystem::new(&a, &[true, true]).is_err());
        assert!(DirichletSystem::new(&a, &[true]).is_err());
    }

    #[test]
    fn interior_rows_are_copied_unchanged() {
        let chart = flat_chart(vec![(0.0, 1.0); 2]);
        let grid = TensorGrid::uniform(&[(0.0, 1.0); 2], &[4, 4]).unwrap();
        let a = assemble_operator(&chart, &grid, 1.0, &gauss_rule(2, 2).unwrap()).unwrap();
        let mask: Vec<bool> = grid.classify_nodes().iter().map(|t| !t.is_interior()).collect();
        let sys = DirichletSystem::new(&a, &mask).unwrap();
        // Node (2,2) has only interior neighbors.
        let node = grid.node_id(&[2, 2]);
        let row = sys.interior_index(node).unwrap();
        let (cols, vals) = sys.operator().row(row);
        let (full_cols, full_vals) = a.row(node);
        assert_eq!(vals, full_vals);
        assert_eq!(
            cols.iter().map(|&c| sys.interior_nodes()[c]).collect::<Vec<_>>(),
            full_cols
        );
    }

    #[test]
    fn flat_zero_reaction_kills_constants() {
        let chart = flat_chart(vec![(0.0, 1.0), (-1.0, 2.0), (0.5, 0.75)]);
        let grid = TensorGrid::uniform(chart.bounds(), &[3, 5, 2]).unwrap();
        let a = assemble_operator(&chart, &grid, 0.0, &gauss_rule(3, 2).unwrap()).unwrap();
        let y = a.spmv(&vec![1.0; grid.node_count()]).unwrap();
        let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(y.iter().all(|v| v.abs() <= 1e-12 * scale));
        assert_eq!(a.symmetry_defect(), 0.0);
    }

    #[test]
    fn load_sums_to_volume() {
        let chart = flat_chart(vec![(0.0, 0.6), (0.0, 1.0)]);
        let grid = TensorGrid::uniform(chart.bounds(), &[5, 8]).unwrap();
        let load = assemble_load(&chart, &grid, &|_| 1.0, &gauss_rule(2, 2).unwrap()).unwrap();
        assert!((load.iter().sum::<f64>() - 0.6).abs() < 1e-12);
        let zero = assemble_load(&chart, &grid, &|_| 0.0, &gauss_rule(2, 2).unwrap()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let nan = assemble_load(&chart, &grid, &|_| f64::NAN, &gauss_rule(2, 2).unwrap());
        assert!(matches!(nan, Err(Error::InvalidData(_))));
    }

    #[test]
    fn stencil_has_at_most_3_pow_d_entries() {
        let grid = TensorGrid::uniform(&[(0.0, 1.0); 3], &[3, 4, 2]).unwrap();
        let p = stencil_pattern(&grid);
        for i in 0..p.rows() {
            let (cols, _) = p.row(i);
            assert!(cols.len() <= 27);
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
        let interior = grid.node_id(&[1, 1, 1]);
        assert_eq!(p.row(interior).0.len(), 27);
    }

    /// Matches a brute-force dense assembly, cell by cell.
    #[test]
    fn matches_dense_reference_on_curved_chart() {
        let atlas = make_builtin_atlas(BuiltinAtlas::B4 { s: 0.4, delta: 0.2, r: 1.2 }, None).unwrap();
        let chart = atlas.chart(1);
        let grid = TensorGrid::uniform(chart.bounds(), &[2, 2, 3, 2]).unwrap();
        let rule = gauss_rule(4, 2).unwrap();
        let a = assemble_operator(chart, &grid, 0.7, &rule).unwrap();
        let n = grid.node_count();
        let mut dense = vec![0.0; n * n];
        let mut cell = vec![0; 4];
        let mut corners = vec![0; 16];
        for c in 0..grid.cell_count() {
            grid.cell_index(c, &mut cell);
            grid.cell_corners(&cell, &mut corners);
            let h: Vec<f64> = (0..4).map(|k| grid.axis(k).spacing(cell[k])).collect();
            for q in 0..rule.len() {
                let p = rule.point(q);
                let x: Vec<f64> = (0..4).map(|k| grid.axis(k).points()[cell[k]] + p[k] * h[k]).collect();
                let m = chart.metric_at(&x).unwrap();
                let w = rule.weights()[q] * h.iter().product::<f64>() * m.sqrt_det;
                let vals = crate::grid::shape_values(p);
                let grads = crate::grid::shape_gradients(p);
                for i in 0..16 {
                    for j in 0..16 {
                        let mut s = 0.0;
                        for k in 0..4 {
                            for l in 0..4 {
                                s += grads[i * 4 + k] / h[k] * m.g_inv[k * 4 + l] * grads[j * 4 + l] / h[l];
                            }
                        }
                        dense[corners[i] * n + corners[j]] += w * (s + 0.7 * vals[i] * vals[j]);
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let want = dense[i * n + j];
                assert!((a.get(i, j) - want).abs() <= 1e-12 * (1.0 + want.abs()), "({i},{j})");
            }
        }
        assert_eq!(a.symmetry_defect(), 0.0);
    }

    #[test]
    fn thread_count_does_not_change_matrix() {
        let atlas = make_builtin_atlas(BuiltinAtlas::B4 { s: 0.4, delta: 0.2, r: 1.2 }, None).unwrap();
        let chart = atlas.chart(2);
        let grid = chart.build_grid(3, 6).unwrap();
        let rule = gauss_rule(4, 2).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| assemble_operator(chart, &grid, 0.0, &rule).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
