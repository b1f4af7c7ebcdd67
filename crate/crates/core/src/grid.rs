//! Tensor-product grids on d-rectangles and the multilinear finite element
//! space over them.
//!
//! Nodes and cells are numbered lexicographically with axis 0 varying
//! fastest. Corners of a cell are numbered by a bitmask: bit `k` set means
//! the corner sits on the upper end of the cell along axis `k`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Relative tolerance (times axis length) for treating a point as inside.
pub const LOCATE_TOLERANCE: f64 = 1e-12;

/// Upper bound on the supported dimension (face tags are packed in a `u32`).
pub const MAX_DIM: usize = 16;

/// Breakpoints `c_0 < c_1 < ... < c_N` along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisPartition {
    points: Vec<f64>,
}

impl AxisPartition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("an axis partition needs at least 2 points"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("axis partition points must be finite"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("axis partition points must be strictly increasing"));
        }
        Ok(Self { points })
    }

    /// `cells + 1` equally spaced points spanning `[low, high]`.
    pub fn uniform(low: f64, high: f64, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::invalid("cell count must be at least 1"));
        }
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(Error::invalid(format!("degenerate interval [{low}, {high}]")));
        }
        let len = high - low;
        let mut points: Vec<f64> = (0..=cells)
            .map(|k| low + len * (k as f64) / (cells as f64))
            .collect();
        points[cells] = high;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of cells `N`.
    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn low(&self) -> f64 {
        self.points[0]
    }

    pub fn high(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.high() - self.low()
    }

    pub fn spacing(&self, cell: usize) -> f64 {
        self.points[cell + 1] - self.points[cell]
    }

    pub fn max_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Cell index (0-based) and local coordinate in `[0, 1]`.
    ///
    /// Interior breakpoints resolve to the lower cell (local = 1); points
    /// within the tolerance outside the axis are clamped onto it.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let tol = LOCATE_TOLERANCE * self.length();
        if !x.is_finite() || x < self.low() - tol || x > self.high() + tol {
            return None;
        }
        let x = x.clamp(self.low(), self.high());
        let n = self.cells();
        let cell = self.points[1..].partition_point(|&p| p < x).min(n - 1);
        let local = ((x - self.points[cell]) / self.spacing(cell)).clamp(0.0, 1.0);
        Some((cell, local))
    }
}

/// Which side of an axis a face lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Low,
    High,
}

/// A face of a d-rectangle: `x_axis = low` or `x_axis = high`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn low(axis: usize) -> Self {
        Self { axis, side: Side::Low }
    }

    pub fn high(axis: usize) -> Self {
        Self { axis, side: Side::High }
    }

    fn bit(self) -> u32 {
        1 << (2 * self.axis + usize::from(self.side == Side::High))
    }
}

/// The set of faces a node lies on, packed as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeFaces(u32);

impl NodeFaces {
    pub fn is_interior(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, face: Face) -> bool {
        self.0 & face.bit() != 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn faces(self) -> impl Iterator<Item = Face> {
        (0..MAX_DIM).flat_map(move |axis| {
            [Face::low(axis), Face::high(axis)]
                .into_iter()
                .filter(move |f| self.contains(*f))
        })
    }

    fn insert(&mut self, face: Face) {
        self.0 |= face.bit();
    }
}

/// Point location result: 0-based cell multi-index and reference coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLocation {
    pub cell: Vec<usize>,
    pub local: Vec<f64>,
}

/// Tensor-product grid over a d-rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    axes: Vec<AxisPartition>,
    node_strides: Vec<usize>,
    cell_strides: Vec<usize>,
    node_count: usize,
    cell_count: usize,
}

impl TensorGrid {
    pub fn new(axes: Vec<AxisPartition>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(Error::invalid(format!(
                "grid dimension must be between 1 and {MAX_DIM}"
            )));
        }
        let mut node_strides = Vec::with_capacity(axes.len());
        let mut cell_strides = Vec::with_capacity(axes.len());
        let (mut nodes, mut cells) = (1usize, 1usize);
        for axis in &axes {
            node_strides.push(nodes);
            cell_strides.push(cells);
            nodes = nodes
                .checked_mul(axis.cells() + 1)
                .ok_or_else(|| Error::invalid("grid too large"))?;
            cells *= axis.cells();
        }
        Ok(Self {
            axes,
            node_strides,
            cell_strides,
            node_count: nodes,
            cell_count: cells,
        })
    }

    pub fn uniform(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        if bounds.len() != counts.len() {
            return Err(Error::invalid("bounds and counts differ in length"));
        }
        let axes = bounds
            .iter()
            .zip(counts)
            .map(|(&(lo, hi), &n)| AxisPartition::uniform(lo, hi, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[AxisPartition] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &AxisPartition {
        &self.axes[k]
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(AxisPartition::cells).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.axes.iter().map(|a| (a.low(), a.high())).collect()
    }

    pub fn node_strides(&self) -> &[usize] {
        &self.node_strides
    }

    /// Largest cell edge over all axes.
    pub fn max_spacing(&self) -> f64 {
        self.axes
            .iter()
            .map(AxisPartition::max_spacing)
            .fold(0.0, f64::max)
    }

    pub fn node_id(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.node_strides)
            .map(|(i, s)| i * s)
            .sum()
    }

    pub fn node_index(&self, mut id: usize, index: &mut [usize]) {
        for (k, axis) in self.axes.iter().enumerate() {
            let n = axis.cells() + 1;
            index[k] = id % n;
            id /= n;
        }
    }

    pub fn node_coords(&self, id: usize, x: &mut [f64]) {
        let mut id = id;
        for (k, axis) in self.axes.iter().enumerate() {
            let n = axis.cells() + 1;
            x[k] = axis.points()[id % n];
            id /= n;
        }
    }

    pub fn node_point(&self, id: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_coords(id, &mut x);
        x
    }

    pub fn cell_index(&self, mut id: usize, index: &mut [usize]) {
        for (k, axis) in self.axes.iter().enumerate() {
            let n = axis.cells();
            index[k] = id % n;
            id /= n;
        }
    }

    pub fn cell_id(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.cell_strides)
            .map(|(i, s)| i * s)
            .sum()
    }

    /// Node ids of the `2^d` corners of a cell, in corner-bitmask order.
    pub fn cell_corners(&self, cell: &[usize], corners: &mut [usize]) {
        let base = self.node_id(cell);
        for (c, slot) in corners.iter_mut().enumerate() {
            *slot = base
                + self
                    .node_strides
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| c >> k & 1 == 1)
                    .map(|(_, s)| s)
                    .sum::<usize>();
        }
    }

    pub fn locate_cell(&self, x: &[f64]) -> Result<CellLocation> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, grid has {}",
                x.len(),
                self.dim()
            )));
        }
        let mut cell = Vec::with_capacity(self.dim());
        let mut local = Vec::with_capacity(self.dim());
        for (axis, &xi) in self.axes.iter().zip(x) {
            let (c, l) = axis
                .locate(xi)
                .ok_or_else(|| Error::OutOfDomain { point: x.to_vec() })?;
            cell.push(c);
            local.push(l);
        }
        Ok(CellLocation { cell, local })
    }

    /// Face membership of every node.
    pub fn classify_nodes(&self) -> Vec<NodeFaces> {
        let mut index = vec![0; self.dim()];
        (0..self.node_count)
            .map(|id| {
                self.node_index(id, &mut index);
                let mut tag = NodeFaces::default();
                for (k, axis) in self.axes.iter().enumerate() {
                    if index[k] == 0 {
                        tag.insert(Face::low(k));
                    }
                    if index[k] == axis.cells() {
                        tag.insert(Face::high(k));
                    }
                }
                tag
            })
            .collect()
    }
}

/// Tensor-product hat weights of the `2^d` cell corners at a local point.
pub fn shape_values(local: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 1 << local.len()];
    shape_values_into(local, &mut out);
    out
}

pub fn shape_values_into(local: &[f64], out: &mut [f64]) {
    for (c, w) in out.iter_mut().enumerate() {
        *w = local
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let t = t.clamp(0.0, 1.0);
                if c >> k & 1 == 1 {
                    t
                } else {
                    1.0 - t
                }
            })
            .product();
    }
}

/// Reference-coordinate gradients of the corner weights; row-major
/// `2^d x d` (corner, axis).
pub fn shape_gradients(local: &[f64]) -> Vec<f64> {
    let d = local.len();
    let mut out = vec![0.0; (1 << d) * d];
    shape_gradients_into(local, &mut out);
    out
}

pub fn shape_gradients_into(local: &[f64], out: &mut [f64]) {
    let d = local.len();
    for c in 0..1usize << d {
        for a in 0..d {
            out[c * d + a] = (0..d)
                .map(|k| {
                    let upper = c >> k & 1 == 1;
                    let t = local[k].clamp(0.0, 1.0);
                    match (k == a, upper) {
                        (true, true) => 1.0,
                        (true, false) => -1.0,
                        (false, true) => t,
                        (false, false) => 1.0 - t,
                    }
                })
                .product();
        }
    }
}

/// A degree-of-freedom vector bound to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    grid: Arc<TensorGrid>,
    dofs: Vec<f64>,
}

impl FeFunction {
    pub fn new(grid: Arc<TensorGrid>, dofs: Vec<f64>) -> Result<Self> {
        if dofs.len() != grid.node_count() {
            return Err(Error::invalid(format!(
                "{} dofs for a grid with {} nodes",
                dofs.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, dofs })
    }

    pub fn zeros(grid: Arc<TensorGrid>) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            dofs: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `g`.
    pub fn interpolate(grid: Arc<TensorGrid>, g: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut x = vec![0.0; grid.dim()];
        let mut dofs = Vec::with_capacity(grid.node_count());
        for id in 0..grid.node_count() {
            grid.node_coords(id, &mut x);
            let v = g(&x);
            if !v.is_finite() {
                return Err(Error::InvalidData(format!("field is {v} at node {x:?}")));
            }
            dofs.push(v);
        }
        Ok(Self { grid, dofs })
    }

    pub fn grid(&self) -> &Arc<TensorGrid> {
        &self.grid
    }

    pub fn dofs(&self) -> &[f64] {
        &self.dofs
    }

    pub fn dofs_mut(&mut self) -> &mut [f64] {
        &mut self.dofs
    }

    pub fn into_dofs(self) -> Vec<f64> {
        self.dofs
    }

    /// Multilinear interpolation of the surrounding `2^d` DOFs.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let loc = self.grid.locate_cell(x)?;
        let n = 1 << self.grid.dim();
        let mut corners = vec![0; n];
        self.grid.cell_corners(&loc.cell, &mut corners);
        let weights = shape_values(&loc.local);
        Ok(corners
            .iter()
            .zip(&weights)
            .map(|(&id, &w)| w * self.dofs[id])
            .sum())
    }

    /// Text dump: header, one line of breakpoints per axis, then one DOF
    /// per line (17 significant digits).
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let counts: Vec<String> = self.grid.counts().iter().map(|n| n.to_string()).collect();
        writeln!(w, "ddm-fef v1 d={} counts={}", self.grid.dim(), counts.join(","))?;
        for axis in self.grid.axes() {
            let line: Vec<String> = axis.points().iter().map(|p| format!("{p:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for v in &self.dofs {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidData(format!("FE dump: {msg}"));
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of input"))?
                .map_err(Error::from)
        };
        let header = next()?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("ddm-fef") || parts.next() != Some("v1") {
            return Err(bad("missing `ddm-fef v1` header"));
        }
        let d: usize = parts
            .next()
            .and_then(|s| s.strip_prefix("d="))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad dimension field"))?;
        let counts: Vec<usize> = parts
            .next()
            .and_then(|s| s.strip_prefix("counts="))
            .map(|s| s.split(',').map(|c| c.parse()).collect::<std::result::Result<_, _>>())
            .and_then(|r| r.ok())
            .ok_or_else(|| bad("bad counts field"))?;
        if counts.len() != d {
            return Err(bad("counts do not match dimension"));
        }
        let mut axes = Vec::with_capacity(d);
        for &n in &counts {
            let points = next()?
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("unparseable axis point"))?;
            if points.len() != n + 1 {
                return Err(bad("axis point count mismatch"));
            }
            axes.push(AxisPartition::new(points)?);
        }
        let grid = Arc::new(TensorGrid::new(axes)?);
        let mut dofs = Vec::with_capacity(grid.node_count());
        for _ in 0..grid.node_count() {
            dofs.push(next()?.trim().parse::<f64>().map_err(|_| bad("unparseable dof"))?);
        }
        Self::new(grid, dofs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_grid_spacing() {
        let g = TensorGrid::uniform(&[(-1.2, 1.2); 4], &[10; 4]).unwrap();
        for axis in g.axes() {
            assert!((axis.max_spacing() - 0.24).abs() < 1e-14);
        }
        assert_eq!(g.node_count(), 11usize.pow(4));
        assert_eq!(g.cell_count(), 10usize.pow(4));

        let g = TensorGrid::uniform(&[(0.0, 1.0)], &[1]).unwrap();
        assert_eq!(g.axis(0).points(), &[0.0, 1.0]);

        let g = TensorGrid::uniform(&[(0.2, 1.0), (-2.0, 2.0)], &[8, 20]).unwrap();
        assert!((g.axis(0).max_spacing() - 0.1).abs() < 1e-14);
        assert!((g.axis(1).max_spacing() - 0.2).abs() < 1e-14);
    }

    #[test]
    fn uniform_grid_rejects_bad_input() {
        assert!(TensorGrid::uniform(&[(0.0, 1.0)], &[0]).is_err());
        assert!(TensorGrid::uniform(&[(1.0, 1.0)], &[3]).is_err());
        assert!(TensorGrid::uniform(&[(2.0, 1.0)], &[3]).is_err());
        assert!(AxisPartition::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(AxisPartition::new(vec![0.0]).is_err());
    }

    #[test]
    fn locate_cell_tie_breaks() {
        let g = TensorGrid::uniform(&[(0.0, 1.0)], &[4]).unwrap();
        let loc = g.locate_cell(&[0.3]).unwrap();
        assert_eq!(loc.cell, vec![1]);
        assert!((loc.local[0] - 0.2).abs() < 1e-12);

        let loc = g.locate_cell(&[0.25]).unwrap();
        assert_eq!(loc.cell, vec![0]);
        assert_eq!(loc.local, vec![1.0]);

        let loc = g.locate_cell(&[1.0]).unwrap();
        assert_eq!(loc.cell, vec![3]);
        assert_eq!(loc.local, vec![1.0]);

        let loc = g.locate_cell(&[0.0]).unwrap();
        assert_eq!(loc.cell, vec![0]);
        assert_eq!(loc.local, vec![0.0]);
    }

    #[test]
    fn locate_cell_tolerance() {
        let g = TensorGrid::uniform(&[(0.0, 2.0)], &[4]).unwrap();
        assert_eq!(g.locate_cell(&[2.0 + 1e-13]).unwrap().cell, vec![3]);
        assert_eq!(g.locate_cell(&[-1e-13]).unwrap().cell, vec![0]);
        assert!(matches!(
            g.locate_cell(&[2.0 + 1e-9]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(g.locate_cell(&[f64::NAN]).is_err());
    }

    #[test]
    fn shape_value_examples() {
        assert_eq!(shape_values(&[0.0]), vec![1.0, 0.0]);
        assert_eq!(shape_values(&[0.5, 0.5]), vec![0.25; 4]);
        let w = shape_values(&[0.1, 0.7, 0.3, 0.95]);
        assert_eq!(w.len(), 16);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn shape_gradients_match_finite_differences() {
        let local = [0.3, 0.6, 0.8];
        let grad = shape_gradients(&local);
        let eps = 1e-6;
        for a in 0..3 {
            let mut p = local;
            let mut m = local;
            p[a] += eps;
            m[a] -= eps;
            let (vp, vm) = (shape_values(&p), shape_values(&m));
            for c in 0..8 {
                let fd = (vp[c] - vm[c]) / (2.0 * eps);
                assert!((fd - grad[c * 3 + a]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eval_examples() {
        let g = Arc::new(TensorGrid::uniform(&[(0.0, 1.0)], &[2]).unwrap());
        let f = FeFunction::new(g.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        assert!((f.eval(&[0.25]).unwrap() - 0.5).abs() < 1e-15);

        let ones = FeFunction::new(g, vec![1.0; 3]).unwrap();
        assert_eq!(ones.eval(&[0.77]).unwrap(), 1.0);
        assert!(FeFunction::new(ones.grid().clone(), vec![1.0; 2]).is_err());
    }

    #[test]
    fn interpolate_rejects_nan() {
        let g = Arc::new(TensorGrid::uniform(&[(0.0, 1.0)], &[2]).unwrap());
        let err = FeFunction::interpolate(g.clone(), |x| if x[0] > 0.9 { f64::NAN } else { 0.0 });
        assert!(matches!(err, Err(Error::InvalidData(_))));
        let zero = FeFunction::interpolate(g, |_| 0.0).unwrap();
        assert!(zero.dofs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classify_examples() {
        let g = TensorGrid::uniform(&[(0.0, 1.0)], &[2]).unwrap();
        let tags = g.classify_nodes();
        assert!(tags[0].contains(Face::low(0)));
        assert!(tags[1].is_interior());
        assert!(tags[2].contains(Face::high(0)));

        let g = TensorGrid::uniform(&[(0.0, 1.0); 2], &[2, 2]).unwrap();
        assert_eq!(g.classify_nodes().iter().filter(|t| t.is_interior()).count(), 1);

        let g = TensorGrid::uniform(&[(0.0, 1.0); 4], &[2; 4]).unwrap();
        let corner = g.node_id(&[2, 0, 2, 0]);
        let tag = g.classify_nodes()[corner];
        assert_eq!(tag.count(), 4);
        assert_eq!(
            tag.faces().collect::<Vec<_>>(),
            vec![Face::high(0), Face::low(1), Face::high(2), Face::low(3)]
        );
    }

    #[test]
    fn numbering_is_axis0_fastest() {
        let g = TensorGrid::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[2, 3]).unwrap();
        assert_eq!(g.node_id(&[1, 0]), 1);
        assert_eq!(g.node_id(&[0, 1]), 3);
        let mut idx = [0; 2];
        g.node_index(7, &mut idx);
        assert_eq!(idx, [1, 2]);
        let mut corners = [0; 4];
        g.cell_corners(&[1, 2], &mut corners);
        assert_eq!(corners, [7, 8, 10, 11]);
    }

    #[test]
    fn dump_round_trip() {
        let g = Arc::new(
            TensorGrid::new(vec![
                AxisPartition::new(vec![0.0, 0.1, 0.35, 1.0]).unwrap(),
                AxisPartition::uniform(-1.0, 1.0, 2).unwrap(),
            ])
            .unwrap(),
        );
        let f = FeFunction::interpolate(g, |x| (x[0] * 3.7).sin() + x[1] / 3.0).unwrap();
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ddm-fef v1 d=2 counts=3,2\n"));
        let back = FeFunction::read_dump(buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    fn nonuniform_axis() -> impl Strategy<Value = AxisPartition> {
        (-2.0f64..2.0, prop::collection::vec(0.05f64..1.0, 1..5)).prop_map(|(start, gaps)| {
            let mut pts = vec![start];
            for g in gaps {
                let last = *pts.last().unwrap();
                pts.push(last + g);
            }
            AxisPartition::new(pts).unwrap()
        })
    }

    proptest! {
        #[test]
        fn shape_values_partition_unity(local in prop::collection::vec(0.0f64..=1.0, 1..6)) {
            let w = shape_values(&local);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
            prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn multilinear_reproduction(
            axes in prop::collection::vec(nonuniform_axis(), 1..4),
            coeffs in prop::collection::vec(-3.0f64..3.0, 8),
            t in prop::collection::vec(0.0f64..=1.0, 3),
        ) {
            let d = axes.len();
            let grid = Arc::new(TensorGrid::new(axes).unwrap());
            // Sum over subsets S of axes of c_S * prod_{k in S} x_k.
            let poly = |x: &[f64]| -> f64 {
                (0..1usize << d)
                    .map(|s| coeffs[s] * (0..d).filter(|k| s >> k & 1 == 1).map(|k| x[k]).product::<f64>())
                    .sum()
            };
            let f = FeFunction::interpolate(grid.clone(), poly).unwrap();
            let x: Vec<f64> = (0..d)
                .map(|k| grid.axis(k).low() + t[k] * grid.axis(k).length())
                .collect();
            let exact = poly(&x);
            let got = f.eval(&x).unwrap();
            prop_assert!((got - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }

        #[test]
        fn locate_reconstructs_point(
            axes in prop::collection::vec(nonuniform_axis(), 1..5),
            t in prop::collection::vec(0.0f64..=1.0, 4),
        ) {
            let grid = TensorGrid::new(axes).unwrap();
            let x: Vec<f64> = (0..grid.dim())
                .map(|k| grid.axis(k).low() + t[k] * grid.axis(k).length())
                .collect();
            let loc = grid.locate_cell(&x).unwrap();
            for k in 0..grid.dim() {
                let axis = grid.axis(k);
                let c = loc.cell[k];
                let back = axis.points()[c] + loc.local[k] * axis.spacing(c);
                prop_assert!((back - x[k]).abs() <= 1e-13 * x[k].abs().max(axis.length()));
                prop_assert!(axis.points()[c] <= x[k] && x[k] <= axis.points()[c + 1]);
            }
        }

        #[test]
        fn interpolation_exact_at_nodes(axes in prop::collection::vec(nonuniform_axis(), 1..4)) {
            let grid = Arc::new(TensorGrid::new(axes).unwrap());
            let f = FeFunction::interpolate(grid.clone(), |x| x.iter().map(|v| (3.0 * v).cos()).sum()).unwrap();
            for id in 0..grid.node_count() {
                let x = grid.node_point(id);
                prop_assert_eq!(f.eval(&x).unwrap().to_bits(), f.dofs()[id].to_bits());
            }
        }
    }
}
