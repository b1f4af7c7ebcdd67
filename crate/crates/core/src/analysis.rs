//! Error norms of `I_h u - u_h` per chart, convergence orders and tables.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::atlas::{Atlas, MetricSample};
use crate::ddm::DdmState;
use crate::error::{Error, Result};
use crate::grid::{shape_gradients_into, shape_values_into, FeFunction, TensorGrid};
use crate::quadrature::{gauss_rule, QuadratureRule};

/// Norms of the error, each the maximum over charts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub h: f64,
    pub linf: f64,
    pub l2: f64,
    pub h1_semi: f64,
    pub energy: f64,
    pub n0: usize,
}

/// Norms of one chart's error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChartNorms {
    pub linf: f64,
    pub l2: f64,
    pub h1_semi: f64,
    pub energy: f64,
}

/// How the `L2` and `H1` seminorms weigh the chart coordinates. The energy
/// norm is always the chart's own bilinear form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormConvention {
    /// Riemannian: `sqrt(G)` volume and `g^{-1}` gradient pairing.
    #[default]
    Metric,
    /// Plain `dx` integrals of `e^2` and `|grad e|^2` in chart coordinates.
    Coordinate,
}

/// Quadrature and weighting used by the norms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormOptions {
    pub rule: QuadratureRule,
    pub convention: NormConvention,
}

impl NormOptions {
    pub fn new(rule: QuadratureRule, convention: NormConvention) -> Self {
        Self { rule, convention }
    }

    /// Two-point Gauss rule with coefficients at the quadrature points.
    pub fn gauss(dim: usize, convention: NormConvention) -> Result<Self> {
        Ok(Self::new(gauss_rule(dim, 2)?, convention))
    }
}

/// Largest cell edge over the given grids.
pub fn grid_scale<'a>(grids: impl IntoIterator<Item = &'a TensorGrid>) -> f64 {
    grids.into_iter().map(|g| g.max_spacing()).fold(0.0, f64::max)
}

/// Norms of the finite element function `e` on chart `chart` of `atlas`.
pub fn chart_norms(atlas: &Atlas, chart: usize, e: &FeFunction, opts: &NormOptions) -> Result<ChartNorms> {
    let rule = &opts.rule;
    let c = atlas.chart(chart);
    let grid = e.grid();
    let d = grid.dim();
    if rule.dim() != d || c.dim() != d {
        return Err(Error::invalid("dimension mismatch in norm evaluation"));
    }
    let nc = 1 << d;
    let mut cell = vec![0; d];
    let mut corners = vec![0; nc];
    let mut h = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut vals = vec![0.0; nc];
    let mut grads = vec![0.0; nc * d];
    let mut de = vec![0.0; d];
    let mut metric = MetricSample::new(d);
    let (mut l2, mut h1, mut energy) = (0.0, 0.0, 0.0);
    for id in 0..grid.cell_count() {
        grid.cell_index(id, &mut cell);
        grid.cell_corners(&cell, &mut corners);
        let mut vol = 1.0;
        for k in 0..d {
            h[k] = grid.axis(k).spacing(cell[k]);
            vol *= h[k];
        }
        let coeffs: Vec<f64> = corners.iter().map(|&n| e.dofs()[n]).collect();
        if coeffs.iter().all(|&v| v == 0.0) {
            continue;
        }
        for q in 0..rule.len() {
            let p = rule.point(q);
            if q == 0 || !rule.samples_once() {
                let cp = rule.coefficient_point(q);
                for k in 0..d {
                    x[k] = grid.axis(k).points()[cell[k]] + cp[k] * h[k];
                }
                c.metric_into(&x, &mut metric)?;
            }
            shape_values_into(p, &mut vals);
            shape_gradients_into(p, &mut grads);
            let mut ev = 0.0;
            de.fill(0.0);
            for a in 0..nc {
                ev += coeffs[a] * vals[a];
                for k in 0..d {
                    de[k] += coeffs[a] * grads[a * d + k] / h[k];
                }
            }
            let mut quad = 0.0;
            for k in 0..d {
                for l in 0..d {
                    quad += de[k] * metric.g_inv[k * d + l] * de[l];
                }
            }
            let w = rule.weights()[q] * vol;
            let a_grad = w * metric.sqrt_det * quad;
            let a_mass = w * metric.sqrt_det * ev * ev;
            energy += a_grad + atlas.b() * a_mass;
            match opts.convention {
                NormConvention::Metric => {
                    l2 += a_mass;
                    h1 += a_grad;
                }
                NormConvention::Coordinate => {
                    l2 += w * ev * ev;
                    h1 += w * de.iter().map(|v| v * v).sum::<f64>();
                }
            }
        }
    }
    let linf = e.dofs().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ChartNorms {
        linf,
        l2: l2.sqrt(),
        h1_semi: h1.sqrt(),
        energy: energy.sqrt(),
    })
}

/// Per-chart norms of `I_h(u o phi_j) - u_{h,j}`.
pub fn chart_errors(atlas: &Atlas, solutions: &[FeFunction], opts: &NormOptions) -> Result<Vec<ChartNorms>> {
    if !atlas.has_exact() {
        return Err(Error::AnalysisUnavailable(format!(
            "no exact solution is known for {}",
            atlas.name()
        )));
    }
    if solutions.len() != atlas.chart_count() {
        return Err(Error::invalid("one solution per chart is required"));
    }
    solutions
        .par_iter()
        .enumerate()
        .map(|(j, u)| {
            let exact = atlas.data(j).exact.as_ref().expect("checked above");
            let mut e = FeFunction::interpolate(u.grid().clone(), |x| exact(x))?;
            for (ei, ui) in e.dofs_mut().iter_mut().zip(u.dofs()) {
                *ei -= ui;
            }
            chart_norms(atlas, j, &e, opts)
        })
        .collect()
}

/// Maxima over charts of the error norms of `state`.
pub fn error_norms(atlas: &Atlas, state: &DdmState, n0: usize, opts: &NormOptions) -> Result<ErrorReport> {
    let per_chart = chart_errors(atlas, &state.solutions, opts)?;
    let max = |f: fn(&ChartNorms) -> f64| per_chart.iter().map(f).fold(0.0, f64::max);
    Ok(ErrorReport {
        h: grid_scale(state.solutions.iter().map(|u| u.grid().as_ref())),
        linf: max(|c| c.linf),
        l2: max(|c| c.l2),
        h1_semi: max(|c| c.h1_semi),
        energy: max(|c| c.energy),
        n0,
    })
}

/// `log(e_coarse / e_fine) / log(h_coarse / h_fine)`, undefined for zero
/// or non-finite errors.
pub fn order(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> Option<f64> {
    if !(e_coarse > 0.0 && e_fine > 0.0 && h_coarse > 0.0 && h_fine > 0.0 && h_coarse != h_fine) {
        return None;
    }
    let p = (e_coarse / e_fine).ln() / (h_coarse / h_fine).ln();
    p.is_finite().then_some(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Orders {
    pub linf: Option<f64>,
    pub l2: Option<f64>,
    pub h1_semi: Option<f64>,
    pub energy: Option<f64>,
}

/// Orders between consecutive reports; the first entry is all `None`.
pub fn convergence_orders(reports: &[ErrorReport]) -> Vec<Orders> {
    let mut out = vec![Orders::default(); reports.len()];
    for i in 1..reports.len() {
        let (c, f) = (&reports[i - 1], &reports[i]);
        out[i] = Orders {
            linf: order(c.linf, f.linf, c.h, f.h),
            l2: order(c.l2, f.l2, c.h, f.h),
            h1_semi: order(c.h1_semi, f.h1_semi, c.h, f.h),
            energy: order(c.energy, f.energy, c.h, f.h),
        };
    }
    out
}

/// One line of a results table; norms are absent when no exact solution
/// is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub h: f64,
    pub n0: usize,
    pub norms: Option<ErrorReport>,
}

impl From<ErrorReport> for TableRow {
    fn from(r: ErrorReport) -> Self {
        Self {
            h: r.h,
            n0: r.n0,
            norms: Some(r),
        }
    }
}

pub const CSV_HEADER: &str = "h,linf,linf_order,l2,l2_order,h1,h1_order,energy,energy_order,n0";

fn row_orders(rows: &[TableRow]) -> Vec<Orders> {
    let mut out = vec![Orders::default(); rows.len()];
    for i in 1..rows.len() {
        if let (Some(c), Some(f)) = (rows[i - 1].norms, rows[i].norms) {
            out[i] = convergence_orders(&[c, f])[1];
        }
    }
    out
}

/// CSV with full-precision values; missing entries are `NA`.
pub fn to_csv(rows: &[TableRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:e}"));
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (row, o) in rows.iter().zip(row_orders(rows)) {
        let n = row.norms;
        let _ = writeln!(
            s,
            "{:e},{},{},{},{},{},{},{},{},{}",
            row.h,
            opt(n.map(|r| r.linf)),
            opt(o.linf),
            opt(n.map(|r| r.l2)),
            opt(o.l2),
            opt(n.map(|r| r.h1_semi)),
            opt(o.h1_semi),
            opt(n.map(|r| r.energy)),
            opt(o.energy),
            row.n0
        );
    }
    s
}

/// Parses CSV written by [`to_csv`]; orders are recomputed, not read.
pub fn from_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::InvalidData("missing or unexpected CSV header".into())),
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 10 {
            return Err(Error::InvalidData(format!("row {}: expected 10 fields", k + 1)));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::InvalidData(format!("row {}: bad number {s:?}", k + 1)))
        };
        let h = num(fields[0])?.ok_or_else(|| Error::InvalidData(format!("row {}: h is NA", k + 1)))?;
        let n0 = fields[9]
            .parse::<usize>()
            .map_err(|_| Error::InvalidData(format!("row {}: bad n0 {:?}", k + 1, fields[9])))?;
        let norms = match (num(fields[1])?, num(fields[3])?, num(fields[5])?, num(fields[7])?) {
            (Some(linf), Some(l2), Some(h1_semi), Some(energy)) => Some(ErrorReport {
                h,
                linf,
                l2,
                h1_semi,
                energy,
                n0,
            }),
            (None, None, None, None) => None,
            _ => return Err(Error::InvalidData(format!("row {}: partially missing norms", k + 1))),
        };
        rows.push(TableRow { h, n0, norms });
    }
    Ok(rows)
}

/// `x` with four significant figures, switching to exponent form for very
/// small or large magnitudes.
pub fn sig4(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i32;
    if !(-4..=5).contains(&e) {
        return format!("{x:.3e}");
    }
    let decimals = (3 - e).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Aligned text table: error and order columns per norm, then `n0`.
pub fn to_text_table(rows: &[TableRow]) -> String {
    let header = [
        "h", "L_inf", "order", "L2", "order", "H1-semi", "order", "energy", "order", "n0",
    ];
    let ord = |o: Option<f64>| o.map_or("-".to_string(), |p| format!("{p:.1}"));
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (row, o) in rows.iter().zip(row_orders(rows)) {
        let mut line = vec![sig4(row.h)];
        match row.norms {
            Some(r) => {
                for (v, p) in [(r.linf, o.linf), (r.l2, o.l2), (r.h1_semi, o.h1_semi), (r.energy, o.energy)] {
                    line.push(sig4(v));
                    line.push(ord(p));
                }
            }
            None => {
                for _ in 0..4 {
                    line.push("n/a".into());
                    line.push("-".into());
                }
            }
        }
        line.push(row.n0.to_string());
        cells.push(line);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in cells.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:>w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{make_builtin_atlas, BuiltinAtlas};
    use std::sync::Arc;

    #[test]
    fn single_hat_h1_seminorm() {
        let atlas = make_builtin_atlas(BuiltinAtlas::FlatInterval { overlap: 0.1 }, None).unwrap();
        // The metric is the identity, so any grid on the line will do.
        let g = Arc::new(TensorGrid::uniform(&[(0.0, 1.0)], &[2]).unwrap());
        let e = FeFunction::new(g, vec![0.0, 1.0, 0.0]).unwrap();
        let opts = NormOptions::gauss(1, NormConvention::Metric).unwrap();
        let norms = chart_norms(&atlas, 0, &e, &opts).unwrap();
        assert!((norms.h1_semi - 2.0).abs() < 1e-14);
        assert!((norms.l2 - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert_eq!(norms.linf, 1.0);
    }

    #[test]
    fn interpolant_has_zero_error() {
        let atlas = make_builtin_atlas(BuiltinAtlas::B4 { s: 0.4, delta: 0.2, r: 1.2 }, None).unwrap();
        let grids = atlas.build_grids(2, 4).unwrap();
        let sols: Vec<FeFunction> = grids
            .into_iter()
            .enumerate()
            .map(|(j, g)| {
                let u = atlas.data(j).exact.clone().unwrap();
                FeFunction::interpolate(Arc::new(g), |x| u(x)).unwrap()
            })
            .collect();
        let state = DdmState {
            n: 0,
            inner_iterations: vec![0; 3],
            solutions: sols,
        };
        let r = error_norms(&atlas, &state, 0, &NormOptions::gauss(4, NormConvention::Metric).unwrap()).unwrap();
        assert_eq!((r.linf, r.l2, r.h1_semi, r.energy), (0.0, 0.0, 0.0, 0.0));
        assert!((r.h - 0.6).abs() < 1e-15);
    }

    #[test]
    fn energy_identity_on_flat_chart() {
        let atlas = make_builtin_atlas(BuiltinAtlas::FlatSingle, Some(2.0)).unwrap();
        let g = Arc::new(TensorGrid::uniform(&[(0.0, 1.0); 2], &[4, 8]).unwrap());
        assert_eq!(grid_scale([g.as_ref()]), 0.25);
        let e = FeFunction::interpolate(g, |x| x[0] * x[1] - x[1] * x[1]).unwrap();
        let opts = NormOptions::new(gauss_rule(2, 3).unwrap(), NormConvention::Metric);
        let n = chart_norms(&atlas, 0, &e, &opts).unwrap();
        let lhs = n.energy * n.energy;
        let rhs = n.h1_semi * n.h1_semi + 2.0 * n.l2 * n.l2;
        assert!((lhs - rhs).abs() <= 1e-12 * lhs);
    }

    #[test]
    fn conventions_agree_on_flat_charts_only() {
        let flat = make_builtin_atlas(BuiltinAtlas::FlatSingle, Some(1.0)).unwrap();
        let g = Arc::new(TensorGrid::uniform(&[(0.0, 1.0); 2], &[3, 5]).unwrap());
        let e = FeFunction::interpolate(g, |x| (3.0 * x[0]).sin() * x[1]).unwrap();
        let m = chart_norms(&flat, 0, &e, &NormOptions::gauss(2, NormConvention::Metric).unwrap()).unwrap();
        let c = chart_norms(&flat, 0, &e, &NormOptions::gauss(2, NormConvention::Coordinate).unwrap()).unwrap();
        assert!((m.l2 - c.l2).abs() < 1e-15 && (m.h1_semi - c.h1_semi).abs() < 1e-15);
        assert_eq!(m.energy, c.energy);

        let b4 = make_builtin_atlas(BuiltinAtlas::B4 { s: 0.4, delta: 0.2, r: 1.2 }, None).unwrap();
        let g = Arc::new(b4.chart(1).build_grid(2, 4).unwrap());
        let e = FeFunction::interpolate(g, |x| x[0] * x[1]).unwrap();
        let m = chart_norms(&b4, 1, &e, &NormOptions::gauss(4, NormConvention::Metric).unwrap()).unwrap();
        let c = chart_norms(&b4, 1, &e, &NormOptions::gauss(4, NormConvention::Coordinate).unwrap()).unwrap();
        assert!((m.l2 - c.l2).abs() > 1e-3);
        assert_eq!(m.energy, c.energy);
    }

    #[test]
    fn doubled_rule_changes_norms_little() {
        let b4 = make_builtin_atlas(BuiltinAtlas::B4 { s: 0.4, delta: 0.2, r: 1.2 }, None).unwrap();
        let g = Arc::new(b4.chart(1).build_grid(4, 10).unwrap());
        let e = FeFunction::interpolate(g, |x| (x[0] * x[1]).sin() + x[2] * x[3]).unwrap();
        let two = chart_norms(&b4, 1, &e, &NormOptions::gauss(4, NormConvention::Metric).unwrap()).unwrap();
        let four = chart_norms(&b4, 1, &e, &NormOptions::new(gauss_rule(4, 4).unwrap(), NormConvention::Metric)).unwrap();
        assert!(((two.l2 - four.l2) / four.l2).abs() < 1e-3);
        assert!(((two.h1_semi - four.h1_semi) / four.h1_semi).abs() < 1e-3);
    }

    #[test]
    fn missing_exact_solution_is_reported() {
        let atlas = make_builtin_atlas(BuiltinAtlas::Cp2 { r: 1.2 }, None).unwrap();
        let r = chart_errors(&atlas, &[], &NormOptions::gauss(4, NormConvention::Metric).unwrap());
        assert!(matches!(r, Err(Error::AnalysisUnavailable(_))));
    }

    #[test]
    fn order_examples() {
        let p = order(0.1049, 0.0267, 0.24, 0.12).unwrap();
        assert!((p - 1.97).abs() < 0.01);
        assert_eq!(format!("{p:.1}"), "2.0");
        assert_eq!(order(0.3, 0.3, 0.2, 0.1), Some(0.0));
        assert_eq!(order(0.4, 0.1, 0.2, 0.1), Some(2.0));
        assert_eq!(order(0.0, 0.1, 0.2, 0.1), None);
    }

    #[test]
    fn table_round_trip() {
        let rows = vec![
            TableRow::from(ErrorReport {
                h: 0.24,
                linf: 0.1049,
                l2: 0.02,
                h1_semi: 0.3,
                energy: 0.2278,
                n0: 13,
            }),
            TableRow::from(ErrorReport {
                h: 0.12,
                linf: 0.0267,
                l2: 0.005,
                h1_semi: 0.15,
                energy: 0.0799,
                n0: 13,
            }),
            TableRow {
                h: 0.06,
                n0: 12,
                norms: None,
            },
        ];
        let csv = to_csv(&rows);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(from_csv(&csv).unwrap(), rows);
        let text = to_text_table(&rows);
        assert!(text.contains("0.1049"));
        assert!(text.contains("0.0267"));
        assert!(text.contains(" 2.0"));
        assert!(text.contains("n/a"));
        assert!(from_csv("bogus\n").is_err());
    }

    #[test]
    fn significant_figures() {
        assert_eq!(sig4(0.10494), "0.1049");
        assert_eq!(sig4(0.026712), "0.02671");
        assert_eq!(sig4(12.345), "12.35");
        assert_eq!(sig4(1.5e-7), "1.500e-7");
    }
}
