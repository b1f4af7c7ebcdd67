//! Built-in decompositions: the 4-ball, `B^2 x S^2`, the complex projective
//! plane, and flat verification domains.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use super::{
    Atlas, AtlasBuilder, AxisCount, Chart, ChartData, MetricFn, ScalarFn, TransitionFn,
};
use crate::error::{Error, Result};
use crate::grid::Face;

/// Embedding of chart coordinates into the ambient Euclidean space.
type EmbedFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Parameter record for the built-in atlases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinAtlas {
    /// Unit 4-ball: a core cube `[-s, s]^4` and two stereographic collar charts.
    B4 { s: f64, delta: f64, r: f64 },
    /// `B^2 x S^2` as the product of a 3-chart disk and a 2-chart sphere.
    B2xS2 { s: f64, delta: f64, r: f64 },
    /// Complex projective plane with its three affine charts `[-r, r]^4`.
    Cp2 { r: f64 },
    /// `[0, 1]^2` split into `[0, 0.5 + w] x [0, 1]` and `[0.5 - w, 1] x [0, 1]`.
    FlatSquare { overlap: f64 },
    /// `[0, 1]` split into `[0, 0.5 + w]` and `[0.5 - w, 1]`.
    FlatInterval { overlap: f64 },
    /// `[0, 1]^2` as a single chart.
    FlatSingle,
}

impl BuiltinAtlas {
    pub const NAMES: [&'static str; 6] = [
        "b4",
        "b2xs2",
        "cp2",
        "flat_square",
        "flat_interval",
        "flat_single",
    ];

    /// Looks up an atlas by name, filling unspecified parameters with the
    /// defaults of the reference experiments.
    pub fn from_name(
        name: &str,
        s: Option<f64>,
        delta: Option<f64>,
        r: Option<f64>,
        overlap: Option<f64>,
    ) -> Result<Self> {
        let kind = match name {
            "b4" => BuiltinAtlas::B4 {
                s: s.unwrap_or(0.4),
                delta: delta.unwrap_or(0.2),
                r: r.unwrap_or(1.2),
            },
            "b2xs2" => BuiltinAtlas::B2xS2 {
                s: s.unwrap_or(0.6),
                delta: delta.unwrap_or(0.3),
                r: r.unwrap_or(1.2),
            },
            "cp2" => BuiltinAtlas::Cp2 { r: r.unwrap_or(1.2) },
            "flat_square" => BuiltinAtlas::FlatSquare {
                overlap: overlap.unwrap_or(0.1),
            },
            "flat_interval" => BuiltinAtlas::FlatInterval {
                overlap: overlap.unwrap_or(0.1),
            },
            "flat_single" => BuiltinAtlas::FlatSingle,
            other => {
                return Err(Error::invalid(format!(
                    "unknown manifold `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinAtlas::B4 { .. } => "b4",
            BuiltinAtlas::B2xS2 { .. } => "b2xs2",
            BuiltinAtlas::Cp2 { .. } => "cp2",
            BuiltinAtlas::FlatSquare { .. } => "flat_square",
            BuiltinAtlas::FlatInterval { .. } => "flat_interval",
            BuiltinAtlas::FlatSingle => "flat_single",
        }
    }

    pub fn default_b(&self) -> f64 {
        match self {
            BuiltinAtlas::B2xS2 { .. } | BuiltinAtlas::Cp2 { .. } => 1.0,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let collar = |s: f64, delta: f64, r: f64, s_max: f64, label: &str| {
            if !(0.0 < delta && delta < s && s < s_max) {
                return Err(Error::invalid(format!(
                    "{label} needs 0 < delta < s < {s_max:.4}, got s = {s}, delta = {delta}"
                )));
            }
            if !(r > 1.0 && r.is_finite()) {
                return Err(Error::invalid(format!("{label} needs r > 1, got {r}")));
            }
            Ok(())
        };
        match *self {
            BuiltinAtlas::B4 { s, delta, r } => collar(s, delta, r, 0.5, "b4"),
            BuiltinAtlas::B2xS2 { s, delta, r } => {
                collar(s, delta, r, std::f64::consts::FRAC_1_SQRT_2, "b2xs2")
            }
            BuiltinAtlas::Cp2 { r } if !(r > 1.0 && r.is_finite()) => {
                Err(Error::invalid(format!("cp2 needs r > 1, got {r}")))
            }
            BuiltinAtlas::FlatSquare { overlap } | BuiltinAtlas::FlatInterval { overlap }
                if !(0.0 < overlap && overlap < 0.5) =>
            {
                Err(Error::invalid(format!("overlap must lie in (0, 0.5), got {overlap}")))
            }
            _ => Ok(()),
        }
    }
}

/// Builds a fully wired built-in atlas. `b` overrides the default reaction
/// coefficient; the source term is derived from the exact solution with
/// the chosen `b`.
pub fn make_builtin_atlas(kind: BuiltinAtlas, b: Option<f64>) -> Result<Atlas> {
    kind.validate()?;
    let b = b.unwrap_or_else(|| kind.default_b());
    match kind {
        BuiltinAtlas::B4 { s, delta, r } => ball4(s, delta, r, b),
        BuiltinAtlas::B2xS2 { s, delta, r } => disk_times_sphere(s, delta, r, b),
        BuiltinAtlas::Cp2 { r } => projective_plane(r, b),
        BuiltinAtlas::FlatSquare { overlap } => flat_square(overlap, b),
        BuiltinAtlas::FlatInterval { overlap } => flat_interval(overlap, b),
        BuiltinAtlas::FlatSingle => flat_single(b),
    }
}

/// Cutoffs of the bump functions, pulled 10% inside the overlap.
#[derive(Debug, Clone, Copy)]
struct Cutoffs {
    delta: f64,
    s: f64,
    r: f64,
}

impl Cutoffs {
    fn new(s: f64, delta: f64, r: f64) -> Self {
        Self {
            delta: 0.9 * delta + 0.1 * s,
            s: 0.1 * delta + 0.9 * s,
            r: 0.9 * r + 0.1,
        }
    }
}

fn bump(a: f64, cut: f64) -> f64 {
    if a.abs() > cut {
        0.0
    } else {
        1.0 - (a / cut) * (a / cut)
    }
}

fn ramp(t: f64, start: f64) -> f64 {
    if t < start {
        0.0
    } else {
        (t - start) / (1.0 - start)
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Inverse stereographic projection onto the unit sphere; `north` selects
/// the sign of the last coordinate.
fn sphere_point(x: &[f64], north: bool) -> Vec<f64> {
    let q = norm_sq(x);
    let mut y: Vec<f64> = x.iter().map(|v| 2.0 * v / (1.0 + q)).collect();
    let last = (1.0 - q) / (1.0 + q);
    y.push(if north { last } else { -last });
    y
}

fn diagonal_metric(d: usize, diag: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> MetricFn {
    Arc::new(move |x: &[f64], g: &mut [f64]| {
        let mut entries = [0.0; crate::grid::MAX_DIM];
        diag(x, &mut entries[..d]);
        g.fill(0.0);
        for k in 0..d {
            g[k * d + k] = entries[k];
        }
    })
}

fn scalar(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

fn transition(f: impl Fn(&[f64], &mut [f64]) -> bool + Send + Sync + 'static) -> TransitionFn {
    Arc::new(f)
}

/// Chart data from an embedding `phi_i` and functions `u`, `f` on the
/// ambient coordinates.
fn embedded_data(
    embed: EmbedFn,
    u: fn(&[f64]) -> f64,
    f: ScalarFn,
    with_boundary: bool,
) -> ChartData {
    let e1 = embed.clone();
    let exact = scalar(move |x| u(&e1(x)));
    ChartData {
        source: scalar(move |x| f(&embed(x))),
        boundary: with_boundary.then(|| exact.clone()),
        exact: Some(exact),
    }
}

// ---------------------------------------------------------------------------
// B^4

fn ball4_embedding(chart: usize) -> EmbedFn {
    match chart {
        0 => Arc::new(|x: &[f64]| x.to_vec()),
        _ => {
            let north = chart == 1;
            Arc::new(move |x: &[f64]| {
                sphere_point(&x[1..], north)
                    .into_iter()
                    .map(|v| x[0] * v)
                    .collect()
            })
        }
    }
}

fn ball4(s: f64, delta: f64, r: f64, b: f64) -> Result<Atlas> {
    let cut = Cutoffs::new(s, delta, r);
    let u = |y: &[f64]| (PI * y[3]).sin();
    let f: ScalarFn = Arc::new(move |y: &[f64]| (b + PI * PI) * (PI * y[3]).sin());

    let core = Chart::new(
        "core",
        vec![(-s, s); 4],
        diagonal_metric(4, |_, g| g.fill(1.0)),
        scalar(move |x| x.iter().map(|&v| bump(v, cut.s)).product()),
    )?
    .with_axis_counts(vec![AxisCount::Short; 4]);

    let collar = |name: &str| -> Result<Chart> {
        Ok(Chart::new(
            name,
            vec![(delta, 1.0), (-r, r), (-r, r), (-r, r)],
            diagonal_metric(4, |x, g| {
                let c = 4.0 * x[0] * x[0] / (1.0 + norm_sq(&x[1..])).powi(2);
                g[0] = 1.0;
                g[1..4].fill(c);
            }),
            scalar(move |x| ramp(x[0], cut.delta) * x[1..].iter().map(|&v| bump(v, cut.r)).product::<f64>()),
        )?
        .with_physical_faces(vec![Face::high(0)])
        .with_axis_counts(vec![AxisCount::Short, AxisCount::Long, AxisCount::Long, AxisCount::Long]))
    };

    let to_collar = |north: bool| {
        transition(move |x, y| {
            let n = norm_sq(x).sqrt();
            let den = if north { n + x[3] } else { n - x[3] };
            if !(den > 0.0) {
                return false;
            }
            y[0] = n;
            for k in 0..3 {
                y[k + 1] = x[k] / den;
            }
            true
        })
    };
    let from_collar = |north: bool| {
        transition(move |x, y| {
            let p = sphere_point(&x[1..], north);
            for k in 0..4 {
                y[k] = x[0] * p[k];
            }
            true
        })
    };
    let across = transition(|x, y| {
        let q = norm_sq(&x[1..]);
        if !(q > 0.0) {
            return false;
        }
        y[0] = x[0];
        for k in 1..4 {
            y[k] = x[k] / q;
        }
        true
    });

    AtlasBuilder::new("b4")
        .reaction(b)
        .chart(core, embedded_data(ball4_embedding(0), u, f.clone(), false))
        .chart(collar("north")?, embedded_data(ball4_embedding(1), u, f.clone(), true))
        .chart(collar("south")?, embedded_data(ball4_embedding(2), u, f, true))
        .transition(0, 1, to_collar(true))
        .transition(0, 2, to_collar(false))
        .transition(1, 0, from_collar(true))
        .transition(2, 0, from_collar(false))
        .transition(1, 2, across.clone())
        .transition(2, 1, across)
        .build()
}

// ---------------------------------------------------------------------------
// B^2 x S^2

/// Transition between the disk charts (0 = core, 1 = north collar, 2 = south collar).
fn disk_transition(i: usize, j: usize, x: &[f64], y: &mut [f64]) -> bool {
    match (i, j) {
        _ if i == j => {
            y[..2].copy_from_slice(&x[..2]);
            true
        }
        (0, _) => {
            let n = norm_sq(&x[..2]).sqrt();
            let den = if j == 1 { n + x[1] } else { n - x[1] };
            if !(den > 0.0) {
                return false;
            }
            y[0] = n;
            y[1] = x[0] / den;
            true
        }
        (_, 0) => {
            let p = sphere_point(&x[1..2], i == 1);
            y[0] = x[0] * p[0];
            y[1] = x[0] * p[1];
            true
        }
        _ => {
            if x[1] == 0.0 {
                return false;
            }
            y[0] = x[0];
            y[1] = 1.0 / x[1];
            true
        }
    }
}

fn sphere_transition(i: usize, j: usize, x: &[f64], y: &mut [f64]) -> bool {
    if i == j {
        y.copy_from_slice(x);
        return true;
    }
    let q = norm_sq(x);
    if !(q > 0.0) {
        return false;
    }
    for (dst, src) in y.iter_mut().zip(x) {
        *dst = src / q;
    }
    true
}

fn disk_times_sphere_embedding(disk: usize, sphere: usize) -> EmbedFn {
    Arc::new(move |x: &[f64]| {
        let mut y = if disk == 0 {
            x[..2].to_vec()
        } else {
            sphere_point(&x[1..2], disk == 1)
                .into_iter()
                .map(|v| x[0] * v)
                .collect()
        };
        y.extend(sphere_point(&x[2..4], sphere == 0));
        y
    })
}

fn disk_times_sphere(s: f64, delta: f64, r: f64, b: f64) -> Result<Atlas> {
    let cut = Cutoffs::new(s, delta, r);
    let u = |y: &[f64]| (PI * y[1]).sin() + y[4];
    let f: ScalarFn =
        Arc::new(move |y: &[f64]| (b + PI * PI) * (PI * y[1]).sin() + (b + 2.0) * y[4]);

    let sphere_factor = |x: &[f64]| 4.0 / (1.0 + norm_sq(&x[2..4])).powi(2);
    let mut builder = AtlasBuilder::new("b2xs2").reaction(b);
    for disk in 0..3 {
        for sphere in 0..2 {
            let name = format!(
                "{}x{}",
                ["core", "north", "south"][disk],
                ["north", "south"][sphere]
            );
            let chart = if disk == 0 {
                Chart::new(
                    name,
                    vec![(-s, s), (-s, s), (-r, r), (-r, r)],
                    diagonal_metric(4, move |x, g| {
                        g[..2].fill(1.0);
                        g[2..4].fill(sphere_factor(x));
                    }),
                    scalar(move |x| {
                        bump(x[0], cut.s) * bump(x[1], cut.s) * bump(x[2], cut.r) * bump(x[3], cut.r)
                    }),
                )?
                .with_axis_counts(vec![AxisCount::Short, AxisCount::Short, AxisCount::Long, AxisCount::Long])
            } else {
                Chart::new(
                    name,
                    vec![(delta, 1.0), (-r, r), (-r, r), (-r, r)],
                    diagonal_metric(4, move |x, g| {
                        g[0] = 1.0;
                        g[1] = 4.0 * x[0] * x[0] / (1.0 + x[1] * x[1]).powi(2);
                        g[2..4].fill(sphere_factor(x));
                    }),
                    scalar(move |x| {
                        ramp(x[0], cut.delta) * bump(x[1], cut.r) * bump(x[2], cut.r) * bump(x[3], cut.r)
                    }),
                )?
                .with_physical_faces(vec![Face::high(0)])
                .with_axis_counts(vec![AxisCount::Short, AxisCount::Long, AxisCount::Long, AxisCount::Long])
            };
            builder = builder.chart(
                chart,
                embedded_data(disk_times_sphere_embedding(disk, sphere), u, f.clone(), disk != 0),
            );
        }
    }
    for i in 0..6 {
        for j in 0..6 {
            if i == j {
                continue;
            }
            let (di, si, dj, sj) = (i / 2, i % 2, j / 2, j % 2);
            builder = builder.transition(
                i,
                j,
                transition(move |x, y| {
                    disk_transition(di, dj, &x[..2], &mut y[..2])
                        && sphere_transition(si, sj, &x[2..4], &mut y[2..4])
                }),
            );
        }
    }
    builder.build()
}

// ---------------------------------------------------------------------------
// CP^2

/// Homogeneous coordinates of a point given in affine chart `k`.
fn homogeneous(k: usize, x: &[f64]) -> [Complex64; 3] {
    let a = Complex64::new(x[0], x[1]);
    let c = Complex64::new(x[2], x[3]);
    let one = Complex64::new(1.0, 0.0);
    match k {
        0 => [one, a, c],
        1 => [a, one, c],
        _ => [a, c, one],
    }
}

/// Fubini-Study metric in affine coordinates,
/// `g = ((1 + |z|^2) I - v v^T - w w^T) / (1 + |z|^2)^2` with `v = x` and
/// `w` the rotation of `x` by `i` in each complex factor.
fn fubini_study(x: &[f64], g: &mut [f64]) {
    let s = 1.0 + norm_sq(x);
    let w = [-x[1], x[0], -x[3], x[2]];
    for a in 0..4 {
        for b in 0..4 {
            let id = if a == b { s } else { 0.0 };
            g[a * 4 + b] = (id - x[a] * x[b] - w[a] * w[b]) / (s * s);
        }
    }
}

fn projective_plane(r: f64, b: f64) -> Result<Atlas> {
    let cut = Cutoffs::new(0.0, 0.0, r).r;
    let mut builder = AtlasBuilder::new("cp2").reaction(b);
    for k in 0..3 {
        let chart = Chart::new(
            format!("affine{k}"),
            vec![(-r, r); 4],
            Arc::new(|x: &[f64], g: &mut [f64]| fubini_study(x, g)),
            scalar(move |x| x.iter().map(|&v| bump(v, cut)).product()),
        )?
        .with_axis_counts(vec![AxisCount::Long; 4]);
        // No closed-form solution is attached; the source is |Z_0|^2 / |Z|^2.
        let source = scalar(move |x| {
            let h = homogeneous(k, x);
            h[0].norm_sqr() / h.iter().map(|c| c.norm_sqr()).sum::<f64>()
        });
        builder = builder.chart(
            chart,
            ChartData {
                source,
                boundary: None,
                exact: None,
            },
        );
    }
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            builder = builder.transition(
                i,
                j,
                transition(move |x, y| {
                    let h = homogeneous(i, x);
                    let pivot = h[j];
                    if pivot.norm_sqr() == 0.0 {
                        return false;
                    }
                    let rest: Vec<Complex64> = (0..3).filter(|&k| k != j).map(|k| h[k] / pivot).collect();
                    y[0] = rest[0].re;
                    y[1] = rest[0].im;
                    y[2] = rest[1].re;
                    y[3] = rest[1].im;
                    true
                }),
            );
        }
    }
    builder.build()
}

// ---------------------------------------------------------------------------
// Flat verification domains

fn identity_metric(d: usize) -> MetricFn {
    diagonal_metric(d, |_, g| g.fill(1.0))
}

fn flat_data(d: usize, b: f64) -> ChartData {
    let exact = scalar(move |x| x[..d].iter().map(|&v| (PI * v).sin()).product());
    let e = exact.clone();
    ChartData {
        source: scalar(move |x| (b + d as f64 * PI * PI) * e(x)),
        boundary: Some(exact.clone()),
        exact: Some(exact),
    }
}

/// Two charts overlapping on `[0.5 - w, 0.5 + w]` along axis 0; the bumps
/// ramp linearly and vanish in the outer 10% of the overlap.
fn split_unit(d: usize, overlap: f64, b: f64, name: &str) -> Result<Atlas> {
    let left_hi = 0.5 + overlap;
    let right_lo = 0.5 - overlap;
    let left_cut = left_hi - 0.2 * overlap;
    let right_cut = right_lo + 0.2 * overlap;
    let mut left_bounds = vec![(0.0, 1.0); d];
    let mut right_bounds = vec![(0.0, 1.0); d];
    left_bounds[0] = (0.0, left_hi);
    right_bounds[0] = (right_lo, 1.0);
    let side_faces = (1..d).flat_map(|k| [Face::low(k), Face::high(k)]);
    let left = Chart::new(
        "left",
        left_bounds,
        identity_metric(d),
        scalar(move |x| ((left_cut - x[0]) / left_cut).max(0.0)),
    )?
    .with_physical_faces(std::iter::once(Face::low(0)).chain(side_faces.clone()).collect());
    let right = Chart::new(
        "right",
        right_bounds,
        identity_metric(d),
        scalar(move |x| ((x[0] - right_cut) / (1.0 - right_cut)).max(0.0)),
    )?
    .with_physical_faces(std::iter::once(Face::high(0)).chain(side_faces).collect());
    let identity = transition(|x, y| {
        y.copy_from_slice(x);
        true
    });
    AtlasBuilder::new(name)
        .reaction(b)
        .chart(left, flat_data(d, b))
        .chart(right, flat_data(d, b))
        .transition(0, 1, identity.clone())
        .transition(1, 0, identity)
        .build()
}

fn flat_square(overlap: f64, b: f64) -> Result<Atlas> {
    split_unit(2, overlap, b, "flat_square")
}

fn flat_interval(overlap: f64, b: f64) -> Result<Atlas> {
    split_unit(1, overlap, b, "flat_interval")
}

fn flat_single(b: f64) -> Result<Atlas> {
    let chart = Chart::new("unit", vec![(0.0, 1.0); 2], identity_metric(2), scalar(|_| 1.0))?
        .with_physical_faces(vec![Face::low(0), Face::high(0), Face::low(1), Face::high(1)]);
    AtlasBuilder::new("flat_single")
        .reaction(b)
        .chart(chart, flat_data(2, b))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::NodeKind;
    use crate::grid::TensorGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    fn b4() -> Atlas {
        make_builtin_atlas(BuiltinAtlas::B4 { s: 0.4, delta: 0.2, r: 1.2 }, None).unwrap()
    }

    #[test]
    fn b4_layout() {
        let atlas = b4();
        assert_eq!(atlas.chart_count(), 3);
        assert_eq!(atlas.chart(0).bounds(), &[(-0.4, 0.4); 4]);
        assert_eq!(atlas.chart(1).bounds(), &[(0.2, 1.0), (-1.2, 1.2), (-1.2, 1.2), (-1.2, 1.2)]);
        assert_eq!(atlas.chart(1).physical_faces(), &[Face::high(0)]);
        assert!(atlas.chart(0).physical_faces().is_empty());
        assert_eq!(atlas.b(), 0.0);
    }

    #[test]
    fn b4_transition_examples() {
        let atlas = b4();
        let y = atlas.transition_apply(0, 1, &[0.0, 0.0, 0.0, 0.3]).unwrap();
        assert!(close(&y, &[0.3, 0.0, 0.0, 0.0], 1e-15));
        let y = atlas.transition_apply(1, 2, &[0.5, 1.0, 0.0, 0.0]).unwrap();
        assert!(close(&y, &[0.5, 1.0, 0.0, 0.0], 1e-15));
        assert!(atlas.transition_apply(0, 1, &[0.0, 0.0, 0.0, -0.3]).is_none());
        assert!(atlas.transition_apply(0, 1, &[0.0; 4]).is_none());
        assert!(atlas.transition_apply(1, 2, &[0.5, 0.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn b4_metric_examples() {
        let atlas = b4();
        let m = atlas.chart(0).metric_at(&[0.1, -0.2, 0.3, 0.0]).unwrap();
        assert_eq!(m.sqrt_det, 1.0);
        let m = atlas.chart(1).metric_at(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.g[0], 1.0);
        assert_eq!(m.g[5], 4.0);
        assert_eq!(m.g[15], 4.0);
        assert!((m.sqrt_det - 8.0).abs() < 1e-14);
    }

    #[test]
    fn b4_exact_solution_values() {
        let atlas = b4();
        let u0 = atlas.data(0).exact.as_ref().unwrap();
        assert!((u0(&[0.0, 0.0, 0.0, 0.5]) - 1.0).abs() < 1e-15);
        let u1 = atlas.data(1).boundary.as_ref().unwrap();
        assert!(u1(&[1.0, 0.0, 0.0, 0.0]).abs() < 1e-15);
        // Source is (b + pi^2) u with b = 0.
        let f0 = &atlas.data(0).source;
        assert!((f0(&[0.0, 0.0, 0.0, 0.5]) - PI * PI).abs() < 1e-13);
    }

    #[test]
    fn b4_sigma_vanishes_on_core_face() {
        let atlas = b4();
        let w = atlas.pou_weights(0, &[0.4, 0.1, -0.2, 0.05]).unwrap();
        assert_eq!(w.weight_of(0), 0.0);
        assert!((w.sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn b2xs2_layout() {
        let atlas =
            make_builtin_atlas(BuiltinAtlas::B2xS2 { s: 0.6, delta: 0.3, r: 1.2 }, None).unwrap();
        assert_eq!(atlas.chart_count(), 6);
        assert!(atlas.chart(0).physical_faces().is_empty());
        assert!(atlas.chart(1).physical_faces().is_empty());
        for i in 2..6 {
            assert_eq!(atlas.chart(i).physical_faces(), &[Face::high(0)]);
        }
        assert_eq!(atlas.b(), 1.0);
        let m = atlas.chart(0).metric_at(&[0.1, 0.2, 0.0, 0.0]).unwrap();
        assert_eq!(&m.g, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 4.0]);
        assert!((m.sqrt_det - 4.0).abs() < 1e-14);
    }

    #[test]
    fn cp2_sigma_at_origin() {
        let atlas = make_builtin_atlas(BuiltinAtlas::Cp2 { r: 1.2 }, None).unwrap();
        assert_eq!(atlas.chart(0).sigma_at(&[0.0; 4]), 1.0);
        let w = atlas.pou_weights(0, &[0.0; 4]).unwrap();
        assert_eq!(w.terms.len(), 1);
        assert_eq!(w.weight_of(0), 1.0);
        let grid = TensorGrid::uniform(&[(-1.2, 1.2); 4], &[2; 4]).unwrap();
        assert_eq!(atlas.chart(1).classify_chart_node(&grid, 0), NodeKind::ArtificialBoundary);
        assert!(!atlas.has_exact());
    }

    #[test]
    fn parameter_validation() {
        assert!(make_builtin_atlas(BuiltinAtlas::B4 { s: 0.5, delta: 0.2, r: 1.2 }, None).is_err());
        assert!(make_builtin_atlas(BuiltinAtlas::B4 { s: 0.4, delta: 0.4, r: 1.2 }, None).is_err());
        assert!(make_builtin_atlas(BuiltinAtlas::B4 { s: 0.4, delta: 0.2, r: 1.0 }, None).is_err());
        assert!(make_builtin_atlas(BuiltinAtlas::B2xS2 { s: 0.7, delta: 0.1, r: 2.0 }, None).is_ok());
        assert!(make_builtin_atlas(BuiltinAtlas::B2xS2 { s: 0.71, delta: 0.1, r: 2.0 }, None).is_err());
        assert!(make_builtin_atlas(BuiltinAtlas::Cp2 { r: 0.9 }, None).is_err());
        assert!(BuiltinAtlas::from_name("torus", None, None, None, None).is_err());
        assert!(make_builtin_atlas(BuiltinAtlas::Cp2 { r: 1.2 }, Some(0.0)).is_err());
    }

    #[test]
    fn node_classification() {
        let atlas = b4();
        let grid = atlas.chart(1).build_grid(4, 10).unwrap();
        let kinds = atlas.chart(1).node_kinds(&grid);
        let t1 = grid.node_id(&[4, 5, 5, 5]);
        let td = grid.node_id(&[0, 5, 5, 5]);
        let inner = grid.node_id(&[2, 5, 5, 5]);
        assert_eq!(kinds[t1], NodeKind::PhysicalBoundary);
        assert_eq!(kinds[td], NodeKind::ArtificialBoundary);
        assert_eq!(kinds[inner], NodeKind::Interior);
        // A node on t = 1 and on an x face is still physical.
        assert_eq!(kinds[grid.node_id(&[4, 0, 5, 5])], NodeKind::PhysicalBoundary);
        assert_eq!(atlas.chart(1).classify_chart_node(&grid, t1), NodeKind::PhysicalBoundary);
    }

    /// Transitions agree with the chart embeddings: `phi_j(tau(x)) = phi_i(x)`.
    #[test]
    fn transitions_commute_with_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let atlas = b4();
        for i in 0..3 {
            for j in 0..3 {
                let mut hits = 0;
                while hits < 50 {
                    let x: Vec<f64> = atlas.chart(i).bounds().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
                    if let Some(y) = atlas.transition_apply(i, j, &x) {
                        assert!(close(&ball4_embedding(j)(&y), &ball4_embedding(i)(&x), 1e-12));
                        hits += 1;
                    }
                }
            }
        }
        let atlas =
            make_builtin_atlas(BuiltinAtlas::B2xS2 { s: 0.6, delta: 0.3, r: 1.2 }, None).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let mut hits = 0;
                let mut tries = 0;
                while hits < 20 && tries < 100_000 {
                    tries += 1;
                    let x: Vec<f64> = atlas.chart(i).bounds().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
                    if let Some(y) = atlas.transition_apply(i, j, &x) {
                        let ei = disk_times_sphere_embedding(i / 2, i % 2)(&x);
                        let ej = disk_times_sphere_embedding(j / 2, j % 2)(&y);
                        assert!(close(&ej, &ei, 1e-12), "{i}->{j} at {x:?}");
                        hits += 1;
                    }
                }
                assert_eq!(hits, 20, "no overlap found for {i}->{j}");
            }
        }
    }

    #[test]
    fn cp2_transitions_preserve_projective_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let atlas = make_builtin_atlas(BuiltinAtlas::Cp2 { r: 1.2 }, None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for _ in 0..20 {
                    let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.2..1.2)).collect();
                    let Some(y) = atlas.transition_raw(i, j, &x) else { continue };
                    let (hi, hj) = (homogeneous(i, &x), homogeneous(j, &y));
                    // Proportional vectors: hi = hi[j] * hj.
                    for k in 0..3 {
                        assert!((hi[k] - hi[j] * hj[k]).norm() < 1e-12 * (1.0 + hi[k].norm()));
                    }
                }
            }
        }
    }

    #[test]
    fn flat_square_layout() {
        let atlas = make_builtin_atlas(BuiltinAtlas::FlatSquare { overlap: 0.1 }, None).unwrap();
        assert_eq!(atlas.chart(0).bounds(), &[(0.0, 0.6), (0.0, 1.0)]);
        assert_eq!(atlas.chart(1).bounds(), &[(0.4, 1.0), (0.0, 1.0)]);
        assert_eq!(atlas.chart(0).artificial_faces(), vec![Face::high(0)]);
        assert_eq!(atlas.chart(1).artificial_faces(), vec![Face::low(0)]);
        let g = atlas.data(0).boundary.as_ref().unwrap();
        assert!(g(&[0.5, 1.0]).abs() < 1e-15);
        let f = &atlas.data(1).source;
        let u = atlas.data(1).exact.as_ref().unwrap();
        assert!((f(&[0.7, 0.3]) - 2.0 * PI * PI * u(&[0.7, 0.3])).abs() < 1e-13);
    }
}
