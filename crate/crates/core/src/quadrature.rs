//! Tensor-product Gauss-Legendre rules on the reference cell `[0, 1]^d`.

use crate::error::{Error, Result};

/// Where variable coefficients (metric, `sqrt(G)`, source) are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientSampling {
    /// At every quadrature point.
    #[default]
    QuadraturePoints,
    /// Once per cell, at its center; shape-function products are still
    /// integrated by the rule.
    CellCenter,
}

/// Points (row-major, `len x dim`) and weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    sampling: CoefficientSampling,
    center: Vec<f64>,
}

impl QuadratureRule {
    pub fn with_sampling(mut self, sampling: CoefficientSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn sampling(&self) -> CoefficientSampling {
        self.sampling
    }

    /// Reference point at which coefficients belonging to point `q` are
    /// evaluated.
    pub fn coefficient_point(&self, q: usize) -> &[f64] {
        match self.sampling {
            CoefficientSampling::QuadraturePoints => self.point(q),
            CoefficientSampling::CellCenter => &self.center,
        }
    }

    /// True when all points share one coefficient sample.
    pub fn samples_once(&self) -> bool {
        self.sampling == CoefficientSampling::CellCenter
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Tensor Gauss-Legendre rule mapped to `[0, 1]^d`, axis 0 fastest.
pub fn gauss_rule(dim: usize, points_per_axis: usize) -> Result<QuadratureRule> {
    if points_per_axis < 2 {
        return Err(Error::invalid("quadrature needs at least 2 points per axis"));
    }
    if dim == 0 {
        return Err(Error::invalid("quadrature dimension must be positive"));
    }
    let (x1, w1) = gauss_legendre(points_per_axis);
    let t1: Vec<f64> = x1.iter().map(|x| 0.5 * (1.0 + x)).collect();
    let w1: Vec<f64> = w1.iter().map(|w| 0.5 * w).collect();
    let count = points_per_axis.pow(dim as u32);
    let mut points = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    for q in 0..count {
        let mut rem = q;
        let mut w = 1.0;
        for _ in 0..dim {
            let k = rem % points_per_axis;
            rem /= points_per_axis;
            points.push(t1[k]);
            w *= w1[k];
        }
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(QuadratureRule {
        dim,
        points,
        weights,
        sampling: CoefficientSampling::QuadraturePoints,
        center: vec![0.5; dim],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_rule() {
        let r = gauss_rule(1, 2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r.point(0)[0] - (1.0 - s) / 2.0).abs() < 1e-15);
        assert!((r.point(1)[0] - (1.0 + s) / 2.0).abs() < 1e-15);
        assert_eq!(r.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn tensor_rule_4d() {
        let r = gauss_rule(4, 2).unwrap();
        assert_eq!(r.len(), 16);
        assert!(r.weights().iter().all(|&w| (w - 1.0 / 16.0).abs() < 1e-16));
    }

    #[test]
    fn polynomial_exactness() {
        for n in 2..8 {
            let r = gauss_rule(1, n).unwrap();
            for p in 0..2 * n {
                let got: f64 = (0..r.len()).map(|q| r.weights()[q] * r.point(q)[0].powi(p as i32)).sum();
                assert!((got - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
        }
        let r = gauss_rule(1, 2).unwrap();
        let cubic: f64 = (0..2).map(|q| r.weights()[q] * r.point(q)[0].powi(3)).sum();
        assert!((cubic - 0.25).abs() < 1e-15);
    }

    #[test]
    fn coefficient_points() {
        let r = gauss_rule(2, 2).unwrap();
        assert_eq!(r.coefficient_point(3), r.point(3));
        let c = r.with_sampling(CoefficientSampling::CellCenter);
        assert_eq!(c.coefficient_point(3), &[0.5, 0.5]);
        assert!(c.samples_once());
    }

    #[test]
    fn rejects_single_point() {
        assert!(gauss_rule(2, 1).is_err());
    }
}
