//! Conjugate gradients for the symmetric positive definite subproblems.

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `||r|| / ||rhs||`.
    pub tolerance: f64,
    /// Defaults to `10 * n` when `None`.
    pub max_iterations: Option<usize>,
    /// Diagonal preconditioning.
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: None,
            jacobi: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Recomputed from `rhs - A x` on exit.
    pub final_relative_residual: f64,
    pub converged: bool,
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericDomain(format!("{what} contains a non-finite value")))
    }
}

fn residual(a: &CsrMatrix, rhs: &[f64], x: &[f64], r: &mut [f64]) -> Result<()> {
    a.spmv_into(x, r)?;
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    Ok(())
}

/// Solves `A x = rhs` from the initial guess `x0`.
///
/// Returns zero iterations, with `x0` unchanged, when the initial residual
/// already meets the tolerance. A run that exhausts the iteration budget
/// returns its last iterate with `converged = false`.
pub fn cg_solve(
    a: &CsrMatrix,
    rhs: &[f64],
    x0: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, CgReport)> {
    let n = a.rows();
    if a.cols() != n || rhs.len() != n || x0.len() != n {
        return Err(Error::invalid(format!(
            "cg dimension mismatch: {}x{} matrix, rhs {}, x0 {}",
            a.rows(),
            a.cols(),
            rhs.len(),
            x0.len()
        )));
    }
    if !(opts.tolerance > 0.0 && opts.tolerance.is_finite()) {
        return Err(Error::invalid(format!("cg tolerance must be positive, got {}", opts.tolerance)));
    }
    check_finite(rhs, "right-hand side")?;
    check_finite(x0, "initial guess")?;
    check_finite(a.values(), "operator")?;

    let rhs_norm = norm2(rhs);
    if rhs_norm == 0.0 {
        let report = CgReport {
            iterations: 0,
            final_relative_residual: 0.0,
            converged: true,
        };
        return Ok((vec![0.0; n], report));
    }
    let max_iter = opts.max_iterations.unwrap_or(10 * n.max(1));
    let target = opts.tolerance * rhs_norm;

    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    residual(a, rhs, &x, &mut r)?;
    let mut r_norm = norm2(&r);
    if r_norm <= target {
        let report = CgReport {
            iterations: 0,
            final_relative_residual: r_norm / rhs_norm,
            converged: true,
        };
        return Ok((x, report));
    }

    let inv_diag = if opts.jacobi {
        let diag = a.diagonal();
        if diag.iter().any(|&d| d <= 0.0) {
            return Err(Error::NumericDomain("non-positive diagonal entry".into()));
        }
        Some(diag.iter().map(|d| 1.0 / d).collect::<Vec<_>>())
    } else {
        None
    };
    let precondition = |r: &[f64], z: &mut Vec<f64>| match &inv_diag {
        Some(inv) => {
            z.clear();
            z.extend(r.iter().zip(inv).map(|(ri, di)| ri * di));
        }
        None => {
            z.clear();
            z.extend_from_slice(r);
        }
    };

    let mut z = Vec::with_capacity(n);
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    while iterations < max_iter {
        a.spmv_into(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::NumericDomain(format!(
                "operator is not positive definite along a search direction (p'Ap = {pap})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        r_norm = norm2(&r);
        if !r_norm.is_finite() {
            return Err(Error::NumericDomain("cg residual became non-finite".into()));
        }
        if r_norm <= target {
            break;
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    residual(a, rhs, &x, &mut r)?;
    let true_rel = norm2(&r) / rhs_norm;
    let report = CgReport {
        iterations,
        final_relative_residual: true_rel,
        converged: r_norm <= target,
    };
    Ok((x, report))
}
