//! Compressed-row sparse matrices and the kernels the solver needs.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per parallel task in `spmv`.
const SPMV_CHUNK: usize = 4096;

/// Square or rectangular matrix in CSR form with sorted column ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1
            || row_ptr[rows] != col_idx.len()
            || col_idx.len() != values.len()
            || row_ptr.windows(2).any(|w| w[0] > w[1])
            || col_idx.iter().any(|&c| c >= cols)
        {
            return Err(Error::invalid("inconsistent CSR arrays"));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Sums duplicate entries.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::invalid(format!("entry ({r}, {c}) out of range")));
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::from_parts(rows, cols, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|A_ij - A_ji|` relative to the largest `|A_ij|`.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.rows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    /// `y = A x`. Rows are independent, so the result does not depend on
    /// how rows are split across threads.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.cols || y.len() != self.rows {
            return Err(Error::invalid(format!(
                "spmv dimension mismatch: {}x{} matrix, x of {}, y of {}",
                self.rows,
                self.cols,
                x.len(),
                y.len()
            )));
        }
        let kernel = |(chunk, out): (usize, &mut [f64])| {
            let start = chunk * SPMV_CHUNK;
            for (k, yi) in out.iter_mut().enumerate() {
                let i = start + k;
                let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
                let mut acc = 0.0;
                for p in lo..hi {
                    acc += self.values[p] * x[self.col_idx[p]];
                }
                *yi = acc;
            }
        };
        if self.rows > SPMV_CHUNK {
            y.par_chunks_mut(SPMV_CHUNK).enumerate().for_each(kernel);
        } else {
            y.chunks_mut(SPMV_CHUNK).enumerate().for_each(kernel);
        }
        Ok(())
    }

    /// Coordinate text dump: `row col value` per line, 0-based, sorted.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                writeln!(w, "{i} {j} {v:.16e}")?;
            }
        }
        Ok(())
    }
}

/// Compensated (Neumaier) dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let term = x * y;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
