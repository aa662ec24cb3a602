//! Row-compressed sparse matrices.

use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
    pub symmetric: bool,
}

impl CsrMatrix {
    /// Zero matrix with the union of the given (rows x cols) blocks as pattern.
    pub fn from_blocks<'a>(nrows: usize, ncols: usize, blocks: impl Iterator<Item = (&'a [u32], &'a [u32])>) -> Self {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); nrows];
        for (rows, cols) in blocks {
            for &r in rows {
                adj[r as usize].extend_from_slice(cols);
            }
        }
        adj.par_iter_mut().for_each(|row| {
            row.sort_unstable();
            row.dedup();
        });
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in &adj {
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self { nrows, ncols, row_ptr, col_idx, values: vec![0.0; nnz], symmetric: false }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (cols, _) = self.row(i);
        cols.binary_search(&(j as u32)).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.par_iter_mut().with_min_len(256).enumerate().for_each(|(i, yi)| {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c as usize];
            }
            *yi = s;
        });
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// y = Aᵀ x
    pub fn transpose_apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                y[*c as usize] += v * x[i];
            }
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for k in 0..self.ncols {
            counts[k + 1] += counts[k];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let k = next[*c as usize];
                col_idx[k] = i as u32;
                values[k] = *v;
                next[*c as usize] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, row_ptr, col_idx, values, symmetric: self.symmetric }
    }

    /// `self + s * other` for matrices with an identical pattern.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        assert_eq!(self.row_ptr, other.row_ptr);
        assert_eq!(self.col_idx, other.col_idx);
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        out.symmetric = self.symmetric && other.symmetric;
        out
    }

    /// Largest |a_ij - a_ji|.
    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                m = m.max((v - self.get(*c as usize, i)).abs());
            }
        }
        m
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Dot product summed in fixed-size blocks, so the result does not depend
/// on the number of threads.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    const CHUNK: usize = 4096;
    assert_eq!(a.len(), b.len());
    let partial: Vec<f64> =
        a.par_chunks(CHUNK).zip(b.par_chunks(CHUNK)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum()).collect();
    partial.iter().sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CsrMatrix {
        let r0 = [0u32, 1];
        let r1 = [1u32, 2];
        let mut a = CsrMatrix::from_blocks(3, 3, [(&r0[..], &r0[..]), (&r1[..], &r1[..])].into_iter());
        a.add_at(0, 0, 2.0);
        a.add_at(0, 1, -1.0);
        a.add_at(1, 0, -1.0);
        a.add_at(1, 1, 2.0);
        a.add_at(1, 2, 3.0);
        a.add_at(2, 2, 4.0);
        a
    }

    #[test]
    fn pattern_and_matvec() {
        let a = small();
        assert_eq!(a.nnz(), 7);
        assert_eq!(a.get(2, 0), 0.0);
        assert_eq!(a.apply(&[1.0, 1.0, 1.0]), vec![1.0, 4.0, 4.0]);
    }

    #[test]
    fn transpose_matches_transpose_apply() {
        let a = small();
        let x = [0.5, -2.0, 1.5];
        assert_eq!(a.transpose().apply(&x), a.transpose_apply(&x));
        assert_eq!(a.max_asymmetry(), 3.0);
    }
}
