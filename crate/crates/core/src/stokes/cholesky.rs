//! Sparse direct solver: reverse Cuthill-McKee ordering followed by a
//! row-oriented skyline (envelope) Cholesky factorization.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::fem::CsrMatrix;

/// Reverse Cuthill-McKee permutation; `perm[new] = old`.
pub fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows;
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let root = peripheral(a, seed, &degree);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = a.row(v).0.iter().map(|&j| j as usize).filter(|&j| !visited[j]).collect();
            next.sort_by_key(|&j| (degree[j], j));
            for j in next {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node of the component containing `start`.
fn peripheral(a: &CsrMatrix, start: usize, degree: &[usize]) -> usize {
    let mut root = start;
    let mut depth = 0;
    for _ in 0..8 {
        let (levels, last) = bfs_levels(a, root);
        let far = last.iter().copied().min_by_key(|&v| (degree[v], v)).expect("nonempty level");
        if levels <= depth {
            break;
        }
        depth = levels;
        root = far;
    }
    root
}

fn bfs_levels(a: &CsrMatrix, root: usize) -> (usize, Vec<usize>) {
    let mut seen = std::collections::HashSet::from([root]);
    let mut level = vec![root];
    let mut count = 0;
    loop {
        let mut next = Vec::new();
        for &v in &level {
            for &j in a.row(v).0 {
                if seen.insert(j as usize) {
                    next.push(j as usize);
                }
            }
        }
        if next.is_empty() {
            return (count, level);
        }
        count += 1;
        level = next;
    }
}

/// `P A Pᵀ = L Lᵀ` with `L` stored by rows from the first nonzero column.
#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        let perm = rcm_order(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for &j in a.row(old).0 {
                first[new] = first[new].min(inv[j as usize]);
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(old);
            for (&j, &v) in cols.iter().zip(vals) {
                let jn = inv[j as usize];
                if jn <= new {
                    data[offset[new] + jn - first[new]] = v;
                }
            }
        }
        for i in 0..n {
            let (head, row_i) = data.split_at_mut(offset[i]);
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &head[offset[j]..offset[j + 1]];
                let s: f64 = (k0..j).map(|k| row_i[k - fi] * row_j[k - fj]).sum();
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - s) / ljj;
            }
            let s: f64 = row_i[..i - fi].iter().map(|v| v * v).sum();
            let d = row_i[i - fi] - s;
            if !(d > 0.0) {
                return Err(Error::SolverFailure { solver: "cholesky", iterations: i, residual: d, history: Vec::new() });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self { perm, first, offset, data })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Stored entries of the factor.
    pub fn envelope(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let fi = self.first[i];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, y)| l * y).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let fi = self.first[i];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
