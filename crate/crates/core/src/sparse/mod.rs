//! Sparse symmetric storage, LDLᵀ factorization and preconditioned conjugate gradient.

mod cg;
mod ldlt;
mod ordering;

pub use cg::{pcg, CgReport, CgSpace, LocalSpace};
pub use ldlt::{Factor, FactorOptions};
pub use ordering::min_degree_order;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("matrix is singular or indefinite at dof {dof} (pivot {pivot:e})")]
    Singular { dof: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Symmetric matrix stored as its lower triangle in compressed sparse column form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate accumulator; duplicates are summed by [`TripletBuilder::finalize`].
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self { n, entries: Vec::with_capacity(cap) }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` to the symmetric pair `(i, j)`/`(j, i)`. Push each off-diagonal
    /// pair once; [`TripletBuilder::add_sym`] handles full element blocks.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.entries.push((r, c, v));
    }

    /// Adds a full symmetric block given in row-major order; only the lower
    /// triangle (in global numbering) is kept.
    pub fn add_sym(&mut self, dofs: &[Option<usize>], block: &[f64]) {
        let m = dofs.len();
        debug_assert_eq!(block.len(), m * m);
        for a in 0..m {
            let Some(i) = dofs[a] else { continue };
            for b in 0..m {
                let Some(j) = dofs[b] else { continue };
                if i >= j {
                    let v = block[a * m + b];
                    if v != 0.0 || i == j {
                        self.entries.push((i, j, v));
                    }
                }
            }
        }
    }

    pub fn finalize(mut self) -> SparseSym {
        // column-major, then row; stable so duplicates are summed in insertion order
        self.entries.sort_by_key(|a| (a.1, a.0));
        let mut col_ptr = vec![0usize; self.n + 1];
        let mut row_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.n {
            col_ptr[c + 1] += col_ptr[c];
        }
        SparseSym { n: self.n, col_ptr, row_idx, values }
    }
}

impl SparseSym {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(n: usize, a: &[f64]) -> Self {
        let mut t = TripletBuilder::new(n);
        for j in 0..n {
            for i in j..n {
                let v = a[i * n + j];
                if v != 0.0 || i == j {
                    t.add(i, j, v);
                }
            }
        }
        t.finalize()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of the lower triangle.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates `(row, col, value)` over the lower triangle.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let s = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match s.binary_search(&r) {
            Ok(k) => self.values[self.col_ptr[c] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs_diag(&self) -> f64 {
        self.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.n {
            let xc = x[c];
            let mut acc = 0.0;
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                y[r] += v * xc;
                if r != c {
                    acc += v * x[r];
                }
            }
            y[c] += acc;
        }
    }

    /// `A x − b` accumulated in [`DoubleSum`]s.
    pub fn residual_compensated(&self, x: &[f64], b: &[f64]) -> Vec<DoubleSum> {
        assert_eq!(x.len(), self.n);
        assert_eq!(b.len(), self.n);
        let mut y: Vec<DoubleSum> = b.iter().map(|&v| {
            let mut s = DoubleSum::default();
            s.add(-v);
            s
        }).collect();
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let (r, v) = (self.row_idx[k], self.values[k]);
                y[r].add_product(v, x[c]);
                if r != c {
                    y[c].add_product(v, x[r]);
                }
            }
        }
        y
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `Y = A X` for a dense row-major `X` with `ncols` columns.
    pub fn mul_dense(&self, x: &[f64], ncols: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.n * ncols);
        let mut y = vec![0.0; self.n * ncols];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                for t in 0..ncols {
                    y[r * ncols + t] += v * x[c * ncols + t];
                }
                if r != c {
                    for t in 0..ncols {
                        y[c * ncols + t] += v * x[r * ncols + t];
                    }
                }
            }
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul(x))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for (r, c, v) in self.iter() {
            a[r * n + c] = v;
            a[c * n + r] = v;
        }
        a
    }

    /// Principal submatrix on `keep` (new index `k` ↔ old index `keep[k]`).
    pub fn principal(&self, keep: &[usize]) -> SparseSym {
        let mut map = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            map[i] = k;
        }
        let mut t = TripletBuilder::new(keep.len());
        for (r, c, v) in self.iter() {
            let (a, b) = (map[r], map[c]);
            if a != usize::MAX && b != usize::MAX {
                t.add(a, b, v);
            }
        }
        t.finalize()
    }

    /// Rows `rows`, columns `cols` as a dense row-major block.
    pub fn dense_block(&self, rows: &[usize], cols: &[usize]) -> Vec<f64> {
        let mut rmap = vec![usize::MAX; self.n];
        for (k, &i) in rows.iter().enumerate() {
            rmap[i] = k;
        }
        let mut cmap = vec![usize::MAX; self.n];
        for (k, &i) in cols.iter().enumerate() {
            cmap[i] = k;
        }
        let nc = cols.len();
        let mut out = vec![0.0; rows.len() * nc];
        for (r, c, v) in self.iter() {
            if rmap[r] != usize::MAX && cmap[c] != usize::MAX {
                out[rmap[r] * nc + cmap[c]] = v;
            }
            if r != c && rmap[c] != usize::MAX && cmap[r] != usize::MAX {
                out[rmap[c] * nc + cmap[r]] = v;
            }
        }
        out
    }

    /// Adjacency lists of the off-diagonal pattern.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (r, c, _) in self.iter() {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Unevaluated sum `hi + lo` kept with error-free transformations; the
/// result is as accurate as if accumulated in twice the working precision.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleSum {
    hi: f64,
    lo: f64,
}

impl DoubleSum {
    pub fn add(&mut self, v: f64) {
        let s = self.hi + v;
        let bv = s - self.hi;
        self.lo += (self.hi - (s - bv)) + (v - bv);
        self.hi = s;
    }

    pub fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.add(p);
        self.lo += a.mul_add(b, -p);
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    /// Split into the rounded value and its remainder.
    pub fn parts(self) -> (f64, f64) {
        let v = self.value();
        (v, self.lo - (v - self.hi))
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Dense LDLᵀ solve without pivoting; small oracle-sized systems only.
pub fn dense_solve(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>, SparseError> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = m[k * n + k];
        if p.abs() <= 1e-300 {
            return Err(SparseError::Singular { dof: k, pivot: p });
        }
        for i in k + 1..n {
            let f = m[i * n + k] / p;
            if f != 0.0 {
                for j in k..n {
                    m[i * n + j] -= f * m[k * n + j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[k * n + j] * x[j];
        }
        x[k] = s / m[k * n + k];
    }
    Ok(x)
}
