use std::sync::atomic::{AtomicU64, Ordering};

use super::{min_degree_order, SparseError, SparseSym};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
pub struct FactorOptions {
    /// Pivots at or below `pivot_tol · max|A_ii|` are rejected.
    pub pivot_tol: f64,
    /// When set, a pivot that collapsed below this fraction of its original
    /// diagonal is treated as a null direction: the variable is pinned to zero
    /// instead of raising an error; so is a variable whose diagonal is zero
    /// to working precision against `max|A_ii|`. Only meaningful for consistent
    /// semi-definite systems.
    pub null_pivot_rel: Option<f64>,
    /// Skip the fill-reducing ordering.
    pub natural_order: bool,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self { pivot_tol: 1e-14, null_pivot_rel: None, natural_order: false }
    }
}

/// `P A Pᵀ = L D Lᵀ` with unit lower triangular `L`.
#[derive(Debug)]
pub struct Factor {
    n: usize,
    perm: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
    dropped: Vec<usize>,
    factor_flops: u64,
    solve_flops: AtomicU64,
}

impl Clone for Factor {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            perm: self.perm.clone(),
            l_ptr: self.l_ptr.clone(),
            l_idx: self.l_idx.clone(),
            l_val: self.l_val.clone(),
            d: self.d.clone(),
            d_inv: self.d_inv.clone(),
            dropped: self.dropped.clone(),
            factor_flops: self.factor_flops,
            solve_flops: AtomicU64::new(self.solve_flops.load(Ordering::Relaxed)),
        }
    }
}

impl Factor {
    pub fn new(a: &SparseSym) -> Result<Self, SparseError> {
        Self::with_options(a, FactorOptions::default())
    }

    pub fn with_options(a: &SparseSym, opts: FactorOptions) -> Result<Self, SparseError> {
        let n = a.dim();
        let perm: Vec<usize> = if opts.natural_order { (0..n).collect() } else { min_degree_order(a) };
        let mut iperm = vec![0usize; n];
        for (k, &i) in perm.iter().enumerate() {
            iperm[i] = k;
        }

        // permuted upper triangle, column-compressed
        let mut counts = vec![0usize; n + 1];
        for (r, c, _) in a.iter() {
            let (pr, pc) = (iperm[r], iperm[c]);
            counts[pr.max(pc) + 1] += 1;
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let ap = counts.clone();
        let mut next = counts;
        let mut ai = vec![0usize; a.nnz()];
        let mut ax = vec![0f64; a.nnz()];
        for (r, c, v) in a.iter() {
            let (pr, pc) = (iperm[r], iperm[c]);
            let (row, col) = if pr <= pc { (pr, pc) } else { (pc, pr) };
            ai[next[col]] = row;
            ax[next[col]] = v;
            next[col] += 1;
        }

        let scale = a.max_abs_diag();
        let orig_diag: Vec<f64> = (0..n).map(|k| a.get(perm[k], perm[k])).collect();

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in ap[j]..ap[j + 1] {
                let mut i = ai[p];
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for i in 0..n {
            l_ptr[i + 1] = l_ptr[i] + lnz[i];
        }
        let total = l_ptr[n];
        let mut l_idx = vec![0usize; total];
        let mut l_val = vec![0f64; total];
        let mut d = vec![0f64; n];
        let mut d_inv = vec![0f64; n];
        let mut dropped = Vec::new();

        let mut y_vals = vec![0f64; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_in_col: Vec<usize> = l_ptr[..n].to_vec();
        let mut flops: u64 = 0;

        for k in 0..n {
            let mut nnz_y = 0usize;
            d[k] = 0.0;
            for p in ap[k]..ap[k + 1] {
                let b = ai[p];
                if b == k {
                    d[k] = ax[p];
                    continue;
                }
                y_vals[b] = ax[p];
                let mut idx = b;
                if !y_used[idx] {
                    y_used[idx] = true;
                    elim[0] = idx;
                    let mut ne = 1usize;
                    idx = etree[b];
                    while idx != NONE && idx < k {
                        if y_used[idx] {
                            break;
                        }
                        y_used[idx] = true;
                        elim[ne] = idx;
                        ne += 1;
                        idx = etree[idx];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for t in (0..nnz_y).rev() {
                let c = y_idx[t];
                let end = next_in_col[c];
                let yc = y_vals[c];
                for j in l_ptr[c]..end {
                    y_vals[l_idx[j]] -= l_val[j] * yc;
                }
                flops += 2 * (end - l_ptr[c]) as u64;
                l_idx[end] = k;
                let lv = yc * d_inv[c];
                l_val[end] = lv;
                d[k] -= yc * lv;
                flops += 3;
                next_in_col[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            let piv = d[k];
            let null = opts
                .null_pivot_rel
                .map(|rel| piv.abs() <= rel * orig_diag[k].abs() || orig_diag[k].abs() <= f64::EPSILON * scale)
                .unwrap_or(false);
            if null {
                d_inv[k] = 0.0;
                dropped.push(perm[k]);
            } else if !(piv > opts.pivot_tol * scale) || !piv.is_finite() {
                return Err(SparseError::Singular { dof: perm[k], pivot: piv });
            } else {
                d_inv[k] = 1.0 / piv;
                flops += 1;
            }
        }
        dropped.sort_unstable();
        Ok(Self {
            n,
            perm,
            l_ptr,
            l_idx,
            l_val,
            d,
            d_inv,
            dropped,
            factor_flops: flops,
            solve_flops: AtomicU64::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Entries strictly below the diagonal of `L`.
    pub fn nnz_l(&self) -> usize {
        self.l_idx.len()
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Original indices pinned to zero as null pivots.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Entry `L[i, j]` of the permuted factor (`i > j`).
    pub fn l_entry(&self, i: usize, j: usize) -> f64 {
        (self.l_ptr[j]..self.l_ptr[j + 1])
            .find(|&p| self.l_idx[p] == i)
            .map(|p| self.l_val[p])
            .unwrap_or(0.0)
    }

    pub fn factor_flops(&self) -> u64 {
        self.factor_flops
    }

    pub fn solve_flops(&self) -> u64 {
        self.solve_flops.load(Ordering::Relaxed)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..self.n {
            let xi = x[i];
            for j in self.l_ptr[i]..self.l_ptr[i + 1] {
                x[self.l_idx[j]] -= self.l_val[j] * xi;
            }
        }
        for i in 0..self.n {
            x[i] *= self.d_inv[i];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for j in self.l_ptr[i]..self.l_ptr[i + 1] {
                s -= self.l_val[j] * x[self.l_idx[j]];
            }
            x[i] = s;
        }
        for (k, &i) in self.perm.iter().enumerate() {
            b[i] = x[k];
        }
        self.solve_flops.fetch_add(2 * self.nnz_l() as u64 + self.n as u64, Ordering::Relaxed);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves for `ncols` right-hand sides stored column after column.
    pub fn solve_columns(&self, b: &mut [f64], ncols: usize) {
        assert_eq!(b.len(), self.n * ncols);
        for c in 0..ncols {
            self.solve_in_place(&mut b[c * self.n..(c + 1) * self.n]);
        }
    }
}
