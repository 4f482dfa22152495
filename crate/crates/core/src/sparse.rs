//! Minimal sparse kernels for the QP solver: CSR storage with
//! matrix-vector products, and an up-looking sparse LDL^T factorization of
//! symmetric quasi-definite matrices (upper-triangular CSC input).

use nalgebra::DVector;

use crate::scalar::Real;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<R> {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<R>,
}

impl<R: Real> Csr<R> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, R)]) -> Self {
        let mut entries: Vec<(usize, usize, R)> = triplets.to_vec();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indices = Vec::with_capacity(entries.len());
        let mut data: Vec<R> = Vec::with_capacity(entries.len());
        let mut per_row = vec![0usize; nrows];
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &entries {
            assert!(r < nrows && c < ncols, "triplet out of bounds");
            if last == Some((r, c)) {
                let n = data.len();
                data[n - 1] += v;
            } else {
                indices.push(c);
                data.push(v);
                per_row[r] += 1;
                last = Some((r, c));
            }
        }
        let mut indptr = vec![0usize; nrows + 1];
        for r in 0..nrows {
            indptr[r + 1] = indptr[r] + per_row[r];
        }
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[R]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    /// out = self * x
    pub fn mul_vec(&self, x: &DVector<R>, out: &mut DVector<R>) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = R::zero();
            for p in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[p] * x[self.indices[p]];
            }
            out[r] = acc;
        }
    }

    /// out = self^T * x
    pub fn mul_transpose_vec(&self, x: &DVector<R>, out: &mut DVector<R>) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        out.fill(R::zero());
        for r in 0..self.nrows {
            let xr = x[r];
            if xr == R::zero() {
                continue;
            }
            for p in self.indptr[r]..self.indptr[r + 1] {
                out[self.indices[p]] += self.data[p] * xr;
            }
        }
    }

    /// Infinity norm of each column.
    pub fn col_inf_norms(&self) -> Vec<R> {
        let mut norms = vec![R::zero(); self.ncols];
        for p in 0..self.data.len() {
            let c = self.indices[p];
            norms[c] = norms[c].max(self.data[p].abs());
        }
        norms
    }

    /// Infinity norm of each row.
    pub fn row_inf_norms(&self) -> Vec<R> {
        (0..self.nrows)
            .map(|r| {
                let (_, vals) = self.row(r);
                vals.iter().fold(R::zero(), |acc, &v| acc.max(v.abs()))
            })
            .collect()
    }

    /// Scale rows by `e` and columns by `d` in place: A <- diag(e) A diag(d).
    pub fn scale(&mut self, e: &[R], d: &[R]) {
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                self.data[p] *= e[r] * d[self.indices[p]];
            }
        }
    }
}

/// Symmetric matrix in upper-triangular CSC form (diagonal included).
#[derive(Debug, Clone)]
pub struct CscUpper<R> {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub values: Vec<R>,
}

/// Sparse LDL^T factorization (no pivoting) of a quasi-definite symmetric
/// matrix. The symbolic structure can be reused across numeric refactors
/// with identical sparsity.
#[derive(Debug, Clone)]
pub struct LdlFactor<R> {
    n: usize,
    parent: Vec<isize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<R>,
    d: Vec<R>,
    // scratch
    lnz_done: Vec<usize>,
    y: Vec<R>,
    pattern: Vec<usize>,
    flag: Vec<usize>,
}

impl<R: Real> LdlFactor<R> {
    /// Symbolic analysis: elimination tree and column counts.
    pub fn symbolic(a: &CscUpper<R>) -> Self {
        let n = a.n;
        let mut parent = vec![-1isize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let mut i = a.rowidx[p];
                while i < k && flag[i] != k {
                    if parent[i] == -1 {
                        parent[i] = k as isize;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i] as usize;
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let total = lp[n];
        LdlFactor {
            n,
            parent,
            lp,
            li: vec![0; total],
            lx: vec![R::zero(); total],
            d: vec![R::zero(); n],
            lnz_done: vec![0; n],
            y: vec![R::zero(); n],
            pattern: vec![0; n],
            flag: vec![usize::MAX; n],
        }
    }

    /// Numeric factorization; the sparsity of `a` must match the symbolic
    /// pattern. Fails on an exactly zero pivot.
    pub fn factor(&mut self, a: &CscUpper<R>) -> Result<(), usize> {
        let n = self.n;
        self.lnz_done.fill(0);
        self.flag.fill(usize::MAX);
        for k in 0..n {
            let mut top = n;
            self.flag[k] = k;
            self.y[k] = R::zero();
            for p in a.colptr[k]..a.colptr[k + 1] {
                let i0 = a.rowidx[p];
                if i0 > k {
                    continue;
                }
                self.y[i0] += a.values[p];
                let mut len = 0usize;
                let mut i = i0;
                while self.flag[i] != k {
                    self.pattern[len] = i;
                    len += 1;
                    self.flag[i] = k;
                    i = self.parent[i] as usize;
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    self.pattern[top] = self.pattern[len];
                }
            }
            let mut dk = self.y[k];
            self.y[k] = R::zero();
            for t in top..n {
                let i = self.pattern[t];
                let yi = self.y[i];
                self.y[i] = R::zero();
                let start = self.lp[i];
                let done = self.lnz_done[i];
                for q in start..start + done {
                    self.y[self.li[q]] -= self.lx[q] * yi;
                }
                let lki = yi / self.d[i];
                dk -= lki * yi;
                self.li[start + done] = k;
                self.lx[start + done] = lki;
                self.lnz_done[i] += 1;
            }
            if dk == R::zero() {
                return Err(k);
            }
            self.d[k] = dk;
        }
        Ok(())
    }

    /// Solve (L D L^T) x = b in place.
    pub fn solve(&self, b: &mut DVector<R>) {
        let n = self.n;
        for j in 0..n {
            let xj = b[j];
            if xj != R::zero() {
                for p in self.lp[j]..self.lp[j] + self.lnz_done[j] {
                    b[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..n {
            b[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = b[j];
            for p in self.lp[j]..self.lp[j] + self.lnz_done[j] {
                xj -= self.lx[p] * b[self.li[p]];
            }
            b[j] = xj;
        }
    }

    pub fn nnz(&self) -> usize {
        self.lp[self.n]
    }
}
