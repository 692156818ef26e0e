//! CSR sparse matrices with a coordinate builder, coordinate-list text
//! serialization, and a left-looking sparse LU used by the full-order solver.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Immutable sparse matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SpMat {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SpMat {
    /// Builds from (row, col, value) triplets; duplicate positions are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> SpMat {
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of {nrows}x{ncols}");
        }
        // Counting sort by row, then sort and merge each row segment by column.
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut entries: Vec<(usize, f64)> = vec![(0, 0.0); triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            entries[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..nrows {
            let seg = &mut entries[counts[r]..counts[r + 1]];
            seg.sort_unstable_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < seg.len() {
                let c = seg[i].0;
                let mut v = seg[i].1;
                i += 1;
                while i < seg.len() && seg[i].0 == c {
                    v += seg[i].1;
                    i += 1;
                }
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SpMat { nrows, ncols, row_ptr, col_idx, vals }
    }

    /// All-zero matrix with the given shape.
    pub fn zeros(nrows: usize, ncols: usize) -> SpMat {
        SpMat {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> SpMat {
        SpMat {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> SpMat {
        let mut trips = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    trips.push((r, c, m[(r, c)]));
                }
            }
        }
        SpMat::from_triplets(m.nrows(), m.ncols(), &trips)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    /// Iterates stored entries as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            (lo..hi).map(move |p| (r, self.col_idx[p], self.vals[p]))
        })
    }

    /// Σ coef_i · M_i over same-shaped matrices.
    pub fn linear_combination(terms: &[(f64, &SpMat)]) -> SpMat {
        assert!(!terms.is_empty(), "linear_combination needs at least one term");
        let (nrows, ncols) = terms[0].1.shape();
        let mut trips = Vec::new();
        for &(coef, m) in terms {
            assert_eq!(m.shape(), (nrows, ncols), "shape mismatch in linear combination");
            for (r, c, v) in m.iter() {
                trips.push((r, c, coef * v));
            }
        }
        SpMat::from_triplets(nrows, ncols, &trips)
    }

    pub fn scale(&self, coef: f64) -> SpMat {
        let mut out = self.clone();
        for v in out.vals.iter_mut() {
            *v *= coef;
        }
        out
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        self.matvec_add(1.0, x, &mut y);
        y
    }

    /// y += coef · A·x.
    pub fn matvec_add(&self, coef: f64, x: &DVector<f64>, y: &mut DVector<f64>) {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        assert_eq!(y.len(), self.nrows, "matvec output dimension mismatch");
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] += coef * acc;
        }
    }

    /// Dot product of row `r` with a dense vector given as a slice.
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        let mut acc = 0.0;
        for (c, v) in cols.iter().zip(vals) {
            acc += v * x[*c];
        }
        acc
    }

    /// A · B for dense B.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols, b.nrows(), "mul_dense dimension mismatch");
        let mut out = DMatrix::zeros(self.nrows, b.ncols());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                for j in 0..b.ncols() {
                    out[(r, j)] += v * b[(*c, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SpMat {
        let trips: Vec<(usize, usize, f64)> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        SpMat::from_triplets(self.ncols, self.nrows, &trips)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    /// Writes the coordinate-list text form: header "rows cols nnz", then one
    /// 1-based "row col value" line per stored entry.
    pub fn write_coo(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for (r, c, v) in self.iter() {
            let _ = writeln!(s, "{} {} {:.16e}", r + 1, c + 1, v);
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Reads the coordinate-list text form written by [`SpMat::write_coo`].
    pub fn read_coo(path: &Path) -> Result<SpMat> {
        let text = std::fs::read_to_string(path)?;
        let bad = |detail: &str| Error::Format {
            path: path.display().to_string(),
            detail: detail.to_string(),
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let mut it = header.split_whitespace();
        let nrows: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad rows"))?;
        let ncols: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad cols"))?;
        let nnz: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad nnz"))?;
        let mut trips = Vec::with_capacity(nnz);
        for line in lines {
            let mut it = line.split_whitespace();
            let r: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad row index"))?;
            let c: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad col index"))?;
            let v: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad value"))?;
            if r == 0 || c == 0 || r > nrows || c > ncols {
                return Err(bad("index out of range (1-based expected)"));
            }
            trips.push((r - 1, c - 1, v));
        }
        if trips.len() != nnz {
            return Err(bad("entry count does not match header"));
        }
        Ok(SpMat::from_triplets(nrows, ncols, &trips))
    }

    fn to_csc(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut col_ptr = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            col_ptr[c + 1] += 1;
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut row_idx = vec![0usize; self.nnz()];
        let mut vals = vec![0.0f64; self.nnz()];
        let mut next = col_ptr.clone();
        for (r, c, v) in self.iter() {
            row_idx[next[c]] = r;
            vals[next[c]] = v;
            next[c] += 1;
        }
        (col_ptr, row_idx, vals)
    }
}

/// Sparse LU factorization with partial pivoting (left-looking, Gilbert-Peierls).
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_vals: Vec<f64>,
    u_colptr: Vec<usize>,
    u_rowidx: Vec<usize>,
    u_vals: Vec<f64>,
    u_diag: Vec<f64>,
    // perm[j] = original row chosen as pivot for column j.
    perm: Vec<usize>,
}

impl SparseLu {
    /// Factors a square matrix, choosing the largest-magnitude pivot per column
    /// (ties broken by lowest row index).
    pub fn factor(a: &SpMat) -> Result<SparseLu> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("LU needs a square matrix, got {:?}", a.shape())));
        }
        let (acp, ari, avx) = a.to_csc();

        let mut l_colptr = vec![0usize];
        let mut l_rowidx: Vec<usize> = Vec::new();
        let mut l_vals: Vec<f64> = Vec::new();
        let mut u_colptr = vec![0usize];
        let mut u_rowidx: Vec<usize> = Vec::new();
        let mut u_vals: Vec<f64> = Vec::new();
        let mut u_diag = vec![0.0f64; n];
        let mut perm = vec![usize::MAX; n];
        let mut pinv = vec![usize::MAX; n];

        let mut x = vec![0.0f64; n];
        let mut mark = vec![usize::MAX; n];
        let mut post: Vec<usize> = Vec::with_capacity(n);
        // DFS stack of (node, next child position in its L column).
        let mut stack: Vec<(usize, usize)> = Vec::with_capacity(n);

        for j in 0..n {
            // Symbolic: topological closure of A[:,j] under the filled-in L pattern.
            post.clear();
            for &r0 in &ari[acp[j]..acp[j + 1]] {
                if mark[r0] == j {
                    continue;
                }
                stack.push((r0, 0));
                mark[r0] = j;
                while let Some(&mut (r, ref mut cp)) = stack.last_mut() {
                    let k = pinv[r];
                    let (lo, hi) = if k == usize::MAX {
                        (0, 0)
                    } else {
                        (l_colptr[k], l_colptr[k + 1])
                    };
                    let mut descended = false;
                    while lo + *cp < hi {
                        let child = l_rowidx[lo + *cp];
                        *cp += 1;
                        if mark[child] != j {
                            mark[child] = j;
                            stack.push((child, 0));
                            descended = true;
                            break;
                        }
                    }
                    if !descended {
                        stack.pop();
                        post.push(r);
                    }
                }
            }

            // Numeric: scatter A[:,j], then eliminate in topological order.
            for p in acp[j]..acp[j + 1] {
                x[ari[p]] += avx[p];
            }
            for &r in post.iter().rev() {
                let k = pinv[r];
                if k == usize::MAX {
                    continue;
                }
                let xr = x[r];
                if xr != 0.0 {
                    for p in l_colptr[k]..l_colptr[k + 1] {
                        x[l_rowidx[p]] -= l_vals[p] * xr;
                    }
                }
            }

            // Pivot among rows not yet assigned to a column.
            let mut piv_row = usize::MAX;
            let mut piv_abs = 0.0f64;
            for &r in post.iter() {
                if pinv[r] == usize::MAX {
                    let a = x[r].abs();
                    if a > piv_abs || (a == piv_abs && a > 0.0 && r < piv_row) {
                        piv_abs = a;
                        piv_row = r;
                    }
                }
            }
            if piv_row == usize::MAX || piv_abs == 0.0 {
                return Err(Error::Singular(format!("zero pivot at column {j}")));
            }
            let piv = x[piv_row];

            for &r in post.iter() {
                let k = pinv[r];
                if k != usize::MAX {
                    u_rowidx.push(k);
                    u_vals.push(x[r]);
                } else if r != piv_row {
                    l_rowidx.push(r);
                    l_vals.push(x[r] / piv);
                }
                x[r] = 0.0;
            }
            u_diag[j] = piv;
            u_colptr.push(u_rowidx.len());
            l_colptr.push(l_rowidx.len());
            perm[j] = piv_row;
            pinv[piv_row] = j;
        }

        Ok(SparseLu {
            n,
            l_colptr,
            l_rowidx,
            l_vals,
            u_colptr,
            u_rowidx,
            u_vals,
            u_diag,
            perm,
        })
    }

    /// Solves A·x = b for the factored A.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let mut w: Vec<f64> = b.as_slice().to_vec();
        let mut y = vec![0.0f64; self.n];
        for j in 0..self.n {
            let v = w[self.perm[j]];
            y[j] = v;
            if v != 0.0 {
                for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                    w[self.l_rowidx[p]] -= self.l_vals[p] * v;
                }
            }
        }
        for j in (0..self.n).rev() {
            y[j] /= self.u_diag[j];
            let zj = y[j];
            if zj != 0.0 {
                for p in self.u_colptr[j]..self.u_colptr[j + 1] {
                    y[self.u_rowidx[p]] -= self.u_vals[p] * zj;
                }
            }
        }
        DVector::from_vec(y)
    }
}
