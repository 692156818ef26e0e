//! Hyper-reduction-free (HRF) reduced operators: offline projections of the
//! polynomial operators onto the POD basis, plus the dense online contraction
//! kernels that keep every per-iteration cost a polynomial in n alone.
//!
//! Kronecker columns follow the 0-based convention col = i·n + j (quadratic)
//! and col = (i·n + j)·n + k (cubic). Selector contractions never materialize
//! Kronecker-structured matrices: (x̂⊗I) and (I⊗x̂) act by column selection
//! with weight x̂, and the cubic sum S₃(x̂) = (x̂⊗x̂⊗I) + (x̂⊗I⊗x̂) + (I⊗x̂⊗x̂)
//! acts through index triples.

mod galerkin;
mod lspg;
mod store;

pub use galerkin::{
    assemble_hrf_galerkin, hrf_galerkin_assembler, precompute_hrf_cubic, precompute_hrf_galerkin,
    HrfCubicOperators, HrfGalerkinAssembler, HrfGalerkinEvaluated, HrfGalerkinOperators,
};
pub use lspg::{
    assemble_hrf_lspg, hrf_lspg_assembler, precompute_hrf_lspg, HrfLspgAssembler,
    HrfLspgEvaluated, HrfLspgOperators, LspgCubicBlocks,
};
pub use store::{load_hrf_galerkin, load_hrf_lspg, save_hrf_galerkin, save_hrf_lspg};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::polysys::{decode2, decode3, AffineScalar, ParamVector};
use crate::sparse::SpMat;

/// Default cap on the total number of stored tensor entries (~800 MB of f64).
pub const DEFAULT_TENSOR_CAP: usize = 100_000_000;

/// Guards a planned dense allocation against the entry cap.
pub(crate) fn guard_entries(what: &str, entries: usize, cap: usize) -> Result<()> {
    if entries > cap {
        Err(Error::MemoryCap { what: what.to_string(), entries, cap })
    } else {
        Ok(())
    }
}

/// x̂⊗x̂ with y[i·n + j] = x̂_i·x̂_j.
pub fn kron2(xhat: &DVector<f64>) -> DVector<f64> {
    let n = xhat.len();
    let mut y = DVector::zeros(n * n);
    for i in 0..n {
        let xi = xhat[i];
        for j in 0..n {
            y[i * n + j] = xi * xhat[j];
        }
    }
    y
}

/// x̂⊗x̂⊗x̂ with y[(i·n + j)·n + k] = x̂_i·x̂_j·x̂_k.
pub fn kron3(xhat: &DVector<f64>) -> DVector<f64> {
    let n = xhat.len();
    let mut y = DVector::zeros(n * n * n);
    for i in 0..n {
        for j in 0..n {
            let xij = xhat[i] * xhat[j];
            for k in 0..n {
                y[(i * n + j) * n + k] = xij * xhat[k];
            }
        }
    }
    y
}

/// u⊗x̂ with y[k·n + a] = u_k·x̂_a.
pub fn kron_ux(u: &DVector<f64>, xhat: &DVector<f64>) -> DVector<f64> {
    let n = xhat.len();
    let mut y = DVector::zeros(u.len() * n);
    for k in 0..u.len() {
        let uk = u[k];
        for a in 0..n {
            y[k * n + a] = uk * xhat[a];
        }
    }
    y
}

/// M·(x̂⊗I): out[:, c] = Σ_a x̂_a·M[:, a·n + c].
pub fn contract_right_g(m: &DMatrix<f64>, xhat: &DVector<f64>) -> DMatrix<f64> {
    let n = xhat.len();
    assert_eq!(m.ncols(), n * n, "matrix is not n x n^2");
    let mut out = DMatrix::zeros(m.nrows(), n);
    for a in 0..n {
        let xa = xhat[a];
        if xa == 0.0 {
            continue;
        }
        for c in 0..n {
            out.column_mut(c).axpy(xa, &m.column(a * n + c), 1.0);
        }
    }
    out
}

/// M·(I⊗x̂): out[:, c] = Σ_b x̂_b·M[:, c·n + b].
pub fn contract_right_h(m: &DMatrix<f64>, xhat: &DVector<f64>) -> DMatrix<f64> {
    let n = xhat.len();
    assert_eq!(m.ncols(), n * n, "matrix is not n x n^2");
    let mut out = DMatrix::zeros(m.nrows(), n);
    for c in 0..n {
        out.column_mut(c).gemv(1.0, &m.columns(c * n, n), xhat, 0.0);
    }
    out
}

/// M·S₂(x̂) with S₂ = (x̂⊗I) + (I⊗x̂); the quadratic Jacobian contraction.
pub fn contract_right_s2(m: &DMatrix<f64>, xhat: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), xhat.len());
    add_contract_right_s2(m, xhat, &mut out);
    out
}

/// out += M·S₂(x̂); the allocation-free core of [`contract_right_s2`] used by
/// the online assemblers.
pub fn add_contract_right_s2(m: &DMatrix<f64>, xhat: &DVector<f64>, out: &mut DMatrix<f64>) {
    let n = xhat.len();
    assert_eq!(m.ncols(), n * n, "matrix is not n x n^2");
    assert_eq!(out.shape(), (m.nrows(), n), "contraction output shape mismatch");
    for a in 0..n {
        let xa = xhat[a];
        if xa == 0.0 {
            continue;
        }
        for c in 0..n {
            out.column_mut(c).axpy(xa, &m.column(a * n + c), 1.0);
        }
    }
    for c in 0..n {
        out.column_mut(c).gemv(1.0, &m.columns(c * n, n), xhat, 1.0);
    }
}

/// M·(u⊗I): out[:, c] = Σ_k u_k·M[:, k·n + c] for M with N_u·n columns.
pub fn contract_right_u(m: &DMatrix<f64>, u: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), n);
    add_contract_right_u(m, u, n, &mut out);
    out
}

/// out += M·(u⊗I); the allocation-free core of [`contract_right_u`].
pub fn add_contract_right_u(m: &DMatrix<f64>, u: &DVector<f64>, n: usize, out: &mut DMatrix<f64>) {
    assert_eq!(m.ncols(), u.len() * n, "matrix is not r x (N_u n)");
    assert_eq!(out.shape(), (m.nrows(), n), "contraction output shape mismatch");
    for k in 0..u.len() {
        let uk = u[k];
        if uk == 0.0 {
            continue;
        }
        for c in 0..n {
            out.column_mut(c).axpy(uk, &m.column(k * n + c), 1.0);
        }
    }
}

/// M·S₃(x̂): out[:, c] = Σ_{a,b} x̂_a·x̂_b·(M[:, (ab)c] + M[:, (ac)b] + M[:, (cb... )])
/// over the three placements (a,b,c), (a,c,b), (c,a,b); the cubic Jacobian
/// contraction.
pub fn contract_right_s3(m: &DMatrix<f64>, xhat: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), xhat.len());
    add_contract_right_s3(m, xhat, &mut out);
    out
}

/// out += M·S₃(x̂); the allocation-free core of [`contract_right_s3`].
pub fn add_contract_right_s3(m: &DMatrix<f64>, xhat: &DVector<f64>, out: &mut DMatrix<f64>) {
    let n = xhat.len();
    assert_eq!(m.ncols(), n * n * n, "matrix is not r x n^3");
    assert_eq!(out.shape(), (m.nrows(), n), "contraction output shape mismatch");
    for a in 0..n {
        for b in 0..n {
            let w = xhat[a] * xhat[b];
            if w == 0.0 {
                continue;
            }
            let base = (a * n + b) * n;
            for c in 0..n {
                out.column_mut(c).axpy(w, &m.column(base + c), 1.0);
                out.column_mut(c).axpy(w, &m.column((a * n + c) * n + b), 1.0);
                out.column_mut(c).axpy(w, &m.column((c * n + a) * n + b), 1.0);
            }
        }
    }
}

/// S₂(x̂)ᵀ·K for K with n² rows: out[d, :] = Σ_a x̂_a·(K[a·n+d, :] + K[d·n+a, :]).
pub fn contract_left_s2(k: &DMatrix<f64>, xhat: &DVector<f64>) -> DMatrix<f64> {
    let n = xhat.len();
    assert_eq!(k.nrows(), n * n, "matrix is not n^2 x c");
    let mut out = DMatrix::zeros(n, k.ncols());
    for col in 0..k.ncols() {
        let kcol = k.column(col);
        let mut ocol = out.column_mut(col);
        for a in 0..n {
            ocol.axpy(xhat[a], &kcol.rows(a * n, n), 1.0);
        }
        for d in 0..n {
            ocol[d] += xhat.dot(&kcol.rows(d * n, n));
        }
    }
    out
}

/// (u⊗I)ᵀ·K for K with N_u·n rows: out[a, :] = Σ_k u_k·K[k·n + a, :].
pub fn contract_left_u(k: &DMatrix<f64>, u: &DVector<f64>, n: usize) -> DMatrix<f64> {
    assert_eq!(k.nrows(), u.len() * n, "matrix is not (N_u n) x c");
    let mut out = DMatrix::zeros(n, k.ncols());
    for col in 0..k.ncols() {
        let kcol = k.column(col);
        let mut ocol = out.column_mut(col);
        for kk in 0..u.len() {
            ocol.axpy(u[kk], &kcol.rows(kk * n, n), 1.0);
        }
    }
    out
}

/// S₃(x̂)ᵀ·K for K with n³ rows: the transpose of [`contract_right_s3`].
pub fn contract_left_s3(k: &DMatrix<f64>, xhat: &DVector<f64>) -> DMatrix<f64> {
    let n = xhat.len();
    assert_eq!(k.nrows(), n * n * n, "matrix is not n^3 x c");
    let mut out = DMatrix::zeros(n, k.ncols());
    for col in 0..k.ncols() {
        let kcol = k.column(col);
        let mut ocol = out.column_mut(col);
        for a in 0..n {
            for b in 0..n {
                let w = xhat[a] * xhat[b];
                if w == 0.0 {
                    continue;
                }
                ocol.axpy(w, &kcol.rows((a * n + b) * n, n), 1.0);
                for d in 0..n {
                    ocol[d] += w * (kcol[(a * n + d) * n + b] + kcol[(d * n + a) * n + b]);
                }
            }
        }
    }
    out
}

/// S₂(x̂)ᵀ·v for an n²-vector: out[d] = Σ_a x̂_a·(v[a·n+d] + v[d·n+a]).
pub fn contract_left_s2_vec(v: &DVector<f64>, xhat: &DVector<f64>) -> DVector<f64> {
    let n = xhat.len();
    assert_eq!(v.len(), n * n, "vector is not length n^2");
    let mut out = DVector::zeros(n);
    for a in 0..n {
        out.axpy(xhat[a], &v.rows(a * n, n), 1.0);
    }
    for d in 0..n {
        out[d] += xhat.dot(&v.rows(d * n, n));
    }
    out
}

/// (u⊗I)ᵀ·v for an (N_u·n)-vector: out[a] = Σ_k u_k·v[k·n + a].
pub fn contract_left_u_vec(v: &DVector<f64>, u: &DVector<f64>, n: usize) -> DVector<f64> {
    assert_eq!(v.len(), u.len() * n, "vector is not length N_u n");
    let mut out = DVector::zeros(n);
    for k in 0..u.len() {
        out.axpy(u[k], &v.rows(k * n, n), 1.0);
    }
    out
}

/// S₃(x̂)ᵀ·v for an n³-vector.
pub fn contract_left_s3_vec(v: &DVector<f64>, xhat: &DVector<f64>) -> DVector<f64> {
    let n = xhat.len();
    assert_eq!(v.len(), n * n * n, "vector is not length n^3");
    let mut out = DVector::zeros(n);
    for a in 0..n {
        for b in 0..n {
            let w = xhat[a] * xhat[b];
            if w == 0.0 {
                continue;
            }
            out.axpy(w, &v.rows((a * n + b) * n, n), 1.0);
            for d in 0..n {
                out[d] += w * (v[(a * n + d) * n + b] + v[(d * n + a) * n + b]);
            }
        }
    }
    out
}

/// Evaluates Σ_i θ_i(μ)·M_i for a list of affine matrix terms.
pub(crate) fn combine_mats(
    terms: &[(AffineScalar, DMatrix<f64>)],
    mu: &ParamVector,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(terms[0].1.nrows(), terms[0].1.ncols());
    for (theta, m) in terms {
        let t = theta.evaluate(mu)?;
        if t != 0.0 {
            out.zip_apply(m, |o, v| *o += t * v);
        }
    }
    Ok(out)
}

/// Evaluates Σ_i θ_i(μ)·v_i for a list of affine vector terms.
pub(crate) fn combine_vecs(
    terms: &[(AffineScalar, DVector<f64>)],
    mu: &ParamVector,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(terms[0].1.len());
    for (theta, v) in terms {
        let t = theta.evaluate(mu)?;
        if t != 0.0 {
            out.axpy(t, v, 1.0);
        }
    }
    Ok(out)
}

/// Evaluates Σ_{i,j} θ_i(μ)·θ_j(μ)·M_ij for ordered pair terms.
pub(crate) fn combine_pair_mats(
    terms: &[(AffineScalar, AffineScalar, DMatrix<f64>)],
    mu: &ParamVector,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(terms[0].2.nrows(), terms[0].2.ncols());
    for (ti, tj, m) in terms {
        let t = ti.evaluate(mu)? * tj.evaluate(mu)?;
        if t != 0.0 {
            out.zip_apply(m, |o, v| *o += t * v);
        }
    }
    Ok(out)
}

/// Evaluates Σ_{i,j} θ_i(μ)·θ_j(μ)·v_ij for ordered pair vector terms.
pub(crate) fn combine_pair_vecs(
    terms: &[(AffineScalar, AffineScalar, DVector<f64>)],
    mu: &ParamVector,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(terms[0].2.len());
    for (ti, tj, v) in terms {
        let t = ti.evaluate(mu)? * tj.evaluate(mu)?;
        if t != 0.0 {
            out.axpy(t, v, 1.0);
        }
    }
    Ok(out)
}

// ---- Offline component projections -----------------------------------------
//
// All component matrices are stored transposed against rows of Φ, i.e. with a
// contiguous column per full-order row, so sparse scatter lands on unit-stride
// slices. Φᵗ denotes the n×N transpose of the basis.

/// Φᵀ·c for a sparse N×1 operator term, using the transposed basis.
pub(crate) fn project_vec_term(phi_t: &DMatrix<f64>, c: &SpMat) -> DVector<f64> {
    let mut out = DVector::zeros(phi_t.nrows());
    for (r, _col, v) in c.iter() {
        out.axpy(v, &phi_t.column(r), 1.0);
    }
    out
}

/// [F(Φ⊗Φ)]ᵀ as an n²×N matrix: column r accumulates
/// Σ_{(i,j)} F[r, (i,j)]·(Φ[i,:]⊗Φ[j,:]).
pub(crate) fn component_f_t(phi_t: &DMatrix<f64>, f: &SpMat) -> DMatrix<f64> {
    let n = phi_t.nrows();
    let nfull = phi_t.ncols();
    let mut out = DMatrix::zeros(n * n, f.nrows());
    for (r, col, v) in f.iter() {
        let (i, j) = decode2(col, nfull);
        let mut ocol = out.column_mut(r);
        for a in 0..n {
            let w = v * phi_t[(a, i)];
            if w != 0.0 {
                ocol.rows_mut(a * n, n).axpy(w, &phi_t.column(j), 1.0);
            }
        }
    }
    out
}

/// [N(I⊗Φ)]ᵀ as an (N_u·n)×N matrix: column r accumulates v·e_k⊗Φ[i,:] for
/// each nonzero N[r, (k,i)].
pub(crate) fn component_n_t(phi_t: &DMatrix<f64>, nm: &SpMat, n_u: usize) -> DMatrix<f64> {
    let n = phi_t.nrows();
    let nfull = phi_t.ncols();
    assert_eq!(nm.ncols(), n_u * nfull, "N operator has wrong column count");
    let mut out = DMatrix::zeros(n_u * n, nm.nrows());
    for (r, col, v) in nm.iter() {
        // col = k·N + i with k the input index, same layout as decode2.
        let (k, i) = decode2(col, nfull);
        out.column_mut(r).rows_mut(k * n, n).axpy(v, &phi_t.column(i), 1.0);
    }
    out
}

/// [W(Φ⊗Φ⊗Φ)]ᵀ as an n³×N matrix.
pub(crate) fn component_w_t(phi_t: &DMatrix<f64>, w: &SpMat) -> DMatrix<f64> {
    let n = phi_t.nrows();
    let nfull = phi_t.ncols();
    let mut out = DMatrix::zeros(n * n * n, w.nrows());
    for (r, col, v) in w.iter() {
        let (i, j, k) = decode3(col, nfull);
        let mut ocol = out.column_mut(r);
        for a in 0..n {
            let va = v * phi_t[(a, i)];
            if va == 0.0 {
                continue;
            }
            for b in 0..n {
                let vab = va * phi_t[(b, j)];
                if vab != 0.0 {
                    ocol.rows_mut((a * n + b) * n, n).axpy(vab, &phi_t.column(k), 1.0);
                }
            }
        }
    }
    out
}
