//! Semi-discrete polynomial dynamical systems with affine parametric operators,
//! plus the Kronecker selector utilities shared by the reduced methods.
//!
//! State dynamics have the form
//!   dx/dt = C(μ) + A(μ)·x + F(μ)·(x⊗x) + B(μ)·u + N(μ)·(u⊗x) [+ W(μ)·(x⊗x⊗x)]
//! with every operator an affine combination Σ θ_i(μ)·M_i of sparse matrices.
//! Kronecker products are never materialized at full order; quadratic and cubic
//! terms are evaluated by contraction over stored nonzeros.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SpMat;

/// Ordered real parameter components μ_1..μ_{n_p}.
pub type ParamVector = Vec<f64>;

/// Maps a parameter vector to one real affine coefficient θ(μ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AffineScalar {
    /// θ(μ) = c.
    Constant(f64),
    /// θ(μ) = μ_i (0-based component index).
    Component(usize),
    /// θ(μ) = c·μ_i.
    ScaledComponent(f64, usize),
}

impl AffineScalar {
    pub fn evaluate(&self, mu: &[f64]) -> Result<f64> {
        let component = |i: usize| {
            mu.get(i).copied().ok_or(Error::ParamIndex { index: i, len: mu.len() })
        };
        match *self {
            AffineScalar::Constant(c) => Ok(c),
            AffineScalar::Component(i) => component(i),
            AffineScalar::ScaledComponent(c, i) => Ok(c * component(i)?),
        }
    }
}

/// Parameter-affine sparse operator Σ θ_i(μ)·M_i; all terms share one shape.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    terms: Vec<(AffineScalar, SpMat)>,
}

impl AffineOperator {
    pub fn new(terms: Vec<(AffineScalar, SpMat)>) -> AffineOperator {
        assert!(!terms.is_empty(), "affine operator needs at least one term");
        let shape = terms[0].1.shape();
        for (_, m) in &terms {
            assert_eq!(m.shape(), shape, "affine operator terms must share one shape");
        }
        AffineOperator { terms }
    }

    /// Single parameter-independent term.
    pub fn constant(m: SpMat) -> AffineOperator {
        AffineOperator::new(vec![(AffineScalar::Constant(1.0), m)])
    }

    /// All-zero operator of the given shape (single empty constant term).
    pub fn zero(nrows: usize, ncols: usize) -> AffineOperator {
        AffineOperator::constant(SpMat::zeros(nrows, ncols))
    }

    pub fn terms(&self) -> &[(AffineScalar, SpMat)] {
        &self.terms
    }

    pub fn shape(&self) -> (usize, usize) {
        self.terms[0].1.shape()
    }
}

/// Σ θ_i(μ)·M_i as a concrete sparse matrix.
pub fn evaluate_operator(op: &AffineOperator, mu: &[f64]) -> Result<SpMat> {
    let mut scaled = Vec::with_capacity(op.terms.len());
    for (theta, m) in &op.terms {
        scaled.push((theta.evaluate(mu)?, m));
    }
    Ok(SpMat::linear_combination(&scaled))
}

pub type InputSignal = Box<dyn Fn(f64, &[f64]) -> DVector<f64> + Send + Sync>;
pub type InitialState = Box<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// Semi-discrete polynomial system of dimension N with N_u inputs.
pub struct PolynomialSystem {
    pub dim_state: usize,
    pub dim_input: usize,
    pub op_c: AffineOperator,
    pub op_a: AffineOperator,
    pub op_f: AffineOperator,
    pub op_b: AffineOperator,
    pub op_n: AffineOperator,
    pub op_w: Option<AffineOperator>,
    pub input_signal: InputSignal,
    pub initial_state: InitialState,
    /// Per-row dependency neighborhoods (each includes the row itself).
    pub stencil: Vec<Vec<usize>>,
}

impl PolynomialSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim_state: usize,
        dim_input: usize,
        op_c: AffineOperator,
        op_a: AffineOperator,
        op_f: AffineOperator,
        op_b: AffineOperator,
        op_n: AffineOperator,
        op_w: Option<AffineOperator>,
        input_signal: InputSignal,
        initial_state: InitialState,
        stencil: Vec<Vec<usize>>,
    ) -> PolynomialSystem {
        let n = dim_state;
        assert_eq!(op_c.shape(), (n, 1), "C must be N x 1");
        assert_eq!(op_a.shape(), (n, n), "A must be N x N");
        assert_eq!(op_f.shape(), (n, n * n), "F must be N x N^2");
        assert_eq!(op_b.shape(), (n, dim_input), "B must be N x N_u");
        assert_eq!(op_n.shape(), (n, dim_input * n), "N must be N x N_u*N");
        if let Some(w) = &op_w {
            assert_eq!(w.shape(), (n, n * n * n), "W must be N x N^3");
        }
        assert_eq!(stencil.len(), n, "stencil must cover every row");
        let mut stencil: Vec<Vec<usize>> = stencil;
        for (s, nbr) in stencil.iter_mut().enumerate() {
            if !nbr.contains(&s) {
                nbr.push(s);
            }
            nbr.sort_unstable();
            nbr.dedup();
            assert!(*nbr.last().unwrap() < n, "stencil index out of range");
        }
        let sys = PolynomialSystem {
            dim_state,
            dim_input,
            op_c,
            op_a,
            op_f,
            op_b,
            op_n,
            op_w,
            input_signal,
            initial_state,
            stencil,
        };
        sys.check_stencil_covers_operators();
        sys
    }

    /// Every state index an operator row touches must lie in that row's stencil.
    fn check_stencil_covers_operators(&self) {
        let n = self.dim_state;
        let covered = |r: usize, k: usize| self.stencil[r].binary_search(&k).is_ok();
        for (_, m) in self.op_a.terms() {
            for (r, c, _) in m.iter() {
                assert!(covered(r, c), "A entry ({r},{c}) outside stencil");
            }
        }
        for (_, m) in self.op_f.terms() {
            for (r, c, _) in m.iter() {
                let (i, j) = decode2(c, n);
                assert!(covered(r, i) && covered(r, j), "F entry ({r},{c}) outside stencil");
            }
        }
        for (_, m) in self.op_n.terms() {
            for (r, c, _) in m.iter() {
                let (_, j) = decode2(c, n);
                assert!(covered(r, j), "N entry ({r},{c}) outside stencil");
            }
        }
        if let Some(w) = &self.op_w {
            for (_, m) in w.terms() {
                for (r, c, _) in m.iter() {
                    let (i, j, k) = decode3(c, n);
                    assert!(
                        covered(r, i) && covered(r, j) && covered(r, k),
                        "W entry ({r},{c}) outside stencil"
                    );
                }
            }
        }
    }

    /// Concrete operators at a fixed parameter value.
    pub fn evaluate(&self, mu: &[f64]) -> Result<EvaluatedSystem> {
        let c_sp = evaluate_operator(&self.op_c, mu)?;
        let mut c = DVector::zeros(self.dim_state);
        for (r, _, v) in c_sp.iter() {
            c[r] += v;
        }
        Ok(EvaluatedSystem {
            dim_state: self.dim_state,
            dim_input: self.dim_input,
            c,
            a: evaluate_operator(&self.op_a, mu)?,
            f: evaluate_operator(&self.op_f, mu)?,
            b: evaluate_operator(&self.op_b, mu)?.to_dense(),
            n_op: evaluate_operator(&self.op_n, mu)?,
            w: match &self.op_w {
                Some(w) => Some(evaluate_operator(w, mu)?),
                None => None,
            },
        })
    }

    pub fn input(&self, t: f64, mu: &[f64]) -> DVector<f64> {
        let u = (self.input_signal)(t, mu);
        assert_eq!(u.len(), self.dim_input, "input signal length mismatch");
        u
    }

    pub fn initial(&self, mu: &[f64]) -> DVector<f64> {
        let x0 = (self.initial_state)(mu);
        assert_eq!(x0.len(), self.dim_state, "initial state length mismatch");
        x0
    }
}

/// Operators of a [`PolynomialSystem`] evaluated at one parameter value.
#[derive(Debug, Clone)]
pub struct EvaluatedSystem {
    pub dim_state: usize,
    pub dim_input: usize,
    pub c: DVector<f64>,
    pub a: SpMat,
    pub f: SpMat,
    pub b: DMatrix<f64>,
    pub n_op: SpMat,
    pub w: Option<SpMat>,
}

impl EvaluatedSystem {
    /// y += coef·f(x, u) by sparse contraction.
    pub fn rhs_add(&self, coef: f64, x: &DVector<f64>, u: &DVector<f64>, y: &mut DVector<f64>) {
        let n = self.dim_state;
        assert_eq!(x.len(), n, "state length mismatch");
        assert_eq!(u.len(), self.dim_input, "input length mismatch");
        y.axpy(coef, &self.c, 1.0);
        self.a.matvec_add(coef, x, y);
        for (r, col, v) in self.f.iter() {
            let (i, j) = decode2(col, n);
            y[r] += coef * v * x[i] * x[j];
        }
        if self.dim_input > 0 {
            let mut bu = DVector::zeros(n);
            self.b.mul_to(u, &mut bu);
            y.axpy(coef, &bu, 1.0);
            for (r, col, v) in self.n_op.iter() {
                let (k, j) = decode2(col, n);
                y[r] += coef * v * u[k] * x[j];
            }
        }
        if let Some(w) = &self.w {
            for (r, col, v) in w.iter() {
                let (i, j, k) = decode3(col, n);
                y[r] += coef * v * x[i] * x[j] * x[k];
            }
        }
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim_state);
        self.rhs_add(1.0, x, u, &mut y);
        y
    }

    /// Triplets of the state Jacobian ∂f/∂x at (x, u).
    pub fn jacobian_triplets(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vec<(usize, usize, f64)> {
        let n = self.dim_state;
        assert_eq!(x.len(), n, "state length mismatch");
        assert_eq!(u.len(), self.dim_input, "input length mismatch");
        let mut trips: Vec<(usize, usize, f64)> = Vec::with_capacity(
            self.a.nnz() + 2 * self.f.nnz() + self.n_op.nnz()
                + self.w.as_ref().map_or(0, |w| 3 * w.nnz()),
        );
        trips.extend(self.a.iter());
        for (r, col, v) in self.f.iter() {
            let (i, j) = decode2(col, n);
            trips.push((r, j, v * x[i]));
            trips.push((r, i, v * x[j]));
        }
        for (r, col, v) in self.n_op.iter() {
            let (k, j) = decode2(col, n);
            trips.push((r, j, v * u[k]));
        }
        if let Some(w) = &self.w {
            for (r, col, v) in w.iter() {
                let (i, j, k) = decode3(col, n);
                trips.push((r, k, v * x[i] * x[j]));
                trips.push((r, j, v * x[i] * x[k]));
                trips.push((r, i, v * x[j] * x[k]));
            }
        }
        trips
    }

    pub fn jacobian_sparse(&self, x: &DVector<f64>, u: &DVector<f64>) -> SpMat {
        SpMat::from_triplets(self.dim_state, self.dim_state, &self.jacobian_triplets(x, u))
    }

    /// Row s of f(x, u); state values read from a slice so callers may fill
    /// only the stencil neighborhood of s.
    pub fn rhs_row(&self, s: usize, x: &[f64], u: &DVector<f64>) -> f64 {
        let n = self.dim_state;
        let mut acc = self.c[s] + self.a.row_dot(s, x);
        let (cols, vals) = self.f.row(s);
        for (col, v) in cols.iter().zip(vals) {
            let (i, j) = decode2(*col, n);
            acc += v * x[i] * x[j];
        }
        for k in 0..self.dim_input {
            acc += self.b[(s, k)] * u[k];
        }
        let (cols, vals) = self.n_op.row(s);
        for (col, v) in cols.iter().zip(vals) {
            let (k, j) = decode2(*col, n);
            acc += v * u[k] * x[j];
        }
        if let Some(w) = &self.w {
            let (cols, vals) = w.row(s);
            for (col, v) in cols.iter().zip(vals) {
                let (i, j, k) = decode3(*col, n);
                acc += v * x[i] * x[j] * x[k];
            }
        }
        acc
    }

    /// Visits the entries of row s of ∂f/∂x at (x, u); entries for one column
    /// may repeat and are meant to be accumulated.
    pub fn jacobian_row_visit(
        &self,
        s: usize,
        x: &[f64],
        u: &DVector<f64>,
        mut visit: impl FnMut(usize, f64),
    ) {
        let n = self.dim_state;
        let (cols, vals) = self.a.row(s);
        for (col, v) in cols.iter().zip(vals) {
            visit(*col, *v);
        }
        let (cols, vals) = self.f.row(s);
        for (col, v) in cols.iter().zip(vals) {
            let (i, j) = decode2(*col, n);
            visit(j, v * x[i]);
            visit(i, v * x[j]);
        }
        let (cols, vals) = self.n_op.row(s);
        for (col, v) in cols.iter().zip(vals) {
            let (k, j) = decode2(*col, n);
            visit(j, v * u[k]);
        }
        if let Some(w) = &self.w {
            let (cols, vals) = w.row(s);
            for (col, v) in cols.iter().zip(vals) {
                let (i, j, k) = decode3(*col, n);
                visit(k, v * x[i] * x[j]);
                visit(j, v * x[i] * x[k]);
                visit(i, v * x[j] * x[k]);
            }
        }
    }
}

/// f(x, u; μ) = C + A·x + F·(x⊗x) + B·u + N·(u⊗x) [+ W·(x⊗x⊗x)].
pub fn system_rhs(
    sys: &PolynomialSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    mu: &[f64],
) -> Result<DVector<f64>> {
    check_dims(sys, x, u)?;
    Ok(sys.evaluate(mu)?.rhs(x, u))
}

/// Exact Jacobian ∂f/∂x of [`system_rhs`], dense N×N.
pub fn system_rhs_jacobian(
    sys: &PolynomialSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    mu: &[f64],
) -> Result<DMatrix<f64>> {
    check_dims(sys, x, u)?;
    let esys = sys.evaluate(mu)?;
    let mut jac = DMatrix::zeros(sys.dim_state, sys.dim_state);
    for (r, c, v) in esys.jacobian_triplets(x, u) {
        jac[(r, c)] += v;
    }
    Ok(jac)
}

fn check_dims(sys: &PolynomialSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
    if x.len() != sys.dim_state {
        return Err(Error::Dimension(format!(
            "state length {} does not match system dimension {}",
            x.len(),
            sys.dim_state
        )));
    }
    if u.len() != sys.dim_input {
        return Err(Error::Dimension(format!(
            "input length {} does not match system input dimension {}",
            u.len(),
            sys.dim_input
        )));
    }
    Ok(())
}

/// Kronecker pair (i, j) -> flat column index, 0-based.
#[inline]
pub fn idx2(i: usize, j: usize, n: usize) -> usize {
    i * n + j
}

/// Flat column index -> Kronecker pair (i, j), 0-based.
#[inline]
pub fn decode2(col: usize, n: usize) -> (usize, usize) {
    (col / n, col % n)
}

/// Kronecker triple (i, j, k) -> flat column index, 0-based.
#[inline]
pub fn idx3(i: usize, j: usize, k: usize, n: usize) -> usize {
    (i * n + j) * n + k
}

/// Flat column index -> Kronecker triple (i, j, k), 0-based.
#[inline]
pub fn decode3(col: usize, n: usize) -> (usize, usize, usize) {
    (col / (n * n), (col / n) % n, col % n)
}

fn kron_side(ncols: usize) -> usize {
    let n = (ncols as f64).sqrt().round() as usize;
    assert_eq!(n * n, ncols, "matrix must have n^2 columns");
    n
}

/// M·G^ℓ: the contiguous column block (ℓ−1)·n+1 ..= ℓ·n of M (ℓ is 1-based).
pub fn kron_select_g(m: &DMatrix<f64>, ell: usize) -> DMatrix<f64> {
    let n = kron_side(m.ncols());
    assert!(ell >= 1 && ell <= n, "selector index out of range");
    m.columns((ell - 1) * n, n).into_owned()
}

/// M·H^ℓ: the strided columns ℓ, ℓ+n, …, ℓ+(n−1)·n of M (ℓ is 1-based).
pub fn kron_select_h(m: &DMatrix<f64>, ell: usize) -> DMatrix<f64> {
    let n = kron_side(m.ncols());
    assert!(ell >= 1 && ell <= n, "selector index out of range");
    DMatrix::from_fn(m.nrows(), n, |r, c| m[(r, c * n + (ell - 1))])
}

/// (Σ_ℓ G^ℓ·x̂_ℓ, Σ_ℓ H^ℓ·x̂_ℓ); equal to (x̂⊗I_n, I_n⊗x̂) by the selector
/// identities, returned densely for testing.
pub fn kron_sum_identity_check(xhat: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = xhat.len();
    let mut g = DMatrix::zeros(n * n, n);
    let mut h = DMatrix::zeros(n * n, n);
    for a in 0..n {
        for b in 0..n {
            g[(idx2(a, b, n), b)] = xhat[a];
            h[(idx2(a, b, n), a)] = xhat[b];
        }
    }
    (g, h)
}
