//! Shared oracles for the integration tests: dense Kronecker evaluation of
//! polynomial systems, finite-difference Jacobians, and seeded random inputs.
//! Everything here materializes full Kronecker products with plain loops, so
//! it is independent of the contraction-based code paths under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polyrom::basis::ReducedBasis;
use polyrom::polysys::{AffineOperator, AffineScalar, PolynomialSystem};
use polyrom::sparse::SpMat;

/// Evaluates an affine operator densely by matching the scalar forms by hand.
pub fn dense_op(op: &AffineOperator, mu: &[f64]) -> DMatrix<f64> {
    let (rows, cols) = op.shape();
    let mut out = DMatrix::zeros(rows, cols);
    for (theta, m) in op.terms() {
        let coef = match *theta {
            AffineScalar::Constant(c) => c,
            AffineScalar::Component(i) => mu[i],
            AffineScalar::ScaledComponent(c, i) => c * mu[i],
        };
        for (r, c, v) in m.iter() {
            out[(r, c)] += coef * v;
        }
    }
    out
}

/// x⊗x materialized with the row-major pair convention y[i·n + j] = x_i·x_j.
pub fn kron2_vec(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut y = DVector::zeros(n * n);
    for i in 0..n {
        for j in 0..n {
            y[i * n + j] = x[i] * x[j];
        }
    }
    y
}

/// x⊗x⊗x materialized with y[(i·n + j)·n + k] = x_i·x_j·x_k.
pub fn kron3_vec(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut y = DVector::zeros(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                y[(i * n + j) * n + k] = x[i] * x[j] * x[k];
            }
        }
    }
    y
}

/// u⊗x materialized with y[k·n + a] = u_k·x_a.
pub fn kron_ux_vec(u: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut y = DVector::zeros(u.len() * n);
    for k in 0..u.len() {
        for a in 0..n {
            y[k * n + a] = u[k] * x[a];
        }
    }
    y
}

/// (x⊗I) + (I⊗x) as a dense n²×n matrix in the same pair convention.
pub fn s2_dense(x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut s = DMatrix::zeros(n * n, n);
    for a in 0..n {
        for b in 0..n {
            s[(a * n + b, b)] += x[a];
            s[(a * n + b, a)] += x[b];
        }
    }
    s
}

/// u⊗I as a dense (N_u·n)×n matrix.
pub fn u_kron_i_dense(u: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(u.len() * n, n);
    for k in 0..u.len() {
        for a in 0..n {
            s[(k * n + a, a)] = u[k];
        }
    }
    s
}

/// Derivative of x⊗x⊗x: the three placements of the identity, dense n³×n.
pub fn s3_dense(x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut s = DMatrix::zeros(n * n * n, n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let row = (a * n + b) * n + c;
                s[(row, a)] += x[b] * x[c];
                s[(row, b)] += x[a] * x[c];
                s[(row, c)] += x[a] * x[b];
            }
        }
    }
    s
}

/// Dense oracle for f(x, u; μ) = C + A·x + F·(x⊗x) + B·u + N·(u⊗x) + W·(x⊗x⊗x).
pub fn dense_rhs(sys: &PolynomialSystem, x: &DVector<f64>, u: &DVector<f64>, mu: &[f64]) -> DVector<f64> {
    let c = dense_op(&sys.op_c, mu);
    let a = dense_op(&sys.op_a, mu);
    let f = dense_op(&sys.op_f, mu);
    let b = dense_op(&sys.op_b, mu);
    let nmat = dense_op(&sys.op_n, mu);
    let mut y = c.column(0).into_owned();
    y += a * x;
    y += f * kron2_vec(x);
    y += b * u;
    y += nmat * kron_ux_vec(u, x);
    if let Some(w) = &sys.op_w {
        y += dense_op(w, mu) * kron3_vec(x);
    }
    y
}

/// Dense oracle for ∂f/∂x = A + F·S₂(x) + N·(u⊗I) + W·S₃(x).
pub fn dense_jacobian(sys: &PolynomialSystem, x: &DVector<f64>, u: &DVector<f64>, mu: &[f64]) -> DMatrix<f64> {
    let n = sys.dim_state;
    let mut j = dense_op(&sys.op_a, mu);
    j += dense_op(&sys.op_f, mu) * s2_dense(x);
    j += dense_op(&sys.op_n, mu) * u_kron_i_dense(u, n);
    if let Some(w) = &sys.op_w {
        j += dense_op(w, mu) * s3_dense(x);
    }
    j
}

/// Dense oracle for the multistep residual over the window
/// [x^m, x^{m-1}, …, x^{m-τ}] with matching inputs.
pub fn dense_residual(
    sys: &PolynomialSystem,
    alphas: &[f64],
    betas: &[f64],
    dt: f64,
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    mu: &[f64],
) -> DVector<f64> {
    let mut r = DVector::zeros(sys.dim_state);
    for j in 0..states.len() {
        r.axpy(alphas[j], &states[j], 1.0);
        if betas[j] != 0.0 {
            r.axpy(-dt * betas[j], &dense_rhs(sys, &states[j], &inputs[j], mu), 1.0);
        }
    }
    r
}

/// Central finite-difference Jacobian of a vector-valued map.
pub fn fd_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let fx = f(x);
    let mut j = DMatrix::zeros(fx.len(), x.len());
    for c in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let diff = (f(&xp) - f(&xm)) / (2.0 * h);
        j.column_mut(c).copy_from(&diff);
    }
    j
}

/// Deterministic dense random vector with entries in [-1, 1].
pub fn rand_vec(len: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0))
}

/// Deterministic sparse matrix with the requested fill fraction.
pub fn rand_sparse(rows: usize, cols: usize, fill: f64, scale: f64, seed: u64) -> SpMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trips = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.gen_range(0.0..1.0) < fill {
                trips.push((r, c, scale * rng.gen_range(-1.0..1.0f64)));
            }
        }
    }
    // Guarantee at least one entry so shapes stay observable (only possible
    // when the matrix has at least one slot to fill).
    if trips.is_empty() && rows > 0 && cols > 0 {
        trips.push((0, 0, scale));
    }
    SpMat::from_triplets(rows, cols, &trips)
}

/// Random polynomial system with two-component parameters, full stencils, and
/// mild operator scales; exercises every affine scalar form.
pub fn random_system(n: usize, n_u: usize, cubic: bool, seed: u64) -> PolynomialSystem {
    let s = 1.0 / n as f64;
    let op_c = AffineOperator::new(vec![
        (AffineScalar::Constant(1.0), rand_sparse(n, 1, 0.8, s, seed)),
        (AffineScalar::Component(1), rand_sparse(n, 1, 0.8, s, seed + 1)),
    ]);
    let op_a = AffineOperator::new(vec![
        (AffineScalar::Constant(1.0), rand_sparse(n, n, 0.5, s, seed + 2)),
        (AffineScalar::Component(0), rand_sparse(n, n, 0.5, s, seed + 3)),
    ]);
    let op_f = AffineOperator::new(vec![
        (AffineScalar::Constant(1.0), rand_sparse(n, n * n, 0.2, s, seed + 4)),
        (AffineScalar::ScaledComponent(0.5, 1), rand_sparse(n, n * n, 0.2, s, seed + 5)),
    ]);
    let op_b = AffineOperator::constant(rand_sparse(n, n_u, 0.6, s, seed + 6));
    let op_n = AffineOperator::constant(rand_sparse(n, n_u * n, 0.3, s, seed + 7));
    let op_w = if cubic {
        Some(AffineOperator::new(vec![(
            AffineScalar::Component(0),
            rand_sparse(n, n * n * n, 0.05, s, seed + 8),
        )]))
    } else {
        None
    };
    let stencil = vec![(0..n).collect::<Vec<usize>>(); n];
    let n_state = n;
    PolynomialSystem::new(
        n,
        n_u,
        op_c,
        op_a,
        op_f,
        op_b,
        op_n,
        op_w,
        Box::new(move |t, mu| {
            DVector::from_fn(n_u, |k, _| (mu[0] * t + k as f64).sin() * 0.5)
        }),
        Box::new(move |mu| {
            DVector::from_fn(n_state, |i, _| 0.3 * ((i + 1) as f64 * 0.7 + mu[1]).sin())
        }),
        stencil,
    )
}

/// Orthonormal n-column frame from a seeded Gaussian via QR.
pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    assert!(cols <= rows, "frame cannot be wider than tall");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let qr = m.qr();
    qr.q().columns(0, cols).into_owned()
}

/// Wraps an orthonormal frame as a basis for the ROM drivers.
pub fn basis_from(phi: DMatrix<f64>) -> ReducedBasis {
    let n = phi.ncols();
    ReducedBasis {
        phi,
        singular_values: vec![1.0; n],
        n: Some(n),
        eps_pod: None,
        blocks: None,
    }
}

/// Asserts entrywise closeness with a scale-aware tolerance and a context label.
pub fn assert_mat_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64, label: &str) {
    assert_eq!(a.shape(), b.shape(), "{label}: shapes {:?} vs {:?}", a.shape(), b.shape());
    let scale = a.norm().max(b.norm()).max(1.0);
    let diff = (a - b).norm();
    assert!(
        diff <= tol * scale,
        "{label}: difference {diff:.3e} exceeds {tol:.1e} at scale {scale:.3e}"
    );
}

/// Vector flavor of [`assert_mat_close`].
pub fn assert_vec_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64, label: &str) {
    assert_eq!(a.len(), b.len(), "{label}: lengths {} vs {}", a.len(), b.len());
    let scale = a.norm().max(b.norm()).max(1.0);
    let diff = (a - b).norm();
    assert!(
        diff <= tol * scale,
        "{label}: difference {diff:.3e} exceeds {tol:.1e} at scale {scale:.3e}"
    );
}
