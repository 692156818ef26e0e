//! Benchmark systems: 1D viscous Burgers and a 1D heat equation with cubic
//! reaction, the latter in both non-lifted (cubic) and lifted (quadratic) form.
//!
//! Discretization is second-order central finite differences on the interior
//! points of a uniform grid; Dirichlet boundary values live on ghost points at
//! x = 0 and x = L and enter through constant/input operator terms.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polysys::{idx2, idx3, AffineOperator, AffineScalar, PolynomialSystem};
use crate::sparse::SpMat;

/// Uniform 1D grid; the N unknowns are the interior points x_i = i·Δx.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub n_points: usize,
}

impl GridSpec {
    pub fn new(length: f64, n_points: usize) -> GridSpec {
        assert!(n_points >= 3, "grid needs at least 3 interior points");
        assert!(length > 0.0, "grid length must be positive");
        GridSpec { length, n_points }
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.n_points + 1) as f64
    }

    /// Interior node coordinates (ghosts at 0 and L excluded).
    pub fn interior(&self) -> Vec<f64> {
        let dx = self.dx();
        (1..=self.n_points).map(|i| i as f64 * dx).collect()
    }
}

/// Block structure of a lifted system state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiftedSystemLayout {
    pub block_sizes: Vec<usize>,
    pub variable_names: Vec<String>,
}

impl LiftedSystemLayout {
    pub fn total_dim(&self) -> usize {
        self.block_sizes.iter().sum()
    }
}

fn clipped_stencil(i: usize, n: usize) -> Vec<usize> {
    let mut s = vec![i];
    if i > 0 {
        s.push(i - 1);
    }
    if i + 1 < n {
        s.push(i + 1);
    }
    s
}

/// Second-order diffusion stencil [1, -2, 1]/Δx² on the interior points.
fn diffusion_triplets(n: usize, coef: f64) -> Vec<(usize, usize, f64)> {
    let mut trips = Vec::with_capacity(3 * n);
    for i in 0..n {
        trips.push((i, i, -2.0 * coef));
        if i > 0 {
            trips.push((i, i - 1, coef));
        }
        if i + 1 < n {
            trips.push((i, i + 1, coef));
        }
    }
    trips
}

/// Viscous Burgers w_t + w·w_x = μ_2·w_xx on (0, L), w(0) = μ_1, w(L) = 0,
/// w(x, 0) = 0, with parameters μ = (μ_1, μ_2).
pub fn build_burgers(grid: &GridSpec) -> PolynomialSystem {
    let n = grid.n_points;
    let dx = grid.dx();
    let inv_dx2 = 1.0 / (dx * dx);
    let inv_2dx = 1.0 / (2.0 * dx);

    // Diffusion scales with μ_2; the left-ghost column feeds through B since
    // the boundary value is the input μ_1.
    let op_a = AffineOperator::new(vec![(
        AffineScalar::Component(1),
        SpMat::from_triplets(n, n, &diffusion_triplets(n, inv_dx2)),
    )]);
    let op_b = AffineOperator::new(vec![(
        AffineScalar::Component(1),
        SpMat::from_triplets(n, 1, &[(0, 0, inv_dx2)]),
    )]);

    // Advection -w·w_x: row i couples pairs (i, i+1) with -1/(2Δx) and
    // (i, i-1) with +1/(2Δx); ghost parts drop (right) or move to N (left).
    let mut f_trips = Vec::with_capacity(2 * n);
    for i in 0..n {
        if i + 1 < n {
            f_trips.push((i, idx2(i, i + 1, n), -inv_2dx));
        }
        if i > 0 {
            f_trips.push((i, idx2(i, i - 1, n), inv_2dx));
        }
    }
    let op_f = AffineOperator::constant(SpMat::from_triplets(n, n * n, &f_trips));

    // Left-ghost advection: +μ_1·w_1/(2Δx) enters row 1 via N·(u⊗x).
    let op_n = AffineOperator::constant(SpMat::from_triplets(n, n, &[(0, idx2(0, 0, n), inv_2dx)]));

    let op_c = AffineOperator::zero(n, 1);
    let stencil = (0..n).map(|i| clipped_stencil(i, n)).collect();

    PolynomialSystem::new(
        n,
        1,
        op_c,
        op_a,
        op_f,
        op_b,
        op_n,
        None,
        Box::new(|_t, mu: &[f64]| DVector::from_element(1, mu[0])),
        Box::new(move |_mu: &[f64]| DVector::zeros(n)),
        stencil,
    )
}

const HEAT_KAPPA: f64 = 0.005;

/// Forcing profile peaked at L/4.
pub fn heat_profile_1(x: f64, length: f64) -> f64 {
    let s = x / length;
    1.0 / (1.0 + 100.0 * (s - 0.25) * (s - 0.25))
}

/// Forcing profile peaked at 3L/4.
pub fn heat_profile_2(x: f64, length: f64) -> f64 {
    let s = x / length;
    1.0 / (1.0 + 100.0 * (s - 0.75) * (s - 0.75))
}

/// Initial temperature profile; satisfies q_0(0) = 0 and q_0(L) = 1.
pub fn heat_initial(x: f64, length: f64) -> f64 {
    let s = x / length;
    s * (1.0 - s) * (6.0 * (1.0 - s) * (1.0 - s) * (-s).exp() - 10.0 * s.exp() * (s / 6.0).sin())
        + s
}

fn heat_input_signal(t: f64, mu: &[f64]) -> DVector<f64> {
    DVector::from_vec(vec![
        mu[0] * (2.0 * std::f64::consts::PI * t).sin(),
        mu[1] * (4.0 * std::f64::consts::PI * t).sin(),
    ])
}

/// Heat equation with cubic reaction, q_t = 0.005·q_xx − q³ + u(x, t),
/// q(0) = 0, q(L) = 1; inputs u = (a·sin 2πt, b·sin 4πt) on the two profiles,
/// parameters μ = (a, b).
pub fn build_heat_cubic(grid: &GridSpec) -> PolynomialSystem {
    let n = grid.n_points;
    let dx = grid.dx();
    let kod = HEAT_KAPPA / (dx * dx);
    let xs = grid.interior();
    let length = grid.length;

    let op_a = AffineOperator::constant(SpMat::from_triplets(n, n, &diffusion_triplets(n, kod)));
    // Right Dirichlet value 1 feeds the last row through diffusion.
    let op_c = AffineOperator::constant(SpMat::from_triplets(n, 1, &[(n - 1, 0, kod)]));
    let w_trips: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, idx3(i, i, i, n), -1.0)).collect();
    let op_w = AffineOperator::constant(SpMat::from_triplets(n, n * n * n, &w_trips));
    let mut b_trips = Vec::with_capacity(2 * n);
    for (i, &xi) in xs.iter().enumerate() {
        b_trips.push((i, 0, heat_profile_1(xi, length)));
        b_trips.push((i, 1, heat_profile_2(xi, length)));
    }
    let op_b = AffineOperator::constant(SpMat::from_triplets(n, 2, &b_trips));

    let x0: Vec<f64> = xs.iter().map(|&x| heat_initial(x, length)).collect();
    let stencil = (0..n).map(|i| clipped_stencil(i, n)).collect();

    PolynomialSystem::new(
        n,
        2,
        op_c,
        op_a,
        AffineOperator::zero(n, n * n),
        op_b,
        AffineOperator::zero(n, 2 * n),
        Some(op_w),
        Box::new(heat_input_signal),
        Box::new(move |_mu: &[f64]| DVector::from_vec(x0.clone())),
        stencil,
    )
}

/// Lifted form of [`build_heat_cubic`] with auxiliary variable w = q², giving
/// a quadratic system of dimension 2N:
///   q_t = 0.005·q_xx − q⊙w + u
///   w_t = 2·0.005·q⊙q_xx − 2·w² + 2·q⊙u
pub fn build_heat_lifted(grid: &GridSpec) -> (PolynomialSystem, LiftedSystemLayout) {
    let n = grid.n_points;
    let m = 2 * n;
    let dx = grid.dx();
    let kod = HEAT_KAPPA / (dx * dx);
    let xs = grid.interior();
    let length = grid.length;

    // A: diffusion on the q block; the right-ghost part of 2κ·q·q_xx is linear
    // in q_{N} and lands in the (w, q) block.
    let mut a_trips = diffusion_triplets(n, kod);
    a_trips.push((m - 1, n - 1, 2.0 * kod));
    let op_a = AffineOperator::constant(SpMat::from_triplets(m, m, &a_trips));

    let op_c = AffineOperator::constant(SpMat::from_triplets(m, 1, &[(n - 1, 0, kod)]));

    let mut f_trips: Vec<(usize, usize, f64)> = Vec::with_capacity(6 * n);
    for i in 0..n {
        // q block: -q_i·w_i.
        f_trips.push((i, idx2(i, n + i, m), -1.0));
        // w block: 2κ·q_i·(q_{i-1} - 2q_i + q_{i+1})/Δx², ghosts dropped
        // (left ghost is 0; right ghost is the A entry above).
        f_trips.push((n + i, idx2(i, i, m), -4.0 * kod));
        if i > 0 {
            f_trips.push((n + i, idx2(i, i - 1, m), 2.0 * kod));
        }
        if i + 1 < n {
            f_trips.push((n + i, idx2(i, i + 1, m), 2.0 * kod));
        }
        // w block: -2·w_i².
        f_trips.push((n + i, idx2(n + i, n + i, m), -2.0));
    }
    let op_f = AffineOperator::constant(SpMat::from_triplets(m, m * m, &f_trips));

    let mut b_trips = Vec::with_capacity(2 * n);
    let mut n_trips = Vec::with_capacity(2 * n);
    for (i, &xi) in xs.iter().enumerate() {
        let f1 = heat_profile_1(xi, length);
        let f2 = heat_profile_2(xi, length);
        b_trips.push((i, 0, f1));
        b_trips.push((i, 1, f2));
        // w block forcing 2·q⊙u enters bilinearly.
        n_trips.push((n + i, idx2(0, i, m), 2.0 * f1));
        n_trips.push((n + i, idx2(1, i, m), 2.0 * f2));
    }
    let op_b = AffineOperator::constant(SpMat::from_triplets(m, 2, &b_trips));
    let op_n = AffineOperator::constant(SpMat::from_triplets(m, 2 * m, &n_trips));

    let q0: Vec<f64> = xs.iter().map(|&x| heat_initial(x, length)).collect();
    let mut stencil = Vec::with_capacity(m);
    for i in 0..n {
        let mut s = clipped_stencil(i, n);
        s.push(n + i);
        stencil.push(s);
    }
    for i in 0..n {
        let mut s = clipped_stencil(i, n);
        s.push(n + i);
        stencil.push(s);
    }

    let sys = PolynomialSystem::new(
        m,
        2,
        op_c,
        op_a,
        op_f,
        op_b,
        op_n,
        None,
        Box::new(heat_input_signal),
        Box::new(move |_mu: &[f64]| {
            let mut x0 = DVector::zeros(2 * q0.len());
            for (i, &q) in q0.iter().enumerate() {
                x0[i] = q;
                x0[q0.len() + i] = q * q;
            }
            x0
        }),
        stencil,
    );
    let layout = LiftedSystemLayout {
        block_sizes: vec![n, n],
        variable_names: vec!["q".to_string(), "w".to_string()],
    };
    (sys, layout)
}

/// Lifting map [q; q⊙q].
pub fn lift_state(q: &DVector<f64>) -> DVector<f64> {
    let n = q.len();
    let mut out = DVector::zeros(2 * n);
    for i in 0..n {
        out[i] = q[i];
        out[n + i] = q[i] * q[i];
    }
    out
}

/// Section of the lifting map: returns the first (q) block.
pub fn restrict_state(x: &DVector<f64>) -> DVector<f64> {
    assert!(x.len().is_multiple_of(2), "lifted state must have even length");
    x.rows(0, x.len() / 2).into_owned()
}

/// Applies [`lift_state`] to every column of a trajectory.
pub fn lift_trajectory(t: &crate::fomsolve::Trajectory) -> crate::fomsolve::Trajectory {
    let n = t.states.nrows();
    let mut states = nalgebra::DMatrix::zeros(2 * n, t.states.ncols());
    for m in 0..t.states.ncols() {
        for i in 0..n {
            let q = t.states[(i, m)];
            states[(i, m)] = q;
            states[(n + i, m)] = q * q;
        }
    }
    crate::fomsolve::Trajectory {
        model: t.model.clone(),
        scheme: t.scheme.clone(),
        mu: t.mu.clone(),
        dt: t.dt,
        states,
    }
}

/// Builds a model by its configuration name.
pub fn build_by_name(name: &str, grid: &GridSpec) -> Result<(PolynomialSystem, Option<LiftedSystemLayout>)> {
    match name {
        "burgers" => Ok((build_burgers(grid), None)),
        "heat-cubic" => Ok((build_heat_cubic(grid), None)),
        "heat-lifted" => {
            let (sys, layout) = build_heat_lifted(grid);
            Ok((sys, Some(layout)))
        }
        other => Err(Error::Config(format!("unknown model '{other}'"))),
    }
}
