//! Discretized model checks against hand-written stencil formulas.

mod common;

use nalgebra::DVector;
use polyrom::fomsolve::Trajectory;
use polyrom::models::{
    build_by_name, build_burgers, build_heat_cubic, build_heat_lifted, heat_initial,
    heat_profile_1, heat_profile_2, lift_state, lift_trajectory, restrict_state, GridSpec,
};
use polyrom::polysys::system_rhs;

use common::assert_vec_close;

#[test]
fn grid_spacing_and_interior_points() {
    let grid = GridSpec::new(2.0, 7);
    let dx = grid.dx();
    assert!((dx - 0.25).abs() < 1e-15, "dx should be L/(n+1), got {dx}");
    let xs = grid.interior();
    assert_eq!(xs.len(), 7, "interior point count");
    assert!((xs[0] - 0.25).abs() < 1e-15, "first interior point");
    assert!((xs[6] - 1.75).abs() < 1e-15, "last interior point");
}

#[test]
fn burgers_rhs_matches_hand_stencil() {
    let grid = GridSpec::new(1.0, 16);
    let sys = build_burgers(&grid);
    assert_eq!(sys.dim_state, 16, "burgers state dimension");
    assert_eq!(sys.dim_input, 1, "burgers input dimension");

    let mu = [4.3, 0.07];
    let dx = grid.dx();
    let n = 16;
    let w = DVector::from_fn(n, |i, _| ((i as f64) * 0.4).sin() + 0.2);
    let u = sys.input(0.0, &mu);
    assert_eq!(u[0], mu[0], "burgers input is the left boundary value");

    let got = system_rhs(&sys, &w, &u, &mu).unwrap();

    // Hand stencil with ghost values w(0) = mu_1 and w(L) = 0.
    let ghost = |i: isize| -> f64 {
        if i < 0 {
            mu[0]
        } else if i as usize >= n {
            0.0
        } else {
            w[i as usize]
        }
    };
    let want = DVector::from_fn(n, |i, _| {
        let ii = i as isize;
        let diff = mu[1] * (ghost(ii - 1) - 2.0 * w[i] + ghost(ii + 1)) / (dx * dx);
        let adv = -w[i] * (ghost(ii + 1) - ghost(ii - 1)) / (2.0 * dx);
        diff + adv
    });
    assert_vec_close(&got, &want, 1e-13, "burgers rhs vs hand stencil");
}

#[test]
fn burgers_initial_state_is_zero() {
    let grid = GridSpec::new(1.0, 8);
    let sys = build_burgers(&grid);
    let x0 = sys.initial(&[2.0, 0.05]);
    assert_eq!(x0, DVector::zeros(8), "burgers starts from rest");
}

#[test]
fn heat_cubic_rhs_matches_hand_stencil() {
    let grid = GridSpec::new(1.0, 12);
    let sys = build_heat_cubic(&grid);
    assert_eq!(sys.dim_input, 2, "heat system has two forcing inputs");

    let mu = [1.5, 0.5];
    let t = 0.37;
    let n = 12;
    let dx = grid.dx();
    let xs = grid.interior();
    let q = DVector::from_fn(n, |i, _| heat_initial(xs[i], 1.0));
    let u = sys.input(t, &mu);
    let want_u0 = mu[0] * (2.0 * std::f64::consts::PI * t).sin();
    let want_u1 = mu[1] * (4.0 * std::f64::consts::PI * t).sin();
    assert!((u[0] - want_u0).abs() < 1e-15 && (u[1] - want_u1).abs() < 1e-15, "input signal");

    let got = system_rhs(&sys, &q, &u, &mu).unwrap();

    let ghost = |i: isize| -> f64 {
        if i < 0 {
            0.0
        } else if i as usize >= n {
            1.0
        } else {
            q[i as usize]
        }
    };
    let want = DVector::from_fn(n, |i, _| {
        let ii = i as isize;
        0.005 * (ghost(ii - 1) - 2.0 * q[i] + ghost(ii + 1)) / (dx * dx) - q[i].powi(3)
            + u[0] * heat_profile_1(xs[i], 1.0)
            + u[1] * heat_profile_2(xs[i], 1.0)
    });
    assert_vec_close(&got, &want, 1e-12, "heat cubic rhs vs hand stencil");
}

#[test]
fn lifted_rhs_is_consistent_with_the_cubic_model() {
    let grid = GridSpec::new(1.0, 10);
    let phys = build_heat_cubic(&grid);
    let (lifted, layout) = build_heat_lifted(&grid);
    assert_eq!(layout.total_dim(), 20, "lifted dimension is 2N");
    assert_eq!(lifted.dim_state, 20, "lifted system dimension");

    let mu = [0.8, -1.2];
    let t = 0.11;
    let u = phys.input(t, &mu);
    let q = DVector::from_fn(10, |i, _| 0.3 * ((i as f64) * 0.9).cos() + 0.1);
    let fq = system_rhs(&phys, &q, &u, &mu).unwrap();

    // On the lift manifold x = (q, q⊙q) the lifted flow must equal
    // (dq/dt, 2·q⊙dq/dt) exactly.
    let x = lift_state(&q);
    let got = system_rhs(&lifted, &x, &u, &mu).unwrap();
    let mut want = DVector::zeros(20);
    for i in 0..10 {
        want[i] = fq[i];
        want[10 + i] = 2.0 * q[i] * fq[i];
    }
    assert_vec_close(&got, &want, 1e-12, "lifted flow consistency on the manifold");
}

#[test]
fn lifted_initial_state_lies_on_the_manifold() {
    let grid = GridSpec::new(1.0, 9);
    let phys = build_heat_cubic(&grid);
    let (lifted, _) = build_heat_lifted(&grid);
    let mu = [1.0, 1.0];
    let q0 = phys.initial(&mu);
    let x0 = lifted.initial(&mu);
    assert_vec_close(&x0, &lift_state(&q0), 1e-15, "lifted initial state");
}

#[test]
fn lift_and_restrict_round_trip() {
    let q = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let x = lift_state(&q);
    assert_eq!(x.len(), 6, "lifted length");
    assert_eq!(x[3], 0.25, "squared block entry");
    assert_eq!(x[4], 1.0, "squared block entry");
    let back = restrict_state(&x);
    assert_vec_close(&back, &q, 1e-15, "restrict inverts lift on the manifold");
}

#[test]
fn lift_trajectory_lifts_every_column() {
    let states = nalgebra::DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 2.0]);
    let t = Trajectory {
        model: "toy".into(),
        scheme: "be".into(),
        mu: vec![0.1],
        dt: 0.5,
        states,
    };
    let lifted = lift_trajectory(&t);
    assert_eq!(lifted.states.nrows(), 4, "lifted row count");
    assert_eq!(lifted.states.ncols(), 3, "column count preserved");
    for m in 0..3 {
        let q = t.states.column(m).into_owned();
        let want = lift_state(&q);
        let got = lifted.states.column(m).into_owned();
        assert_vec_close(&got, &want, 1e-15, "lifted column");
    }
    assert_eq!(lifted.dt, t.dt, "dt preserved");
    assert_eq!(lifted.mu, t.mu, "mu preserved");
}

#[test]
fn build_by_name_resolves_known_models() {
    let grid = GridSpec::new(1.0, 6);
    let (b, lb) = build_by_name("burgers", &grid).unwrap();
    assert_eq!(b.dim_state, 6, "burgers via name");
    assert!(lb.is_none(), "burgers has no lifted layout");
    let (h, lh) = build_by_name("heat-lifted", &grid).unwrap();
    assert_eq!(h.dim_state, 12, "lifted heat via name");
    assert!(lh.is_some(), "lifted heat reports its layout");
    assert!(build_by_name("unknown-model", &grid).is_err(), "unknown names must error");
}
