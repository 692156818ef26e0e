//! Property-based invariants for indexing, affine evaluation, selection, and
//! the sparse kernels.

mod common;

use nalgebra::{DMatrix, DVector};
use polyrom::basis::{pod, select_modes, ReducedBasis, SnapshotMatrix};
use polyrom::bench::state_prediction_error;
use polyrom::polysys::{
    decode2, decode3, evaluate_operator, idx2, idx3, kron_select_g, kron_select_h,
    AffineOperator, AffineScalar,
};
use polyrom::sparse::SpMat;
use proptest::prelude::*;

fn small_dim() -> impl Strategy<Value = usize> {
    1usize..6
}

fn unit_f64() -> impl Strategy<Value = f64> {
    -1.0f64..1.0
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn pair_indices_are_bijective(n in small_dim(), i in 0usize..8, j in 0usize..8) {
        let (i, j) = (i % n, j % n);
        let col = idx2(i, j, n);
        prop_assert!(col < n * n, "flat index in range");
        prop_assert_eq!(decode2(col, n), (i, j), "decode inverts encode");
    }

    #[test]
    fn triple_indices_are_bijective(n in small_dim(), i in 0usize..8, j in 0usize..8, k in 0usize..8) {
        let (i, j, k) = (i % n, j % n, k % n);
        let col = idx3(i, j, k, n);
        prop_assert!(col < n * n * n, "flat index in range");
        prop_assert_eq!(decode3(col, n), (i, j, k), "decode inverts encode");
    }

    #[test]
    fn scaled_components_factor(c in unit_f64(), mu0 in unit_f64(), mu1 in unit_f64()) {
        let mu = [mu0, mu1];
        let scaled = AffineScalar::ScaledComponent(c, 1).evaluate(&mu).unwrap();
        let plain = AffineScalar::Component(1).evaluate(&mu).unwrap();
        prop_assert!((scaled - c * plain).abs() <= 1e-15 * plain.abs().max(1.0));
    }

    #[test]
    fn affine_evaluation_is_linear_in_mu(
        a in unit_f64(), b in unit_f64(), mu0 in unit_f64(), seed in 0u64..1000
    ) {
        let m0 = common::rand_sparse(4, 4, 0.5, 1.0, seed);
        let m1 = common::rand_sparse(4, 4, 0.5, 1.0, seed + 1);
        let op = AffineOperator::new(vec![
            (AffineScalar::Constant(a), m0.clone()),
            (AffineScalar::ScaledComponent(b, 0), m1.clone()),
        ]);
        let got = evaluate_operator(&op, &[mu0]).unwrap().to_dense();
        let want = m0.to_dense() * a + m1.to_dense() * (b * mu0);
        prop_assert!((got - want).norm() <= 1e-13, "affine combination is exact");
    }

    #[test]
    fn selector_blocks_tile_the_kron_product(n in 2usize..5, seed in 0u64..1000) {
        let m = common::rand_sparse(3, n * n, 0.8, 1.0, seed).to_dense();
        let x = common::rand_vec(n, seed + 7);
        let direct = &m * common::kron2_vec(&x);
        let mut via_g = DVector::zeros(3);
        let mut via_h = DVector::zeros(3);
        for ell in 1..=n {
            via_g += kron_select_g(&m, ell) * (&x * x[ell - 1]);
            via_h += kron_select_h(&m, ell) * (&x * x[ell - 1]);
        }
        prop_assert!((&via_g - &direct).norm() <= 1e-12 * direct.norm().max(1.0));
        prop_assert!((&via_h - &direct).norm() <= 1e-12 * direct.norm().max(1.0));
    }

    #[test]
    fn mode_selection_is_monotone(
        raw in proptest::collection::vec(0.01f64..10.0, 1..12),
        e1 in 1e-9f64..0.5,
        scale in 1.5f64..100.0
    ) {
        let mut sigmas = raw;
        sigmas.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let k = sigmas.len();
        let basis = ReducedBasis {
            phi: DMatrix::identity(k, k),
            singular_values: sigmas,
            n: None,
            eps_pod: None,
            blocks: None,
        };
        let e2 = (e1 * scale).min(1.0);
        let tight = select_modes(&basis, e1).phi.ncols();
        let loose = select_modes(&basis, e2).phi.ncols();
        prop_assert!(tight >= loose, "tighter eps keeps at least as many modes");
        prop_assert!(tight >= 1 && tight <= k, "selection stays within bounds");
    }

    #[test]
    fn pod_always_returns_orthonormal_modes(rows in 2usize..8, cols in 1usize..8, seed in 0u64..500) {
        let data = DMatrix::from_fn(rows, cols, |r, c| {
            ((r * 31 + c * 17 + seed as usize) as f64 * 0.61).sin()
        });
        prop_assume!(data.iter().any(|&v| v != 0.0));
        let basis = pod(&SnapshotMatrix { data, provenance: vec![] }).unwrap();
        let gram = basis.phi.transpose() * &basis.phi;
        let eye = DMatrix::identity(gram.nrows(), gram.ncols());
        prop_assert!((gram - eye).norm() <= 1e-8, "orthonormal modes");
        for pair in basis.singular_values.windows(2) {
            prop_assert!(pair[0] >= pair[1], "spectrum is non-increasing");
        }
    }

    #[test]
    fn sparse_matvec_agrees_with_dense(rows in 1usize..7, cols in 1usize..7, seed in 0u64..500) {
        let m = common::rand_sparse(rows, cols, 0.5, 1.0, seed);
        let x = common::rand_vec(cols, seed + 13);
        let got = m.matvec(&x);
        let want = m.to_dense() * &x;
        prop_assert!((got - want).norm() <= 1e-13);
    }

    #[test]
    fn sparse_transpose_is_an_involution(rows in 1usize..7, cols in 1usize..7, seed in 0u64..500) {
        let m = common::rand_sparse(rows, cols, 0.5, 1.0, seed);
        let back = m.transpose().transpose();
        prop_assert_eq!(back.to_dense(), m.to_dense());
    }

    #[test]
    fn state_error_is_a_nonnegative_exact_zero_metric(
        rows in 1usize..5, cols in 1usize..5, seed in 0u64..500
    ) {
        let a = DMatrix::from_fn(rows, cols, |r, c| {
            ((r * 7 + c * 3 + seed as usize) as f64 * 0.23).cos()
        });
        prop_assume!(a.norm() > 0.0);
        prop_assert_eq!(state_prediction_error(&a, &a), 0.0, "zero on identical inputs");
        let shifted = &a + DMatrix::from_element(rows, cols, 0.5);
        prop_assert!(state_prediction_error(&a, &shifted) > 0.0, "positive on mismatch");
    }
}

#[test]
fn empty_sparse_round_trip_is_stable() {
    let m = SpMat::zeros(4, 3);
    assert_eq!(m.transpose().shape(), (3, 4), "transpose swaps the empty shape");
    assert_eq!(m.matvec(&DVector::zeros(3)), DVector::zeros(4), "empty matvec");
}
