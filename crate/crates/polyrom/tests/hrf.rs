//! Hyper-reduction-free operators against the exact-projection references and
//! dense Kronecker oracles.

mod common;

use nalgebra::{DMatrix, DVector};
use polyrom::fomsolve::{backward_euler, crank_nicolson, NewtonSettings};
use polyrom::hrf::{
    assemble_hrf_galerkin, assemble_hrf_lspg, contract_left_s2, contract_left_s3, contract_left_u,
    contract_right_g, contract_right_h, contract_right_s2, contract_right_s3, contract_right_u,
    hrf_galerkin_assembler, hrf_lspg_assembler, kron2, kron3, kron_ux, load_hrf_galerkin,
    load_hrf_lspg, precompute_hrf_galerkin, precompute_hrf_lspg, save_hrf_galerkin, save_hrf_lspg,
};
use polyrom::romref::{
    galerkin_reference_assembler, lspg_reference_assembler, run_rom, ReducedSystemAssembler,
};
use tempfile::tempdir;

use common::{
    assert_mat_close, assert_vec_close, basis_from, rand_vec, random_orthonormal, random_system,
    s2_dense, s3_dense, u_kron_i_dense,
};

const SETTINGS: NewtonSettings = NewtonSettings { step_length: 1.0, tol: 1e-11, max_iter: 25 };

#[test]
fn kron_vectors_match_the_materialized_products() {
    let x = rand_vec(5, 301);
    let u = rand_vec(3, 302);
    assert_vec_close(&kron2(&x), &common::kron2_vec(&x), 1e-15, "x⊗x");
    assert_vec_close(&kron3(&x), &common::kron3_vec(&x), 1e-15, "x⊗x⊗x");
    assert_vec_close(&kron_ux(&u, &x), &common::kron_ux_vec(&u, &x), 1e-15, "u⊗x");
}

#[test]
fn right_contractions_match_dense_kron_factors() {
    let n = 5;
    let x = rand_vec(n, 303);
    let u = rand_vec(3, 304);
    let m2 = DMatrix::from_fn(4, n * n, |r, c| ((r * 31 + c * 7) as f64 * 0.13).sin());
    let m3 = DMatrix::from_fn(4, n * n * n, |r, c| ((r * 17 + c * 3) as f64 * 0.11).cos());
    let mu_mat = DMatrix::from_fn(4, 3 * n, |r, c| ((r * 5 + c) as f64 * 0.29).sin());

    // x⊗I and I⊗x materialized densely.
    let mut xi = DMatrix::zeros(n * n, n);
    let mut ix = DMatrix::zeros(n * n, n);
    for a in 0..n {
        for b in 0..n {
            xi[(a * n + b, b)] = x[a];
            ix[(a * n + b, a)] = x[b];
        }
    }
    assert_mat_close(&contract_right_g(&m2, &x), &(&m2 * &xi), 1e-13, "M(x⊗I)");
    assert_mat_close(&contract_right_h(&m2, &x), &(&m2 * &ix), 1e-13, "M(I⊗x)");
    assert_mat_close(&contract_right_s2(&m2, &x), &(&m2 * s2_dense(&x)), 1e-13, "M·S₂");
    assert_mat_close(
        &contract_right_u(&mu_mat, &u, n),
        &(&mu_mat * u_kron_i_dense(&u, n)),
        1e-13,
        "M(u⊗I)",
    );
    assert_mat_close(&contract_right_s3(&m3, &x), &(&m3 * s3_dense(&x)), 1e-13, "M·S₃");
}

#[test]
fn left_contractions_are_the_transposed_right_ones() {
    let n = 4;
    let x = rand_vec(n, 305);
    let u = rand_vec(2, 306);
    let k2 = DMatrix::from_fn(n * n, 3, |r, c| ((r * 13 + c) as f64 * 0.17).sin());
    let k3 = DMatrix::from_fn(n * n * n, 3, |r, c| ((r * 7 + c) as f64 * 0.19).cos());
    let ku = DMatrix::from_fn(2 * n, 3, |r, c| ((r * 11 + c) as f64 * 0.23).sin());

    assert_mat_close(
        &contract_left_s2(&k2, &x),
        &(s2_dense(&x).transpose() * &k2),
        1e-13,
        "S₂ᵀK",
    );
    assert_mat_close(
        &contract_left_u(&ku, &u, n),
        &(u_kron_i_dense(&u, n).transpose() * &ku),
        1e-13,
        "(u⊗I)ᵀK",
    );
    assert_mat_close(
        &contract_left_s3(&k3, &x),
        &(s3_dense(&x).transpose() * &k3),
        1e-13,
        "S₃ᵀK",
    );
}

#[test]
fn hrf_galerkin_assembly_equals_the_reference() {
    for (cubic, seed) in [(false, 2001u64), (true, 2002u64)] {
        let sys = random_system(10, 2, cubic, seed);
        let basis = basis_from(random_orthonormal(10, 4, seed + 10));
        let mu = [0.9, -0.3];
        for scheme in [backward_euler(0.01), crank_nicolson(0.01)] {
            let ops = precompute_hrf_galerkin(&sys, &basis).unwrap();
            let xhat = rand_vec(4, seed + 20);
            let past = vec![rand_vec(4, seed + 21)];
            let inputs = vec![rand_vec(2, seed + 22), rand_vec(2, seed + 23)];
            let (lhs, rhs) =
                assemble_hrf_galerkin(&ops, &scheme, &xhat, &past, &inputs, &mu).unwrap();

            let mut reference = galerkin_reference_assembler(&sys, &basis, &scheme);
            reference.prepare(&mu).unwrap();
            reference.begin_step(&past, &inputs);
            let mut want_lhs = DMatrix::zeros(4, 4);
            let mut want_rhs = DVector::zeros(4);
            reference.assemble(&xhat, &past, &inputs, &mut want_lhs, &mut want_rhs);

            let label = format!("HRF Galerkin vs reference (cubic={cubic}, {})", scheme.name);
            assert_mat_close(&lhs, &want_lhs, 1e-12, &format!("{label}: lhs"));
            assert_vec_close(&rhs, &want_rhs, 1e-12, &format!("{label}: rhs"));
        }
    }
}

#[test]
fn hrf_lspg_assembly_equals_the_reference() {
    for (cubic, seed) in [(false, 2003u64), (true, 2004u64)] {
        let sys = random_system(9, 2, cubic, seed);
        let basis = basis_from(random_orthonormal(9, 4, seed + 10));
        let mu = [1.2, 0.4];
        for scheme in [backward_euler(0.02), crank_nicolson(0.02)] {
            let ops = precompute_hrf_lspg(&sys, &basis).unwrap();
            let xhat = rand_vec(4, seed + 20);
            let past = vec![rand_vec(4, seed + 21)];
            let inputs = vec![rand_vec(2, seed + 22), rand_vec(2, seed + 23)];
            let (lhs, rhs) =
                assemble_hrf_lspg(&ops, &scheme, &xhat, &past, &inputs, &mu).unwrap();

            let mut reference = lspg_reference_assembler(&sys, &basis, &scheme);
            reference.prepare(&mu).unwrap();
            reference.begin_step(&past, &inputs);
            let mut want_lhs = DMatrix::zeros(4, 4);
            let mut want_rhs = DVector::zeros(4);
            reference.assemble(&xhat, &past, &inputs, &mut want_lhs, &mut want_rhs);

            let label = format!("HRF LSPG vs reference (cubic={cubic}, {})", scheme.name);
            assert_mat_close(&lhs, &want_lhs, 1e-11, &format!("{label}: lhs"));
            assert_vec_close(&rhs, &want_rhs, 1e-11, &format!("{label}: rhs"));
        }
    }
}

#[test]
fn hrf_galerkin_trajectory_tracks_the_reference_rom() {
    let sys = random_system(12, 2, true, 2005);
    let basis = basis_from(random_orthonormal(12, 5, 2015));
    let scheme = backward_euler(0.01);
    let mu = [0.7, 0.2];

    let mut reference = galerkin_reference_assembler(&sys, &basis, &scheme);
    let (ref_red, _) = run_rom(&mut reference, &basis, &sys, &scheme, &SETTINGS, &mu, 50).unwrap();

    let ops = precompute_hrf_galerkin(&sys, &basis).unwrap();
    let mut hrf = hrf_galerkin_assembler(ops, scheme.clone());
    let (hrf_red, _) = run_rom(&mut hrf, &basis, &sys, &scheme, &SETTINGS, &mu, 50).unwrap();

    assert_mat_close(
        &hrf_red.states,
        &ref_red.states,
        1e-9,
        "HRF Galerkin trajectory vs reference ROM",
    );
}

#[test]
fn hrf_lspg_trajectory_tracks_the_reference_rom() {
    let sys = random_system(11, 2, false, 2006);
    let basis = basis_from(random_orthonormal(11, 5, 2016));
    let scheme = crank_nicolson(0.01);
    let mu = [1.0, -0.1];

    let mut reference = lspg_reference_assembler(&sys, &basis, &scheme);
    let (ref_red, _) = run_rom(&mut reference, &basis, &sys, &scheme, &SETTINGS, &mu, 50).unwrap();

    let ops = precompute_hrf_lspg(&sys, &basis).unwrap();
    let mut hrf = hrf_lspg_assembler(ops, scheme.clone());
    let (hrf_red, _) = run_rom(&mut hrf, &basis, &sys, &scheme, &SETTINGS, &mu, 50).unwrap();

    assert_mat_close(
        &hrf_red.states,
        &ref_red.states,
        1e-9,
        "HRF LSPG trajectory vs reference ROM",
    );
}

#[test]
fn galerkin_reduced_jacobian_matches_finite_differences() {
    let sys = random_system(10, 2, true, 2007);
    let basis = basis_from(random_orthonormal(10, 4, 2017));
    let scheme = backward_euler(0.05);
    let mu = [0.5, 0.6];
    let ops = precompute_hrf_galerkin(&sys, &basis).unwrap();
    let past = vec![rand_vec(4, 2027)];
    let inputs = vec![rand_vec(2, 2028), rand_vec(2, 2029)];
    let x0 = rand_vec(4, 2030);

    let rhs_at = |y: &DVector<f64>| {
        let (_, rhs) = assemble_hrf_galerkin(&ops, &scheme, y, &past, &inputs, &mu).unwrap();
        rhs
    };
    let fd = common::fd_jacobian(&rhs_at, &x0, 1e-6);
    let (lhs, _) = assemble_hrf_galerkin(&ops, &scheme, &x0, &past, &inputs, &mu).unwrap();
    assert_mat_close(&lhs, &fd, 1e-6, "reduced Jacobian vs finite differences");
}

#[test]
fn lspg_lhs_is_symmetric_positive_definite() {
    let sys = random_system(9, 2, true, 2008);
    let basis = basis_from(random_orthonormal(9, 4, 2018));
    let scheme = backward_euler(0.01);
    let mu = [0.9, 0.9];
    let ops = precompute_hrf_lspg(&sys, &basis).unwrap();
    let xhat = rand_vec(4, 2038);
    let past = vec![rand_vec(4, 2039)];
    let inputs = vec![rand_vec(2, 2040), rand_vec(2, 2041)];
    let (lhs, _) = assemble_hrf_lspg(&ops, &scheme, &xhat, &past, &inputs, &mu).unwrap();

    assert_mat_close(&lhs, &lhs.transpose(), 1e-13, "normal equations symmetry");
    let eig = lhs.symmetric_eigen();
    let min = eig.eigenvalues.min();
    assert!(min > 0.0, "J̃ᵀJ̃ must be positive definite, smallest eigenvalue {min:.3e}");
}

#[test]
fn galerkin_tensor_archive_round_trips() {
    for cubic in [false, true] {
        let sys = random_system(8, 2, cubic, 2009);
        let basis = basis_from(random_orthonormal(8, 3, 2019));
        let ops = precompute_hrf_galerkin(&sys, &basis).unwrap();
        let dir = tempdir().unwrap();
        save_hrf_galerkin(&ops, dir.path(), "g").unwrap();
        let back = load_hrf_galerkin(dir.path(), "g").unwrap();

        // The archived operators must reproduce the assembly bit-for-bit.
        let scheme = backward_euler(0.01);
        let mu = [0.4, -0.8];
        let xhat = rand_vec(3, 2049);
        let past = vec![rand_vec(3, 2050)];
        let inputs = vec![rand_vec(2, 2051), rand_vec(2, 2052)];
        let (lhs_a, rhs_a) =
            assemble_hrf_galerkin(&ops, &scheme, &xhat, &past, &inputs, &mu).unwrap();
        let (lhs_b, rhs_b) =
            assemble_hrf_galerkin(&back, &scheme, &xhat, &past, &inputs, &mu).unwrap();
        assert_eq!(lhs_a, lhs_b, "archived Galerkin lhs differs (cubic={cubic})");
        assert_eq!(rhs_a, rhs_b, "archived Galerkin rhs differs (cubic={cubic})");
    }
}

#[test]
fn lspg_tensor_archive_round_trips() {
    for cubic in [false, true] {
        let sys = random_system(7, 2, cubic, 2010);
        let basis = basis_from(random_orthonormal(7, 3, 2020));
        let ops = precompute_hrf_lspg(&sys, &basis).unwrap();
        let dir = tempdir().unwrap();
        save_hrf_lspg(&ops, dir.path(), "l").unwrap();
        let back = load_hrf_lspg(dir.path(), "l").unwrap();

        let scheme = backward_euler(0.01);
        let mu = [1.3, 0.1];
        let xhat = rand_vec(3, 2060);
        let past = vec![rand_vec(3, 2061)];
        let inputs = vec![rand_vec(2, 2062), rand_vec(2, 2063)];
        let (lhs_a, rhs_a) =
            assemble_hrf_lspg(&ops, &scheme, &xhat, &past, &inputs, &mu).unwrap();
        let (lhs_b, rhs_b) =
            assemble_hrf_lspg(&back, &scheme, &xhat, &past, &inputs, &mu).unwrap();
        assert_eq!(lhs_a, lhs_b, "archived LSPG lhs differs (cubic={cubic})");
        assert_eq!(rhs_a, rhs_b, "archived LSPG rhs differs (cubic={cubic})");
    }
}

#[test]
fn missing_archive_files_are_reported() {
    let dir = tempdir().unwrap();
    assert!(
        load_hrf_galerkin(dir.path(), "nothing").is_err(),
        "loading a nonexistent archive must fail"
    );
}
