//! CSR kernel and sparse LU checks against dense nalgebra counterparts.

mod common;

use nalgebra::DMatrix;
use polyrom::sparse::{SparseLu, SpMat};
use polyrom::Error;
use tempfile::tempdir;

use common::{assert_mat_close, assert_vec_close, rand_sparse, rand_vec};

#[test]
fn triplets_with_duplicates_are_summed() {
    let m = SpMat::from_triplets(2, 2, &[(0, 1, 2.0), (0, 1, 3.0), (1, 0, -1.0)]);
    let d = m.to_dense();
    assert_eq!(d[(0, 1)], 5.0, "duplicate triplets must accumulate");
    assert_eq!(d[(1, 0)], -1.0, "single triplet must pass through");
    assert_eq!(m.nnz(), 2, "duplicates collapse to one stored entry");
}

#[test]
fn dense_round_trip_preserves_entries() {
    let orig = rand_sparse(6, 5, 0.4, 2.0, 42).to_dense();
    let back = SpMat::from_dense(&orig).to_dense();
    assert_mat_close(&back, &orig, 0.0, "from_dense/to_dense round trip");
}

#[test]
fn matvec_matches_dense_product() {
    let m = rand_sparse(8, 6, 0.5, 1.0, 43);
    let x = rand_vec(6, 44);
    let got = m.matvec(&x);
    let want = m.to_dense() * &x;
    assert_vec_close(&got, &want, 1e-14, "sparse matvec");

    let mut acc = rand_vec(8, 45);
    let mut want_acc = acc.clone();
    m.matvec_add(-0.7, &x, &mut acc);
    want_acc += m.to_dense() * &x * (-0.7);
    assert_vec_close(&acc, &want_acc, 1e-14, "sparse matvec_add");
}

#[test]
fn mul_dense_and_transpose_match_dense() {
    let m = rand_sparse(7, 5, 0.5, 1.0, 46);
    let b = DMatrix::from_fn(5, 3, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
    assert_mat_close(&m.mul_dense(&b), &(m.to_dense() * &b), 1e-14, "sparse-dense product");
    assert_mat_close(
        &m.transpose().to_dense(),
        &m.to_dense().transpose(),
        0.0,
        "sparse transpose",
    );
}

#[test]
fn linear_combination_matches_dense() {
    let a = rand_sparse(5, 5, 0.5, 1.0, 47);
    let b = rand_sparse(5, 5, 0.5, 1.0, 48);
    let got = SpMat::linear_combination(&[(2.0, &a), (-0.5, &b)]).to_dense();
    let want = a.to_dense() * 2.0 + b.to_dense() * (-0.5);
    assert_mat_close(&got, &want, 1e-14, "sparse linear combination");
}

#[test]
fn row_access_and_row_dot_agree_with_dense() {
    let m = rand_sparse(6, 6, 0.4, 1.0, 49);
    let d = m.to_dense();
    let x = rand_vec(6, 50);
    let xs: Vec<f64> = x.iter().copied().collect();
    for r in 0..6 {
        let want: f64 = (0..6).map(|c| d[(r, c)] * x[c]).sum();
        assert!(
            (m.row_dot(r, &xs) - want).abs() <= 1e-14 * want.abs().max(1.0),
            "row_dot mismatch at row {r}"
        );
        let (cols, vals) = m.row(r);
        for (c, v) in cols.iter().zip(vals) {
            assert_eq!(d[(r, *c)], *v, "row slice entry ({r},{c})");
        }
    }
}

#[test]
fn identity_factors_and_solves() {
    let lu = SparseLu::factor(&SpMat::identity(5)).unwrap();
    let b = rand_vec(5, 51);
    assert_vec_close(&lu.solve(&b), &b, 1e-14, "identity solve");
}

#[test]
fn sparse_lu_matches_dense_lu() {
    // Diagonally dominant so pivoting stays tame.
    let mut base = rand_sparse(20, 20, 0.15, 1.0, 52).to_dense();
    for i in 0..20 {
        base[(i, i)] += 5.0;
    }
    let m = SpMat::from_dense(&base);
    let lu = SparseLu::factor(&m).unwrap();
    let b = rand_vec(20, 53);
    let got = lu.solve(&b);
    let want = base.clone().lu().solve(&b).expect("dense LU must solve");
    assert_vec_close(&got, &want, 1e-11, "sparse vs dense LU solve");
    assert_vec_close(&(&base * &got), &b, 1e-11, "sparse LU residual");
}

#[test]
fn singular_matrix_is_rejected() {
    let m = SpMat::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0)]);
    match SparseLu::factor(&m) {
        Err(Error::Singular(_)) => {}
        other => panic!("expected Singular error for a rank-deficient matrix, got {other:?}"),
    }
}

#[test]
fn coo_files_round_trip() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("op.coo");
    let m = rand_sparse(9, 4, 0.3, 3.0, 54);
    m.write_coo(&path).unwrap();
    let back = SpMat::read_coo(&path).unwrap();
    assert_eq!(back.shape(), m.shape(), "COO round trip shape");
    assert_mat_close(&back.to_dense(), &m.to_dense(), 1e-15, "COO round trip entries");
}
