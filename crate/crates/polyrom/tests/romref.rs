//! Reduced Newton driver and exact-projection reference assemblers.

mod common;

use nalgebra::{DMatrix, DVector};
use polyrom::fomsolve::{
    backward_euler, crank_nicolson, integrate_fom, MultistepScheme, NewtonSettings,
};
use polyrom::romref::{
    galerkin_reference_assembler, lspg_reference_assembler, reduced_newton, run_rom,
    run_rom_reduced, ReducedSystemAssembler, ILL_CONDITION_LIMIT,
};
use polyrom::Error;

use common::{assert_mat_close, basis_from, random_system};

const SETTINGS: NewtonSettings = NewtonSettings { step_length: 1.0, tol: 1e-10, max_iter: 25 };

#[test]
fn galerkin_with_a_complete_basis_reproduces_the_fom() {
    let sys = random_system(8, 2, false, 1001);
    let mu = [0.9, -0.2];
    for scheme in [backward_euler(0.01), crank_nicolson(0.01)] {
        let fom = integrate_fom(&sys, &scheme, &SETTINGS, &mu, 40).unwrap();
        // A square orthogonal basis loses nothing; the ROM is the FOM in
        // rotated coordinates.
        let basis = basis_from(common::random_orthonormal(8, 8, 77));
        let mut asm = galerkin_reference_assembler(&sys, &basis, &scheme);
        let (_, rec) = run_rom(&mut asm, &basis, &sys, &scheme, &SETTINGS, &mu, 40).unwrap();
        assert_mat_close(
            &rec.states,
            &fom.states,
            1e-8,
            &format!("complete-basis Galerkin vs FOM ({})", scheme.name),
        );
    }
}

#[test]
fn lspg_with_a_complete_basis_reproduces_the_fom() {
    let sys = random_system(8, 2, true, 1002);
    let scheme = backward_euler(0.01);
    let mu = [0.8, 0.1];
    let fom = integrate_fom(&sys, &scheme, &SETTINGS, &mu, 30).unwrap();
    let basis = basis_from(common::random_orthonormal(8, 8, 78));
    let mut asm = lspg_reference_assembler(&sys, &basis, &scheme);
    let (_, rec) = run_rom(&mut asm, &basis, &sys, &scheme, &SETTINGS, &mu, 30).unwrap();
    assert_mat_close(&rec.states, &fom.states, 1e-7, "complete-basis LSPG vs FOM");
}

#[test]
fn galerkin_assembly_projects_the_full_residual() {
    let sys = random_system(7, 2, false, 1003);
    let scheme = backward_euler(0.02);
    let mu = [1.1, 0.4];
    let basis = basis_from(common::random_orthonormal(7, 3, 79));
    let mut asm = galerkin_reference_assembler(&sys, &basis, &scheme);
    asm.prepare(&mu).unwrap();

    let xhat = common::rand_vec(3, 80);
    let past = vec![common::rand_vec(3, 81)];
    let inputs = vec![common::rand_vec(2, 82), common::rand_vec(2, 83)];
    asm.begin_step(&past, &inputs);
    let mut lhs = DMatrix::zeros(3, 3);
    let mut rhs = DVector::zeros(3);
    asm.assemble(&xhat, &past, &inputs, &mut lhs, &mut rhs);

    // Oracle: project the dense full-order residual and Jacobian by hand.
    let x_full = &basis.phi * &xhat;
    let window = vec![x_full.clone(), &basis.phi * &past[0]];
    let r_full = common::dense_residual(
        &sys,
        &scheme.alphas,
        &scheme.betas,
        scheme.dt,
        &window,
        &inputs,
        &mu,
    );
    let jf = common::dense_jacobian(&sys, &x_full, &inputs[0], &mu);
    let jr = DMatrix::identity(7, 7) * scheme.alphas[0] - jf * (scheme.dt * scheme.betas[0]);
    let want_rhs = basis.phi.transpose() * &r_full;
    let want_lhs = basis.phi.transpose() * jr * &basis.phi;
    common::assert_vec_close(&rhs, &want_rhs, 1e-12, "Galerkin reduced residual");
    assert_mat_close(&lhs, &want_lhs, 1e-12, "Galerkin reduced Jacobian");
}

#[test]
fn lspg_assembly_forms_the_normal_equations() {
    let sys = random_system(7, 2, true, 1004);
    let scheme = crank_nicolson(0.02);
    let mu = [0.6, -0.5];
    let basis = basis_from(common::random_orthonormal(7, 3, 84));
    let mut asm = lspg_reference_assembler(&sys, &basis, &scheme);
    asm.prepare(&mu).unwrap();

    let xhat = common::rand_vec(3, 85);
    let past = vec![common::rand_vec(3, 86)];
    let inputs = vec![common::rand_vec(2, 87), common::rand_vec(2, 88)];
    asm.begin_step(&past, &inputs);
    let mut lhs = DMatrix::zeros(3, 3);
    let mut rhs = DVector::zeros(3);
    asm.assemble(&xhat, &past, &inputs, &mut lhs, &mut rhs);

    let x_full = &basis.phi * &xhat;
    let window = vec![x_full.clone(), &basis.phi * &past[0]];
    let r_full = common::dense_residual(
        &sys,
        &scheme.alphas,
        &scheme.betas,
        scheme.dt,
        &window,
        &inputs,
        &mu,
    );
    let jf = common::dense_jacobian(&sys, &x_full, &inputs[0], &mu);
    let jr = DMatrix::identity(7, 7) * scheme.alphas[0] - jf * (scheme.dt * scheme.betas[0]);
    let jtilde = jr * &basis.phi;
    let want_rhs = jtilde.transpose() * &r_full;
    let want_lhs = jtilde.transpose() * &jtilde;
    common::assert_vec_close(&rhs, &want_rhs, 1e-12, "LSPG projected residual");
    assert_mat_close(&lhs, &want_lhs, 1e-12, "LSPG normal-equation matrix");
}

#[test]
fn reduced_trajectory_starts_from_the_projected_initial_state() {
    let sys = random_system(9, 2, false, 1005);
    let scheme = backward_euler(0.01);
    let mu = [1.0, 0.3];
    let basis = basis_from(common::random_orthonormal(9, 4, 89));
    let mut asm = galerkin_reference_assembler(&sys, &basis, &scheme);
    let red = run_rom_reduced(&mut asm, &basis, &sys, &scheme, &SETTINGS, &mu, 5).unwrap();
    let want = basis.phi.transpose() * sys.initial(&mu);
    common::assert_vec_close(
        &red.states.column(0).into_owned(),
        &want,
        1e-13,
        "initial reduced state",
    );
    assert_eq!(red.n_steps(), 5, "requested horizon");
}

/// Toy assembler with a fixed lhs; drives the driver's edge branches.
struct FixedAssembler {
    scheme: MultistepScheme,
    lhs: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl ReducedSystemAssembler for FixedAssembler {
    fn dim(&self) -> usize {
        self.rhs.len()
    }
    fn scheme(&self) -> &MultistepScheme {
        &self.scheme
    }
    fn set_scheme(&mut self, scheme: MultistepScheme) {
        self.scheme = scheme;
    }
    fn prepare(&mut self, _mu: &[f64]) -> Result<(), Error> {
        Ok(())
    }
    fn assemble(
        &mut self,
        _xhat: &DVector<f64>,
        _past: &[DVector<f64>],
        _inputs: &[DVector<f64>],
        lhs: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    ) {
        lhs.copy_from(&self.lhs);
        rhs.copy_from(&self.rhs);
    }
}

#[test]
fn ill_conditioned_reduced_systems_are_rejected() {
    let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 / (10.0 * ILL_CONDITION_LIMIT)]));
    let mut asm = FixedAssembler {
        scheme: backward_euler(0.1),
        lhs: bad,
        rhs: DVector::from_vec(vec![1.0, 1.0]),
    };
    let past = vec![DVector::zeros(2)];
    let inputs = vec![DVector::zeros(1), DVector::zeros(1)];
    match reduced_newton(&mut asm, &SETTINGS, &past, &inputs) {
        Err(Error::IllConditioned(cond)) => {
            assert!(cond > ILL_CONDITION_LIMIT, "reported estimate {cond:.3e} is too small");
        }
        other => panic!("expected IllConditioned, got {other:?}"),
    }
}

#[test]
fn singular_reduced_systems_are_rejected() {
    let mut asm = FixedAssembler {
        scheme: backward_euler(0.1),
        lhs: DMatrix::zeros(2, 2),
        rhs: DVector::from_vec(vec![1.0, 0.0]),
    };
    let past = vec![DVector::zeros(2)];
    let inputs = vec![DVector::zeros(1), DVector::zeros(1)];
    assert!(
        matches!(reduced_newton(&mut asm, &SETTINGS, &past, &inputs), Err(Error::Singular(_))),
        "a zero lhs must be reported as singular"
    );
}

#[test]
fn converged_window_returns_immediately() {
    // rhs below tolerance from the start: zero iterations, state unchanged.
    let mut asm = FixedAssembler {
        scheme: backward_euler(0.1),
        lhs: DMatrix::identity(2, 2),
        rhs: DVector::zeros(2),
    };
    let past = vec![DVector::from_vec(vec![0.4, -0.7])];
    let inputs = vec![DVector::zeros(1), DVector::zeros(1)];
    let (x, iters) = reduced_newton(&mut asm, &SETTINGS, &past, &inputs).unwrap();
    assert_eq!(iters, 0, "already-converged step must not iterate");
    common::assert_vec_close(&x, &past[0], 0.0, "state unchanged");
}

#[test]
fn newton_solves_a_linear_reduced_system_in_one_iteration() {
    // Affine residual rhs(x) = x − target with identity Jacobian.
    struct Affine {
        scheme: MultistepScheme,
        target: DVector<f64>,
    }
    impl ReducedSystemAssembler for Affine {
        fn dim(&self) -> usize {
            self.target.len()
        }
        fn scheme(&self) -> &MultistepScheme {
            &self.scheme
        }
        fn set_scheme(&mut self, scheme: MultistepScheme) {
            self.scheme = scheme;
        }
        fn prepare(&mut self, _mu: &[f64]) -> Result<(), Error> {
            Ok(())
        }
        fn assemble(
            &mut self,
            xhat: &DVector<f64>,
            _past: &[DVector<f64>],
            _inputs: &[DVector<f64>],
            lhs: &mut DMatrix<f64>,
            rhs: &mut DVector<f64>,
        ) {
            lhs.fill_with_identity();
            rhs.copy_from(&(xhat - &self.target));
        }
    }
    let target = DVector::from_vec(vec![2.0, -1.0, 0.5]);
    let mut asm = Affine { scheme: backward_euler(0.1), target: target.clone() };
    let past = vec![DVector::zeros(3)];
    let inputs = vec![DVector::zeros(1), DVector::zeros(1)];
    let (x, iters) = reduced_newton(&mut asm, &SETTINGS, &past, &inputs).unwrap();
    assert_eq!(iters, 1, "linear systems converge in one Newton iteration");
    common::assert_vec_close(&x, &target, 1e-14, "linear Newton solution");
}
