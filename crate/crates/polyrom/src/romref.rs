//! Reduced Newton driver, the assembler interface every ROM variant plugs
//! into, and slow exact-projection reference assemblers (Galerkin and LSPG)
//! whose cost intentionally scales with the full dimension N.

use nalgebra::{DMatrix, DVector};

use crate::basis::ReducedBasis;
use crate::error::{Error, Result};
use crate::fomsolve::{backward_euler, MultistepScheme, NewtonSettings, Trajectory};
use crate::polysys::{EvaluatedSystem, PolynomialSystem};
use crate::sparse::SpMat;

/// Condition-number estimate above which a reduced Newton system is rejected.
pub const ILL_CONDITION_LIMIT: f64 = 1e14;

/// Supplies the dense reduced Newton system for one ROM variant.
///
/// Drivers call `prepare` once per trajectory, `begin_step` once per time step
/// (with `past` = [x̂^{m-1}, …, x̂^{m-τ}] and `inputs` = [u^m, …, u^{m-τ}]),
/// then `assemble` once per Newton iterate.
pub trait ReducedSystemAssembler {
    /// Reduced dimension n.
    fn dim(&self) -> usize;

    /// The multistep scheme the assembler discretizes with.
    fn scheme(&self) -> &MultistepScheme;

    /// Swaps the scheme (used for multistep startup).
    fn set_scheme(&mut self, scheme: MultistepScheme);

    /// Per-trajectory setup: evaluate parameter-dependent operators at μ.
    fn prepare(&mut self, mu: &[f64]) -> Result<()>;

    /// Per-step setup: cache history-dependent sums.
    fn begin_step(&mut self, _past: &[DVector<f64>], _inputs: &[DVector<f64>]) {}

    /// Writes lhs = ∂r̂/∂x̂ and rhs = r̂ at the iterate `xhat`. Takes `&mut
    /// self` so implementations can reuse scratch buffers.
    fn assemble(
        &mut self,
        xhat: &DVector<f64>,
        past: &[DVector<f64>],
        inputs: &[DVector<f64>],
        lhs: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    );
}

/// Solves one reduced time step by Newton iteration: x̂ ← x̂ + γ·p̂ with
/// lhs·p̂ = −rhs until ‖rhs‖ < κ. Returns the new reduced state and the
/// iteration count (0 for explicit schemes).
pub fn reduced_newton(
    assembler: &mut dyn ReducedSystemAssembler,
    settings: &NewtonSettings,
    past: &[DVector<f64>],
    inputs: &[DVector<f64>],
) -> Result<(DVector<f64>, usize)> {
    let tau = assembler.scheme().tau();
    assert_eq!(past.len(), tau, "history window length mismatch");
    assert_eq!(inputs.len(), tau + 1, "input window length mismatch");
    let implicit = assembler.scheme().is_implicit();
    assembler.begin_step(past, inputs);

    let n = assembler.dim();
    let mut x = past[0].clone();
    let mut lhs = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    let mut iters = 0usize;
    loop {
        assembler.assemble(&x, past, inputs, &mut lhs, &mut rhs);
        if !implicit {
            // lhs = α_0·(mass part); one linear solve, no iteration.
            let lu = lhs.clone().lu();
            rhs.neg_mut();
            if !lu.solve_mut(&mut rhs) {
                return Err(Error::Singular("explicit reduced update".into()));
            }
            x += &rhs;
            return Ok((x, 0));
        }
        let rnorm = rhs.norm();
        if rnorm < settings.tol {
            return Ok((x, iters));
        }
        if iters >= settings.max_iter {
            return Err(Error::NonConvergence { step: 0, residual: rnorm, iterations: iters });
        }

        let lu = lhs.clone().lu();
        let u = lu.u();
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for i in 0..n {
            let d = u[(i, i)].abs();
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        if dmin == 0.0 {
            return Err(Error::Singular("reduced Newton system".into()));
        }
        let cond = dmax / dmin;
        if cond > ILL_CONDITION_LIMIT {
            return Err(Error::IllConditioned(cond));
        }
        rhs.neg_mut();
        if !lu.solve_mut(&mut rhs) {
            return Err(Error::Singular("reduced Newton system".into()));
        }
        x.axpy(settings.step_length, &rhs, 1.0);
        iters += 1;
    }
}

/// Shared machinery of the two reference assemblers.
struct ReferenceCore {
    phi: DMatrix<f64>,
    scheme: MultistepScheme,
    esys: Option<EvaluatedSystem>,
    /// History part of the full-order residual, cached per step.
    r_hist: DVector<f64>,
    /// Reconstruction buffer Φ·x̂.
    x_full: DVector<f64>,
}

impl ReferenceCore {
    fn new(phi: DMatrix<f64>, scheme: MultistepScheme) -> ReferenceCore {
        let nfull = phi.nrows();
        ReferenceCore {
            phi,
            scheme,
            esys: None,
            r_hist: DVector::zeros(nfull),
            x_full: DVector::zeros(nfull),
        }
    }

    fn begin_step(&mut self, past: &[DVector<f64>], inputs: &[DVector<f64>]) {
        let esys = self.esys.as_ref().expect("prepare() must run before begin_step()");
        self.r_hist.fill(0.0);
        for j in 1..=self.scheme.tau() {
            self.x_full.gemv(1.0, &self.phi, &past[j - 1], 0.0);
            self.r_hist.axpy(self.scheme.alphas[j], &self.x_full, 1.0);
            if self.scheme.betas[j] != 0.0 {
                let coef = -self.scheme.dt * self.scheme.betas[j];
                esys.rhs_add(coef, &self.x_full, &inputs[j], &mut self.r_hist);
            }
        }
    }

    /// Full residual r̃ and Jacobian-times-basis J̃ = (α_0·I − Δt·β_0·J_f)·Φ
    /// at the reconstructed iterate.
    fn residual_and_jtilde(
        &mut self,
        xhat: &DVector<f64>,
        inputs: &[DVector<f64>],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let esys = self.esys.as_ref().expect("prepare() must run before assemble()");
        self.x_full.gemv(1.0, &self.phi, xhat, 0.0);
        let mut r = self.r_hist.clone();
        r.axpy(self.scheme.alphas[0], &self.x_full, 1.0);
        let b0 = self.scheme.betas[0];
        if b0 != 0.0 {
            esys.rhs_add(-self.scheme.dt * b0, &self.x_full, &inputs[0], &mut r);
        }
        let jf: SpMat = esys.jacobian_sparse(&self.x_full, &inputs[0]);
        let mut jtilde = jf.mul_dense(&self.phi);
        jtilde *= -self.scheme.dt * b0;
        let a0 = self.scheme.alphas[0];
        jtilde.zip_apply(&self.phi, |j, p| *j += a0 * p);
        (r, jtilde)
    }
}

/// Reference Galerkin assembler: lhs = Φᵀ·J̃, rhs = Φᵀ·r̃, both formed from
/// explicit full-order reconstructions.
pub struct GalerkinReferenceAssembler<'a> {
    sys: &'a PolynomialSystem,
    core: ReferenceCore,
}

/// Reference LSPG assembler via Gauss-Newton normal equations: lhs = J̃ᵀ·J̃,
/// rhs = J̃ᵀ·r̃.
pub struct LspgReferenceAssembler<'a> {
    sys: &'a PolynomialSystem,
    core: ReferenceCore,
}

/// Builds the exact-projection Galerkin reference assembler.
pub fn galerkin_reference_assembler<'a>(
    sys: &'a PolynomialSystem,
    basis: &ReducedBasis,
    scheme: &MultistepScheme,
) -> GalerkinReferenceAssembler<'a> {
    GalerkinReferenceAssembler { sys, core: ReferenceCore::new(basis.phi.clone(), scheme.clone()) }
}

/// Builds the exact-projection LSPG reference assembler.
pub fn lspg_reference_assembler<'a>(
    sys: &'a PolynomialSystem,
    basis: &ReducedBasis,
    scheme: &MultistepScheme,
) -> LspgReferenceAssembler<'a> {
    LspgReferenceAssembler { sys, core: ReferenceCore::new(basis.phi.clone(), scheme.clone()) }
}

impl ReducedSystemAssembler for GalerkinReferenceAssembler<'_> {
    fn dim(&self) -> usize {
        self.core.phi.ncols()
    }

    fn scheme(&self) -> &MultistepScheme {
        &self.core.scheme
    }

    fn set_scheme(&mut self, scheme: MultistepScheme) {
        self.core.scheme = scheme;
    }

    fn prepare(&mut self, mu: &[f64]) -> Result<()> {
        self.core.esys = Some(self.sys.evaluate(mu)?);
        Ok(())
    }

    fn begin_step(&mut self, past: &[DVector<f64>], inputs: &[DVector<f64>]) {
        self.core.begin_step(past, inputs);
    }

    fn assemble(
        &mut self,
        xhat: &DVector<f64>,
        _past: &[DVector<f64>],
        inputs: &[DVector<f64>],
        lhs: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    ) {
        let (r, jtilde) = self.core.residual_and_jtilde(xhat, inputs);
        lhs.gemm_tr(1.0, &self.core.phi, &jtilde, 0.0);
        rhs.gemv_tr(1.0, &self.core.phi, &r, 0.0);
    }
}

impl ReducedSystemAssembler for LspgReferenceAssembler<'_> {
    fn dim(&self) -> usize {
        self.core.phi.ncols()
    }

    fn scheme(&self) -> &MultistepScheme {
        &self.core.scheme
    }

    fn set_scheme(&mut self, scheme: MultistepScheme) {
        self.core.scheme = scheme;
    }

    fn prepare(&mut self, mu: &[f64]) -> Result<()> {
        self.core.esys = Some(self.sys.evaluate(mu)?);
        Ok(())
    }

    fn begin_step(&mut self, past: &[DVector<f64>], inputs: &[DVector<f64>]) {
        self.core.begin_step(past, inputs);
    }

    fn assemble(
        &mut self,
        xhat: &DVector<f64>,
        _past: &[DVector<f64>],
        inputs: &[DVector<f64>],
        lhs: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    ) {
        let (r, jtilde) = self.core.residual_and_jtilde(xhat, inputs);
        lhs.gemm_tr(1.0, &jtilde, &jtilde, 0.0);
        rhs.gemv_tr(1.0, &jtilde, &r, 0.0);
    }
}

fn check_scheme_match(a: &MultistepScheme, b: &MultistepScheme) {
    assert!(
        a.dt == b.dt && a.alphas == b.alphas && a.betas == b.betas,
        "assembler scheme does not match the driver scheme"
    );
}

/// Integrates the reduced model only; returns the reduced trajectory with
/// states x̂^m in its columns. This is the online-cost code path.
pub fn run_rom_reduced(
    assembler: &mut dyn ReducedSystemAssembler,
    basis: &ReducedBasis,
    sys: &PolynomialSystem,
    scheme: &MultistepScheme,
    settings: &NewtonSettings,
    mu: &[f64],
    n_steps: usize,
) -> Result<Trajectory> {
    check_scheme_match(scheme, assembler.scheme());
    let n = assembler.dim();
    assert_eq!(n, basis.phi.ncols(), "assembler and basis dimensions differ");
    let tau = scheme.tau();
    let dt = scheme.dt;

    assembler.prepare(mu)?;
    let xhat0 = basis.phi.tr_mul(&sys.initial(mu));
    let mut states = DMatrix::zeros(n, n_steps + 1);
    states.column_mut(0).copy_from(&xhat0);

    let mut past: Vec<DVector<f64>> = vec![xhat0];
    let mut on_startup = false;
    for m in 1..=n_steps {
        // Multistep startup mirrors the full-order driver: backward Euler
        // until enough reduced history exists.
        let need_startup = past.len() < tau;
        if need_startup && !on_startup {
            assembler.set_scheme(backward_euler(dt));
            on_startup = true;
        } else if !need_startup && on_startup {
            assembler.set_scheme(scheme.clone());
            on_startup = false;
        }
        let window = assembler.scheme().tau();
        let inputs: Vec<DVector<f64>> = (0..=window)
            .map(|j| sys.input((m - j) as f64 * dt, mu))
            .collect();
        let (x, _iters) = reduced_newton(assembler, settings, &past[..window], &inputs)
            .map_err(|e| match e {
                Error::NonConvergence { residual, iterations, .. } => {
                    Error::NonConvergence { step: m, residual, iterations }
                }
                other => other,
            })?;
        states.column_mut(m).copy_from(&x);
        past.insert(0, x);
        if past.len() > tau {
            past.pop();
        }
    }

    Ok(Trajectory {
        model: "reduced".to_string(),
        scheme: scheme.name.clone(),
        mu: mu.to_vec(),
        dt,
        states,
    })
}

/// Integrates a ROM and reconstructs it: returns (reduced, reconstructed)
/// trajectories, the latter with columns Φ·x̂^m.
pub fn run_rom(
    assembler: &mut dyn ReducedSystemAssembler,
    basis: &ReducedBasis,
    sys: &PolynomialSystem,
    scheme: &MultistepScheme,
    settings: &NewtonSettings,
    mu: &[f64],
    n_steps: usize,
) -> Result<(Trajectory, Trajectory)> {
    let reduced = run_rom_reduced(assembler, basis, sys, scheme, settings, mu, n_steps)?;
    let full = Trajectory {
        model: "reconstructed".to_string(),
        scheme: reduced.scheme.clone(),
        mu: reduced.mu.clone(),
        dt: reduced.dt,
        states: &basis.phi * &reduced.states,
    };
    Ok((reduced, full))
}
