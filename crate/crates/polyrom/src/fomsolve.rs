//! Full-order time integration: linear multistep discretization, Newton with a
//! sparse LU inner solver, and trajectory persistence.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matio;
use crate::polysys::{EvaluatedSystem, PolynomialSystem};
use crate::sparse::{SparseLu, SpMat};

/// Linear τ-step scheme: Σ_j α_j·x^{m-j} = Δt·Σ_j β_j·f(x^{m-j}, u^{m-j}),
/// with j running over 0..=τ and α_0 ≠ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistepScheme {
    pub name: String,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub dt: f64,
}

impl MultistepScheme {
    pub fn new(name: &str, alphas: Vec<f64>, betas: Vec<f64>, dt: f64) -> MultistepScheme {
        assert!(alphas.len() >= 2, "scheme needs at least one history state");
        assert_eq!(alphas.len(), betas.len(), "alpha/beta lengths differ");
        assert!(alphas[0] != 0.0, "alpha_0 must be nonzero");
        assert!(dt > 0.0, "time step must be positive");
        MultistepScheme { name: name.to_string(), alphas, betas, dt }
    }

    /// Number of history states the scheme consumes.
    pub fn tau(&self) -> usize {
        self.alphas.len() - 1
    }

    /// True when β_0 ≠ 0 and each step needs a nonlinear solve.
    pub fn is_implicit(&self) -> bool {
        self.betas[0] != 0.0
    }
}

/// Backward Euler: α = (1, -1), β = (1, 0).
pub fn backward_euler(dt: f64) -> MultistepScheme {
    MultistepScheme::new("backward-euler", vec![1.0, -1.0], vec![1.0, 0.0], dt)
}

/// Crank-Nicolson: α = (1, -1), β = (1/2, 1/2).
pub fn crank_nicolson(dt: f64) -> MultistepScheme {
    MultistepScheme::new("crank-nicolson", vec![1.0, -1.0], vec![0.5, 0.5], dt)
}

/// Builds a scheme by its configuration name.
pub fn scheme_by_name(name: &str, dt: f64) -> Result<MultistepScheme> {
    match name {
        "backward-euler" => Ok(backward_euler(dt)),
        "crank-nicolson" => Ok(crank_nicolson(dt)),
        other => Err(Error::Config(format!("unknown scheme '{other}'"))),
    }
}

/// Newton iteration controls, shared by the full and reduced solvers.
#[derive(Debug, Clone, Copy)]
pub struct NewtonSettings {
    /// Step length γ applied to each Newton update.
    pub step_length: f64,
    /// Convergence threshold κ on the residual 2-norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> NewtonSettings {
        NewtonSettings { step_length: 1.0, tol: 1e-6, max_iter: 25 }
    }
}

/// Time history of one run; column m holds the state at t = m·Δt.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model: String,
    pub scheme: String,
    pub mu: Vec<f64>,
    pub dt: f64,
    pub states: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryMeta {
    model: String,
    scheme: String,
    mu: Vec<f64>,
    dt: f64,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.states.ncols() - 1
    }

    /// Writes `<stem>.bin` (states) and `<stem>.toml` (metadata) under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        matio::write_matrix(&dir.join(format!("{stem}.bin")), &self.states)?;
        let meta = TrajectoryMeta {
            model: self.model.clone(),
            scheme: self.scheme.clone(),
            mu: self.mu.clone(),
            dt: self.dt,
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Format {
            path: dir.join(format!("{stem}.toml")).display().to_string(),
            detail: e.to_string(),
        })?;
        std::fs::write(dir.join(format!("{stem}.toml")), text)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Trajectory> {
        let states = matio::read_matrix(&dir.join(format!("{stem}.bin")))?;
        let meta_path = dir.join(format!("{stem}.toml"));
        let text = std::fs::read_to_string(&meta_path)?;
        let meta: TrajectoryMeta = toml::from_str(&text).map_err(|e| Error::Format {
            path: meta_path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(Trajectory {
            model: meta.model,
            scheme: meta.scheme,
            mu: meta.mu,
            dt: meta.dt,
            states,
        })
    }
}

fn check_window(scheme: &MultistepScheme, states: usize, inputs: usize) -> Result<()> {
    let want = scheme.tau() + 1;
    if states != want || inputs != want {
        return Err(Error::Dimension(format!(
            "scheme '{}' needs {} states and inputs, got {} states / {} inputs",
            scheme.name, want, states, inputs
        )));
    }
    Ok(())
}

/// Multistep residual r = Σ_j α_j·x_j − Δt·Σ_j β_j·f(x_j, u_j) for the window
/// `states` = [x^m, x^{m-1}, …, x^{m-τ}] and matching `inputs`.
pub fn fom_residual(
    sys: &PolynomialSystem,
    scheme: &MultistepScheme,
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    mu: &[f64],
) -> Result<DVector<f64>> {
    check_window(scheme, states.len(), inputs.len())?;
    let esys = sys.evaluate(mu)?;
    let mut r = DVector::zeros(sys.dim_state);
    for j in 0..states.len() {
        r.axpy(scheme.alphas[j], &states[j], 1.0);
        if scheme.betas[j] != 0.0 {
            esys.rhs_add(-scheme.dt * scheme.betas[j], &states[j], &inputs[j], &mut r);
        }
    }
    Ok(r)
}

/// Residual Jacobian α_0·I − Δt·β_0·∂f/∂x at the newest state, dense.
pub fn fom_residual_jacobian(
    sys: &PolynomialSystem,
    scheme: &MultistepScheme,
    x: &DVector<f64>,
    u: &DVector<f64>,
    mu: &[f64],
) -> Result<DMatrix<f64>> {
    let esys = sys.evaluate(mu)?;
    let jf = esys.jacobian_sparse(x, u);
    let mut out = jf.to_dense();
    out *= -scheme.dt * scheme.betas[0];
    for i in 0..sys.dim_state {
        out[(i, i)] += scheme.alphas[0];
    }
    Ok(out)
}

/// One implicit step on an already-evaluated system. `past` holds the τ most
/// recent states (newest first); `inputs` holds [u^m, …, u^{m-τ}].
pub(crate) fn newton_step_evaluated(
    esys: &EvaluatedSystem,
    scheme: &MultistepScheme,
    settings: &NewtonSettings,
    past: &[DVector<f64>],
    inputs: &[DVector<f64>],
    step_index: usize,
) -> Result<(DVector<f64>, usize)> {
    let tau = scheme.tau();
    assert_eq!(past.len(), tau, "history window length mismatch");
    assert_eq!(inputs.len(), tau + 1, "input window length mismatch");
    let n = esys.dim_state;

    // History part of the residual, fixed across Newton iterations.
    let mut r_hist = DVector::zeros(n);
    for j in 1..=tau {
        r_hist.axpy(scheme.alphas[j], &past[j - 1], 1.0);
        if scheme.betas[j] != 0.0 {
            esys.rhs_add(-scheme.dt * scheme.betas[j], &past[j - 1], &inputs[j], &mut r_hist);
        }
    }

    if !scheme.is_implicit() {
        // Explicit member: α_0·x = -r_hist directly, no iteration.
        return Ok((r_hist * (-1.0 / scheme.alphas[0]), 0));
    }

    let mut x = past[0].clone();
    let mut r = DVector::zeros(n);
    let mut iters = 0usize;
    loop {
        r.copy_from(&r_hist);
        r.axpy(scheme.alphas[0], &x, 1.0);
        esys.rhs_add(-scheme.dt * scheme.betas[0], &x, &inputs[0], &mut r);
        let rnorm = r.norm();
        if rnorm < settings.tol {
            return Ok((x, iters));
        }
        if iters >= settings.max_iter {
            return Err(Error::NonConvergence {
                step: step_index,
                residual: rnorm,
                iterations: iters,
            });
        }
        let mut trips = esys.jacobian_triplets(&x, &inputs[0]);
        for t in trips.iter_mut() {
            t.2 *= -scheme.dt * scheme.betas[0];
        }
        for i in 0..n {
            trips.push((i, i, scheme.alphas[0]));
        }
        let lhs = SpMat::from_triplets(n, n, &trips);
        let lu = SparseLu::factor(&lhs)?;
        r.neg_mut();
        let p = lu.solve(&r);
        x.axpy(settings.step_length, &p, 1.0);
        iters += 1;
    }
}

/// One full-order Newton step; `past` holds the τ most recent states (newest
/// first), `inputs` holds [u^m, …, u^{m-τ}]. Returns the new state and the
/// number of Newton iterations.
pub fn fom_newton_step(
    sys: &PolynomialSystem,
    scheme: &MultistepScheme,
    settings: &NewtonSettings,
    past: &[DVector<f64>],
    inputs: &[DVector<f64>],
    mu: &[f64],
) -> Result<(DVector<f64>, usize)> {
    if past.len() != scheme.tau() || inputs.len() != scheme.tau() + 1 {
        return Err(Error::Dimension(format!(
            "scheme '{}' needs {} past states and {} inputs, got {} / {}",
            scheme.name,
            scheme.tau(),
            scheme.tau() + 1,
            past.len(),
            inputs.len()
        )));
    }
    let esys = sys.evaluate(mu)?;
    newton_step_evaluated(&esys, scheme, settings, past, inputs, 0)
}

/// Integrates the full-order model over `n_steps` steps from x(0) = x_0(μ).
/// Multistep startup uses backward Euler until enough history exists.
pub fn integrate_fom(
    sys: &PolynomialSystem,
    scheme: &MultistepScheme,
    settings: &NewtonSettings,
    mu: &[f64],
    n_steps: usize,
) -> Result<Trajectory> {
    let esys = sys.evaluate(mu)?;
    let n = sys.dim_state;
    let tau = scheme.tau();
    let dt = scheme.dt;
    let startup = if tau > 1 { Some(backward_euler(dt)) } else { None };

    let mut states = DMatrix::zeros(n, n_steps + 1);
    states.column_mut(0).copy_from(&sys.initial(mu));

    // Most recent states first, up to τ of them.
    let mut past: Vec<DVector<f64>> = vec![states.column(0).into_owned()];
    for m in 1..=n_steps {
        let eff = if past.len() < tau { startup.as_ref().unwrap() } else { scheme };
        let window = eff.tau();
        let inputs: Vec<DVector<f64>> = (0..=window)
            .map(|j| sys.input((m - j) as f64 * dt, mu))
            .collect();
        let (x, _iters) =
            newton_step_evaluated(&esys, eff, settings, &past[..window], &inputs, m)?;
        states.column_mut(m).copy_from(&x);
        past.insert(0, x);
        if past.len() > tau {
            past.pop();
        }
    }

    Ok(Trajectory {
        model: String::new(),
        scheme: scheme.name.clone(),
        mu: mu.to_vec(),
        dt,
        states,
    })
}
