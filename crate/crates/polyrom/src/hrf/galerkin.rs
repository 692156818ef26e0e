//! HRF Galerkin: reduced operators Φᵀ(·)Φ-style, assembled online with dense
//! Kronecker contractions at O(n³) per Newton iteration (O(n⁴) cubic).

use nalgebra::{DMatrix, DVector};

use crate::basis::ReducedBasis;
use crate::error::Result;
use crate::fomsolve::MultistepScheme;
use crate::polysys::{kron_select_g, kron_select_h, AffineScalar, PolynomialSystem};
use crate::romref::ReducedSystemAssembler;

use super::{
    add_contract_right_s3, add_contract_right_u, combine_mats, combine_vecs, component_f_t,
    component_n_t, component_w_t, contract_right_s2, contract_right_s3, contract_right_u,
    guard_entries, kron2, kron3, kron_ux, project_vec_term, DEFAULT_TENSOR_CAP,
};

/// Reduced cubic operators ΦᵀW(Φ⊗Φ⊗Φ), one n×n³ matrix per affine term.
#[derive(Debug, Clone)]
pub struct HrfCubicOperators {
    pub ptw: Vec<(AffineScalar, DMatrix<f64>)>,
}

/// Parameter-affine reduced Galerkin operators.
#[derive(Debug, Clone)]
pub struct HrfGalerkinOperators {
    pub n: usize,
    pub n_u: usize,
    /// ΦᵀΦ (parameter independent).
    pub ptp: DMatrix<f64>,
    pub ptc: Vec<(AffineScalar, DVector<f64>)>,
    pub ptap: Vec<(AffineScalar, DMatrix<f64>)>,
    /// ΦᵀF(Φ⊗Φ), n×n² per term.
    pub ptf: Vec<(AffineScalar, DMatrix<f64>)>,
    pub ptb: Vec<(AffineScalar, DMatrix<f64>)>,
    /// ΦᵀN(I⊗Φ), n×(N_u·n) per term.
    pub ptn: Vec<(AffineScalar, DMatrix<f64>)>,
    pub ptw: Option<HrfCubicOperators>,
}

/// Reduced operators combined at one parameter value.
#[derive(Debug, Clone)]
pub struct HrfGalerkinEvaluated {
    pub n: usize,
    pub n_u: usize,
    pub ptp: DMatrix<f64>,
    pub ptc: DVector<f64>,
    pub ptap: DMatrix<f64>,
    pub ptf: DMatrix<f64>,
    /// Symmetrized quadratic operator F̂·(I + Π) with Π the Kronecker pair
    /// swap, so F̂·S₂(x̂) contracts as n contiguous block gemvs.
    pub ptfs2: DMatrix<f64>,
    pub ptb: DMatrix<f64>,
    pub ptn: DMatrix<f64>,
    pub ptw: Option<DMatrix<f64>>,
}

/// M + M·Π for an n×n² matrix, where Π swaps Kronecker pair columns:
/// out[:, i·n + j] = M[:, i·n + j] + M[:, j·n + i].
fn symmetrize_pairs(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            out.column_mut(i * n + j).axpy(1.0, &m.column(j * n + i), 1.0);
        }
    }
    out
}

impl HrfGalerkinOperators {
    /// Combines the affine terms at μ.
    pub fn evaluate(&self, mu: &[f64]) -> Result<HrfGalerkinEvaluated> {
        let mu = mu.to_vec();
        let ptf = combine_mats(&self.ptf, &mu)?;
        let ptfs2 = symmetrize_pairs(&ptf, self.n);
        Ok(HrfGalerkinEvaluated {
            n: self.n,
            n_u: self.n_u,
            ptp: self.ptp.clone(),
            ptc: combine_vecs(&self.ptc, &mu)?,
            ptap: combine_mats(&self.ptap, &mu)?,
            ptf,
            ptfs2,
            ptb: combine_mats(&self.ptb, &mu)?,
            ptn: combine_mats(&self.ptn, &mu)?,
            ptw: match &self.ptw {
                Some(c) => Some(combine_mats(&c.ptw, &mu)?),
                None => None,
            },
        })
    }
}

impl HrfGalerkinEvaluated {
    /// Column block ℓ of PtF under the (x̂⊗I) grouping (1-based ℓ).
    pub fn ptf_g(&self, ell: usize) -> DMatrix<f64> {
        kron_select_g(&self.ptf, ell)
    }

    /// Column selection ℓ of PtF under the (I⊗x̂) grouping (1-based ℓ).
    pub fn ptf_h(&self, ell: usize) -> DMatrix<f64> {
        kron_select_h(&self.ptf, ell)
    }

    /// out += coef·f̂(x̂, u) where f̂ is the reduced dynamics.
    pub fn rhs_hat_add(&self, coef: f64, xhat: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        out.axpy(coef, &self.ptc, 1.0);
        out.gemv(coef, &self.ptap, xhat, 1.0);
        let y = kron2(xhat);
        out.gemv(coef, &self.ptf, &y, 1.0);
        if self.n_u > 0 {
            out.gemv(coef, &self.ptb, u, 1.0);
            let ux = kron_ux(u, xhat);
            out.gemv(coef, &self.ptn, &ux, 1.0);
        }
        if let Some(ptw) = &self.ptw {
            let y3 = kron3(xhat);
            out.gemv(coef, ptw, &y3, 1.0);
        }
    }

    /// Reduced dynamics Jacobian ∂f̂/∂x̂ at (x̂, u).
    pub fn jacobian_hat(&self, xhat: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.ptap.clone();
        j += contract_right_s2(&self.ptf, xhat);
        if self.n_u > 0 {
            j += contract_right_u(&self.ptn, u, self.n);
        }
        if let Some(ptw) = &self.ptw {
            j += contract_right_s3(ptw, xhat);
        }
        j
    }
}

/// Projects the cubic operator: ΦᵀW(Φ⊗Φ⊗Φ) per affine term. Errors when the
/// n⁴ storage would exceed the tensor cap.
pub fn precompute_hrf_cubic(sys: &PolynomialSystem, basis: &ReducedBasis) -> Result<HrfCubicOperators> {
    let phi = &basis.phi;
    let n = phi.ncols();
    let w_op = sys.op_w.as_ref().expect("system has no cubic operator");
    guard_entries(
        "cubic Galerkin tensor PtW",
        w_op.terms().len() * n * n * n * n,
        DEFAULT_TENSOR_CAP,
    )?;
    let phi_t = phi.transpose();
    let mut ptw = Vec::new();
    for (theta, m) in w_op.terms() {
        let t = component_w_t(&phi_t, m);
        ptw.push((*theta, (t * phi).transpose()));
    }
    Ok(HrfCubicOperators { ptw })
}

/// Projects every polynomial operator onto the basis once, term by term:
/// PtAP = ΦᵀAΦ, PtF = ΦᵀF(Φ⊗Φ), PtN = ΦᵀN(I⊗Φ), plus vectors and inputs.
pub fn precompute_hrf_galerkin(sys: &PolynomialSystem, basis: &ReducedBasis) -> Result<HrfGalerkinOperators> {
    let phi = &basis.phi;
    let n = phi.ncols();
    let phi_t = phi.transpose();

    let ptp = phi.tr_mul(phi);
    let ptc: Vec<_> = sys
        .op_c
        .terms()
        .iter()
        .map(|(th, m)| (*th, project_vec_term(&phi_t, m)))
        .collect();
    let ptap: Vec<_> = sys
        .op_a
        .terms()
        .iter()
        .map(|(th, m)| {
            let t = m.mul_dense(phi);
            (*th, phi.tr_mul(&t))
        })
        .collect();
    let ptf: Vec<_> = sys
        .op_f
        .terms()
        .iter()
        .map(|(th, m)| {
            let t = component_f_t(&phi_t, m);
            (*th, (t * phi).transpose())
        })
        .collect();
    let ptb: Vec<_> = sys
        .op_b
        .terms()
        .iter()
        .map(|(th, m)| (*th, phi.tr_mul(&m.to_dense())))
        .collect();
    let ptn: Vec<_> = sys
        .op_n
        .terms()
        .iter()
        .map(|(th, m)| {
            let t = component_n_t(&phi_t, m, sys.dim_input);
            (*th, (t * phi).transpose())
        })
        .collect();
    let ptw = if sys.op_w.is_some() { Some(precompute_hrf_cubic(sys, basis)?) } else { None };

    Ok(HrfGalerkinOperators { n, n_u: sys.dim_input, ptp, ptc, ptap, ptf, ptb, ptn, ptw })
}

/// Assembles the reduced Galerkin Newton system at one iterate:
/// lhs = α_0·PtP − Δt·β_0·∂f̂/∂x̂, rhs = Σ_j α_j·PtP·x̂_j − Δt·Σ_j β_j·f̂_j.
/// `past` holds [x̂^{m-1}, …, x̂^{m-τ}], `inputs` holds [u^m, …, u^{m-τ}].
pub fn assemble_hrf_galerkin(
    ops: &HrfGalerkinOperators,
    scheme: &MultistepScheme,
    xhat: &DVector<f64>,
    past: &[DVector<f64>],
    inputs: &[DVector<f64>],
    mu: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut asm = hrf_galerkin_assembler(ops.clone(), scheme.clone());
    asm.prepare(mu)?;
    asm.begin_step(past, inputs);
    let n = ops.n;
    let mut lhs = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    asm.assemble(xhat, past, inputs, &mut lhs, &mut rhs);
    Ok((lhs, rhs))
}

/// Online HRF Galerkin assembler.
pub struct HrfGalerkinAssembler {
    ops: HrfGalerkinOperators,
    scheme: MultistepScheme,
    eval: Option<HrfGalerkinEvaluated>,
    /// History part of the reduced residual, cached per step.
    r_hist: DVector<f64>,
    /// Per-step cache Â + Σ_k u_k·N̂_k at the implicit-stage input.
    a_now: DMatrix<f64>,
    /// Per-step cache ĉ + B̂·u at the implicit-stage input.
    c_now: DVector<f64>,
    /// Scratch for the quadratic contraction F̂·S₂(x̂).
    j2: DMatrix<f64>,
    /// Scratch for the cubic contraction Ŵ·S₃(x̂).
    j3: DMatrix<f64>,
}

/// Builds the online HRF Galerkin assembler around precomputed operators.
pub fn hrf_galerkin_assembler(ops: HrfGalerkinOperators, scheme: MultistepScheme) -> HrfGalerkinAssembler {
    let n = ops.n;
    HrfGalerkinAssembler {
        ops,
        scheme,
        eval: None,
        r_hist: DVector::zeros(n),
        a_now: DMatrix::zeros(n, n),
        c_now: DVector::zeros(n),
        j2: DMatrix::zeros(n, n),
        j3: DMatrix::zeros(n, n),
    }
}

impl ReducedSystemAssembler for HrfGalerkinAssembler {
    fn dim(&self) -> usize {
        self.ops.n
    }

    fn scheme(&self) -> &MultistepScheme {
        &self.scheme
    }

    fn set_scheme(&mut self, scheme: MultistepScheme) {
        self.scheme = scheme;
    }

    fn prepare(&mut self, mu: &[f64]) -> Result<()> {
        self.eval = Some(self.ops.evaluate(mu)?);
        Ok(())
    }

    fn begin_step(&mut self, past: &[DVector<f64>], inputs: &[DVector<f64>]) {
        let eval = self.eval.as_ref().expect("prepare() must run before begin_step()");
        self.r_hist.fill(0.0);
        for j in 1..=self.scheme.tau() {
            self.r_hist.gemv(self.scheme.alphas[j], &eval.ptp, &past[j - 1], 1.0);
            if self.scheme.betas[j] != 0.0 {
                let coef = -self.scheme.dt * self.scheme.betas[j];
                eval.rhs_hat_add(coef, &past[j - 1], &inputs[j], &mut self.r_hist);
            }
        }
        // The iterate-independent pieces at the implicit-stage input u^m.
        if self.scheme.betas[0] != 0.0 {
            self.a_now.copy_from(&eval.ptap);
            self.c_now.copy_from(&eval.ptc);
            if eval.n_u > 0 {
                add_contract_right_u(&eval.ptn, &inputs[0], eval.n, &mut self.a_now);
                self.c_now.gemv(1.0, &eval.ptb, &inputs[0], 1.0);
            }
        }
    }

    fn assemble(
        &mut self,
        xhat: &DVector<f64>,
        _past: &[DVector<f64>],
        _inputs: &[DVector<f64>],
        lhs: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    ) {
        let eval = self.eval.as_ref().expect("prepare() must run before assemble()");
        let a0 = self.scheme.alphas[0];
        let b0 = self.scheme.betas[0];

        rhs.copy_from(&self.r_hist);
        rhs.gemv(a0, &eval.ptp, xhat, 1.0);
        if b0 == 0.0 {
            lhs.copy_from(&eval.ptp);
            *lhs *= a0;
            return;
        }
        let w = -self.scheme.dt * b0;

        // One contraction per degree serves both sides: the Jacobian needs
        // F̂·S₂(x̂) and Ŵ·S₃(x̂), while the dynamics satisfy the exact
        // identities F̂·(x̂⊗x̂) = ½·[F̂·S₂(x̂)]·x̂ and
        // Ŵ·(x̂⊗x̂⊗x̂) = ⅓·[Ŵ·S₃(x̂)]·x̂. The quadratic contraction runs on
        // the symmetrized operator: F̂·S₂(x̂) column c is ptfs2 block c times x̂.
        let n = eval.n;
        for c in 0..n {
            self.j2.column_mut(c).gemv(1.0, &eval.ptfs2.columns(c * n, n), xhat, 0.0);
        }
        let cubic = match &eval.ptw {
            Some(ptw) => {
                self.j3.fill(0.0);
                add_contract_right_s3(ptw, xhat, &mut self.j3);
                true
            }
            None => false,
        };

        rhs.axpy(w, &self.c_now, 1.0);
        rhs.gemv(w, &self.a_now, xhat, 1.0);
        rhs.gemv(0.5 * w, &self.j2, xhat, 1.0);
        if cubic {
            rhs.gemv(w / 3.0, &self.j3, xhat, 1.0);
        }

        lhs.copy_from(&self.a_now);
        *lhs += &self.j2;
        if cubic {
            *lhs += &self.j3;
        }
        lhs.zip_apply(&eval.ptp, |o, p| *o = a0 * p + w * *o);
    }
}
