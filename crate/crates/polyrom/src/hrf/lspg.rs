//! HRF LSPG: Gauss-Newton normal equations built from offline Gram blocks of
//! the component family Z = {Φ, C, AΦ, F(Φ⊗Φ), B, N(I⊗Φ), W(Φ⊗Φ⊗Φ)}.
//!
//! Every pairwise product between components is projected offline per affine
//! term pair; online assembly combines them at μ and contracts with the
//! Kronecker selector structures S₂(x̂), S₃(x̂) and (u⊗I), so no online cost
//! scales with the full dimension N.

use nalgebra::{DMatrix, DVector};

use crate::basis::ReducedBasis;
use crate::error::Result;
use crate::fomsolve::MultistepScheme;
use crate::polysys::{AffineScalar, PolynomialSystem};
use crate::romref::ReducedSystemAssembler;

use super::{
    combine_mats, combine_pair_mats, combine_pair_vecs, combine_vecs, component_f_t,
    component_n_t, component_w_t, contract_left_s2, contract_left_s2_vec, contract_left_s3,
    contract_left_s3_vec, contract_left_u, contract_left_u_vec, contract_right_s2,
    contract_right_s3, contract_right_u, guard_entries, kron2, kron3, kron_ux,
    DEFAULT_TENSOR_CAP,
};

type Terms<M> = Vec<(AffineScalar, M)>;
type PairTerms<M> = Vec<(AffineScalar, AffineScalar, M)>;

/// Cubic extension of the LSPG Gram blocks (component Zw = W(Φ⊗Φ⊗Φ)).
#[derive(Debug, Clone)]
pub struct LspgCubicBlocks {
    /// ΦᵀZw, n×n³.
    pub phi_w: Terms<DMatrix<f64>>,
    /// (AΦ)ᵀZw, n×n³.
    pub a_w: PairTerms<DMatrix<f64>>,
    /// ZfᵀZw, n²×n³.
    pub f_w: PairTerms<DMatrix<f64>>,
    /// ZnᵀZw, (N_u·n)×n³.
    pub n_w: PairTerms<DMatrix<f64>>,
    /// ZwᵀZw, n³×n³.
    pub w_w: PairTerms<DMatrix<f64>>,
    /// ZwᵀC, n³.
    pub w_c: PairTerms<DVector<f64>>,
    /// ZwᵀB, n³×N_u.
    pub w_b: PairTerms<DMatrix<f64>>,
}

/// Parameter-affine LSPG Gram blocks. Transposed partners (e.g. ZfᵀΦ) are
/// taken from the stored canonical block on use.
#[derive(Debug, Clone)]
pub struct HrfLspgOperators {
    pub n: usize,
    pub n_u: usize,
    /// ΦᵀΦ.
    pub ptp: DMatrix<f64>,
    pub phi_c: Terms<DVector<f64>>,
    pub phi_a: Terms<DMatrix<f64>>,
    pub phi_b: Terms<DMatrix<f64>>,
    /// ΦᵀZf, n×n².
    pub phi_f: Terms<DMatrix<f64>>,
    /// ΦᵀZn, n×(N_u·n).
    pub phi_n: Terms<DMatrix<f64>>,
    /// (AΦ)ᵀ(AΦ).
    pub a_a: PairTerms<DMatrix<f64>>,
    pub a_c: PairTerms<DVector<f64>>,
    pub a_b: PairTerms<DMatrix<f64>>,
    /// (AΦ)ᵀZf, n×n².
    pub a_f: PairTerms<DMatrix<f64>>,
    /// (AΦ)ᵀZn, n×(N_u·n).
    pub a_n: PairTerms<DMatrix<f64>>,
    /// ZfᵀZf, n²×n².
    pub f_f: PairTerms<DMatrix<f64>>,
    pub f_c: PairTerms<DVector<f64>>,
    pub f_b: PairTerms<DMatrix<f64>>,
    /// ZfᵀZn, n²×(N_u·n).
    pub f_n: PairTerms<DMatrix<f64>>,
    /// ZnᵀZn.
    pub n_n: PairTerms<DMatrix<f64>>,
    pub n_c: PairTerms<DVector<f64>>,
    pub n_b: PairTerms<DMatrix<f64>>,
    pub cubic: Option<LspgCubicBlocks>,
}

/// LSPG Gram blocks combined at one parameter value.
#[derive(Debug, Clone)]
pub struct HrfLspgEvaluated {
    pub n: usize,
    pub n_u: usize,
    pub ptp: DMatrix<f64>,
    pub phi_c: DVector<f64>,
    pub phi_a: DMatrix<f64>,
    pub phi_b: DMatrix<f64>,
    pub phi_f: DMatrix<f64>,
    pub phi_n: DMatrix<f64>,
    pub a_a: DMatrix<f64>,
    pub a_c: DVector<f64>,
    pub a_b: DMatrix<f64>,
    pub a_f: DMatrix<f64>,
    pub a_n: DMatrix<f64>,
    pub f_f: DMatrix<f64>,
    pub f_c: DVector<f64>,
    pub f_b: DMatrix<f64>,
    pub f_n: DMatrix<f64>,
    pub n_n: DMatrix<f64>,
    pub n_c: DVector<f64>,
    pub n_b: DMatrix<f64>,
    pub cubic: Option<LspgCubicEvaluated>,
}

/// Cubic LSPG blocks combined at one parameter value.
#[derive(Debug, Clone)]
pub struct LspgCubicEvaluated {
    pub phi_w: DMatrix<f64>,
    pub a_w: DMatrix<f64>,
    pub f_w: DMatrix<f64>,
    pub n_w: DMatrix<f64>,
    pub w_w: DMatrix<f64>,
    pub w_c: DVector<f64>,
    pub w_b: DMatrix<f64>,
}

impl HrfLspgOperators {
    /// Combines every Gram block at μ (term pairs weighted θ_i·θ_j).
    pub fn evaluate(&self, mu: &[f64]) -> Result<HrfLspgEvaluated> {
        let mu = mu.to_vec();
        Ok(HrfLspgEvaluated {
            n: self.n,
            n_u: self.n_u,
            ptp: self.ptp.clone(),
            phi_c: combine_vecs(&self.phi_c, &mu)?,
            phi_a: combine_mats(&self.phi_a, &mu)?,
            phi_b: combine_mats(&self.phi_b, &mu)?,
            phi_f: combine_mats(&self.phi_f, &mu)?,
            phi_n: combine_mats(&self.phi_n, &mu)?,
            a_a: combine_pair_mats(&self.a_a, &mu)?,
            a_c: combine_pair_vecs(&self.a_c, &mu)?,
            a_b: combine_pair_mats(&self.a_b, &mu)?,
            a_f: combine_pair_mats(&self.a_f, &mu)?,
            a_n: combine_pair_mats(&self.a_n, &mu)?,
            f_f: combine_pair_mats(&self.f_f, &mu)?,
            f_c: combine_pair_vecs(&self.f_c, &mu)?,
            f_b: combine_pair_mats(&self.f_b, &mu)?,
            f_n: combine_pair_mats(&self.f_n, &mu)?,
            n_n: combine_pair_mats(&self.n_n, &mu)?,
            n_c: combine_pair_vecs(&self.n_c, &mu)?,
            n_b: combine_pair_mats(&self.n_b, &mu)?,
            cubic: match &self.cubic {
                Some(c) => Some(LspgCubicEvaluated {
                    phi_w: combine_mats(&c.phi_w, &mu)?,
                    a_w: combine_pair_mats(&c.a_w, &mu)?,
                    f_w: combine_pair_mats(&c.f_w, &mu)?,
                    n_w: combine_pair_mats(&c.n_w, &mu)?,
                    w_w: combine_pair_mats(&c.w_w, &mu)?,
                    w_c: combine_pair_vecs(&c.w_c, &mu)?,
                    w_b: combine_pair_mats(&c.w_b, &mu)?,
                }),
                None => None,
            },
        })
    }
}

/// Multipliers of the dynamics aggregate R = C·s_C + AΦ·s_A + Zf·s_F + B·s_B
/// + Zn·s_N + Zw·s_W for one β-weighted window sum.
struct DynSums {
    sc: f64,
    sa: DVector<f64>,
    sf: DVector<f64>,
    sb: DVector<f64>,
    sn: DVector<f64>,
    sw: Option<DVector<f64>>,
}

impl DynSums {
    fn zeros(n: usize, n_u: usize, cubic: bool) -> DynSums {
        DynSums {
            sc: 0.0,
            sa: DVector::zeros(n),
            sf: DVector::zeros(n * n),
            sb: DVector::zeros(n_u),
            sn: DVector::zeros(n_u * n),
            sw: if cubic { Some(DVector::zeros(n * n * n)) } else { None },
        }
    }

    fn accumulate(&mut self, beta: f64, xhat: &DVector<f64>, u: &DVector<f64>) {
        self.sc += beta;
        self.sa.axpy(beta, xhat, 1.0);
        self.sf.axpy(beta, &kron2(xhat), 1.0);
        self.sb.axpy(beta, u, 1.0);
        if !self.sn.is_empty() {
            self.sn.axpy(beta, &kron_ux(u, xhat), 1.0);
        }
        if let Some(sw) = &mut self.sw {
            sw.axpy(beta, &kron3(xhat), 1.0);
        }
    }
}

impl HrfLspgEvaluated {
    /// out += coef·ΦᵀR for the aggregate R defined by `s`.
    fn gdyn_phi(&self, s: &DynSums, coef: f64, out: &mut DVector<f64>) {
        out.axpy(coef * s.sc, &self.phi_c, 1.0);
        out.gemv(coef, &self.phi_a, &s.sa, 1.0);
        out.gemv(coef, &self.phi_f, &s.sf, 1.0);
        if self.n_u > 0 {
            out.gemv(coef, &self.phi_b, &s.sb, 1.0);
            out.gemv(coef, &self.phi_n, &s.sn, 1.0);
        }
        if let (Some(c), Some(sw)) = (&self.cubic, &s.sw) {
            out.gemv(coef, &c.phi_w, sw, 1.0);
        }
    }

    /// out += coef·(AΦ)ᵀR.
    fn gdyn_a(&self, s: &DynSums, coef: f64, out: &mut DVector<f64>) {
        out.axpy(coef * s.sc, &self.a_c, 1.0);
        out.gemv(coef, &self.a_a, &s.sa, 1.0);
        out.gemv(coef, &self.a_f, &s.sf, 1.0);
        if self.n_u > 0 {
            out.gemv(coef, &self.a_b, &s.sb, 1.0);
            out.gemv(coef, &self.a_n, &s.sn, 1.0);
        }
        if let (Some(c), Some(sw)) = (&self.cubic, &s.sw) {
            out.gemv(coef, &c.a_w, sw, 1.0);
        }
    }

    /// out += coef·ZfᵀR (length n²).
    fn gdyn_f(&self, s: &DynSums, coef: f64, out: &mut DVector<f64>) {
        out.axpy(coef * s.sc, &self.f_c, 1.0);
        out.gemv_tr(coef, &self.a_f, &s.sa, 1.0);
        out.gemv(coef, &self.f_f, &s.sf, 1.0);
        if self.n_u > 0 {
            out.gemv(coef, &self.f_b, &s.sb, 1.0);
            out.gemv(coef, &self.f_n, &s.sn, 1.0);
        }
        if let (Some(c), Some(sw)) = (&self.cubic, &s.sw) {
            out.gemv(coef, &c.f_w, sw, 1.0);
        }
    }

    /// out += coef·ZnᵀR (length N_u·n).
    fn gdyn_n(&self, s: &DynSums, coef: f64, out: &mut DVector<f64>) {
        out.axpy(coef * s.sc, &self.n_c, 1.0);
        out.gemv_tr(coef, &self.a_n, &s.sa, 1.0);
        out.gemv_tr(coef, &self.f_n, &s.sf, 1.0);
        out.gemv(coef, &self.n_b, &s.sb, 1.0);
        out.gemv(coef, &self.n_n, &s.sn, 1.0);
        if let (Some(c), Some(sw)) = (&self.cubic, &s.sw) {
            out.gemv(coef, &c.n_w, sw, 1.0);
        }
    }

    /// out += coef·ZwᵀR (length n³).
    fn gdyn_w(&self, s: &DynSums, coef: f64, out: &mut DVector<f64>) {
        let c = self.cubic.as_ref().expect("cubic blocks missing");
        out.axpy(coef * s.sc, &c.w_c, 1.0);
        out.gemv_tr(coef, &c.a_w, &s.sa, 1.0);
        out.gemv_tr(coef, &c.f_w, &s.sf, 1.0);
        if self.n_u > 0 {
            out.gemv(coef, &c.w_b, &s.sb, 1.0);
            out.gemv_tr(coef, &c.n_w, &s.sn, 1.0);
        }
        out.gemv(coef, &c.w_w, s.sw.as_ref().unwrap(), 1.0);
    }
}

/// Per-step cached history pieces of the LSPG residual factors.
struct LspgStepCache {
    /// Σ_{j≥1} α_j·x̂_j.
    t_alpha_h: DVector<f64>,
    /// Componentᵀ·(Σ_{j≥1} β_j·f_j) for each left factor.
    h_phi: DVector<f64>,
    h_a: DVector<f64>,
    h_f: DVector<f64>,
    h_n: DVector<f64>,
    h_w: Option<DVector<f64>>,
}

/// Builds every pairwise Gram block offline. Errors when the total dense
/// storage would exceed the tensor entry cap.
pub fn precompute_hrf_lspg(sys: &PolynomialSystem, basis: &ReducedBasis) -> Result<HrfLspgOperators> {
    let phi = &basis.phi;
    let n = phi.ncols();
    let n_u = sys.dim_input;
    let cubic = sys.op_w.is_some();

    let (ta, tf, tn) = (sys.op_a.terms().len(), sys.op_f.terms().len(), sys.op_n.terms().len());
    let tw = sys.op_w.as_ref().map_or(0, |w| w.terms().len());
    let n2 = n * n;
    let n3 = n2 * n;
    let mut entries = tf * tf * n2 * n2 + tf * tn * n2 * n_u * n + tn * tn * n_u * n_u * n2;
    entries += tf * (n * n2 + ta * n * n2) + tn * (n * n_u * n + ta * n * n_u * n);
    if cubic {
        entries += tw * tw * n3 * n3 + tw * tf * n2 * n3 + tw * tn * n_u * n * n3;
        entries += tw * (n * n3 + ta * n * n3 + n3 + n3 * n_u);
    }
    guard_entries("LSPG Gram blocks", entries, DEFAULT_TENSOR_CAP)?;

    let phi_t = phi.transpose();

    // Per-term components. Zf, Zn, Zw are held transposed (reduced rows,
    // full-order columns); C, AΦ, B are held primal.
    let zc: Vec<(AffineScalar, DVector<f64>)> = sys
        .op_c
        .terms()
        .iter()
        .map(|(th, m)| {
            let mut v = DVector::zeros(m.nrows());
            for (r, _c, val) in m.iter() {
                v[r] += val;
            }
            (*th, v)
        })
        .collect();
    let za: Vec<(AffineScalar, DMatrix<f64>)> = sys
        .op_a
        .terms()
        .iter()
        .map(|(th, m)| (*th, m.mul_dense(phi)))
        .collect();
    let zb: Vec<(AffineScalar, DMatrix<f64>)> = sys
        .op_b
        .terms()
        .iter()
        .map(|(th, m)| (*th, m.to_dense()))
        .collect();
    let zf_t: Vec<(AffineScalar, DMatrix<f64>)> = sys
        .op_f
        .terms()
        .iter()
        .map(|(th, m)| (*th, component_f_t(&phi_t, m)))
        .collect();
    let zn_t: Vec<(AffineScalar, DMatrix<f64>)> = sys
        .op_n
        .terms()
        .iter()
        .map(|(th, m)| (*th, component_n_t(&phi_t, m, n_u)))
        .collect();
    let zw_t: Vec<(AffineScalar, DMatrix<f64>)> = match &sys.op_w {
        Some(w) => w
            .terms()
            .iter()
            .map(|(th, m)| (*th, component_w_t(&phi_t, m)))
            .collect(),
        None => Vec::new(),
    };

    let singles_m = |zs: &[(AffineScalar, DMatrix<f64>)]| -> Terms<DMatrix<f64>> {
        zs.iter().map(|(th, z)| (*th, phi.tr_mul(z))).collect()
    };
    // ΦᵀZ for the transposed components: Φᵀ·Ztᵀ = (Zt·Φ)ᵀ.
    let singles_t = |zs: &[(AffineScalar, DMatrix<f64>)]| -> Terms<DMatrix<f64>> {
        zs.iter().map(|(th, zt)| (*th, (zt * phi).transpose())).collect()
    };

    let phi_c = zc.iter().map(|(th, z)| (*th, phi.tr_mul(z))).collect();
    let phi_a = singles_m(&za);
    let phi_b = singles_m(&zb);
    let phi_f = singles_t(&zf_t);
    let phi_n = singles_t(&zn_t);

    let pair_mm = |ls: &[(AffineScalar, DMatrix<f64>)],
                   rs: &[(AffineScalar, DMatrix<f64>)]|
     -> PairTerms<DMatrix<f64>> {
        let mut out = Vec::with_capacity(ls.len() * rs.len());
        for (ti, li) in ls {
            for (tj, rj) in rs {
                out.push((*ti, *tj, li.tr_mul(rj)));
            }
        }
        out
    };
    // Primal-left, transposed-right: LᵀZrᵀ... = (Zr_t·L)ᵀ.
    let pair_mt = |ls: &[(AffineScalar, DMatrix<f64>)],
                   rs: &[(AffineScalar, DMatrix<f64>)]|
     -> PairTerms<DMatrix<f64>> {
        let mut out = Vec::with_capacity(ls.len() * rs.len());
        for (ti, li) in ls {
            for (tj, rj) in rs {
                out.push((*ti, *tj, (rj * li).transpose()));
            }
        }
        out
    };
    // Transposed-left, transposed-right: Zl_t·Zr_tᵀ.
    let pair_tt = |ls: &[(AffineScalar, DMatrix<f64>)],
                   rs: &[(AffineScalar, DMatrix<f64>)]|
     -> PairTerms<DMatrix<f64>> {
        let mut out = Vec::with_capacity(ls.len() * rs.len());
        for (ti, li) in ls {
            for (tj, rj) in rs {
                out.push((*ti, *tj, li * &rj.transpose()));
            }
        }
        out
    };
    let pair_mv = |ls: &[(AffineScalar, DMatrix<f64>)],
                   rs: &[(AffineScalar, DVector<f64>)]|
     -> PairTerms<DVector<f64>> {
        let mut out = Vec::with_capacity(ls.len() * rs.len());
        for (ti, li) in ls {
            for (tj, rj) in rs {
                out.push((*ti, *tj, li.tr_mul(rj)));
            }
        }
        out
    };
    let pair_tv = |ls: &[(AffineScalar, DMatrix<f64>)],
                   rs: &[(AffineScalar, DVector<f64>)]|
     -> PairTerms<DVector<f64>> {
        let mut out = Vec::with_capacity(ls.len() * rs.len());
        for (ti, li) in ls {
            for (tj, rj) in rs {
                out.push((*ti, *tj, li * rj));
            }
        }
        out
    };

    let a_a = pair_mm(&za, &za);
    let a_c = pair_mv(&za, &zc);
    let a_b = pair_mm(&za, &zb);
    let a_f = pair_mt(&za, &zf_t);
    let a_n = pair_mt(&za, &zn_t);
    let f_f = pair_tt(&zf_t, &zf_t);
    let f_c = pair_tv(&zf_t, &zc);
    let f_b = {
        let mut out = Vec::new();
        for (ti, li) in &zf_t {
            for (tj, rj) in &zb {
                out.push((*ti, *tj, li * rj));
            }
        }
        out
    };
    let f_n = pair_tt(&zf_t, &zn_t);
    let n_n = pair_tt(&zn_t, &zn_t);
    let n_c = pair_tv(&zn_t, &zc);
    let n_b = {
        let mut out = Vec::new();
        for (ti, li) in &zn_t {
            for (tj, rj) in &zb {
                out.push((*ti, *tj, li * rj));
            }
        }
        out
    };

    let cubic_blocks = if cubic {
        let phi_w = singles_t(&zw_t);
        let a_w = pair_mt(&za, &zw_t);
        let f_w = pair_tt(&zf_t, &zw_t);
        let n_w = pair_tt(&zn_t, &zw_t);
        let w_w = pair_tt(&zw_t, &zw_t);
        let w_c = pair_tv(&zw_t, &zc);
        let w_b = {
            let mut out = Vec::new();
            for (ti, li) in &zw_t {
                for (tj, rj) in &zb {
                    out.push((*ti, *tj, li * rj));
                }
            }
            out
        };
        Some(LspgCubicBlocks { phi_w, a_w, f_w, n_w, w_w, w_c, w_b })
    } else {
        None
    };

    Ok(HrfLspgOperators {
        n,
        n_u,
        ptp: phi.tr_mul(phi),
        phi_c,
        phi_a,
        phi_b,
        phi_f,
        phi_n,
        a_a,
        a_c,
        a_b,
        a_f,
        a_n,
        f_f,
        f_c,
        f_b,
        f_n,
        n_n,
        n_c,
        n_b,
        cubic: cubic_blocks,
    })
}

/// Assembles the LSPG Gauss-Newton system lhs = J̃ᵀJ̃, rhs = J̃ᵀr̃ at one
/// iterate from precomputed Gram blocks. `past` holds [x̂^{m-1}, …, x̂^{m-τ}],
/// `inputs` holds [u^m, …, u^{m-τ}].
pub fn assemble_hrf_lspg(
    ops: &HrfLspgOperators,
    scheme: &MultistepScheme,
    xhat: &DVector<f64>,
    past: &[DVector<f64>],
    inputs: &[DVector<f64>],
    mu: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut asm = hrf_lspg_assembler(ops.clone(), scheme.clone());
    asm.prepare(mu)?;
    asm.begin_step(past, inputs);
    let n = ops.n;
    let mut lhs = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    asm.assemble(xhat, past, inputs, &mut lhs, &mut rhs);
    Ok((lhs, rhs))
}

/// Online HRF LSPG assembler.
pub struct HrfLspgAssembler {
    ops: HrfLspgOperators,
    scheme: MultistepScheme,
    eval: Option<HrfLspgEvaluated>,
    cache: Option<LspgStepCache>,
}

/// Builds the online HRF LSPG assembler around precomputed Gram blocks.
pub fn hrf_lspg_assembler(ops: HrfLspgOperators, scheme: MultistepScheme) -> HrfLspgAssembler {
    HrfLspgAssembler { ops, scheme, eval: None, cache: None }
}

fn add_sym(lhs: &mut DMatrix<f64>, m: &DMatrix<f64>, coef: f64) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            lhs[(i, j)] += coef * (m[(i, j)] + m[(j, i)]);
        }
    }
}

impl ReducedSystemAssembler for HrfLspgAssembler {
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
        self.cache = None;
        Ok(())
    }

    fn begin_step(&mut self, past: &[DVector<f64>], inputs: &[DVector<f64>]) {
        let eval = self.eval.as_ref().expect("prepare() must run before begin_step()");
        let n = self.ops.n;
        let n_u = self.ops.n_u;
        let cubic = eval.cubic.is_some();
        let tau = self.scheme.tau();

        let mut t_alpha_h = DVector::zeros(n);
        let mut sums = DynSums::zeros(n, n_u, cubic);
        for j in 1..=tau {
            t_alpha_h.axpy(self.scheme.alphas[j], &past[j - 1], 1.0);
            if self.scheme.betas[j] != 0.0 {
                sums.accumulate(self.scheme.betas[j], &past[j - 1], &inputs[j]);
            }
        }

        let mut h_phi = DVector::zeros(n);
        let mut h_a = DVector::zeros(n);
        let mut h_f = DVector::zeros(n * n);
        let mut h_n = DVector::zeros(n_u * n);
        let mut h_w = if cubic { Some(DVector::zeros(n * n * n)) } else { None };
        eval.gdyn_phi(&sums, 1.0, &mut h_phi);
        eval.gdyn_a(&sums, 1.0, &mut h_a);
        eval.gdyn_f(&sums, 1.0, &mut h_f);
        if n_u > 0 {
            eval.gdyn_n(&sums, 1.0, &mut h_n);
        }
        if let Some(hw) = &mut h_w {
            eval.gdyn_w(&sums, 1.0, hw);
        }
        self.cache = Some(LspgStepCache { t_alpha_h, h_phi, h_a, h_f, h_n, h_w });
    }

    fn assemble(
        &mut self,
        xhat: &DVector<f64>,
        _past: &[DVector<f64>],
        inputs: &[DVector<f64>],
        lhs: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    ) {
        let eval = self.eval.as_ref().expect("prepare() must run before assemble()");
        let cache = self.cache.as_ref().expect("begin_step() must run before assemble()");
        let n = self.ops.n;
        let n_u = self.ops.n_u;
        let cubic = eval.cubic.is_some();
        let a0 = self.scheme.alphas[0];
        let b0 = self.scheme.betas[0];
        let dt = self.scheme.dt;
        let u = &inputs[0];

        // Window sums including the current iterate.
        let mut t_alpha = cache.t_alpha_h.clone();
        t_alpha.axpy(a0, xhat, 1.0);
        let mut iter_sums = DynSums::zeros(n, n_u, cubic);
        if b0 != 0.0 {
            iter_sums.accumulate(b0, xhat, u);
        }

        // Componentᵀ·r̃ pieces: g_z = zᵀΦ·t_α − Δt·(h_z + zᵀR_iter).
        let mut g_phi = cache.h_phi.clone();
        eval.gdyn_phi(&iter_sums, 1.0, &mut g_phi);
        let mut r_phi = DVector::zeros(n);
        r_phi.gemv(1.0, &eval.ptp, &t_alpha, 0.0);
        r_phi.axpy(-dt, &g_phi, 1.0);

        rhs.copy_from(&r_phi);
        *rhs *= a0;

        let mut p2d = DMatrix::zeros(n, n);
        if b0 != 0.0 {
            let mut g_a = cache.h_a.clone();
            eval.gdyn_a(&iter_sums, 1.0, &mut g_a);
            let mut r_a = DVector::zeros(n);
            r_a.gemv_tr(1.0, &eval.phi_a, &t_alpha, 0.0);
            r_a.axpy(-dt, &g_a, 1.0);

            let mut g_f = cache.h_f.clone();
            eval.gdyn_f(&iter_sums, 1.0, &mut g_f);
            let mut r_f = DVector::zeros(n * n);
            r_f.gemv_tr(1.0, &eval.phi_f, &t_alpha, 0.0);
            r_f.axpy(-dt, &g_f, 1.0);

            let mut d_r = r_a;
            d_r += contract_left_s2_vec(&r_f, xhat);
            if n_u > 0 {
                let mut g_n = cache.h_n.clone();
                eval.gdyn_n(&iter_sums, 1.0, &mut g_n);
                let mut r_n = DVector::zeros(n_u * n);
                r_n.gemv_tr(1.0, &eval.phi_n, &t_alpha, 0.0);
                r_n.axpy(-dt, &g_n, 1.0);
                d_r += contract_left_u_vec(&r_n, u, n);
            }
            if let Some(c) = &eval.cubic {
                let mut g_w = cache.h_w.as_ref().unwrap().clone();
                eval.gdyn_w(&iter_sums, 1.0, &mut g_w);
                let mut r_w = DVector::zeros(n * n * n);
                r_w.gemv_tr(1.0, &c.phi_w, &t_alpha, 0.0);
                r_w.axpy(-dt, &g_w, 1.0);
                d_r += contract_left_s3_vec(&r_w, xhat);
            }
            rhs.axpy(-dt * b0, &d_r, 1.0);

            // ΦᵀD for the cross term of the normal matrix.
            p2d.copy_from(&eval.phi_a);
            p2d += contract_right_s2(&eval.phi_f, xhat);
            if n_u > 0 {
                p2d += contract_right_u(&eval.phi_n, u, n);
            }
            if let Some(c) = &eval.cubic {
                p2d += contract_right_s3(&c.phi_w, xhat);
            }
        }

        // lhs = α_0²·PtP − α_0·Δt·β_0·(ΦᵀD + DᵀΦ) + (Δt·β_0)²·DᵀD.
        lhs.copy_from(&eval.ptp);
        *lhs *= a0 * a0;
        if b0 != 0.0 {
            add_sym(lhs, &p2d, -a0 * dt * b0);

            let cc = dt * b0 * dt * b0;
            let mut d2d = eval.a_a.clone();
            add_sym_into(&mut d2d, &contract_right_s2(&eval.a_f, xhat));
            let t_ff = contract_right_s2(&eval.f_f, xhat);
            d2d += contract_left_s2(&t_ff, xhat);
            if n_u > 0 {
                add_sym_into(&mut d2d, &contract_right_u(&eval.a_n, u, n));
                add_sym_into(&mut d2d, &contract_left_s2(&contract_right_u(&eval.f_n, u, n), xhat));
                let t_nn = contract_right_u(&eval.n_n, u, n);
                d2d += contract_left_u(&t_nn, u, n);
            }
            if let Some(c) = &eval.cubic {
                add_sym_into(&mut d2d, &contract_right_s3(&c.a_w, xhat));
                add_sym_into(&mut d2d, &contract_left_s2(&contract_right_s3(&c.f_w, xhat), xhat));
                if n_u > 0 {
                    add_sym_into(&mut d2d, &contract_left_u(&contract_right_s3(&c.n_w, xhat), u, n));
                }
                let t_ww = contract_right_s3(&c.w_w, xhat);
                d2d += contract_left_s3(&t_ww, xhat);
            }
            lhs.zip_apply(&d2d, |o, v| *o += cc * v);
        }
    }
}

fn add_sym_into(acc: &mut DMatrix<f64>, m: &DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            acc[(i, j)] += m[(i, j)] + m[(j, i)];
        }
    }
}
