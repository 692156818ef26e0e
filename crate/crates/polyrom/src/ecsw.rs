//! Energy-conserving sampling and weighting (ECSW) hyper-reduction: trains
//! sparse nonnegative mesh weights by NNLS on projected residual snapshots,
//! then assembles reduced Newton systems from the sampled rows only.
//!
//! Only the dynamics part of the multistep residual is sampled; the α-history
//! mass terms are reproduced exactly through ΦᵀΦ, so ω ≡ 1 recovers the
//! unsampled ROM identically.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::ReducedBasis;
use crate::error::{Error, Result};
use crate::fomsolve::{MultistepScheme, Trajectory};
use crate::polysys::{EvaluatedSystem, PolynomialSystem};
use crate::romref::ReducedSystemAssembler;

/// Cap on the dense NNLS system G (entries), roughly 1.6 GB of f64.
pub const DEFAULT_ECSW_CAP: usize = 200_000_000;

/// Which residual projection the training columns encode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcswProjection {
    Galerkin,
    Lspg,
}

/// One training state: the reduced window and inputs at a sampled (run, step).
#[derive(Debug, Clone)]
pub struct ResidualSnapshot {
    /// Reduced state x̂^m = Φᵀx^m.
    pub xhat: DVector<f64>,
    /// Reduced history [x̂^{m-1}, …, x̂^{m-τ}].
    pub past: Vec<DVector<f64>>,
    /// Input window [u^m, …, u^{m-τ}].
    pub inputs: Vec<DVector<f64>>,
    pub mu: Vec<f64>,
    pub time_index: usize,
}

/// Training set for the NNLS system.
#[derive(Debug, Clone)]
pub struct ResidualSnapshotSet {
    pub snapshots: Vec<ResidualSnapshot>,
}

/// Trained mesh weights: sparse nonnegative ω over full-order rows.
#[derive(Debug, Clone)]
pub struct EcswWeights {
    /// Rows with nonzero weight, ascending.
    pub sample_indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Achieved ‖G·ω − b‖/‖b‖ at training time.
    pub training_residual_ratio: f64,
    /// Tolerance the weights were trained to.
    pub eps_ecsw: f64,
}

impl EcswWeights {
    pub fn n_samples(&self) -> usize {
        self.sample_indices.len()
    }

    /// Uniform unit weights over every row (the exactness configuration).
    pub fn ones(n_rows: usize) -> EcswWeights {
        EcswWeights {
            sample_indices: (0..n_rows).collect(),
            weights: vec![1.0; n_rows],
            training_residual_ratio: 0.0,
            eps_ecsw: 0.0,
        }
    }

    /// Writes text "index weight" pairs under a small header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        text.push_str(&format!("# eps_ecsw {}\n", self.eps_ecsw));
        text.push_str(&format!("# residual_ratio {}\n", self.training_residual_ratio));
        text.push_str(&format!("# count {}\n", self.sample_indices.len()));
        for (i, w) in self.sample_indices.iter().zip(&self.weights) {
            text.push_str(&format!("{i} {w}\n"));
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EcswWeights> {
        let text = std::fs::read_to_string(path)?;
        let bad = |detail: &str| Error::Format {
            path: path.display().to_string(),
            detail: detail.to_string(),
        };
        let mut eps_ecsw = 0.0;
        let mut ratio = 0.0;
        let mut idx = Vec::new();
        let mut wts = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("eps_ecsw"), Some(v)) => {
                        eps_ecsw = v.parse().map_err(|_| bad("bad eps_ecsw"))?
                    }
                    (Some("residual_ratio"), Some(v)) => {
                        ratio = v.parse().map_err(|_| bad("bad residual_ratio"))?
                    }
                    _ => {}
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let i: usize = parts
                .next()
                .ok_or_else(|| bad("missing index"))?
                .parse()
                .map_err(|_| bad("bad index"))?;
            let w: f64 = parts
                .next()
                .ok_or_else(|| bad("missing weight"))?
                .parse()
                .map_err(|_| bad("bad weight"))?;
            idx.push(i);
            wts.push(w);
        }
        Ok(EcswWeights {
            sample_indices: idx,
            weights: wts,
            training_residual_ratio: ratio,
            eps_ecsw,
        })
    }
}

/// Samples `count` (run, step) pairs from the training trajectories (seeded,
/// without replacement when enough pairs exist) and projects the state
/// windows onto the basis. Steps below the history depth τ are excluded.
pub fn collect_residual_snapshots(
    sys: &PolynomialSystem,
    trajectories: &[Trajectory],
    basis: &ReducedBasis,
    scheme: &MultistepScheme,
    count: usize,
    seed: u64,
) -> Result<ResidualSnapshotSet> {
    if trajectories.is_empty() {
        return Err(Error::Empty("no training trajectories".into()));
    }
    let tau = scheme.tau();
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (r, t) in trajectories.iter().enumerate() {
        for m in tau..=t.n_steps() {
            pool.push((r, m));
        }
    }
    if pool.is_empty() {
        return Err(Error::InsufficientSnapshots { requested: count, available: 0 });
    }

    let chosen: Vec<(usize, usize)> = if count >= pool.len() {
        pool
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = rand::seq::index::sample(&mut rng, pool.len(), count).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| pool[i]).collect()
    };

    let mut snapshots = Vec::with_capacity(chosen.len());
    for (r, m) in chosen {
        let traj = &trajectories[r];
        let xhat = basis.phi.tr_mul(&traj.states.column(m).into_owned());
        let past: Vec<DVector<f64>> = (1..=tau)
            .map(|j| basis.phi.tr_mul(&traj.states.column(m - j).into_owned()))
            .collect();
        let inputs: Vec<DVector<f64>> = (0..=tau)
            .map(|j| sys.input((m - j) as f64 * traj.dt, &traj.mu))
            .collect();
        snapshots.push(ResidualSnapshot { xhat, past, inputs, mu: traj.mu.clone(), time_index: m });
    }
    Ok(ResidualSnapshotSet { snapshots })
}

/// Dense row of Jf·Φ at a reconstructed state, as an n-vector per full row.
fn jac_phi_row(
    esys: &EvaluatedSystem,
    phi_t: &DMatrix<f64>,
    s: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let mut out = DVector::zeros(phi_t.nrows());
    esys.jacobian_row_visit(s, x.as_slice(), u, |col, val| {
        out.axpy(val, &phi_t.column(col), 1.0);
    });
    out
}

/// Builds the dense NNLS training system (G, b): one row block of size n per
/// snapshot, one column per full-order row; b = G·1. Only the dynamics part
/// −Δt·Σ_j β_j·f_j enters the Galerkin columns; LSPG columns carry the
/// Gauss-Newton bracket J̃_sᵀr̃_s − α_0·Φ_sᵀ·T_s with exact mass terms left
/// out.
pub fn build_nnls_system(
    sys: &PolynomialSystem,
    basis: &ReducedBasis,
    scheme: &MultistepScheme,
    snaps: &ResidualSnapshotSet,
    projection: EcswProjection,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let nfull = sys.dim_state;
    let n = basis.phi.ncols();
    let nt = snaps.snapshots.len();
    if nt == 0 {
        return Err(Error::Empty("no residual snapshots".into()));
    }
    let entries = nt * n * nfull;
    if entries > DEFAULT_ECSW_CAP {
        return Err(Error::MemoryCap {
            what: "ECSW training matrix".to_string(),
            entries,
            cap: DEFAULT_ECSW_CAP,
        });
    }

    let phi_t = basis.phi.transpose();
    let tau = scheme.tau();
    let a0 = scheme.alphas[0];
    let b0 = scheme.betas[0];
    let mut g = DMatrix::zeros(nt * n, nfull);

    let mut esys: Option<(Vec<f64>, EvaluatedSystem)> = None;
    let mut x_full = DVector::zeros(nfull);
    let mut dvec = DVector::zeros(nfull);
    let mut tvec = DVector::zeros(nfull);
    for (t, snap) in snaps.snapshots.iter().enumerate() {
        let fresh = match &esys {
            Some((mu, _)) => mu != &snap.mu,
            None => true,
        };
        if fresh {
            esys = Some((snap.mu.clone(), sys.evaluate(&snap.mu)?));
        }
        let es = &esys.as_ref().unwrap().1;

        // Dynamics aggregate d = −Δt·Σ_j β_j·f(x̃_j, u_j) and mass aggregate
        // T = Σ_j α_j·x̃_j over the window (j = 0 is the snapshot itself).
        dvec.fill(0.0);
        tvec.fill(0.0);
        for j in 0..=tau {
            let xh = if j == 0 { &snap.xhat } else { &snap.past[j - 1] };
            x_full.gemv(1.0, &basis.phi, xh, 0.0);
            tvec.axpy(scheme.alphas[j], &x_full, 1.0);
            if scheme.betas[j] != 0.0 {
                es.rhs_add(-scheme.dt * scheme.betas[j], &x_full, &snap.inputs[j], &mut dvec);
            }
        }

        match projection {
            EcswProjection::Galerkin => {
                // ξ_s = Φ_sᵀ·d_s.
                for s in 0..nfull {
                    let ds = dvec[s];
                    let mut block = g.column_mut(s);
                    let mut block = block.rows_mut(t * n, n);
                    block.zip_apply(&phi_t.column(s), |o, v| *o = ds * v);
                }
            }
            EcswProjection::Lspg => {
                // ξ_s = α_0·d_s·Φ_s + (T_s + d_s)·(J̃ row factor)_s with the
                // training Jacobian evaluated at the snapshot state.
                x_full.gemv(1.0, &basis.phi, &snap.xhat, 0.0);
                for s in 0..nfull {
                    let jrow = jac_phi_row(es, &phi_t, s, &x_full, &snap.inputs[0]);
                    let w1 = a0 * dvec[s];
                    let w2 = -scheme.dt * b0 * (tvec[s] + dvec[s]);
                    let phis = phi_t.column(s);
                    let mut block = g.column_mut(s);
                    let mut block = block.rows_mut(t * n, n);
                    for a in 0..n {
                        block[a] = w1 * phis[a] + w2 * jrow[a];
                    }
                }
            }
        }
    }

    let ones = DVector::from_element(nfull, 1.0);
    let b = &g * &ones;
    Ok((g, b))
}

/// A pushed column must extend the active-set Cholesky factor by at least
/// this fraction of its norm (squared), or it counts as numerically
/// dependent. The threshold sits just above the cancellation noise of the
/// pivot computation: tighter fits at 1e-9-level ratios genuinely need
/// columns that are dependent at the 1e-8 level, and iterated refinement in
/// the solve keeps the resulting ill-conditioned factor usable.
const NNLS_DEPENDENCE_TOL: f64 = 1e-15;

/// Lawson-Hanson active-set state for one NNLS solve over columns of G.
/// The active-set Gram matrix is carried as an incrementally updated Cholesky
/// factor so pushes and removals cost O(k²) and dependent columns are
/// detected before they destroy positive definiteness.
struct LawsonHanson<'a> {
    g: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    active: Vec<usize>,
    wvals: Vec<f64>,
    in_active: Vec<bool>,
    /// Lower Cholesky factor of the active-set Gram matrix.
    lfac: DMatrix<f64>,
    gtb: Vec<f64>,
}

impl<'a> LawsonHanson<'a> {
    fn new(g: &'a DMatrix<f64>, b: &'a DVector<f64>) -> LawsonHanson<'a> {
        LawsonHanson {
            g,
            b,
            active: Vec::new(),
            wvals: Vec::new(),
            in_active: vec![false; g.ncols()],
            lfac: DMatrix::zeros(0, 0),
            gtb: Vec::new(),
        }
    }

    /// Extends the factor by one column; returns false (and leaves the state
    /// untouched) when the column is numerically dependent on the active set.
    fn push(&mut self, col: usize) -> bool {
        let k = self.active.len();
        let newcol = self.g.column(col);
        let colnorm2 = newcol.norm_squared();
        let mut cross = DVector::zeros(k);
        for (i, &ci) in self.active.iter().enumerate() {
            cross[i] = self.g.column(ci).dot(&newcol);
        }
        let w = self
            .lfac
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a positive diagonal by construction");
        let d2 = colnorm2 - w.norm_squared();
        if d2 <= NNLS_DEPENDENCE_TOL * colnorm2 {
            return false;
        }
        let mut lf = DMatrix::zeros(k + 1, k + 1);
        lf.view_mut((0, 0), (k, k)).copy_from(&self.lfac);
        for i in 0..k {
            lf[(k, i)] = w[i];
        }
        lf[(k, k)] = d2.sqrt();
        self.lfac = lf;
        self.gtb.push(self.b.dot(&newcol));
        self.active.push(col);
        self.wvals.push(0.0);
        self.in_active[col] = true;
        true
    }

    /// Drops one active column and restores the triangular factor with a
    /// Givens sweep over the deleted row's trailing block.
    fn remove(&mut self, pos: usize) {
        let col = self.active.remove(pos);
        self.in_active[col] = false;
        self.wvals.remove(pos);
        self.gtb.remove(pos);
        let k = self.active.len();
        let mut m = DMatrix::zeros(k, k + 1);
        for i in 0..k {
            let src = i + usize::from(i >= pos);
            for j in 0..=src {
                m[(i, j)] = self.lfac[(src, j)];
            }
        }
        for j in pos..k {
            let a = m[(j, j)];
            let b = m[(j, j + 1)];
            let r = a.hypot(b);
            if r == 0.0 {
                continue;
            }
            let (c, s) = (a / r, b / r);
            for i in j..k {
                let x = m[(i, j)];
                let y = m[(i, j + 1)];
                m[(i, j)] = c * x + s * y;
                m[(i, j + 1)] = c * y - s * x;
            }
        }
        self.lfac = m.view((0, 0), (k, k)).into_owned();
    }

    /// Least-squares coefficients on the active set via the normal-equation
    /// factor, with corrected semi-normal refinement: the plain triangular
    /// solve carries a cond(Gram)-squared error floor that stalls the outer
    /// loop through spurious sign flips when chasing 1e-9-level ratios, so z
    /// is corrected against the true residual b − G·z until the corrections
    /// stop shrinking (at most three passes).
    fn solve_active(&self) -> Result<Vec<f64>> {
        let k = self.active.len();
        let rhs = DVector::from_vec(self.gtb.clone());
        let singular = || Error::Singular("NNLS active-set normal matrix".into());
        let mut z = self.chol_solve(&rhs).ok_or_else(singular)?;
        let mut prev = f64::INFINITY;
        for _ in 0..3 {
            let mut r = self.b.clone();
            for (pos, &col) in self.active.iter().enumerate() {
                r.axpy(-z[pos], &self.g.column(col), 1.0);
            }
            let mut gtr = DVector::zeros(k);
            for (pos, &col) in self.active.iter().enumerate() {
                gtr[pos] = self.g.column(col).dot(&r);
            }
            let dz = self.chol_solve(&gtr).ok_or_else(singular)?;
            let dn = dz.norm();
            if !dn.is_finite() || dn >= prev {
                break;
            }
            z += dz;
            if dn <= 1e-14 * z.norm() {
                break;
            }
            prev = dn;
        }
        Ok((0..k).map(|i| z[i]).collect())
    }

    /// Solves L·Lᵀ·z = rhs with the cached factor.
    fn chol_solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let y = self.lfac.solve_lower_triangular(rhs)?;
        self.lfac.tr_solve_lower_triangular(&y)
    }

    /// Exact residual ρ = b − G·ω recomputed from scratch.
    fn residual(&self) -> DVector<f64> {
        let mut rho = self.b.clone();
        for (pos, &col) in self.active.iter().enumerate() {
            rho.axpy(-self.wvals[pos], &self.g.column(col), 1.0);
        }
        rho
    }
}

/// Runs one Lawson-Hanson pass to the tightest tolerance, snapshotting the
/// weights the first time each tolerance in `eps_list` is met. Results align
/// with the input order; a slot is an error if its tolerance was unreachable
/// within the iteration cap (10·N outer iterations) or at the NNLS optimum.
pub fn nnls_multi(g: &DMatrix<f64>, b: &DVector<f64>, eps_list: &[f64]) -> Vec<Result<EcswWeights>> {
    assert!(!eps_list.is_empty(), "need at least one tolerance");
    let ncols = g.ncols();
    let bnorm = b.norm();

    let mut order: Vec<usize> = (0..eps_list.len()).collect();
    order.sort_by(|&i, &j| eps_list[j].partial_cmp(&eps_list[i]).unwrap());
    let mut results: Vec<Option<Result<EcswWeights>>> = (0..eps_list.len()).map(|_| None).collect();

    if bnorm == 0.0 {
        for (slot, &eps) in results.iter_mut().zip(eps_list) {
            *slot = Some(Ok(EcswWeights {
                sample_indices: Vec::new(),
                weights: Vec::new(),
                training_residual_ratio: 0.0,
                eps_ecsw: eps,
            }));
        }
        return results.into_iter().map(Option::unwrap).collect();
    }

    let mut lh = LawsonHanson::new(g, b);
    // Columns rejected as numerically dependent; cleared whenever a removal
    // changes the active-set geometry.
    let mut blocked = vec![false; ncols];
    let mut rho = b.clone();
    let mut ratio = 1.0f64;
    let mut next = 0usize;
    let cap = 10 * ncols;
    let mut iters = 0usize;

    // Marks every not-yet-met tolerance as failed and returns.
    let fail_rest = |results: &mut Vec<Option<Result<EcswWeights>>>,
                     order: &[usize],
                     next: usize,
                     make: &dyn Fn(f64) -> Error| {
        for &slot in &order[next..] {
            results[slot] = Some(Err(make(eps_list[slot])));
        }
    };

    'outer: loop {
        while next < order.len() && ratio <= eps_list[order[next]] {
            let eps = eps_list[order[next]];
            let mut pairs: Vec<(usize, f64)> = lh
                .active
                .iter()
                .copied()
                .zip(lh.wvals.iter().copied())
                .filter(|&(_, w)| w > 0.0)
                .collect();
            pairs.sort_unstable_by_key(|&(i, _)| i);
            results[order[next]] = Some(Ok(EcswWeights {
                sample_indices: pairs.iter().map(|&(i, _)| i).collect(),
                weights: pairs.iter().map(|&(_, w)| w).collect(),
                training_residual_ratio: ratio,
                eps_ecsw: eps,
            }));
            next += 1;
        }
        if next == order.len() {
            break;
        }
        if iters >= cap {
            fail_rest(&mut results, &order, next, &|eps| Error::NnlsStalled {
                eps,
                achieved: ratio,
                iterations: iters,
            });
            break;
        }

        // Entering index: largest gradient of ½‖Gω − b‖² among passive
        // columns, ties to the lowest index.
        let grad = g.tr_mul(&rho);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..ncols {
            if lh.in_active[i] || blocked[i] {
                continue;
            }
            let wi = grad[i];
            if wi > 0.0 && best.is_none_or(|(_, bw)| wi > bw) {
                best = Some((i, wi));
            }
        }
        let Some((enter, _)) = best else {
            fail_rest(&mut results, &order, next, &|eps| Error::NnlsStalled {
                eps,
                achieved: ratio,
                iterations: iters,
            });
            break;
        };
        if !lh.push(enter) {
            blocked[enter] = true;
            iters += 1;
            continue;
        }

        // Inner nonnegativity loop.
        loop {
            let z = match lh.solve_active() {
                Ok(z) => z,
                Err(e) => {
                    let msg = e.to_string();
                    fail_rest(&mut results, &order, next, &|_| Error::Singular(msg.clone()));
                    break 'outer;
                }
            };
            if z.iter().all(|&zi| zi > 0.0) {
                lh.wvals = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut amin = usize::MAX;
            for (i, &zi) in z.iter().enumerate() {
                if zi <= 0.0 {
                    let step = lh.wvals[i] / (lh.wvals[i] - zi);
                    if step < alpha {
                        alpha = step;
                        amin = i;
                    }
                }
            }
            for (i, w) in lh.wvals.iter_mut().enumerate() {
                *w += alpha * (z[i] - *w);
            }
            lh.wvals[amin] = 0.0;
            let mut pos = 0;
            while pos < lh.active.len() {
                if lh.wvals[pos] <= 0.0 {
                    lh.remove(pos);
                } else {
                    pos += 1;
                }
            }
            blocked.fill(false);
        }

        rho = lh.residual();
        ratio = rho.norm() / bnorm;
        iters += 1;
    }

    results.into_iter().map(Option::unwrap).collect()
}

/// Nonnegative least squares ‖G·ω − b‖ ≤ ε·‖b‖ by Lawson-Hanson with early
/// termination.
pub fn nnls(g: &DMatrix<f64>, b: &DVector<f64>, eps: f64) -> Result<EcswWeights> {
    nnls_multi(g, b, &[eps]).pop().unwrap()
}

/// Online ECSW assembler over the sampled rows.
pub struct EcswAssembler<'a> {
    sys: &'a PolynomialSystem,
    scheme: MultistepScheme,
    projection: EcswProjection,
    phi_t: DMatrix<f64>,
    ptp: DMatrix<f64>,
    samples: Vec<usize>,
    weights: Vec<f64>,
    /// Union of the sampled rows' stencils, for reconstruction.
    union: Vec<usize>,
    esys: Option<EvaluatedSystem>,
    /// Σ_{j≥1} α_j·x̂_j, cached per step.
    t_alpha_h: DVector<f64>,
    /// Σ_{j≥1} −Δt·β_j·f_j at each sampled row, cached per step.
    r_hist: Vec<f64>,
    /// Full-order scratch vector, nonzero only on the stencil union.
    x_full: DVector<f64>,
}

/// Builds the online ECSW assembler from trained weights.
pub fn ecsw_assembler<'a>(
    sys: &'a PolynomialSystem,
    basis: &ReducedBasis,
    scheme: &MultistepScheme,
    weights: &EcswWeights,
    projection: EcswProjection,
) -> EcswAssembler<'a> {
    let n = basis.phi.ncols();
    let mut union: Vec<usize> = weights
        .sample_indices
        .iter()
        .flat_map(|&s| sys.stencil[s].iter().copied())
        .collect();
    union.sort_unstable();
    union.dedup();
    EcswAssembler {
        sys,
        scheme: scheme.clone(),
        projection,
        phi_t: basis.phi.transpose(),
        ptp: basis.phi.tr_mul(&basis.phi),
        samples: weights.sample_indices.clone(),
        weights: weights.weights.clone(),
        union,
        esys: None,
        t_alpha_h: DVector::zeros(n),
        r_hist: vec![0.0; weights.sample_indices.len()],
        x_full: DVector::zeros(sys.dim_state),
    }
}

impl EcswAssembler<'_> {
    /// Reconstructs x̃ = Φ·x̂ on the stencil union only.
    fn fill_union(&mut self, xhat: &DVector<f64>) {
        for &k in &self.union {
            self.x_full[k] = self.phi_t.column(k).dot(xhat);
        }
    }
}

impl ReducedSystemAssembler for EcswAssembler<'_> {
    fn dim(&self) -> usize {
        self.phi_t.nrows()
    }

    fn scheme(&self) -> &MultistepScheme {
        &self.scheme
    }

    fn set_scheme(&mut self, scheme: MultistepScheme) {
        self.scheme = scheme;
    }

    fn prepare(&mut self, mu: &[f64]) -> Result<()> {
        self.esys = Some(self.sys.evaluate(mu)?);
        Ok(())
    }

    fn begin_step(&mut self, past: &[DVector<f64>], inputs: &[DVector<f64>]) {
        let tau = self.scheme.tau();
        self.t_alpha_h.fill(0.0);
        for j in 1..=tau {
            self.t_alpha_h.axpy(self.scheme.alphas[j], &past[j - 1], 1.0);
        }
        self.r_hist.iter_mut().for_each(|v| *v = 0.0);
        for j in 1..=tau {
            if self.scheme.betas[j] == 0.0 {
                continue;
            }
            let coef = -self.scheme.dt * self.scheme.betas[j];
            self.fill_union(&past[j - 1]);
            let esys = self.esys.as_ref().expect("prepare() must run before begin_step()");
            for (si, &s) in self.samples.iter().enumerate() {
                self.r_hist[si] += coef * esys.rhs_row(s, self.x_full.as_slice(), &inputs[j]);
            }
        }
    }

    fn assemble(
        &mut self,
        xhat: &DVector<f64>,
        _past: &[DVector<f64>],
        inputs: &[DVector<f64>],
        lhs: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    ) {
        let n = self.dim();
        let a0 = self.scheme.alphas[0];
        let b0 = self.scheme.betas[0];
        let dt = self.scheme.dt;
        let u = &inputs[0];

        self.fill_union(xhat);
        let esys = self.esys.as_ref().expect("prepare() must run before assemble()");
        let mut t_alpha = self.t_alpha_h.clone();
        t_alpha.axpy(a0, xhat, 1.0);

        match self.projection {
            EcswProjection::Galerkin => {
                // lhs = α_0·PtP − Δt·β_0·Σ_s ω_s·Φ_sᵀ(J_f[s,:]Φ)
                // rhs = PtP·t_α + Σ_s ω_s·Φ_sᵀ·(dynamics at s)
                lhs.copy_from(&self.ptp);
                *lhs *= a0;
                rhs.gemv(1.0, &self.ptp, &t_alpha, 0.0);
                for (si, &s) in self.samples.iter().enumerate() {
                    let w = self.weights[si];
                    let mut r_dyn = self.r_hist[si];
                    if b0 != 0.0 {
                        r_dyn += -dt * b0 * esys.rhs_row(s, self.x_full.as_slice(), u);
                    }
                    rhs.axpy(w * r_dyn, &self.phi_t.column(s), 1.0);
                    if b0 != 0.0 {
                        let jrow = jac_phi_row(esys, &self.phi_t, s, &self.x_full, u);
                        lhs.ger(-w * dt * b0, &self.phi_t.column(s).into_owned(), &jrow, 1.0);
                    }
                }
            }
            EcswProjection::Lspg => {
                // lhs = α_0²·PtP + Σ_s ω_s·(J̃_sᵀJ̃_s − α_0²·Φ_sᵀΦ_s)
                // rhs = α_0·PtP·t_α + Σ_s ω_s·(J̃_sᵀr̃_s − α_0·Φ_sᵀT_s)
                lhs.copy_from(&self.ptp);
                *lhs *= a0 * a0;
                rhs.gemv(a0, &self.ptp, &t_alpha, 0.0);
                let mut jt = DVector::zeros(n);
                for (si, &s) in self.samples.iter().enumerate() {
                    let w = self.weights[si];
                    let phis = self.phi_t.column(s).into_owned();
                    let t_s = phis.dot(&t_alpha);
                    let mut r_dyn = self.r_hist[si];
                    if b0 != 0.0 {
                        r_dyn += -dt * b0 * esys.rhs_row(s, self.x_full.as_slice(), u);
                    }
                    jt.copy_from(&phis);
                    jt *= a0;
                    if b0 != 0.0 {
                        let jrow = jac_phi_row(esys, &self.phi_t, s, &self.x_full, u);
                        jt.axpy(-dt * b0, &jrow, 1.0);
                    }
                    // J̃_sᵀ·r̃_s with r̃_s = T_s + r_dyn, minus the exact part.
                    rhs.axpy(w * (t_s + r_dyn), &jt, 1.0);
                    rhs.axpy(-w * a0 * t_s, &phis, 1.0);
                    lhs.ger(w, &jt, &jt, 1.0);
                    lhs.ger(-w * a0 * a0, &phis, &phis, 1.0);
                }
            }
        }
    }
}
