//! Snapshot collection and proper orthogonal decomposition via the method of
//! snapshots, including block-diagonal bases for multi-variable systems.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fomsolve::Trajectory;
use crate::matio;

/// Relative spectral floor: σ² at or below this multiple of σ_1² is treated
/// as numerically zero and dropped.
pub const POD_SPECTRAL_FLOOR: f64 = 1e-14;

/// Snapshot columns with (μ, time index) provenance per column.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    pub data: DMatrix<f64>,
    pub provenance: Vec<(Vec<f64>, usize)>,
}

/// Stacks trajectory states column-wise, preserving trajectory order and time
/// order within each trajectory.
pub fn assemble_snapshots(trajectories: &[Trajectory], include_initial: bool) -> Result<SnapshotMatrix> {
    if trajectories.is_empty() {
        return Err(Error::Empty("no trajectories to assemble snapshots from".into()));
    }
    let n = trajectories[0].states.nrows();
    let mut cols = 0usize;
    for t in trajectories {
        if t.states.nrows() != n {
            return Err(Error::Dimension(format!(
                "trajectory state dimensions differ: {} vs {}",
                t.states.nrows(),
                n
            )));
        }
        cols += t.states.ncols() - if include_initial { 0 } else { 1 };
    }
    let mut data = DMatrix::zeros(n, cols);
    let mut provenance = Vec::with_capacity(cols);
    let mut c = 0usize;
    for t in trajectories {
        let first = if include_initial { 0 } else { 1 };
        for m in first..t.states.ncols() {
            data.column_mut(c).copy_from(&t.states.column(m));
            provenance.push((t.mu.clone(), m));
            c += 1;
        }
    }
    Ok(SnapshotMatrix { data, provenance })
}

/// Per-variable mode structure of a block-diagonal basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisBlocks {
    pub sizes: Vec<usize>,
    pub mode_counts: Vec<usize>,
    pub spectra: Vec<Vec<f64>>,
}

/// POD basis: orthonormal columns of `phi` paired with the singular values of
/// the snapshot matrix, in non-increasing order.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub phi: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Mode count chosen by [`select_modes`]; equals `phi.ncols()` afterwards.
    pub n: Option<usize>,
    /// Energy tolerance used for the selection, when one was applied.
    pub eps_pod: Option<f64>,
    /// Present for block-diagonal bases built per variable.
    pub blocks: Option<BasisBlocks>,
}

impl ReducedBasis {
    pub fn dim_full(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim_reduced(&self) -> usize {
        self.phi.ncols()
    }

    /// Writes `<stem>.bin` (modes) and `<stem>.toml` (spectrum and layout).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        matio::write_matrix(&dir.join(format!("{stem}.bin")), &self.phi)?;
        let meta = BasisMeta {
            singular_values: self.singular_values.clone(),
            n: self.n,
            eps_pod: self.eps_pod,
            blocks: self.blocks.clone(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Format {
            path: dir.join(format!("{stem}.toml")).display().to_string(),
            detail: e.to_string(),
        })?;
        std::fs::write(dir.join(format!("{stem}.toml")), text)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<ReducedBasis> {
        let phi = matio::read_matrix(&dir.join(format!("{stem}.bin")))?;
        let meta_path = dir.join(format!("{stem}.toml"));
        let text = std::fs::read_to_string(&meta_path)?;
        let meta: BasisMeta = toml::from_str(&text).map_err(|e| Error::Format {
            path: meta_path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(ReducedBasis {
            phi,
            singular_values: meta.singular_values,
            n: meta.n,
            eps_pod: meta.eps_pod,
            blocks: meta.blocks,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BasisMeta {
    singular_values: Vec<f64>,
    n: Option<usize>,
    eps_pod: Option<f64>,
    blocks: Option<BasisBlocks>,
}

/// Symmetric Gram matrix X·Xᵀ accumulated in column chunks.
fn gram_state_side(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut g = DMatrix::zeros(n, n);
    let chunk = 2048usize;
    let mut c = 0;
    while c < x.ncols() {
        let w = chunk.min(x.ncols() - c);
        let xc = x.columns(c, w);
        g.gemm(1.0, &xc, &xc.transpose(), 1.0);
        c += w;
    }
    g
}

/// Eigen-decomposes a symmetric Gram matrix; returns (λ, vectors) sorted by
/// non-increasing λ, ties broken by original index.
fn sorted_eigen(g: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(g);
    let m = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(m, m);
    for (k, &i) in order.iter().enumerate() {
        vecs.column_mut(k).copy_from(&eig.eigenvectors.column(i));
    }
    (lambdas, vecs)
}

/// Flips each column so its largest-magnitude entry is positive (first such
/// entry on exact ties).
fn fix_signs(phi: &mut DMatrix<f64>) {
    for mut col in phi.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// POD by the method of snapshots. Works on whichever Gram matrix (X·Xᵀ or
/// Xᵀ·X) is smaller; retains every mode above the relative spectral floor.
pub fn pod(snapshots: &SnapshotMatrix) -> Result<ReducedBasis> {
    let x = &snapshots.data;
    let (n, ns) = (x.nrows(), x.ncols());
    if ns == 0 {
        return Err(Error::Empty("snapshot matrix has no columns".into()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::Empty("snapshot matrix is identically zero".into()));
    }

    let mut phi;
    let mut sigmas: Vec<f64>;
    if n <= ns {
        let (lambdas, vecs) = sorted_eigen(gram_state_side(x));
        let lmax = lambdas[0];
        let rank = lambdas
            .iter()
            .take_while(|&&l| l > POD_SPECTRAL_FLOOR * lmax)
            .count();
        sigmas = lambdas[..rank].iter().map(|&l| l.sqrt()).collect();
        phi = vecs.columns(0, rank).into_owned();
    } else {
        let g = x.tr_mul(x);
        let (lambdas, vecs) = sorted_eigen(g);
        let lmax = lambdas[0];
        let rank = lambdas
            .iter()
            .take_while(|&&l| l > POD_SPECTRAL_FLOOR * lmax)
            .count();
        sigmas = Vec::with_capacity(rank);
        phi = DMatrix::zeros(n, rank);
        for (k, &lambda) in lambdas.iter().enumerate().take(rank) {
            let sigma = lambda.sqrt();
            let mut col = phi.column_mut(k);
            col.gemv(1.0 / sigma, x, &vecs.column(k), 0.0);
            let nrm = col.norm();
            if nrm > 0.0 {
                col /= nrm;
            }
            sigmas.push(sigma);
        }
    }
    fix_signs(&mut phi);
    Ok(ReducedBasis {
        phi,
        singular_values: sigmas,
        n: None,
        eps_pod: None,
        blocks: None,
    })
}

/// Smallest n with relative discarded energy 1 − Σ_{i≤n} σ_i² / Σ σ_i² < ε.
fn mode_count_for(sigmas: &[f64], eps_pod: f64) -> usize {
    let total: f64 = sigmas.iter().map(|s| s * s).sum();
    let mut kept = 0.0;
    for (k, s) in sigmas.iter().enumerate() {
        kept += s * s;
        if 1.0 - kept / total < eps_pod {
            return k + 1;
        }
    }
    sigmas.len()
}

/// Truncates a POD basis to the mode count implied by the energy tolerance.
pub fn select_modes(basis: &ReducedBasis, eps_pod: f64) -> ReducedBasis {
    assert!(eps_pod > 0.0 && eps_pod <= 1.0, "eps_pod must lie in (0, 1]");
    assert!(
        basis.blocks.is_none(),
        "select_modes applies to plain bases; block bases select per variable"
    );
    let n = mode_count_for(&basis.singular_values, eps_pod);
    ReducedBasis {
        phi: basis.phi.columns(0, n).into_owned(),
        singular_values: basis.singular_values[..n].to_vec(),
        n: Some(n),
        eps_pod: Some(eps_pod),
        blocks: None,
    }
}

/// Truncates a POD basis to a fixed mode count, ignoring the energy rule.
pub fn select_leading_modes(basis: &ReducedBasis, n: usize) -> ReducedBasis {
    assert!(
        basis.blocks.is_none(),
        "select_leading_modes applies to plain bases"
    );
    assert!(
        n >= 1 && n <= basis.phi.ncols(),
        "requested {n} modes, basis holds {}",
        basis.phi.ncols()
    );
    ReducedBasis {
        phi: basis.phi.columns(0, n).into_owned(),
        singular_values: basis.singular_values[..n].to_vec(),
        n: Some(n),
        eps_pod: basis.eps_pod,
        blocks: None,
    }
}

/// Block-diagonal basis: independent POD per variable at a shared tolerance.
/// Block k occupies rows Σ_{i<k} N_i .. Σ_{i≤k} N_i and its own mode columns.
pub fn build_block_basis(per_variable: &[SnapshotMatrix], eps_pod: f64) -> Result<ReducedBasis> {
    if per_variable.is_empty() {
        return Err(Error::Empty("no variable blocks given".into()));
    }
    let mut parts = Vec::with_capacity(per_variable.len());
    for snaps in per_variable {
        let full = pod(snaps)?;
        let sel = select_modes(&full, eps_pod);
        parts.push((full.singular_values, sel));
    }
    let total_rows: usize = parts.iter().map(|(_, s)| s.phi.nrows()).sum();
    let total_cols: usize = parts.iter().map(|(_, s)| s.phi.ncols()).sum();
    let mut phi = DMatrix::zeros(total_rows, total_cols);
    let mut sizes = Vec::new();
    let mut mode_counts = Vec::new();
    let mut spectra = Vec::new();
    let mut selected = Vec::new();
    let (mut r0, mut c0) = (0usize, 0usize);
    for (full_spectrum, sel) in parts {
        let (rows, cols) = sel.phi.shape();
        phi.view_mut((r0, c0), (rows, cols)).copy_from(&sel.phi);
        sizes.push(rows);
        mode_counts.push(cols);
        spectra.push(full_spectrum);
        selected.extend_from_slice(&sel.singular_values);
        r0 += rows;
        c0 += cols;
    }
    Ok(ReducedBasis {
        phi,
        singular_values: selected,
        n: Some(total_cols),
        eps_pod: Some(eps_pod),
        blocks: Some(BasisBlocks { sizes, mode_counts, spectra }),
    })
}

/// Projects a state onto the reduced space: x̂ = Φᵀx.
pub fn project(basis: &ReducedBasis, x: &DVector<f64>) -> DVector<f64> {
    basis.phi.tr_mul(x)
}

/// Reconstructs a full state: x̃ = Φ·x̂.
pub fn reconstruct(basis: &ReducedBasis, xhat: &DVector<f64>) -> DVector<f64> {
    &basis.phi * xhat
}
