//! On-disk persistence for precomputed reduced operators: one binary file per
//! tensor plus a TOML manifest recording names, shapes, and affine tags.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matio;
use crate::polysys::AffineScalar;

use super::galerkin::{HrfCubicOperators, HrfGalerkinOperators};
use super::lspg::{HrfLspgOperators, LspgCubicBlocks};

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
    #[serde(default)]
    thetas: Vec<AffineScalar>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    n: usize,
    n_u: usize,
    #[serde(default)]
    tensors: Vec<TensorEntry>,
}

struct Writer<'a> {
    dir: &'a Path,
    stem: &'a str,
    manifest: Manifest,
}

impl<'a> Writer<'a> {
    fn create(dir: &'a Path, stem: &'a str, kind: &str, n: usize, n_u: usize) -> Result<Writer<'a>> {
        std::fs::create_dir_all(dir)?;
        Ok(Writer {
            dir,
            stem,
            manifest: Manifest { kind: kind.into(), n, n_u, tensors: Vec::new() },
        })
    }

    fn put(&mut self, name: String, thetas: Vec<AffineScalar>, m: &DMatrix<f64>) -> Result<()> {
        let file = format!("{}.{}.bin", self.stem, name);
        matio::write_matrix(&self.dir.join(&file), m)?;
        self.manifest.tensors.push(TensorEntry {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
            file,
            thetas,
        });
        Ok(())
    }

    fn put_vec(&mut self, name: String, thetas: Vec<AffineScalar>, v: &DVector<f64>) -> Result<()> {
        let col = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.put(name, thetas, &col)
    }

    fn put_terms(&mut self, prefix: &str, terms: &[(AffineScalar, DMatrix<f64>)]) -> Result<()> {
        for (k, (theta, m)) in terms.iter().enumerate() {
            self.put(format!("{prefix}.{k}"), vec![*theta], m)?;
        }
        Ok(())
    }

    fn put_term_vecs(&mut self, prefix: &str, terms: &[(AffineScalar, DVector<f64>)]) -> Result<()> {
        for (k, (theta, v)) in terms.iter().enumerate() {
            self.put_vec(format!("{prefix}.{k}"), vec![*theta], v)?;
        }
        Ok(())
    }

    fn put_pairs(
        &mut self,
        prefix: &str,
        terms: &[(AffineScalar, AffineScalar, DMatrix<f64>)],
    ) -> Result<()> {
        for (k, (t1, t2, m)) in terms.iter().enumerate() {
            self.put(format!("{prefix}.{k}"), vec![*t1, *t2], m)?;
        }
        Ok(())
    }

    fn put_pair_vecs(
        &mut self,
        prefix: &str,
        terms: &[(AffineScalar, AffineScalar, DVector<f64>)],
    ) -> Result<()> {
        for (k, (t1, t2, v)) in terms.iter().enumerate() {
            self.put_vec(format!("{prefix}.{k}"), vec![*t1, *t2], v)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let text = toml::to_string(&self.manifest)
            .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
        std::fs::write(self.dir.join(format!("{}.manifest.toml", self.stem)), text)?;
        Ok(())
    }
}

struct Reader {
    dir: PathBuf,
    manifest: Manifest,
}

impl Reader {
    fn open(dir: &Path, stem: &str) -> Result<Reader> {
        let path = dir.join(format!("{stem}.manifest.toml"));
        let text = std::fs::read_to_string(&path)?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(Reader { dir: dir.to_path_buf(), manifest })
    }

    fn bad(&self, detail: String) -> Error {
        Error::Format { path: self.dir.display().to_string(), detail }
    }

    fn read(&self, entry: &TensorEntry) -> Result<DMatrix<f64>> {
        let m = matio::read_matrix(&self.dir.join(&entry.file))?;
        if m.shape() != (entry.rows, entry.cols) {
            return Err(self.bad(format!("tensor '{}' shape mismatch", entry.name)));
        }
        Ok(m)
    }

    fn mat(&self, name: &str) -> Result<DMatrix<f64>> {
        let entry = self
            .manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| self.bad(format!("missing tensor '{name}'")))?;
        self.read(entry)
    }

    // Ordered series `prefix.0`, `prefix.1`, ...; must be contiguous.
    fn series(&self, prefix: &str) -> Result<Vec<(Vec<AffineScalar>, DMatrix<f64>)>> {
        let mut found: Vec<(usize, &TensorEntry)> = Vec::new();
        for e in &self.manifest.tensors {
            if let Some(rest) = e.name.strip_prefix(prefix) {
                if let Some(idx) = rest.strip_prefix('.') {
                    if let Ok(k) = idx.parse::<usize>() {
                        found.push((k, e));
                    }
                }
            }
        }
        found.sort_by_key(|&(k, _)| k);
        for (want, &(k, _)) in found.iter().enumerate() {
            if k != want {
                return Err(self.bad(format!("tensor series '{prefix}' is not contiguous")));
            }
        }
        found
            .into_iter()
            .map(|(_, e)| Ok((e.thetas.clone(), self.read(e)?)))
            .collect()
    }

    fn terms(&self, prefix: &str) -> Result<Vec<(AffineScalar, DMatrix<f64>)>> {
        self.series(prefix)?
            .into_iter()
            .map(|(thetas, m)| match thetas.as_slice() {
                &[t] => Ok((t, m)),
                _ => Err(self.bad(format!("series '{prefix}' needs exactly one affine tag"))),
            })
            .collect()
    }

    fn term_vecs(&self, prefix: &str) -> Result<Vec<(AffineScalar, DVector<f64>)>> {
        self.terms(prefix)?
            .into_iter()
            .map(|(t, m)| Ok((t, to_vector(m)?)))
            .collect()
    }

    fn pairs(&self, prefix: &str) -> Result<Vec<(AffineScalar, AffineScalar, DMatrix<f64>)>> {
        self.series(prefix)?
            .into_iter()
            .map(|(thetas, m)| match thetas.as_slice() {
                &[t1, t2] => Ok((t1, t2, m)),
                _ => Err(self.bad(format!("series '{prefix}' needs exactly two affine tags"))),
            })
            .collect()
    }

    fn pair_vecs(&self, prefix: &str) -> Result<Vec<(AffineScalar, AffineScalar, DVector<f64>)>> {
        self.pairs(prefix)?
            .into_iter()
            .map(|(t1, t2, m)| Ok((t1, t2, to_vector(m)?)))
            .collect()
    }

    fn has(&self, prefix: &str) -> bool {
        self.manifest
            .tensors
            .iter()
            .any(|e| e.name == prefix || e.name.starts_with(&format!("{prefix}.")))
    }
}

fn to_vector(m: DMatrix<f64>) -> Result<DVector<f64>> {
    if m.ncols() != 1 {
        return Err(Error::Dimension(format!(
            "expected a column vector tensor, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// Writes the Galerkin operator tensors and their manifest under
/// `dir/stem.*`.
pub fn save_hrf_galerkin(ops: &HrfGalerkinOperators, dir: &Path, stem: &str) -> Result<()> {
    let mut w = Writer::create(dir, stem, "hrf-galerkin", ops.n, ops.n_u)?;
    w.put("ptp".into(), Vec::new(), &ops.ptp)?;
    w.put_term_vecs("ptc", &ops.ptc)?;
    w.put_terms("ptap", &ops.ptap)?;
    w.put_terms("ptf", &ops.ptf)?;
    w.put_terms("ptb", &ops.ptb)?;
    w.put_terms("ptn", &ops.ptn)?;
    if let Some(cubic) = &ops.ptw {
        w.put_terms("ptw", &cubic.ptw)?;
    }
    w.finish()
}

/// Reads Galerkin operator tensors saved by [`save_hrf_galerkin`].
pub fn load_hrf_galerkin(dir: &Path, stem: &str) -> Result<HrfGalerkinOperators> {
    let r = Reader::open(dir, stem)?;
    if r.manifest.kind != "hrf-galerkin" {
        return Err(r.bad(format!("expected hrf-galerkin manifest, got '{}'", r.manifest.kind)));
    }
    let ptw = if r.has("ptw") {
        Some(HrfCubicOperators { ptw: r.terms("ptw")? })
    } else {
        None
    };
    Ok(HrfGalerkinOperators {
        n: r.manifest.n,
        n_u: r.manifest.n_u,
        ptp: r.mat("ptp")?,
        ptc: r.term_vecs("ptc")?,
        ptap: r.terms("ptap")?,
        ptf: r.terms("ptf")?,
        ptb: r.terms("ptb")?,
        ptn: r.terms("ptn")?,
        ptw,
    })
}

/// Writes the LSPG Gram-block tensors and their manifest under `dir/stem.*`.
pub fn save_hrf_lspg(ops: &HrfLspgOperators, dir: &Path, stem: &str) -> Result<()> {
    let mut w = Writer::create(dir, stem, "hrf-lspg", ops.n, ops.n_u)?;
    w.put("ptp".into(), Vec::new(), &ops.ptp)?;
    w.put_term_vecs("phi_c", &ops.phi_c)?;
    w.put_terms("phi_a", &ops.phi_a)?;
    w.put_terms("phi_b", &ops.phi_b)?;
    w.put_terms("phi_f", &ops.phi_f)?;
    w.put_terms("phi_n", &ops.phi_n)?;
    w.put_pairs("a_a", &ops.a_a)?;
    w.put_pair_vecs("a_c", &ops.a_c)?;
    w.put_pairs("a_b", &ops.a_b)?;
    w.put_pairs("a_f", &ops.a_f)?;
    w.put_pairs("a_n", &ops.a_n)?;
    w.put_pairs("f_f", &ops.f_f)?;
    w.put_pair_vecs("f_c", &ops.f_c)?;
    w.put_pairs("f_b", &ops.f_b)?;
    w.put_pairs("f_n", &ops.f_n)?;
    w.put_pairs("n_n", &ops.n_n)?;
    w.put_pair_vecs("n_c", &ops.n_c)?;
    w.put_pairs("n_b", &ops.n_b)?;
    if let Some(cubic) = &ops.cubic {
        w.put_terms("phi_w", &cubic.phi_w)?;
        w.put_pairs("a_w", &cubic.a_w)?;
        w.put_pairs("f_w", &cubic.f_w)?;
        w.put_pairs("n_w", &cubic.n_w)?;
        w.put_pairs("w_w", &cubic.w_w)?;
        w.put_pair_vecs("w_c", &cubic.w_c)?;
        w.put_pairs("w_b", &cubic.w_b)?;
    }
    w.finish()
}

/// Reads LSPG Gram-block tensors saved by [`save_hrf_lspg`].
pub fn load_hrf_lspg(dir: &Path, stem: &str) -> Result<HrfLspgOperators> {
    let r = Reader::open(dir, stem)?;
    if r.manifest.kind != "hrf-lspg" {
        return Err(r.bad(format!("expected hrf-lspg manifest, got '{}'", r.manifest.kind)));
    }
    let cubic = if r.has("w_w") {
        Some(LspgCubicBlocks {
            phi_w: r.terms("phi_w")?,
            a_w: r.pairs("a_w")?,
            f_w: r.pairs("f_w")?,
            n_w: r.pairs("n_w")?,
            w_w: r.pairs("w_w")?,
            w_c: r.pair_vecs("w_c")?,
            w_b: r.pairs("w_b")?,
        })
    } else {
        None
    };
    Ok(HrfLspgOperators {
        n: r.manifest.n,
        n_u: r.manifest.n_u,
        ptp: r.mat("ptp")?,
        phi_c: r.term_vecs("phi_c")?,
        phi_a: r.terms("phi_a")?,
        phi_b: r.terms("phi_b")?,
        phi_f: r.terms("phi_f")?,
        phi_n: r.terms("phi_n")?,
        a_a: r.pairs("a_a")?,
        a_c: r.pair_vecs("a_c")?,
        a_b: r.pairs("a_b")?,
        a_f: r.pairs("a_f")?,
        a_n: r.pairs("a_n")?,
        f_f: r.pairs("f_f")?,
        f_c: r.pair_vecs("f_c")?,
        f_b: r.pairs("f_b")?,
        f_n: r.pairs("f_n")?,
        n_n: r.pairs("n_n")?,
        n_c: r.pair_vecs("n_c")?,
        n_b: r.pairs("n_b")?,
        cubic,
    })
}
