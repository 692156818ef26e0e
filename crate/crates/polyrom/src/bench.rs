//! Benchmark orchestration: error metrics, online timing, experiment sweeps
//! over (method, parameter, tolerance) grids, and CSV results emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{assemble_snapshots, build_block_basis, pod, select_modes, ReducedBasis, SnapshotMatrix};
use crate::ecsw::{
    build_nnls_system, collect_residual_snapshots, ecsw_assembler, nnls_multi, EcswProjection,
};
use crate::error::{Error, Result};
use crate::fomsolve::{integrate_fom, scheme_by_name, MultistepScheme, NewtonSettings, Trajectory};
use crate::hrf::{
    hrf_galerkin_assembler, hrf_lspg_assembler, precompute_hrf_galerkin, precompute_hrf_lspg,
};
use crate::models::{build_by_name, lift_trajectory, GridSpec};
use crate::polysys::PolynomialSystem;
use crate::romref::{
    galerkin_reference_assembler, lspg_reference_assembler, run_rom, run_rom_reduced,
    ReducedSystemAssembler,
};

/// Method names understood by the experiment driver.
pub const KNOWN_METHODS: &[&str] =
    &["fom", "galerkin-rom", "lspg-rom", "hrf-g", "hrf-lspg", "ecsw-g", "ecsw-lspg"];

/// Relative squared-Frobenius state error ‖X − X̃‖²_F / ‖X‖²_F.
pub fn state_prediction_error(reference: &DMatrix<f64>, predicted: &DMatrix<f64>) -> f64 {
    assert_eq!(reference.shape(), predicted.shape(), "trajectory shapes differ");
    let denom = reference.norm_squared();
    if denom == 0.0 {
        return predicted.norm_squared();
    }
    let mut num = 0.0;
    for (r, p) in reference.iter().zip(predicted.iter()) {
        let d = r - p;
        num += d * d;
    }
    num / denom
}

/// Relative squared projection error (‖X‖² − ‖ΦᵀX‖²)_+ / ‖X‖² of a snapshot
/// set onto an orthonormal basis; the optimal-reconstruction lower bound for
/// any reduced model in span(Φ).
pub fn projection_error(states: &DMatrix<f64>, phi: &DMatrix<f64>) -> f64 {
    assert_eq!(states.nrows(), phi.nrows(), "basis and trajectory dimensions differ");
    let denom = states.norm_squared();
    if denom == 0.0 {
        return 0.0;
    }
    let reduced = phi.tr_mul(states);
    ((denom - reduced.norm_squared()) / denom).max(0.0)
}

/// Relative squared discrepancy of a hyper-reduced trajectory against its
/// exact-projection reference trajectory in the same subspace.
pub fn rom_evaluation_error(reference_rom: &DMatrix<f64>, predicted: &DMatrix<f64>) -> f64 {
    state_prediction_error(reference_rom, predicted)
}

/// Wall-clock timings for one full/reduced pairing.
#[derive(Debug, Clone)]
pub struct SpeedupMeasurement {
    /// Per-repeat full-order seconds.
    pub fom_seconds: Vec<f64>,
    /// Per-repeat reduced-order seconds.
    pub rom_seconds: Vec<f64>,
    /// Mean full-order seconds.
    pub fom_mean: f64,
    /// Mean reduced-order seconds.
    pub rom_mean: f64,
    /// fom_mean / rom_mean.
    pub speedup: f64,
}

/// Times `f` over `repeats` runs, returning (per-run seconds, mean).
pub fn time_runs(mut f: impl FnMut() -> Result<()>, repeats: usize) -> Result<(Vec<f64>, f64)> {
    assert!(repeats > 0, "need at least one timing repeat");
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    Ok((times, mean))
}

/// Measures mean wall-clock times of a full-order and a reduced-order solve
/// and their ratio.
pub fn measure_speedup(
    fom: impl FnMut() -> Result<()>,
    rom: impl FnMut() -> Result<()>,
    repeats: usize,
) -> Result<SpeedupMeasurement> {
    let (fom_seconds, fom_mean) = time_runs(fom, repeats)?;
    let (rom_seconds, rom_mean) = time_runs(rom, repeats)?;
    let speedup = fom_mean / rom_mean;
    Ok(SpeedupMeasurement { fom_seconds, rom_seconds, fom_mean, rom_mean, speedup })
}

fn default_seed() -> u64 {
    7_240_816
}

fn default_repeats() -> usize {
    3
}

fn default_ecsw_snapshots() -> usize {
    2000
}

/// One benchmark experiment: a model, a discretization, parameter sets, and
/// the tolerance/method grid to sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model name accepted by the model catalog.
    pub model: String,
    /// Domain length.
    pub grid_length: f64,
    /// Number of interior grid points.
    pub grid_points: usize,
    /// Time scheme name.
    pub scheme: String,
    /// Time step.
    pub dt: f64,
    /// Online (test) step count.
    pub n_steps: usize,
    /// Training step count; defaults to `n_steps`.
    #[serde(default)]
    pub n_steps_train: Option<usize>,
    /// Training parameter vectors.
    pub training_mu: Vec<Vec<f64>>,
    /// Test parameter vectors.
    pub test_mu: Vec<Vec<f64>>,
    /// Basis truncation tolerances to sweep.
    pub eps_pod: Vec<f64>,
    /// Weight-fit tolerances to sweep for sampled methods.
    #[serde(default)]
    pub eps_ecsw: Vec<f64>,
    /// Methods to run; see [`KNOWN_METHODS`].
    pub methods: Vec<String>,
    /// Residual snapshots drawn for weight training.
    #[serde(default = "default_ecsw_snapshots")]
    pub ecsw_snapshots: usize,
    /// Seed for residual-snapshot subsampling.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Timing repeats per cell.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl ExperimentConfig {
    /// Checks grid sizes, method names, and tolerance lists.
    pub fn validate(&self) -> Result<()> {
        if self.training_mu.is_empty() || self.test_mu.is_empty() {
            return Err(Error::Config("training_mu and test_mu must be nonempty".into()));
        }
        if self.eps_pod.is_empty() {
            return Err(Error::Config("eps_pod must list at least one tolerance".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must list at least one method".into()));
        }
        for m in &self.methods {
            if !KNOWN_METHODS.contains(&m.as_str()) {
                return Err(Error::Config(format!(
                    "unknown method '{m}'; known: {}",
                    KNOWN_METHODS.join(", ")
                )));
            }
        }
        let wants_ecsw = self.methods.iter().any(|m| m.starts_with("ecsw"));
        if wants_ecsw && self.eps_ecsw.is_empty() {
            return Err(Error::Config("eps_ecsw must be nonempty when sampled methods run".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.dt <= 0.0 || self.n_steps == 0 {
            return Err(Error::Config("dt must be positive and n_steps nonzero".into()));
        }
        Ok(())
    }

    /// Parses a TOML experiment file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes to TOML.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Built-in experiment presets by name; `heat-study` expands to both the
/// plain cubic and the lifted variant.
pub fn builtin_configs(name: &str) -> Option<Vec<ExperimentConfig>> {
    match name {
        "burgers-study" => {
            let mut training_mu = Vec::new();
            for i in 0..10 {
                for j in 0..10 {
                    training_mu
                        .push(vec![1.0 + 0.25 * i as f64, 0.01 + 0.01 * j as f64]);
                }
            }
            Some(vec![ExperimentConfig {
                model: "burgers".into(),
                grid_length: 1.0,
                grid_points: 1024,
                scheme: "backward-euler".into(),
                dt: 1e-3,
                n_steps: 500,
                n_steps_train: None,
                training_mu,
                test_mu: vec![vec![3.125, 0.0175], vec![1.375, 0.0825]],
                eps_pod: vec![1e-1, 1e-2, 1e-3, 1e-4],
                eps_ecsw: vec![1e-5, 1e-7, 1e-9],
                methods: KNOWN_METHODS.iter().map(|s| s.to_string()).collect(),
                ecsw_snapshots: 5000,
                seed: default_seed(),
                repeats: 10,
            }])
        }
        "heat-study" => {
            let training_mu = vec![
                vec![-2.0, 0.0],
                vec![-1.0, -2.0],
                vec![0.0, 1.0],
                vec![1.0, -1.0],
                vec![2.0, 2.0],
            ];
            let base = ExperimentConfig {
                model: "heat-cubic".into(),
                grid_length: 1.0,
                grid_points: 1024,
                scheme: "backward-euler".into(),
                dt: 1e-3,
                n_steps: 10_000,
                n_steps_train: Some(2_000),
                training_mu,
                test_mu: vec![vec![1.5, 0.5]],
                eps_pod: vec![1e-2, 1e-3, 1e-4],
                eps_ecsw: Vec::new(),
                methods: vec![
                    "fom".into(),
                    "galerkin-rom".into(),
                    "lspg-rom".into(),
                    "hrf-g".into(),
                    "hrf-lspg".into(),
                ],
                ecsw_snapshots: default_ecsw_snapshots(),
                seed: default_seed(),
                repeats: 5,
            };
            let mut lifted = base.clone();
            lifted.model = "heat-lifted".into();
            Some(vec![base, lifted])
        }
        _ => None,
    }
}

/// Outcome of one (method, parameter, tolerance) cell.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    /// Every step converged.
    Converged,
    /// The reduced Newton iteration failed at this step.
    Failed(usize),
    /// The cell could not run at all.
    Error(String),
}

impl RunStatus {
    fn encode(&self) -> String {
        match self {
            RunStatus::Converged => "converged".into(),
            RunStatus::Failed(step) => format!("failed@{step}"),
            RunStatus::Error(msg) => format!("error:{}", msg.replace([',', '\n'], ";")),
        }
    }

    fn decode(text: &str) -> Result<Self> {
        if text == "converged" {
            return Ok(RunStatus::Converged);
        }
        if let Some(step) = text.strip_prefix("failed@") {
            return Ok(RunStatus::Failed(step.parse().map_err(|_| Error::Config(
                format!("bad status field '{text}'"),
            ))?));
        }
        if let Some(msg) = text.strip_prefix("error:") {
            return Ok(RunStatus::Error(msg.to_string()));
        }
        Err(Error::Config(format!("bad status field '{text}'")))
    }
}

/// One row of the results table.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    /// Model name.
    pub model: String,
    /// Method name.
    pub method: String,
    /// Test parameter vector.
    pub mu: Vec<f64>,
    /// Basis tolerance, when a basis was involved.
    pub eps_pod: Option<f64>,
    /// Weight-fit tolerance, for sampled methods.
    pub eps_ecsw: Option<f64>,
    /// Total reduced dimension.
    pub n_modes: Option<usize>,
    /// Per-variable mode counts for block bases; empty otherwise.
    pub block_modes: Vec<usize>,
    /// Sampled-set size, for sampled methods.
    pub n_samples: Option<usize>,
    /// Relative squared error against the full-order trajectory.
    pub state_error: Option<f64>,
    /// Optimal-projection lower bound for the same basis.
    pub projection_error: Option<f64>,
    /// Relative squared discrepancy against the matching reference model.
    pub rom_eval_error: Option<f64>,
    /// Mean online seconds.
    pub online_seconds: Option<f64>,
    /// Full-order mean seconds divided by online mean seconds.
    pub speedup: Option<f64>,
    /// Converged, failed at a step, or errored.
    pub status: RunStatus,
}

/// A full results table.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    /// Rows in sweep order.
    pub rows: Vec<MetricsRow>,
}

const CSV_HEADER: &str = "model,method,mu,eps_pod,eps_ecsw,n_modes,block_modes,n_samples,\
state_error,projection_error,rom_eval_error,online_seconds,speedup,status";

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt_f64(text: &str, field: &str) -> Result<Option<f64>> {
    if text.is_empty() {
        return Ok(None);
    }
    text.parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("bad {field} field '{text}'")))
}

fn parse_opt_usize(text: &str, field: &str) -> Result<Option<usize>> {
    if text.is_empty() {
        return Ok(None);
    }
    text.parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("bad {field} field '{text}'")))
}

fn parse_f64_list(text: &str, field: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|t| t.parse().map_err(|_| Error::Config(format!("bad {field} field '{text}'"))))
        .collect()
}

impl MetricsReport {
    /// True if any row has error status (exit-code signal for the driver).
    pub fn any_errors(&self) -> bool {
        self.rows.iter().any(|r| matches!(r.status, RunStatus::Error(_)))
    }

    /// Renders the table as CSV (floats in shortest round-trip form, vector
    /// fields ';'-joined).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let mu = r.mu.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";");
            let blocks =
                r.block_modes.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.model,
                r.method,
                mu,
                fmt_opt_f64(r.eps_pod),
                fmt_opt_f64(r.eps_ecsw),
                fmt_opt_usize(r.n_modes),
                blocks,
                fmt_opt_usize(r.n_samples),
                fmt_opt_f64(r.state_error),
                fmt_opt_f64(r.projection_error),
                fmt_opt_f64(r.rom_eval_error),
                fmt_opt_f64(r.online_seconds),
                fmt_opt_f64(r.speedup),
                r.status.encode(),
            );
        }
        out
    }

    /// Parses a table produced by [`MetricsReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty results table".into()))?;
        if header.trim() != CSV_HEADER {
            return Err(Error::Config("unrecognized results header".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.splitn(14, ',').collect();
            if fields.len() != 14 {
                return Err(Error::Config(format!("bad results row '{line}'")));
            }
            rows.push(MetricsRow {
                model: fields[0].to_string(),
                method: fields[1].to_string(),
                mu: parse_f64_list(fields[2], "mu")?,
                eps_pod: parse_opt_f64(fields[3], "eps_pod")?,
                eps_ecsw: parse_opt_f64(fields[4], "eps_ecsw")?,
                n_modes: parse_opt_usize(fields[5], "n_modes")?,
                block_modes: parse_f64_list(fields[6], "block_modes")?
                    .into_iter()
                    .map(|v| v as usize)
                    .collect(),
                n_samples: parse_opt_usize(fields[7], "n_samples")?,
                state_error: parse_opt_f64(fields[8], "state_error")?,
                projection_error: parse_opt_f64(fields[9], "projection_error")?,
                rom_eval_error: parse_opt_f64(fields[10], "rom_eval_error")?,
                online_seconds: parse_opt_f64(fields[11], "online_seconds")?,
                speedup: parse_opt_f64(fields[12], "speedup")?,
                status: RunStatus::decode(fields[13])?,
            });
        }
        Ok(MetricsReport { rows })
    }

    /// Appends another report's rows.
    pub fn extend(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
    }
}

/// Writes report.csv, derived series tables, and a plain-text summary into a
/// directory.
pub fn emit_results(report: &MetricsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report.to_csv())?;

    let mut err_series = String::from("model,method,mu,eps_pod,n_modes,state_error\n");
    let mut speed_series = String::from("model,method,mu,eps_pod,eps_ecsw,speedup\n");
    let mut sample_series = String::from("model,method,eps_pod,eps_ecsw,n_samples\n");
    let mut tradeoff = String::from("model,method,mu,eps_pod,eps_ecsw,state_error,speedup\n");
    for r in &report.rows {
        let mu = r.mu.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";");
        if let (Some(eps), Some(err)) = (r.eps_pod, r.state_error) {
            let _ = writeln!(
                err_series,
                "{},{},{},{},{},{}",
                r.model,
                r.method,
                mu,
                eps,
                fmt_opt_usize(r.n_modes),
                err
            );
        }
        if let Some(s) = r.speedup {
            let _ = writeln!(
                speed_series,
                "{},{},{},{},{},{}",
                r.model,
                r.method,
                mu,
                fmt_opt_f64(r.eps_pod),
                fmt_opt_f64(r.eps_ecsw),
                s
            );
        }
        if let (Some(eps), Some(n)) = (r.eps_ecsw, r.n_samples) {
            let _ = writeln!(
                sample_series,
                "{},{},{},{},{}",
                r.model,
                r.method,
                fmt_opt_f64(r.eps_pod),
                eps,
                n
            );
        }
        if let (Some(err), Some(s)) = (r.state_error, r.speedup) {
            let _ = writeln!(
                tradeoff,
                "{},{},{},{},{},{},{}",
                r.model,
                r.method,
                mu,
                fmt_opt_f64(r.eps_pod),
                fmt_opt_f64(r.eps_ecsw),
                err,
                s
            );
        }
    }
    std::fs::write(dir.join("error_vs_eps_pod.csv"), err_series)?;
    std::fs::write(dir.join("speedup.csv"), speed_series)?;
    std::fs::write(dir.join("samples_vs_eps_ecsw.csv"), sample_series)?;
    std::fs::write(dir.join("error_vs_speedup.csv"), tradeoff)?;
    std::fs::write(dir.join("summary.txt"), summarize(report))?;
    Ok(())
}

/// Renders a short human-readable digest of a report.
pub fn summarize(report: &MetricsReport) -> String {
    let mut by_key: BTreeMap<(String, String), Vec<&MetricsRow>> = BTreeMap::new();
    for r in &report.rows {
        by_key.entry((r.model.clone(), r.method.clone())).or_default().push(r);
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:<14} {:>5} {:>12} {:>12} {:>10} {:>7}", "model", "method",
        "cells", "min err", "max err", "max spdup", "errors");
    for ((model, method), rows) in by_key {
        let errs: Vec<f64> = rows.iter().filter_map(|r| r.state_error).collect();
        let min_err = errs.iter().copied().fold(f64::INFINITY, f64::min);
        let max_err = errs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let max_speed = rows.iter().filter_map(|r| r.speedup).fold(f64::NEG_INFINITY, f64::max);
        let n_err = rows.iter().filter(|r| matches!(r.status, RunStatus::Error(_))).count();
        let _ = writeln!(
            out,
            "{:<14} {:<14} {:>5} {:>12} {:>12} {:>10} {:>7}",
            model,
            method,
            rows.len(),
            if errs.is_empty() { "-".into() } else { format!("{min_err:.3e}") },
            if errs.is_empty() { "-".into() } else { format!("{max_err:.3e}") },
            if max_speed.is_finite() { format!("{max_speed:.2}") } else { "-".into() },
            n_err,
        );
    }
    out
}

// Reference-reconstruction cache: per (test index, projection family), the
// reconstructed reference trajectory or the failure status.
type RefCache = BTreeMap<(usize, u8), std::result::Result<DMatrix<f64>, RunStatus>>;

#[allow(clippy::too_many_arguments)]
fn reference_states<'m>(
    cache: &'m mut RefCache,
    mu_idx: usize,
    family: u8,
    sys: &PolynomialSystem,
    basis: &ReducedBasis,
    scheme: &MultistepScheme,
    settings: &NewtonSettings,
    mu: &[f64],
    n_steps: usize,
) -> &'m std::result::Result<DMatrix<f64>, RunStatus> {
    cache.entry((mu_idx, family)).or_insert_with(|| {
        let mut assembler: Box<dyn ReducedSystemAssembler> = if family == 0 {
            Box::new(galerkin_reference_assembler(sys, basis, scheme))
        } else {
            Box::new(lspg_reference_assembler(sys, basis, scheme))
        };
        match run_rom(assembler.as_mut(), basis, sys, scheme, settings, mu, n_steps) {
            Ok((_, recon)) => Ok(recon.states),
            Err(Error::NonConvergence { step, .. }) => Err(RunStatus::Failed(step)),
            Err(e) => Err(RunStatus::Error(e.to_string())),
        }
    })
}

fn status_of(err: &Error) -> RunStatus {
    match err {
        Error::NonConvergence { step, .. } => RunStatus::Failed(*step),
        other => RunStatus::Error(other.to_string()),
    }
}

struct CellOutcome {
    reconstructed: Option<DMatrix<f64>>,
    online_seconds: Option<f64>,
    status: RunStatus,
}

// Runs one ROM cell: a metrics run, then `repeats` timed reduced-only runs.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    assembler: &mut dyn ReducedSystemAssembler,
    basis: &ReducedBasis,
    sys: &PolynomialSystem,
    scheme: &MultistepScheme,
    settings: &NewtonSettings,
    mu: &[f64],
    n_steps: usize,
    repeats: usize,
) -> CellOutcome {
    match run_rom(assembler, basis, sys, scheme, settings, mu, n_steps) {
        Ok((_, recon)) => {
            let timing = time_runs(
                || run_rom_reduced(assembler, basis, sys, scheme, settings, mu, n_steps)
                    .map(|_| ()),
                repeats,
            );
            match timing {
                Ok((_, mean)) => CellOutcome {
                    reconstructed: Some(recon.states),
                    online_seconds: Some(mean),
                    status: RunStatus::Converged,
                },
                Err(e) => CellOutcome {
                    reconstructed: Some(recon.states),
                    online_seconds: None,
                    status: status_of(&e),
                },
            }
        }
        Err(e) => CellOutcome { reconstructed: None, online_seconds: None, status: status_of(&e) },
    }
}

// Per-cell error metrics; for lifted models the state and projection errors
// are taken on the physical (first-block) rows against the physical
// trajectory, while the reference discrepancy uses the full lifted state.
struct CellMetrics<'a> {
    test_states: &'a DMatrix<f64>,
    phys_rows: usize,
    proj_err: f64,
}

impl CellMetrics<'_> {
    fn state_error(&self, recon: &DMatrix<f64>) -> f64 {
        let pred = recon.rows(0, self.phys_rows).into_owned();
        state_prediction_error(self.test_states, &pred)
    }
}

fn cell_metrics<'a>(
    basis: &ReducedBasis,
    test_states: &'a DMatrix<f64>,
    lifted: bool,
) -> CellMetrics<'a> {
    let phys_rows = test_states.nrows();
    let phi_phys = if lifted {
        let n1 = basis
            .blocks
            .as_ref()
            .map(|b| b.mode_counts[0])
            .unwrap_or(basis.phi.ncols());
        basis.phi.view((0, 0), (phys_rows, n1)).into_owned()
    } else {
        basis.phi.clone()
    };
    let proj_err = projection_error(test_states, &phi_phys);
    CellMetrics { test_states, phys_rows, proj_err }
}

/// Offline artifacts shared by every reduction method: the (possibly lifted)
/// model, its physical counterpart, and the training trajectories.
pub struct ExperimentSetup {
    /// The model being reduced.
    pub sys: PolynomialSystem,
    /// The physical model when `sys` is a lifting of it.
    pub phys: Option<PolynomialSystem>,
    /// Whether `sys` carries an auxiliary lifted block.
    pub lifted: bool,
    /// Time scheme.
    pub scheme: MultistepScheme,
    /// Newton settings used throughout.
    pub settings: NewtonSettings,
    /// Training trajectories in the state space of `sys`.
    pub training: Vec<Trajectory>,
}

impl ExperimentSetup {
    /// The model that defines ground truth and full-order cost.
    pub fn physical(&self) -> &PolynomialSystem {
        self.phys.as_ref().unwrap_or(&self.sys)
    }
}

/// Builds the model pair and integrates the training set. Training always
/// runs on the physical model; lifted models get lifted trajectories.
pub fn prepare_training(config: &ExperimentConfig) -> Result<ExperimentSetup> {
    config.validate()?;
    let grid = GridSpec::new(config.grid_length, config.grid_points);
    let scheme = scheme_by_name(&config.scheme, config.dt)?;
    let settings = NewtonSettings::default();
    let (sys, layout) = build_by_name(&config.model, &grid)?;
    let lifted = layout.is_some();
    let phys = if lifted { Some(build_by_name("heat-cubic", &grid)?.0) } else { None };

    let train_steps = config.n_steps_train.unwrap_or(config.n_steps);
    let mut training = Vec::with_capacity(config.training_mu.len());
    for mu in &config.training_mu {
        let mut t =
            integrate_fom(phys.as_ref().unwrap_or(&sys), &scheme, &settings, mu, train_steps)?;
        t.model = config.model.clone();
        if lifted {
            t = lift_trajectory(&t);
        }
        training.push(t);
    }
    Ok(ExperimentSetup { sys, phys, lifted, scheme, settings, training })
}

/// Produces bases at any tolerance from one training set: plain models share
/// a single spectrum, lifted models rebuild per-variable blocks.
pub struct BasisFactory {
    full: Option<ReducedBasis>,
    per_var: Vec<SnapshotMatrix>,
    lifted: bool,
}

impl BasisFactory {
    /// Computes the shared spectra (or splits block snapshots) once.
    pub fn new(setup: &ExperimentSetup) -> Result<BasisFactory> {
        if setup.lifted {
            let all = assemble_snapshots(&setup.training, true)?;
            let half = all.data.nrows() / 2;
            let per_var = vec![
                SnapshotMatrix {
                    data: all.data.rows(0, half).into_owned(),
                    provenance: all.provenance.clone(),
                },
                SnapshotMatrix {
                    data: all.data.rows(half, half).into_owned(),
                    provenance: all.provenance,
                },
            ];
            Ok(BasisFactory { full: None, per_var, lifted: true })
        } else {
            let full = pod(&assemble_snapshots(&setup.training, true)?)?;
            Ok(BasisFactory { full: Some(full), per_var: Vec::new(), lifted: false })
        }
    }

    /// Basis at the given truncation tolerance.
    pub fn basis(&self, eps_pod: f64) -> Result<ReducedBasis> {
        if self.lifted {
            build_block_basis(&self.per_var, eps_pod)
        } else {
            Ok(select_modes(self.full.as_ref().unwrap(), eps_pod))
        }
    }
}

/// Runs one experiment sweep and returns the results table. Ground truth,
/// training data, and timing baselines come from the physical (non-lifted)
/// model; lifted models are reduced on the lifted state with a block basis.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    let setup = prepare_training(config)?;
    let ExperimentSetup { ref sys, lifted, ref scheme, ref settings, ref training, .. } = setup;
    let phys = setup.physical();

    // Ground-truth test trajectories and full-order timing baselines.
    let mut tests: Vec<Trajectory> = Vec::with_capacity(config.test_mu.len());
    let mut fom_means: Vec<f64> = Vec::with_capacity(config.test_mu.len());
    for mu in &config.test_mu {
        let mut t = integrate_fom(phys, scheme, settings, mu, config.n_steps)?;
        t.model = config.model.clone();
        tests.push(t);
        let (_, mean) = time_runs(
            || integrate_fom(phys, scheme, settings, mu, config.n_steps).map(|_| ()),
            config.repeats,
        )?;
        fom_means.push(mean);
    }

    let mut report = MetricsReport::default();
    if config.methods.iter().any(|m| m == "fom") {
        for (k, mu) in config.test_mu.iter().enumerate() {
            report.rows.push(MetricsRow {
                model: config.model.clone(),
                method: "fom".into(),
                mu: mu.clone(),
                eps_pod: None,
                eps_ecsw: None,
                n_modes: None,
                block_modes: Vec::new(),
                n_samples: None,
                state_error: None,
                projection_error: None,
                rom_eval_error: None,
                online_seconds: Some(fom_means[k]),
                speedup: None,
                status: RunStatus::Converged,
            });
        }
    }

    let factory = BasisFactory::new(&setup)?;

    for &eps_pod in &config.eps_pod {
        let basis = factory.basis(eps_pod)?;
        let n_modes = basis.dim_reduced();
        let block_modes: Vec<usize> =
            basis.blocks.as_ref().map(|b| b.mode_counts.clone()).unwrap_or_default();
        let metrics: Vec<CellMetrics> =
            tests.iter().map(|t| cell_metrics(&basis, &t.states, lifted)).collect();
        let mut ref_cache: RefCache = RefCache::new();

        let base_row = |method: &str, mu: &[f64]| MetricsRow {
            model: config.model.clone(),
            method: method.into(),
            mu: mu.to_vec(),
            eps_pod: Some(eps_pod),
            eps_ecsw: None,
            n_modes: Some(n_modes),
            block_modes: block_modes.clone(),
            n_samples: None,
            state_error: None,
            projection_error: None,
            rom_eval_error: None,
            online_seconds: None,
            speedup: None,
            status: RunStatus::Converged,
        };

        for method in &config.methods {
            match method.as_str() {
                "fom" => {}
                "galerkin-rom" | "lspg-rom" => {
                    let family = if method == "galerkin-rom" { 0 } else { 1 };
                    for (k, mu) in config.test_mu.iter().enumerate() {
                        let mut row = base_row(method, mu);
                        let cached = reference_states(
                            &mut ref_cache, k, family, sys, &basis, scheme, settings, mu,
                            config.n_steps,
                        );
                        match cached {
                            Ok(states) => {
                                row.state_error = Some(metrics[k].state_error(states));
                                row.projection_error = Some(metrics[k].proj_err);
                            }
                            Err(status) => row.status = status.clone(),
                        }
                        if row.status == RunStatus::Converged {
                            let mut assembler: Box<dyn ReducedSystemAssembler> = if family == 0 {
                                Box::new(galerkin_reference_assembler(sys, &basis, scheme))
                            } else {
                                Box::new(lspg_reference_assembler(sys, &basis, scheme))
                            };
                            match time_runs(
                                || run_rom_reduced(
                                    assembler.as_mut(), &basis, sys, scheme, settings, mu,
                                    config.n_steps,
                                )
                                .map(|_| ()),
                                config.repeats,
                            ) {
                                Ok((_, mean)) => {
                                    row.online_seconds = Some(mean);
                                    row.speedup = Some(fom_means[k] / mean);
                                }
                                Err(e) => row.status = status_of(&e),
                            }
                        }
                        report.rows.push(row);
                    }
                }
                "hrf-g" | "hrf-lspg" => {
                    let family: u8 = if method == "hrf-g" { 0 } else { 1 };
                    let built: Result<Box<dyn ReducedSystemAssembler>> = if family == 0 {
                        precompute_hrf_galerkin(sys, &basis)
                            .map(|ops| Box::new(hrf_galerkin_assembler(ops, scheme.clone()))
                                as Box<dyn ReducedSystemAssembler>)
                    } else {
                        precompute_hrf_lspg(sys, &basis)
                            .map(|ops| Box::new(hrf_lspg_assembler(ops, scheme.clone()))
                                as Box<dyn ReducedSystemAssembler>)
                    };
                    match built {
                        Ok(mut assembler) => {
                            for (k, mu) in config.test_mu.iter().enumerate() {
                                let mut row = base_row(method, mu);
                                let out = run_cell(
                                    assembler.as_mut(), &basis, sys, scheme, settings, mu,
                                    config.n_steps, config.repeats,
                                );
                                fill_rom_row(
                                    &mut row, &out, &metrics[k], fom_means[k], &mut ref_cache, k,
                                    family, sys, &basis, scheme, settings, mu, config.n_steps,
                                );
                                report.rows.push(row);
                            }
                        }
                        Err(e) => {
                            for mu in &config.test_mu {
                                let mut row = base_row(method, mu);
                                row.status = RunStatus::Error(e.to_string());
                                report.rows.push(row);
                            }
                        }
                    }
                }
                "ecsw-g" | "ecsw-lspg" => {
                    let family: u8 = if method == "ecsw-g" { 0 } else { 1 };
                    let projection =
                        if family == 0 { EcswProjection::Galerkin } else { EcswProjection::Lspg };
                    let trained = collect_residual_snapshots(
                        sys, training, &basis, scheme, config.ecsw_snapshots, config.seed,
                    )
                    .and_then(|snaps| {
                        let (g, b) = build_nnls_system(sys, &basis, scheme, &snaps, projection)?;
                        Ok(nnls_multi(&g, &b, &config.eps_ecsw))
                    });
                    match trained {
                        Ok(per_eps) => {
                            for (eps_ecsw, weights) in config.eps_ecsw.iter().zip(per_eps) {
                                match weights {
                                    Ok(w) => {
                                        let mut assembler = ecsw_assembler(
                                            sys, &basis, scheme, &w, projection,
                                        );
                                        for (k, mu) in config.test_mu.iter().enumerate() {
                                            let mut row = base_row(method, mu);
                                            row.eps_ecsw = Some(*eps_ecsw);
                                            row.n_samples = Some(w.n_samples());
                                            let out = run_cell(
                                                &mut assembler, &basis, sys, scheme, settings,
                                                mu, config.n_steps, config.repeats,
                                            );
                                            fill_rom_row(
                                                &mut row, &out, &metrics[k], fom_means[k],
                                                &mut ref_cache, k, family, sys, &basis, scheme,
                                                settings, mu, config.n_steps,
                                            );
                                            report.rows.push(row);
                                        }
                                    }
                                    Err(e) => {
                                        for mu in &config.test_mu {
                                            let mut row = base_row(method, mu);
                                            row.eps_ecsw = Some(*eps_ecsw);
                                            row.status = RunStatus::Error(e.to_string());
                                            report.rows.push(row);
                                        }
                                    }
                                }
                            }
                        }
                        Err(e) => {
                            for &eps_ecsw in &config.eps_ecsw {
                                for mu in &config.test_mu {
                                    let mut row = base_row(method, mu);
                                    row.eps_ecsw = Some(eps_ecsw);
                                    row.status = RunStatus::Error(e.to_string());
                                    report.rows.push(row);
                                }
                            }
                        }
                    }
                }
                other => {
                    return Err(Error::Config(format!("unknown method '{other}'")));
                }
            }
        }
    }

    Ok(report)
}

// Fills metrics, timing, and status into a hyper-reduced method's row.
#[allow(clippy::too_many_arguments)]
fn fill_rom_row(
    row: &mut MetricsRow,
    out: &CellOutcome,
    metrics: &CellMetrics,
    fom_mean: f64,
    ref_cache: &mut RefCache,
    mu_idx: usize,
    family: u8,
    sys: &PolynomialSystem,
    basis: &ReducedBasis,
    scheme: &MultistepScheme,
    settings: &NewtonSettings,
    mu: &[f64],
    n_steps: usize,
) {
    row.status = out.status.clone();
    if let Some(recon) = &out.reconstructed {
        row.state_error = Some(metrics.state_error(recon));
        row.projection_error = Some(metrics.proj_err);
        let reference = reference_states(
            ref_cache, mu_idx, family, sys, basis, scheme, settings, mu, n_steps,
        );
        if let Ok(ref_states) = reference {
            row.rom_eval_error = Some(rom_evaluation_error(ref_states, recon));
        }
    }
    if let Some(mean) = out.online_seconds {
        row.online_seconds = Some(mean);
        row.speedup = Some(fom_mean / mean);
    }
}
