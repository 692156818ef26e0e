//! Command-line driver: full-order runs, offline training artifacts, single
//! reduced runs, and benchmark sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polyrom::bench::{
    builtin_configs, emit_results, prepare_training, run_experiment, summarize, BasisFactory,
    ExperimentConfig, MetricsReport,
};
use polyrom::ecsw::{build_nnls_system, collect_residual_snapshots, nnls_multi, EcswProjection};
use polyrom::error::{Error, Result};
use polyrom::fomsolve::integrate_fom;
use polyrom::hrf::{precompute_hrf_galerkin, precompute_hrf_lspg, save_hrf_galerkin, save_hrf_lspg};

#[derive(Parser)]
#[command(
    name = "polyrom",
    version,
    about = "Projection-based model reduction of polynomial dynamical systems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigOpts {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "model")]
    config: Option<PathBuf>,
    /// Built-in experiment (burgers-study, heat-study) or model name
    /// (burgers, heat-cubic, heat-lifted).
    #[arg(long)]
    model: Option<String>,
    /// Override basis tolerances, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps_pod: Vec<f64>,
    /// Override weight-fit tolerances, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps_ecsw: Vec<f64>,
    /// Override the method list, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override timing repeats.
    #[arg(long)]
    repeats: Option<usize>,
    /// Override the online step count.
    #[arg(long)]
    n_steps: Option<usize>,
    /// Override the interior grid size.
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the full-order model over all training and test parameters
    /// and save the trajectories.
    Fom {
        #[command(flatten)]
        opts: ConfigOpts,
        /// Output directory.
        #[arg(long, default_value = "artifacts")]
        out: PathBuf,
    },
    /// Build offline artifacts: bases, reduced operator tensors, and sampled
    /// weights for the configured methods.
    Train {
        #[command(flatten)]
        opts: ConfigOpts,
        /// Output directory.
        #[arg(long, default_value = "artifacts")]
        out: PathBuf,
    },
    /// Run one reduced method at one parameter and report its metrics.
    Rom {
        #[command(flatten)]
        opts: ConfigOpts,
        /// Reduced method name (galerkin-rom, lspg-rom, hrf-g, hrf-lspg,
        /// ecsw-g, ecsw-lspg).
        #[arg(long)]
        method: String,
        /// Test parameter components, comma separated; defaults to the first
        /// configured test point.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu: Vec<f64>,
        /// Output directory for the single-run report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep all configured methods over the tolerance grid and write CSV
    /// reports; exits nonzero if any cell errored.
    Bench {
        #[command(flatten)]
        opts: ConfigOpts,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

fn resolve_configs(opts: &ConfigOpts) -> Result<Vec<ExperimentConfig>> {
    let mut configs = if let Some(path) = &opts.config {
        vec![ExperimentConfig::load(path)?]
    } else if let Some(name) = &opts.model {
        match builtin_configs(name) {
            Some(cfgs) => cfgs,
            None => match name.as_str() {
                "burgers" => builtin_configs("burgers-study").unwrap(),
                "heat-cubic" | "heat-lifted" => builtin_configs("heat-study")
                    .unwrap()
                    .into_iter()
                    .filter(|c| &c.model == name)
                    .collect(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown experiment or model '{other}'"
                    )))
                }
            },
        }
    } else {
        return Err(Error::Config("provide --config <file> or --model <name>".into()));
    };

    for cfg in &mut configs {
        if !opts.eps_pod.is_empty() {
            cfg.eps_pod = opts.eps_pod.clone();
        }
        if !opts.eps_ecsw.is_empty() {
            cfg.eps_ecsw = opts.eps_ecsw.clone();
        }
        if !opts.methods.is_empty() {
            cfg.methods = opts.methods.clone();
        }
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        if let Some(repeats) = opts.repeats {
            cfg.repeats = repeats;
        }
        if let Some(n_steps) = opts.n_steps {
            cfg.n_steps = n_steps;
        }
        if let Some(gp) = opts.grid_points {
            cfg.grid_points = gp;
        }
        cfg.validate()?;
    }
    Ok(configs)
}

fn eps_tag(eps: f64) -> String {
    format!("{eps:e}").replace('.', "p")
}

fn cmd_fom(opts: &ConfigOpts, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for cfg in resolve_configs(opts)? {
        let setup = prepare_training(&cfg)?;
        for (i, t) in setup.training.iter().enumerate() {
            let stem = format!("{}_train_{i:03}", cfg.model);
            t.save(out, &stem)?;
            println!("fom {} training mu={:?} -> {}/{stem}.bin", cfg.model, t.mu, out.display());
        }
        for (i, mu) in cfg.test_mu.iter().enumerate() {
            let mut t =
                integrate_fom(setup.physical(), &setup.scheme, &setup.settings, mu, cfg.n_steps)?;
            t.model = cfg.model.clone();
            let stem = format!("{}_test_{i:03}", cfg.model);
            t.save(out, &stem)?;
            println!("fom {} test mu={mu:?} -> {}/{stem}.bin", cfg.model, out.display());
        }
    }
    Ok(())
}

fn cmd_train(opts: &ConfigOpts, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for cfg in resolve_configs(opts)? {
        let setup = prepare_training(&cfg)?;
        let factory = BasisFactory::new(&setup)?;
        let wants = |m: &str| cfg.methods.iter().any(|x| x == m);
        for &eps_pod in &cfg.eps_pod {
            let basis = factory.basis(eps_pod)?;
            let tag = eps_tag(eps_pod);
            let basis_stem = format!("{}_basis_{tag}", cfg.model);
            basis.save(out, &basis_stem)?;
            println!(
                "train {} eps_pod={eps_pod:e}: basis n={} -> {}/{basis_stem}.bin",
                cfg.model,
                basis.dim_reduced(),
                out.display()
            );

            if wants("hrf-g") {
                let ops = precompute_hrf_galerkin(&setup.sys, &basis)?;
                let stem = format!("{}_hrfg_{tag}", cfg.model);
                save_hrf_galerkin(&ops, out, &stem)?;
                println!("train {}: tensors -> {}/{stem}.manifest.toml", cfg.model, out.display());
            }
            if wants("hrf-lspg") {
                let ops = precompute_hrf_lspg(&setup.sys, &basis)?;
                let stem = format!("{}_hrflspg_{tag}", cfg.model);
                save_hrf_lspg(&ops, out, &stem)?;
                println!("train {}: tensors -> {}/{stem}.manifest.toml", cfg.model, out.display());
            }

            if (wants("ecsw-g") || wants("ecsw-lspg")) && !cfg.eps_ecsw.is_empty() {
                let snaps = collect_residual_snapshots(
                    &setup.sys,
                    &setup.training,
                    &basis,
                    &setup.scheme,
                    cfg.ecsw_snapshots,
                    cfg.seed,
                )?;
                for (name, projection) in [
                    ("ecsw-g", EcswProjection::Galerkin),
                    ("ecsw-lspg", EcswProjection::Lspg),
                ] {
                    if !wants(name) {
                        continue;
                    }
                    let (g, b) =
                        build_nnls_system(&setup.sys, &basis, &setup.scheme, &snaps, projection)?;
                    for (eps_ecsw, trained) in
                        cfg.eps_ecsw.iter().zip(nnls_multi(&g, &b, &cfg.eps_ecsw))
                    {
                        match trained {
                            Ok(w) => {
                                let path = out.join(format!(
                                    "{}_{}_{tag}_{}.txt",
                                    cfg.model,
                                    name.replace('-', ""),
                                    eps_tag(*eps_ecsw)
                                ));
                                w.save(&path)?;
                                println!(
                                    "train {} {name} eps_ecsw={eps_ecsw:e}: {} samples -> {}",
                                    cfg.model,
                                    w.n_samples(),
                                    path.display()
                                );
                            }
                            Err(e) => println!(
                                "train {} {name} eps_ecsw={eps_ecsw:e}: not reached ({e})",
                                cfg.model
                            ),
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn cmd_rom(opts: &ConfigOpts, method: &str, mu: &[f64], out: Option<&PathBuf>) -> Result<ExitCode> {
    let mut configs = resolve_configs(opts)?;
    let mut cfg = configs.remove(0);
    cfg.methods = vec![method.to_string()];
    if !mu.is_empty() {
        cfg.test_mu = vec![mu.to_vec()];
    } else {
        cfg.test_mu.truncate(1);
    }
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    print!("{}", report.to_csv());
    if let Some(dir) = out {
        emit_results(&report, dir)?;
    }
    Ok(if report.any_errors() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cmd_bench(opts: &ConfigOpts, out: &Path) -> Result<ExitCode> {
    let mut report = MetricsReport::default();
    for cfg in resolve_configs(opts)? {
        eprintln!(
            "bench: {} ({} methods x {} eps_pod x {} test mu)",
            cfg.model,
            cfg.methods.len(),
            cfg.eps_pod.len(),
            cfg.test_mu.len()
        );
        report.extend(run_experiment(&cfg)?);
    }
    emit_results(&report, out)?;
    print!("{}", summarize(&report));
    println!("report: {}", out.join("report.csv").display());
    Ok(if report.any_errors() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Fom { opts, out } => {
            cmd_fom(opts, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train { opts, out } => {
            cmd_train(opts, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Rom { opts, method, mu, out } => cmd_rom(opts, method, mu, out.as_ref()),
        Cmd::Bench { opts, out } => cmd_bench(opts, out),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
