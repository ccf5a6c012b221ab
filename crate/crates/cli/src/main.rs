//! `lenslab`: lens data, jets and linearized tensor tomography from the command line.
//!
//! Exit codes: 0 success, 1 `verify` found a violation, 2 invalid
//! configuration or input, 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use lenslab::config::RunConfig;
use lenslab::geodesic::{jacobi_field, shoot, write_path_csv};
use lenslab::jet::recover_jet;
use lenslab::lens::{audit_completeness, generate_dataset, lift, BallPoint, LensDataset};
use lenslab::ray::{
    assemble, bump_spanning_set, potential_basis, read_row_values, reconstruct, sinjectivity_spectrum,
    solenoidal_basis, trace_family, write_row_values, Aperture, AssembleParams, ForwardSystem,
};
use lenslab::rigidity::{lens_gauge_invariance, linearization_split, pullback_metric, taylor_check, xray_gauge_remainder};
use lenslab::tensor::{edge_divergence, Decomposer, SymTensorField};
use lenslab::verify::verify;
use lenslab::Error;

#[derive(Parser)]
#[command(name = "lenslab", version, about = "Lens data, boundary jets and linearized tensor tomography on Riemannian discs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`section.key = value` lines). Defaults apply when omitted.
    #[arg(short = 'c', long = "config", global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Lens data generation and inspection.
    #[command(subcommand)]
    Lens(LensCommand),
    /// Recover g_11 and its normal derivative at a boundary point.
    Jet {
        /// Boundary angle of the anchor.
        #[arg(long, allow_negative_numbers = true)]
        x0: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Symmetric tensor fields and the ray transform.
    #[command(subcommand)]
    Tensor(TensorCommand),
    /// Singular values of the ray transform on the solenoidal subspace.
    Spectrum {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        system: SystemArgs,
    },
    /// Gauge, linearization and energy experiments.
    Rigidity {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plot-ready CSV of the slope ladders.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run every module's invariant checks.
    Verify {
        /// Check this dataset instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Full JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LensCommand {
    /// Generate a lens dataset on the configured (s, mu) grid.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Completeness audit of a dataset.
    Audit {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace one geodesic and write its samples with the Jacobi field.
    Path {
        #[arg(long, allow_negative_numbers = true)]
        s: f64,
        #[arg(long, allow_negative_numbers = true)]
        mu: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TensorCommand {
    /// Split a tensor field into solenoidal and potential parts.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_fs: PathBuf,
        #[arg(long)]
        out_v: PathBuf,
    },
    /// Ray transform of a tensor field along the configured paths.
    Xray {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        system: SystemArgs,
    },
    /// Regularized reconstruction of the solenoidal part from ray data.
    Invert {
        /// Row data as written by `tensor xray`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tikhonov parameter; defaults to `solver.lambda_factor * sigma_max^2`.
        #[arg(long)]
        lambda: Option<f64>,
        /// Noise level: lower lambda until the residual meets `solver.tau` times it.
        #[arg(long)]
        discrepancy: Option<f64>,
        #[command(flatten)]
        system: SystemArgs,
    },
}

#[derive(Args)]
struct SystemArgs {
    /// Load the forward system from an LLFS1 file instead of assembling it.
    #[arg(long)]
    system: Option<PathBuf>,
    /// Save the forward system as LLFS1.
    #[arg(long)]
    save_system: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lenslab: {e:#}");
            let input = e.chain().any(|c| {
                c.downcast_ref::<Error>().is_some_and(|e| matches!(e, Error::Config { .. } | Error::Io(_) | Error::Format(_)))
                    || c.downcast_ref::<std::io::Error>().is_some()
            });
            ExitCode::from(if input { 2 } else { 3 })
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("LENSLAB_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| config_error("LENSLAB_THREADS", format!("expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    Ok(())
}

fn load_config(common: &Common, extra: &[String]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides: Vec<&String> = common.set.iter().chain(extra).collect();
    cfg.apply_overrides(&overrides)?;
    Ok(cfg)
}

fn write_json(out: Option<&Path>, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn tag(cfg: &RunConfig) -> String {
    format!("lenslab config={}", cfg.fingerprint())
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    let mut extra = Vec::new();
    if let Command::Tensor(TensorCommand::Invert { lambda, discrepancy, .. }) = &cli.command {
        if let Some(l) = lambda {
            extra.push(format!("solver.lambda={l:?}"));
        }
        if let Some(d) = discrepancy {
            extra.push(format!("solver.discrepancy={d:?}"));
        }
    }
    let cfg = load_config(&cli.common, &extra)?;
    let chart = cfg.chart()?;
    let fp = cfg.fingerprint();
    let base = || json!({ "config_fingerprint": fp, "chart_fingerprint": chart.fingerprint() });

    match cli.command {
        Command::Lens(LensCommand::Gen { out }) => {
            let mut ds = generate_dataset(&chart, &cfg.lens_grid(), &cfg.dataset_params())?;
            ds.config_fingerprint = Some(fp.clone());
            ds.write_csv(&out)?;
        }
        Command::Lens(LensCommand::Audit { dataset, out }) => {
            let ds = match dataset {
                Some(p) => LensDataset::read_csv(&p)?,
                None => generate_dataset(&chart, &cfg.lens_grid(), &cfg.dataset_params())?,
            };
            let report = audit_completeness(&chart, &ds, &cfg.audit_grid(), &cfg.shoot_params())?;
            let mut v = base();
            v["coverage"] = serde_json::to_value(&report)?;
            write_json(out.as_deref(), &v)?;
        }
        Command::Lens(LensCommand::Path { s, mu, out }) => {
            let path = shoot(&chart, lift(&chart, &BallPoint::new(s, mu))?, &cfg.shoot_params())?;
            let trace = if chart.smoothness() >= 3 { Some(jacobi_field(&chart, &path)?) } else { None };
            let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            writeln!(f, "# {}", tag(&cfg))?;
            write_path_csv(&mut f, &path, trace.as_ref())?;
            f.flush()?;
        }
        Command::Jet { x0, out } => {
            let jet = recover_jet(&chart, x0, &cfg.jet_params())?;
            let (g11, dn) = chart.boundary_normal_jet(x0)?;
            let mut v = base();
            v["jet"] = serde_json::to_value(&jet)?;
            v["chart_jet"] = json!({ "g11": g11, "dn_g11": dn });
            write_json(out.as_deref(), &v)?;
        }
        Command::Tensor(TensorCommand::Decompose { input, out_fs, out_v }) => {
            let f = SymTensorField::read_csv(&input)?;
            let mut dec = Decomposer::new(&chart, f.grid)?;
            dec.tol = cfg.solver.cg_tol;
            dec.max_iter = cfg.solver.max_iter;
            let d = dec.decompose(&f)?;
            d.solenoidal.write_csv_with_comment(&out_fs, Some(&tag(&cfg)))?;
            d.v.write_csv_with_comment(&out_v, Some(&tag(&cfg)))?;
            let x = dec.restrict(&f);
            let mut v = base();
            v["decomposition"] = json!({
                "grid_n": f.grid.n(),
                "cg_iterations": d.cg.iterations,
                "cg_relative_residual": d.cg.relative_residual,
                "norm_f": dec.norm(&x),
                "norm_fs": dec.norm(&dec.restrict(&d.solenoidal)),
                "norm_dv": dec.norm(&dec.restrict(&d.potential)),
                "solenoidal_divergence": edge_divergence(&chart, &d.solenoidal)?,
            });
            write_json(None, &v)?;
        }
        Command::Tensor(TensorCommand::Xray { input, out, system }) => {
            let f = SymTensorField::read_csv(&input)?;
            let sys = forward_system(&cfg, &chart, &system, Some(f.grid))?;
            let data = sys.apply(&f)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
            write_row_values(&mut w, &sys, &data, Some(&tag(&cfg)))?;
            w.flush()?;
        }
        Command::Tensor(TensorCommand::Invert { data, out, system, .. }) => {
            let values = read_row_values(&data)?;
            let sys = forward_system(&cfg, &chart, &system, None)?;
            if values.len() != sys.rows() {
                return Err(config_error("--data", format!("{} values for a system with {} rows", values.len(), sys.rows())).into());
            }
            let mut dec = Decomposer::new(&chart, sys.grid)?;
            dec.tol = cfg.solver.cg_tol;
            dec.max_iter = cfg.solver.max_iter;
            let rec = reconstruct(&sys, &dec, &values, &cfg.reconstruct_params())?;
            rec.solenoidal.write_csv_with_comment(&out, Some(&tag(&cfg)))?;
            let mut v = base();
            v["reconstruction"] = json!({
                "rows": sys.rows(),
                "lambda": rec.lambda,
                "sigma_max": rec.sigma_max,
                "relative_residual": rec.relative_residual,
                "cg_iterations": rec.cg.iterations,
                "cg_relative_residual": rec.cg.relative_residual,
            });
            write_json(None, &v)?;
        }
        Command::Spectrum { out, system } => {
            let grid = cfg.tensor_grid()?;
            let sys = forward_system(&cfg, &chart, &system, Some(grid))?;
            let mut dec = Decomposer::new(&chart, grid)?;
            dec.tol = cfg.solver.cg_tol;
            dec.max_iter = cfg.solver.max_iter;
            let r = &cfg.ray;
            let basis = solenoidal_basis(&dec, &bump_spanning_set(grid, r.bump_spacing, r.bump_radius, r.bump_max_center))?;
            let pot = potential_basis(&dec, r.potential_degree)?;
            let report = sinjectivity_spectrum(&sys, &dec, &basis, Some(&pot))?;
            let mut v = base();
            v["spectrum"] = serde_json::to_value(&report)?;
            write_json(out.as_deref(), &v)?;
        }
        Command::Rigidity { out, plot } => {
            let e = &cfg.experiment;
            let psi = cfg.diffeo()?;
            let split = linearization_split(&chart, &psi, &e.linear_ladder, cfg.tensor_grid()?)?;
            let full = AssembleParams { shoot: cfg.shoot_params(), aperture: Aperture::full() };
            let paths = trace_family(&chart, &cfg.path_family(), &full)?;
            let gauge = xray_gauge_remainder(&chart, &paths, &psi, &e.gauge_ladder)?;
            let lens = lens_gauge_invariance(&chart, &psi, &cfg.lens_grid(), &cfg.dataset_params())?;
            let ghat = pullback_metric(&chart, &psi)?;
            let taylor = taylor_check(&chart, &ghat, &BallPoint::new(e.taylor_s, e.taylor_mu), &cfg.shoot_params(), e.n_tau)?;
            if let Some(p) = plot {
                let mut w = std::io::BufWriter::new(std::fs::File::create(&p)?);
                writeln!(w, "# {}", tag(&cfg))?;
                writeln!(w, "series,eps,remainder,linear")?;
                for (name, rep) in [("linearization", &split), ("xray", &gauge)] {
                    for row in &rep.rows {
                        writeln!(w, "{name},{:?},{:?},{:?}", row.eps, row.value, row.linear)?;
                    }
                }
                w.flush()?;
            }
            let mut v = base();
            v["eps"] = json!(e.eps);
            v["paths"] = json!(paths.len());
            v["linearization"] = serde_json::to_value(&split)?;
            v["xray_gauge"] = serde_json::to_value(&gauge)?;
            v["lens_invariance"] = serde_json::to_value(&lens)?;
            v["taylor"] = serde_json::to_value(&taylor)?;
            write_json(out.as_deref(), &v)?;
        }
        Command::Verify { dataset, out } => {
            let ds = dataset.map(|p| LensDataset::read_csv(&p)).transpose()?;
            let report = verify(&cfg, ds.as_ref())?;
            let mut stdout = std::io::stdout().lock();
            for c in &report.checks {
                let value = c.value.map_or_else(|| "error".to_string(), |v| format!("{v:.3e}"));
                writeln!(stdout, "{} {:<9} {} = {}", if c.passed { "PASS" } else { "FAIL" }, c.module, c.name, value)?;
                if let Some(err) = &c.error {
                    writeln!(stdout, "     {err}")?;
                }
            }
            for s in &report.skipped {
                writeln!(stdout, "SKIP {:<9} {} ({})", s.module, s.name, s.reason)?;
            }
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            writeln!(stdout, "{} checks, {} failed", report.checks.len(), failed)?;
            if let Some(p) = out {
                write_json(Some(&p), &serde_json::to_value(&report)?)?;
            }
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Loads or assembles the forward system for this configuration.
fn forward_system(
    cfg: &RunConfig,
    chart: &lenslab::metric::MetricChart,
    args: &SystemArgs,
    grid: Option<lenslab::tensor::TensorGrid>,
) -> Result<ForwardSystem> {
    let grid = match grid {
        Some(g) => g,
        None => cfg.tensor_grid()?,
    };
    let sys = match &args.system {
        Some(p) => {
            let sys = ForwardSystem::read(p)?;
            let expected = cfg.system_fingerprint();
            if sys.fingerprint != expected {
                return Err(config_error(
                    "--system",
                    format!("system fingerprint {} does not match the configuration ({expected})", sys.fingerprint),
                )
                .into());
            }
            sys.grid.same_as(&grid).map_err(|e| config_error("--system", e.to_string()))?;
            sys
        }
        None => {
            let mut sys = assemble(chart, &cfg.path_family(), grid, &cfg.assemble_params()?)?;
            sys.fingerprint = cfg.system_fingerprint();
            sys
        }
    };
    if let Some(p) = &args.save_system {
        sys.write(p)?;
    }
    Ok(sys)
}
