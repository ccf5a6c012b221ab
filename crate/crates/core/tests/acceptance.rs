//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any criterion fails.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lenslab::config::RunConfig;
use lenslab::field::DirichletField;
use lenslab::geodesic::{jacobi_first_conjugate, shoot, ShootParams};
use lenslab::jet::recover_jet;
use lenslab::lens::{angle_diff, generate_dataset, lift, BallPoint, LensGrid, RecordStatus};
use lenslab::metric::MetricChart;
use lenslab::ray::{
    assemble, bump_spanning_set, potential_basis, reconstruct, sinjectivity_spectrum, solenoidal_basis, trace_family, xray,
    Aperture, AssembleParams, PathFamily, PotentialField, ReconstructParams,
};
use lenslab::rigidity::{lens_gauge_invariance, linearization_split, xray_gauge_remainder};
use lenslab::tensor::{Decomposer, SymTensorField, TensorGrid, VectorFieldGrid};
use lenslab::{Point, Result};

/// Relative reconstruction error of criterion 7, frozen after the first
/// verified run.
const FROZEN_RECONSTRUCTION_ERROR: f64 = 2.677918190e-2;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn c1(euclidean_lens: &RunConfig) -> Result<Outcome> {
    let ds = generate_dataset(&euclidean_lens.chart()?, &LensGrid::full(32, 32), &euclidean_lens.dataset_params())?;
    let (mut el, mut eb): (f64, f64) = (0.0, 0.0);
    let mut exited = 0;
    for r in &ds.records {
        let mu = r.input.mu;
        el = el.max((r.length - 2.0 * (1.0 - mu * mu).sqrt()).abs());
        if r.status == RecordStatus::Exited {
            exited += 1;
            let s_out = r.input.s + PI - 2.0 * mu.asin();
            eb = eb.max(angle_diff(r.output.s, s_out).abs()).max((r.output.mu - mu).abs());
        }
    }
    outcome(
        el <= 1e-6 && eb <= 1e-6 && exited == ds.records.len(),
        format!("max |l - 2 sqrt(1-mu^2)| = {el:.2e}, max label error = {eb:.2e}, {exited}/{} exited", ds.records.len()),
    )
}

fn c2() -> Result<Outcome> {
    let chart = MetricChart::sphere();
    let path = shoot(&chart, lift(&chart, &BallPoint::new(0.0, 0.0))?, &ShootParams::default())?;
    let conj = jacobi_first_conjugate(&chart, &path)?;
    let el = (path.length - PI).abs();
    let ec = conj.map_or(f64::INFINITY, |t| (t - PI).abs());
    outcome(el <= 1e-5 && ec <= 1e-4, format!("|l - pi| = {el:.2e}, |t_conj - pi| = {ec:.2e}"))
}

fn c3(cfg: &RunConfig) -> Result<Outcome> {
    let chart = MetricChart::euclidean();
    let params = cfg.jet_params();
    let (mut e0, mut e1): (f64, f64) = (0.0, 0.0);
    for k in 0..8 {
        let x0 = 0.1 + TAU * k as f64 / 8.0;
        let jet = recover_jet(&chart, x0, &params)?;
        e0 = e0.max((jet.g11 - 1.0).abs());
        e1 = e1.max((jet.dn_g11 + 2.0).abs());
    }
    outcome(e0 <= 1e-4 && e1 <= 1e-2, format!("8 anchors: max |g11 - 1| = {e0:.2e}, max |dn g11 + 2| = {e1:.2e}"))
}

/// Normalizes by the sup over the disc of `|v| + |Dv|`.
fn normalized(v: DirichletField) -> DirichletField {
    let n = 41;
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = Point::new(-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64);
            if p.norm() <= 1.0 {
                m = m.max(v.value(p).norm() + v.jacobian(p).norm());
            }
        }
    }
    v.scaled(1.0 / m)
}

fn c4(cfg: &RunConfig) -> Result<Outcome> {
    let chart = MetricChart::euclidean();
    let family = PathFamily::Boundary { grid: LensGrid::full(16, 16), jitter: cfg.integrator.jitter, seed: cfg.integrator.seed };
    let paths = trace_family(&chart, &family, &AssembleParams { shoot: cfg.shoot_params(), aperture: Aperture::full() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let pf = PotentialField { chart: &chart, field: normalized(DirichletField::random(&mut rng, 1, 3)) };
        for p in &paths {
            worst = worst.max(xray(&pf, &p.path)?.abs());
        }
    }
    outcome(paths.len() == 256 && worst <= 1e-6, format!("{} paths x 5 fields: max |I(dv)| = {worst:.2e}", paths.len()))
}

fn saint_venant(p: &Point) -> Matrix2<f64> {
    let h = (-p.x * p.x - 2.0 * p.y * p.y).exp();
    let hxx = (4.0 * p.x * p.x - 2.0) * h;
    let hyy = (16.0 * p.y * p.y - 4.0) * h;
    let hxy = 8.0 * p.x * p.y * h;
    Matrix2::new(hyy, -hxy, -hxy, hxx)
}

fn c5() -> Result<Outcome> {
    let chart = MetricChart::euclidean();
    let grid = TensorGrid::with_size(65)?;
    let dec = Decomposer::new(&chart, grid)?;

    let mut pot_ratio: f64 = 0.0;
    let inputs: [fn(&Point) -> Vector2<f64>; 2] = [
        |p| Vector2::new(1.0 - p.norm_squared(), 0.0),
        |p| {
            let b = 1.0 - p.norm_squared();
            Vector2::new(b * p.y * (1.0 + p.x), b * b * (0.5 - p.x * p.y))
        },
    ];
    for v0 in inputs {
        let v = VectorFieldGrid::from_fn(grid, true, v0);
        let f = dec.d_apply(&dec.restrict_vector(&v));
        let (fs, _, _) = dec.decompose_dofs(&f)?;
        pot_ratio = pot_ratio.max(dec.norm(&fs) / dec.norm(&f));
    }

    let sv = dec.restrict(&SymTensorField::from_fn(grid, saint_venant));
    let (_, v_sv, _) = dec.decompose_dofs(&sv)?;
    let sv_ratio = dec.vector_norm(&v_sv) / dec.norm(&sv);

    let smooth = dec.restrict(&SymTensorField::from_fn(grid, |p| {
        let b = (-3.0 * ((p.x - 0.2).powi(2) + (p.y + 0.1).powi(2))).exp();
        Matrix2::new(1.0 + p.x * b, 0.4 * b + p.y, 0.4 * b + p.y, 1.0 - p.x * p.y)
    }));
    let (fs, v, _) = dec.decompose_dofs(&smooth)?;
    let dv = dec.d_apply(&v);
    let diff: Vec<f64> = fs.iter().zip(&dv).zip(&smooth).map(|((a, b), f)| a + b - f).collect();
    let reassembly = dec.norm(&diff) / dec.norm(&smooth);
    let orth = dec.inner(&fs, &dv).abs() / dec.inner(&smooth, &smooth);

    outcome(
        pot_ratio <= 1e-3 && sv_ratio <= 1e-3 && reassembly <= 1e-8 && orth <= 1e-6,
        format!(
            "N=65: |f^s|/|f| = {pot_ratio:.2e}, saint-venant |v|/|f| = {sv_ratio:.2e}, reassembly {reassembly:.2e}, <f^s,dv>/|f|^2 = {orth:.2e}"
        ),
    )
}

struct SpectrumRun {
    sigma_min: f64,
    potential_max: f64,
    c_hat: f64,
    rows: usize,
}

fn spectrum(cfg: &RunConfig, n: usize) -> Result<SpectrumRun> {
    let chart = cfg.chart()?;
    let grid = TensorGrid::with_size(n)?;
    let dec = Decomposer::new(&chart, grid)?;
    let r = &cfg.ray;
    let basis = solenoidal_basis(&dec, &bump_spanning_set(grid, r.bump_spacing, r.bump_radius, r.bump_max_center))?;
    let pot = potential_basis(&dec, r.potential_degree)?;
    let sys = assemble(&chart, &cfg.path_family(), grid, &cfg.assemble_params()?)?;
    let rep = sinjectivity_spectrum(&sys, &dec, &basis, Some(&pot))?;
    Ok(SpectrumRun {
        sigma_min: rep.sigma_min,
        potential_max: rep.potential_sigma_max.unwrap_or(f64::NAN),
        c_hat: rep.c_hat,
        rows: sys.rows(),
    })
}

fn c6(cfg: &RunConfig) -> Result<Outcome> {
    let full = spectrum(cfg, 17)?;
    let mut band_cfg = cfg.clone();
    band_cfg.apply_overrides(&["ray.aperture=band"])?;
    let band = spectrum(&band_cfg, 17)?;
    let sep = full.sigma_min / full.potential_max;
    let drop = full.sigma_min / band.sigma_min;
    outcome(
        sep > 10.0 && drop >= 10.0 && full.rows <= 2000 && band.rows <= 2000,
        format!(
            "N=17, {} paths: sigma_min {:.3e} / potential sigma_max {:.3e} = {sep:.1}; band ({} paths) sigma_min {:.3e}, drop {drop:.1}x",
            full.rows, full.sigma_min, full.potential_max, band.rows, band.sigma_min
        ),
    )
}

fn c7(cfg: &RunConfig) -> Result<Outcome> {
    let chart = cfg.chart()?;
    let grid = TensorGrid::with_size(25)?;
    let dec = Decomposer::new(&chart, grid)?;
    let sys = assemble(&chart, &cfg.path_family(), grid, &cfg.assemble_params()?)?;
    let mixed = SymTensorField::from_fn(grid, |x| {
        let b = (-4.0 * (x - Vector2::new(0.2, -0.1)).norm_squared()).exp();
        Matrix2::new(1.0 + x.x * b, 0.5 * b, 0.5 * b, 1.0 - x.y * x.y)
    });
    let f0 = dec.decompose(&mixed)?.solenoidal;
    let data = sys.apply(&f0)?;
    let params = ReconstructParams { lambda_factor: 1e-8, tol: 1e-8, max_iter: 100_000, ..cfg.reconstruct_params() };
    let rec = reconstruct(&sys, &dec, &data, &params)?;
    let err = dec.norm(&dec.restrict(&rec.solenoidal.axpy(-1.0, &f0)?)) / dec.norm(&dec.restrict(&f0));
    let pinned = (err - FROZEN_RECONSTRUCTION_ERROR).abs() <= 1e-6 * FROZEN_RECONSTRUCTION_ERROR;
    outcome(
        err <= 0.05 && pinned,
        format!("N=25, {} paths, lambda {:.2e}: relative L2 error {err:.9e} (frozen {FROZEN_RECONSTRUCTION_ERROR:.9e})", sys.rows(), rec.lambda),
    )
}

fn c8(cfg: &RunConfig) -> Result<Outcome> {
    let chart = cfg.chart()?;
    let psi = cfg.diffeo()?;
    let e = &cfg.experiment;
    let split = linearization_split(&chart, &psi, &e.linear_ladder, cfg.tensor_grid()?)?;
    let paths = trace_family(&chart, &cfg.path_family(), &AssembleParams { shoot: cfg.shoot_params(), aperture: Aperture::full() })?;
    let gauge = xray_gauge_remainder(&chart, &paths, &psi, &e.gauge_ladder)?;
    let ok = |s: f64| (1.8..=2.2).contains(&s);
    outcome(
        ok(split.slope) && ok(gauge.slope),
        format!("linearization slope {:.4}, ray transform remainder slope {:.4}", split.slope, gauge.slope),
    )
}

fn c9(cfg: &RunConfig) -> Result<Outcome> {
    let psi = cfg.diffeo()?;
    let rep = lens_gauge_invariance(&cfg.chart()?, &psi, &cfg.lens_grid(), &cfg.dataset_params())?;
    outcome(
        rep.max_diff() <= 1e-5 && rep.compared == rep.records,
        format!("eps {}: {}/{} records compared, max diff {:.2e}", cfg.experiment.eps, rep.compared, rep.records, rep.max_diff()),
    )
}

fn c10(cfg: &RunConfig) -> Result<Outcome> {
    let a = spectrum(cfg, 17)?;
    let b = spectrum(cfg, 25)?;
    let ratio = a.c_hat.max(b.c_hat) / a.c_hat.min(b.c_hat);
    outcome(ratio < 2.0, format!("C_hat(17) = {:.4}, C_hat(25) = {:.4}, ratio {ratio:.3}", a.c_hat, b.c_hat))
}

fn main() -> ExitCode {
    let cfg = RunConfig::default();
    assert_eq!(cfg.experiment.eps, 0.05);
    type Criterion<'a> = (&'a str, Duration, Box<dyn Fn() -> Result<Outcome> + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("euclidean lens oracle", Duration::from_secs(5), Box::new(|| c1(&cfg))),
        ("sphere diameter and conjugate time", Duration::from_secs(1), Box::new(c2)),
        ("boundary jet, euclidean disc", Duration::from_secs(30), Box::new(|| c3(&cfg))),
        ("gauge invariance of I", Duration::from_secs(10), Box::new(|| c4(&cfg))),
        ("solenoidal decomposition", Duration::from_secs(60), Box::new(c5)),
        ("s-injectivity spectrum", Duration::from_secs(120), Box::new(|| c6(&cfg))),
        ("closed-loop reconstruction", Duration::from_secs(120), Box::new(|| c7(&cfg))),
        ("quadratic remainder slopes", Duration::from_secs(120), Box::new(|| c8(&cfg))),
        ("lens gauge invariance", Duration::from_secs(60), Box::new(|| c9(&cfg))),
        ("stability surrogate boundedness", Duration::from_secs(180), Box::new(|| c10(&cfg))),
    ];
    let mut failed = 0;
    for (k, (name, limit, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = run();
        let elapsed = t.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed < *limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {detail} [{:.2} s, limit {} s]",
            if passed { "PASS" } else { "FAIL" },
            k + 1,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
