//! Aggregate invariant suite behind `lenslab verify`.
//!
//! Every check records the measured value next to its bound. A numerical
//! error inside a check fails that check and does not stop the suite.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::field::DirichletField;
use crate::geodesic::{shoot, PathStatus, ShootParams};
use crate::jet::recover_jet;
use crate::lens::{
    angle_diff, audit_completeness, generate_dataset, lift, project, scatter, time_reversal_check, BallPoint,
    LensDataset, RecordStatus,
};
use crate::metric::{Family, MetricChart};
use crate::ray::{
    assemble, bump_spanning_set, metric_samples, sinjectivity_spectrum, solenoidal_basis, trace_family, xray, Aperture,
    AssembleParams, PotentialField,
};
use crate::rigidity::{lens_gauge_invariance, linearization_split, pullback_metric, taylor_check, xray_gauge_remainder};
use crate::tensor::{divergence, vector_inner, Decomposer, SymTensorField, VectorFieldGrid};
use crate::{Point, Result};

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    AtMost { limit: f64 },
    AtLeast { limit: f64 },
    Within { lo: f64, hi: f64 },
}

impl Bound {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost { limit } => v <= limit,
            Bound::AtLeast { limit } => v >= limit,
            Bound::Within { lo, hi } => v >= lo && v <= hi,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub value: Option<f64>,
    pub bound: Bound,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Skipped {
    pub module: &'static str,
    pub name: &'static str,
    pub reason: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub config_fingerprint: String,
    pub chart_fingerprint: String,
    pub checks: Vec<Check>,
    pub skipped: Vec<Skipped>,
    pub passed: bool,
    /// Wall time per module, seconds. Not part of the deterministic output.
    #[serde(skip)]
    pub timings: Vec<(&'static str, f64)>,
}

struct Suite {
    checks: Vec<Check>,
    skipped: Vec<Skipped>,
}

impl Suite {
    fn record(&mut self, module: &'static str, name: &'static str, bound: Bound, value: Result<f64>) {
        let check = match value {
            Ok(v) => Check { module, name, value: Some(v), bound, passed: bound.holds(v), error: None },
            Err(e) => Check { module, name, value: None, bound, passed: false, error: Some(e.to_string()) },
        };
        self.checks.push(check);
    }

    fn skip(&mut self, module: &'static str, name: &'static str, reason: &'static str) {
        self.skipped.push(Skipped { module, name, reason });
    }
}

fn at_most(limit: f64) -> Bound {
    Bound::AtMost { limit }
}

fn is_tabulated(chart: &MetricChart) -> bool {
    matches!(chart.family(), Family::Tabulated(_))
}

/// Runs the suite for `cfg`. A supplied dataset replaces the generated one.
pub fn verify(cfg: &RunConfig, dataset: Option<&LensDataset>) -> Result<VerifyReport> {
    let chart = cfg.chart()?;
    let mut suite = Suite { checks: Vec::new(), skipped: Vec::new() };
    let mut timings = Vec::new();
    let mut timed = |name: &'static str, suite: &mut Suite, f: &dyn Fn(&mut Suite)| {
        let t = Instant::now();
        f(suite);
        timings.push((name, t.elapsed().as_secs_f64()));
    };
    timed("metric", &mut suite, &|s| metric_checks(&chart, s));
    timed("geodesic", &mut suite, &|s| geodesic_checks(cfg, &chart, s));
    timed("lens", &mut suite, &|s| lens_checks(cfg, &chart, dataset, s));
    timed("jet", &mut suite, &|s| jet_checks(cfg, &chart, s));
    timed("tensor", &mut suite, &|s| tensor_checks(cfg, &chart, s));
    timed("ray", &mut suite, &|s| ray_checks(cfg, &chart, s));
    timed("rigidity", &mut suite, &|s| rigidity_checks(cfg, &chart, s));
    let passed = suite.checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        config_fingerprint: cfg.fingerprint(),
        chart_fingerprint: chart.fingerprint(),
        checks: suite.checks,
        skipped: suite.skipped,
        passed,
        timings,
    })
}

fn metric_checks(chart: &MetricChart, s: &mut Suite) {
    let n = 64;
    let r = chart.extent();
    let min_eig = (|| -> Result<f64> {
        let mut worst = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let p = Point::new(-r + 2.0 * r * i as f64 / (n - 1) as f64, -r + 2.0 * r * j as f64 / (n - 1) as f64);
                if p.norm() > r {
                    continue;
                }
                let g = chart.metric(&p)?;
                worst = worst.min(g.symmetric_eigenvalues().min());
            }
        }
        Ok(worst)
    })();
    s.record("metric", "positive definite on 64x64 grid (min eigenvalue)", Bound::AtLeast { limit: f64::MIN_POSITIVE }, min_eig);

    let h = 1e-4;
    let fd = (|| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in [Point::new(0.2, 0.5), Point::new(-0.6, 0.1), Point::new(0.0, -0.8), Point::new(0.45, 0.45)] {
            let exact = chart.christoffel(&p)?;
            let mut dg = [Matrix2::zeros(); 2];
            for (k, d) in dg.iter_mut().enumerate() {
                let e = if k == 0 { Vector2::new(h, 0.0) } else { Vector2::new(0.0, h) };
                *d = (chart.metric(&(p + e))? - chart.metric(&(p - e))?) / (2.0 * h);
            }
            let g = chart.metric(&p)?;
            let gi = g.try_inverse().expect("metric is positive definite");
            let scale = exact.0.iter().flatten().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let mut v = 0.0;
                        for l in 0..2 {
                            v += 0.5 * gi[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                        }
                        worst = worst.max((v - exact.0[k][i][j]).abs() / scale);
                    }
                }
            }
        }
        Ok(worst)
    })();
    s.record("metric", "christoffel vs centred differences at h=1e-4 (relative)", at_most(1e-6), fd);

    let frames = (|| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..32 {
            let fr = chart.boundary_frame(TAU * k as f64 / 32.0)?;
            let g = chart.metric(&fr.x)?;
            worst = worst
                .max((fr.tangent.dot(&(g * fr.tangent)) - 1.0).abs())
                .max((fr.normal.dot(&(g * fr.normal)) - 1.0).abs())
                .max(fr.tangent.dot(&(g * fr.normal)).abs());
            if fr.normal.dot(&fr.x) >= 0.0 {
                return Ok(f64::INFINITY);
            }
        }
        Ok(worst)
    })();
    s.record("metric", "boundary frames g-orthonormal, normal inward", at_most(1e-12), frames);
}

const PROBE_LABELS: [(f64, f64); 6] = [(0.4, 0.3), (1.7, -0.6), (2.9, 0.0), (3.8, 0.85), (5.0, -0.2), (5.9, 0.5)];

fn geodesic_checks(cfg: &RunConfig, chart: &MetricChart, s: &mut Suite) {
    let params = cfg.shoot_params();
    if is_tabulated(chart) {
        s.skip("geodesic", "speed conservation", "bound stated for analytic families");
    } else {
        let speed = (|| -> Result<f64> {
            let mut worst: f64 = 0.0;
            for (ls, mu) in PROBE_LABELS {
                let p = shoot(chart, lift(chart, &BallPoint::new(ls, mu))?, &ShootParams { step: 1e-3, ..params })?;
                for q in &p.samples {
                    worst = worst.max((chart.norm(&q.x, &q.xi)? - 1.0).abs());
                }
            }
            Ok(worst)
        })();
        s.record("geodesic", "speed conservation at h=1e-3", at_most(1e-9), speed);
    }

    let reversal = (|| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (ls, mu) in PROBE_LABELS {
            let p = shoot(chart, lift(chart, &BallPoint::new(ls, mu))?, &params)?;
            let Some(exit) = p.exit.filter(|_| p.status == PathStatus::Exited) else {
                return Ok(f64::INFINITY);
            };
            let back = shoot(chart, crate::geodesic::PhasePoint { x: exit.x, xi: -exit.xi }, &params)?;
            let end = back.exit.map_or(f64::INFINITY, |e| (e.x - p.start.x).norm());
            worst = worst.max(end).max((back.length - p.length).abs());
        }
        Ok(worst)
    })();
    s.record("geodesic", "time reversal returns to the start", at_most(1e-6), reversal);

    let halving = (|| -> Result<f64> {
        let b = BallPoint::new(0.4, 0.3);
        let exit = |h: f64| -> Result<Point> {
            let p = shoot(chart, lift(chart, &b)?, &ShootParams { step: h, ..params })?;
            Ok(p.exit.map_or(Point::new(f64::NAN, f64::NAN), |e| e.x))
        };
        let (a, m, f) = (exit(0.08)?, exit(0.04)?, exit(0.02)?);
        let (e1, e2) = ((a - m).norm(), (m - f).norm());
        // both differences at rounding level means the flow is integrated exactly
        Ok(if e1 < 1e-11 { f64::INFINITY } else { e1 / e2 })
    })();
    s.record("geodesic", "step halving error ratio (h = 0.08, 0.04, 0.02)", Bound::AtLeast { limit: 8.0 }, halving);
}

fn chord_errors(ds: &LensDataset) -> (f64, f64) {
    let mut el: f64 = 0.0;
    let mut eb: f64 = 0.0;
    for r in &ds.records {
        let mu = r.input.mu;
        el = el.max((r.length - 2.0 * (1.0 - mu * mu).sqrt()).abs());
        if r.status == RecordStatus::Exited {
            let s_out = r.input.s + PI - 2.0 * mu.asin();
            eb = eb.max(angle_diff(r.output.s, s_out).abs()).max((r.output.mu - mu).abs());
        }
    }
    (el, eb)
}

fn lens_checks(cfg: &RunConfig, chart: &MetricChart, supplied: Option<&LensDataset>, s: &mut Suite) {
    let generated;
    let ds = match supplied {
        Some(ds) => {
            s.record(
                "lens",
                "dataset chart fingerprint matches (0 = match)",
                at_most(0.0),
                Ok(if ds.chart_fingerprint == chart.fingerprint() { 0.0 } else { 1.0 }),
            );
            let expected = ds.grid.nodes().len() as f64;
            s.record("lens", "dataset record count minus grid size", at_most(0.0), Ok((ds.records.len() as f64 - expected).abs()));
            let resample = (|| -> Result<f64> {
                let stride = (ds.records.len() / 64).max(1);
                let mut worst: f64 = 0.0;
                for r in ds.records.iter().step_by(stride) {
                    let again = scatter(chart, &r.input, &cfg.shoot_params())?;
                    if again.status != r.status {
                        return Ok(f64::INFINITY);
                    }
                    if r.is_regular() {
                        worst = worst
                            .max((again.length - r.length).abs())
                            .max(angle_diff(again.output.s, r.output.s).abs())
                            .max((again.output.mu - r.output.mu).abs());
                    }
                }
                Ok(worst)
            })();
            s.record("lens", "dataset records reproduce by scattering", at_most(1e-6), resample);
            ds
        }
        None => match generate_dataset(chart, &cfg.lens_grid(), &cfg.dataset_params()) {
            Ok(d) => {
                generated = d;
                &generated
            }
            Err(e) => {
                s.record("lens", "dataset generation", at_most(0.0), Err(e));
                return;
            }
        },
    };

    if chart.is_euclidean() {
        let (el, eb) = chord_errors(ds);
        s.record("lens", "euclidean chord length 2 sqrt(1 - mu^2)", at_most(1e-6), Ok(el));
        s.record("lens", "euclidean exit label", at_most(1e-6), Ok(eb));
    } else {
        s.skip("lens", "chord oracle", "euclidean family only");
    }

    let round_trip = (|| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for r in &ds.records {
            let q = project(chart, &lift(chart, &r.input)?)?;
            worst = worst.max(angle_diff(q.s, r.input.s).abs()).max((q.mu - r.input.mu).abs());
        }
        Ok(worst)
    })();
    s.record("lens", "lift/project round trip", at_most(1e-10), round_trip);

    let stride = (ds.records.len() / 128).max(1);
    s.record(
        "lens",
        "time reversal of records",
        at_most(1e-6),
        time_reversal_check(chart, ds, &cfg.shoot_params(), stride).map(|r| r.max_deviation),
    );

    let tangential_ok = ds.records.iter().all(|r| {
        (r.status == RecordStatus::Tangential) == r.input.is_tangential()
            && (r.status != RecordStatus::Tangential || (r.length == 0.0 && r.output == r.input))
    });
    s.record("lens", "tangential records are identity (0 = holds)", at_most(0.0), Ok(if tangential_ok { 0.0 } else { 1.0 }));

    let coverage = audit_completeness(chart, ds, &cfg.audit_grid(), &cfg.shoot_params()).map(|r| r.fraction);
    let full = ds.grid.mu_range == (-1.0, 1.0) || (ds.grid.mirror && ds.grid.mu_range == (0.0, 1.0));
    if chart.is_euclidean() && full {
        s.record("lens", "full-aperture euclidean coverage", Bound::AtLeast { limit: 1.0 }, coverage);
    } else {
        s.record("lens", "audit coverage fraction", Bound::Within { lo: 0.0, hi: 1.0 }, coverage);
    }
}

fn jet_checks(cfg: &RunConfig, chart: &MetricChart, s: &mut Suite) {
    let params = cfg.jet_params();
    let k = cfg.jet.anchors;
    let result = (|| -> Result<(f64, f64)> {
        let mut e0: f64 = 0.0;
        let mut e1: f64 = 0.0;
        for i in 0..k {
            let anchor = 0.1 + TAU * i as f64 / k as f64;
            let jet = recover_jet(chart, anchor, &params)?;
            let (g11, dn) = chart.boundary_normal_jet(anchor)?;
            e0 = e0.max((jet.g11 - g11).abs());
            e1 = e1.max((jet.dn_g11 - dn).abs());
        }
        Ok((e0, e1))
    })();
    match result {
        Ok((e0, e1)) => {
            s.record("jet", "order 0 vs boundary normal coordinates", at_most(1e-4), Ok(e0));
            s.record("jet", "order 1 vs boundary normal coordinates", at_most(1e-2), Ok(e1));
        }
        Err(e) => {
            let msg = e.to_string();
            s.record("jet", "order 0 vs boundary normal coordinates", at_most(1e-4), Err(e));
            s.record("jet", "order 1 vs boundary normal coordinates", at_most(1e-2), Err(crate::Error::Unrecoverable(msg)));
        }
    }
}

fn saint_venant(p: &Point) -> Matrix2<f64> {
    let h = (-p.x * p.x - 2.0 * p.y * p.y).exp();
    let hxx = (4.0 * p.x * p.x - 2.0) * h;
    let hyy = (16.0 * p.y * p.y - 4.0) * h;
    let hxy = 8.0 * p.x * p.y * h;
    Matrix2::new(hyy, -hxy, -hxy, hxx)
}

fn smooth_tensor(p: &Point) -> Matrix2<f64> {
    let b = (-3.0 * ((p.x - 0.2).powi(2) + (p.y + 0.1).powi(2))).exp();
    Matrix2::new(1.0 + p.x * b, 0.4 * b + p.y, 0.4 * b + p.y, 1.0 - p.x * p.y)
}

fn rel_diff(dec: &Decomposer, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    dec.norm(&d) / dec.norm(b).max(f64::MIN_POSITIVE)
}

fn tensor_checks(cfg: &RunConfig, chart: &MetricChart, s: &mut Suite) {
    let grid = match cfg.tensor_grid() {
        Ok(g) => g,
        Err(e) => return s.record("tensor", "grid", at_most(0.0), Err(e)),
    };
    let mut dec = match Decomposer::new(chart, grid) {
        Ok(d) => d,
        Err(e) => return s.record("tensor", "decomposer", at_most(0.0), Err(e)),
    };
    dec.tol = cfg.solver.cg_tol;
    dec.max_iter = cfg.solver.max_iter;

    let v0 = VectorFieldGrid::from_fn(grid, true, |p| Vector2::new(1.0 - p.norm_squared(), 0.0));
    let pot = dec.d_apply(&dec.restrict_vector(&v0));
    s.record(
        "tensor",
        "potential input: |f^s| / |f|",
        at_most(1e-3),
        dec.decompose_dofs(&pot).map(|(fs, _, _)| dec.norm(&fs) / dec.norm(&pot)),
    );

    if chart.is_euclidean() {
        let sv = dec.restrict(&SymTensorField::from_fn(grid, saint_venant));
        s.record(
            "tensor",
            "saint-venant input: |v| / |f|",
            at_most(1e-3),
            dec.decompose_dofs(&sv).map(|(_, v, _)| dec.vector_norm(&v) / dec.norm(&sv)),
        );
    } else {
        s.skip("tensor", "saint-venant input", "divergence free only for the flat metric");
    }

    let f = dec.restrict(&SymTensorField::from_fn(grid, smooth_tensor));
    let parts = dec.decompose_dofs(&f);
    match parts {
        Ok((fs, v, _)) => {
            let dv = dec.d_apply(&v);
            let sum: Vec<f64> = fs.iter().zip(&dv).map(|(a, b)| a + b).collect();
            s.record("tensor", "reassembly f = f^s + dv", at_most(1e-8), Ok(rel_diff(&dec, &sum, &f)));
            let nf2 = dec.inner(&f, &f);
            s.record("tensor", "orthogonality <f^s, dv> / |f|^2", at_most(1e-6), Ok(dec.inner(&fs, &dv).abs() / nf2));
            s.record(
                "tensor",
                "idempotence: |dv'| / |f^s| for decompose(f^s)",
                at_most(1e-6),
                dec.decompose_dofs(&fs).map(|(_, v2, _)| dec.norm(&dec.d_apply(&v2)) / dec.norm(&fs)),
            );
            let h = dec.restrict(&SymTensorField::from_fn(grid, saint_venant));
            let combo: Vec<f64> = f.iter().zip(&h).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
            let lin = (|| -> Result<f64> {
                let (fsh, _, _) = dec.decompose_dofs(&h)?;
                let (fsc, _, _) = dec.decompose_dofs(&combo)?;
                let expect: Vec<f64> = fs.iter().zip(&fsh).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
                Ok(rel_diff(&dec, &fsc, &expect))
            })();
            s.record("tensor", "linearity of the projection", at_most(1e-6), lin);
        }
        Err(e) => s.record("tensor", "decomposition of a smooth field", at_most(0.0), Err(e)),
    }

    let adj = (|| -> Result<f64> {
        let v = VectorFieldGrid::from_fn(grid, true, |p| {
            let b = (1.0 - p.norm_squared()).powi(3);
            Vector2::new(b * (0.5 + p.y), b * (p.x - 0.3 * p.y))
        });
        let fld = SymTensorField::from_fn(grid, smooth_tensor);
        let vx = dec.restrict_vector(&v);
        let dv = dec.extend(&dec.d_apply(&vx));
        let lhs = crate::tensor::l2_inner_with(&dec.geom, &dv, &fld);
        let div = divergence(chart, &fld)?;
        let v_active = dec.extend_vector(&vx);
        let rhs = vector_inner(&dec.geom, &v_active, &div, false);
        let nv = dec.vector_norm(&vx);
        let nf = dec.norm(&dec.restrict(&fld));
        Ok((lhs + rhs).abs() / (nv * nf))
    })();
    s.record("tensor", "adjointness <dv, f> + <v, div f>", at_most(1e-4), adj);
}

/// Normalizes a Dirichlet field by a C^1 surrogate norm: max of `|v| + |Dv|`
/// over a lattice in the disc.
fn c1_normalized(v: &DirichletField) -> DirichletField {
    let mut m: f64 = 0.0;
    let n = 41;
    for i in 0..n {
        for j in 0..n {
            let p = Point::new(-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64);
            if p.norm() <= 1.0 {
                m = m.max(v.value(p).norm() + v.jacobian(p).norm());
            }
        }
    }
    v.scaled(1.0 / m.max(f64::MIN_POSITIVE))
}

fn ray_checks(cfg: &RunConfig, chart: &MetricChart, s: &mut Suite) {
    let grid = match cfg.tensor_grid() {
        Ok(g) => g,
        Err(e) => return s.record("ray", "grid", at_most(0.0), Err(e)),
    };
    let family = cfg.path_family();
    let full = AssembleParams { shoot: cfg.shoot_params(), aperture: Aperture::full() };
    let sys = match assemble(chart, &family, grid, &full) {
        Ok(sys) => sys,
        Err(e) => return s.record("ray", "assembly", at_most(0.0), Err(e)),
    };
    s.record(
        "ray",
        "row identity A vec(g) = alpha l",
        at_most(1e-4),
        sys.apply(&metric_samples(chart, grid))
            .map(|ag| ag.iter().zip(&sys.lengths).zip(&sys.alpha).map(|((a, l), al)| (a - al * l).abs()).fold(0.0, f64::max)),
    );

    let gauge = (|| -> Result<f64> {
        let paths = trace_family(chart, &family, &full)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
        let mut worst: f64 = 0.0;
        for _ in 0..cfg.experiment.gauge_fields {
            let v = c1_normalized(&DirichletField::random(&mut rng, 1, cfg.experiment.gauge_degree));
            let pf = PotentialField { chart, field: v };
            for p in &paths {
                worst = worst.max(xray(&pf, &p.path)?.abs());
            }
        }
        Ok(worst)
    })();
    s.record("ray", "gauge invariance max |I(dv)|, |v|_C1 = 1", at_most(1e-6), gauge);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed ^ 0xA5A5);
    let n = sys.a.cols();
    let mut rand_vec = || -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (x, y) = (rand_vec(), rand_vec());
    let (nx, ny) = (sys.normal_apply(&x), sys.normal_apply(&y));
    let asym = (dot(&x, &ny) - dot(&nx, &y)).abs() / (dot(&x, &nx).abs() + dot(&y, &ny).abs()).max(f64::MIN_POSITIVE);
    s.record("ray", "normal operator symmetry <x, Ny> - <Nx, y>", at_most(1e-12), Ok(asym));
    let mut min_rq = f64::INFINITY;
    for _ in 0..100 {
        let z = rand_vec();
        min_rq = min_rq.min(dot(&z, &sys.normal_apply(&z)) / dot(&z, &z));
    }
    s.record("ray", "normal operator Rayleigh quotient (100 random)", Bound::AtLeast { limit: -1e-12 }, Ok(min_rq));

    let monotone = (|| -> Result<f64> {
        let mut dec = Decomposer::new(chart, grid)?;
        dec.tol = cfg.solver.cg_tol;
        let r = &cfg.ray;
        let basis = solenoidal_basis(&dec, &bump_spanning_set(grid, r.bump_spacing, r.bump_radius, r.bump_max_center))?;
        let band = AssembleParams { shoot: cfg.shoot_params(), aperture: Aperture::tangential_band(r.band_lo, r.band_ramp)? };
        let sys_band = assemble(chart, &family, grid, &band)?;
        let a = sinjectivity_spectrum(&sys, &dec, &basis, None)?.sigma_min;
        let b = sinjectivity_spectrum(&sys_band, &dec, &basis, None)?.sigma_min;
        Ok(a - b)
    })();
    s.record("ray", "aperture monotonicity sigma_min(full) - sigma_min(band)", Bound::AtLeast { limit: 0.0 }, monotone);
}

fn rigidity_checks(cfg: &RunConfig, chart: &MetricChart, s: &mut Suite) {
    let psi = match cfg.diffeo() {
        Ok(p) => p,
        Err(e) => return s.record("rigidity", "diffeomorphism", at_most(0.0), Err(e)),
    };
    let e = &cfg.experiment;
    let slope = Bound::Within { lo: 1.8, hi: 2.2 };
    match cfg.tensor_grid().and_then(|g| linearization_split(chart, &psi, &e.linear_ladder, g)) {
        Ok(r) => {
            s.record("rigidity", "linearization remainder slope", slope, Ok(r.slope));
            s.record("rigidity", "linear part slope", Bound::Within { lo: 0.95, hi: 1.05 }, Ok(r.linear_slope));
        }
        Err(err) => s.record("rigidity", "linearization remainder slope", slope, Err(err)),
    }
    let full = AssembleParams { shoot: cfg.shoot_params(), aperture: Aperture::full() };
    match trace_family(chart, &cfg.path_family(), &full).and_then(|p| xray_gauge_remainder(chart, &p, &psi, &e.gauge_ladder)) {
        Ok(r) => {
            s.record("rigidity", "ray transform remainder slope", slope, Ok(r.slope));
            let pot = r.rows.iter().map(|row| row.linear).fold(0.0, f64::max);
            s.record("rigidity", "potential part |I(2 eps dw)|", at_most(1e-6), Ok(pot));
        }
        Err(err) => s.record("rigidity", "ray transform remainder slope", slope, Err(err)),
    }
    s.record(
        "rigidity",
        "lens data of g and psi*g agree",
        at_most(1e-5),
        lens_gauge_invariance(chart, &psi, &cfg.lens_grid(), &cfg.dataset_params()).map(|r| r.max_diff()),
    );
    let taylor = (|| -> Result<(f64, f64)> {
        let ghat = pullback_metric(chart, &psi)?;
        let r = taylor_check(chart, &ghat, &BallPoint::new(e.taylor_s, e.taylor_mu), &cfg.shoot_params(), e.n_tau)?;
        Ok(((r.e1 - r.e0).abs(), (r.lhs - r.rhs).abs()))
    })();
    match taylor {
        Ok((a, b)) => {
            s.record("rigidity", "energy endpoint identity E(1) = E(0)", at_most(1e-6), Ok(a));
            s.record("rigidity", "Taylor identity E(1) - E(0) - E'(0) = -int (1 - tau) E''", at_most(1e-6), Ok(b));
        }
        Err(err) => s.record("rigidity", "Taylor identity", at_most(1e-6), Err(err)),
    }
}
