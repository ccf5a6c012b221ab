//! Gauge experiments: boundary-fixing diffeomorphisms, pullback metrics, the
//! linearization `psi^* g - g = 2 dv + O(eps^2)`, the quadratic bound on the
//! ray transform of the difference, and the energy functional.
//!
//! `psi_eps(x) = x + eps w(x)` with `w` vanishing on the boundary. The chart
//! offset replaces the exponential map; both agree to first order in `eps`.

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::DirichletField;
use crate::fit::loglog_slope;
use crate::geodesic::{shoot, GeodesicPath, ShootParams};
use crate::lens::{angle_diff, generate_dataset, lift, BallPoint, DatasetParams, LensGrid};
use crate::metric::{det2, Family, MetricChart};
use crate::ray::{path_weights, xray, Difference, MetricField, PotentialField, TensorFieldFn, TracedPath};
use crate::tensor::{GridGeometry, SymTensorField, TensorGrid};
use crate::{Error, Point, Result};

pub const DEFAULT_LINEAR_LADDER: [f64; 4] = [0.08, 0.04, 0.02, 0.01];
pub const DEFAULT_GAUGE_LADDER: [f64; 4] = [0.08, 0.04, 0.02, 0.01];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFixingDiffeo {
    pub field: DirichletField,
    pub eps: f64,
}

impl BoundaryFixingDiffeo {
    pub fn new(field: DirichletField, eps: f64) -> Result<Self> {
        if field.power == 0 {
            return Err(Error::arg("generating field must vanish on the boundary (power >= 1)"));
        }
        if !eps.is_finite() {
            return Err(Error::arg("amplitude must be finite"));
        }
        Ok(BoundaryFixingDiffeo { field, eps })
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        BoundaryFixingDiffeo { field: self.field.clone(), eps }
    }

    pub fn map(&self, x: &Point) -> Point {
        x + self.field.value(*x) * self.eps
    }

    pub fn jacobian(&self, x: &Point) -> Matrix2<f64> {
        Matrix2::identity() + self.field.jacobian(*x) * self.eps
    }

    /// Check points: an `n x n` lattice clipped to the disc of radius `r`.
    fn check_points(r: f64, n: usize) -> Vec<Point> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let p = Point::new(-r + 2.0 * r * i as f64 / (n - 1) as f64, -r + 2.0 * r * j as f64 / (n - 1) as f64);
                if p.norm() <= r {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Minimum Jacobian determinant on the check lattice over the extended
    /// chart; errors if it is not positive or the image leaves the chart.
    pub fn check(&self, chart: &MetricChart, n: usize) -> Result<f64> {
        let mut min_det = f64::INFINITY;
        for p in Self::check_points(chart.extent(), n.max(3)) {
            let d = det2(&self.jacobian(&p));
            if !(d > 0.0) {
                return Err(Error::NonDiffeo(format!(
                    "Jacobian determinant {d:.3e} at ({:.3}, {:.3}) for eps = {}",
                    p.x, p.y, self.eps
                )));
            }
            if self.map(&p).norm() > chart.extent() + 1e-12 && p.norm() <= 1.0 {
                return Err(Error::NonDiffeo(format!("image of ({:.3}, {:.3}) leaves the chart", p.x, p.y)));
            }
            min_det = min_det.min(d);
        }
        Ok(min_det)
    }

    /// Largest `|eps|` keeping the determinant positive on the check lattice.
    pub fn injectivity_bound(&self, chart: &MetricChart, n: usize) -> f64 {
        let mut bound = f64::INFINITY;
        for p in Self::check_points(chart.extent(), n.max(3)) {
            let j = self.field.jacobian(p);
            let (t, d) = (j.trace(), det2(&j));
            // det(I + e J) = 1 + e t + e^2 d; smallest |root| over both signs of e
            for sign in [1.0, -1.0] {
                let (a, b) = (d, sign * t);
                let root = if a.abs() < 1e-14 {
                    if b < 0.0 { -1.0 / b } else { f64::INFINITY }
                } else {
                    let disc = b * b - 4.0 * a;
                    if disc < 0.0 {
                        f64::INFINITY
                    } else {
                        let r1 = (-b - disc.sqrt()) / (2.0 * a);
                        let r2 = (-b + disc.sqrt()) / (2.0 * a);
                        [r1, r2].into_iter().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min)
                    }
                };
                bound = bound.min(root);
            }
        }
        bound
    }
}

/// `psi^* g` as an analytic chart on the same extended disc.
pub fn pullback_metric(chart: &MetricChart, psi: &BoundaryFixingDiffeo) -> Result<MetricChart> {
    psi.check(chart, 41)?;
    MetricChart::new(Family::Pullback { base: Arc::new(chart.clone()), field: psi.field.clone(), eps: psi.eps })
        .with_margin(chart.margin())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SlopeRow {
    pub eps: f64,
    /// Remainder size at this amplitude.
    pub value: f64,
    /// Size of the predicted linear part (or of the potential part alone).
    pub linear: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeReport {
    pub rows: Vec<SlopeRow>,
    pub slope: f64,
    pub linear_slope: f64,
}

fn slopes(rows: &[SlopeRow]) -> (f64, f64) {
    let pos: Vec<&SlopeRow> = rows.iter().filter(|r| r.eps > 0.0 && r.value > 0.0).collect();
    if pos.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let e: Vec<f64> = pos.iter().map(|r| r.eps).collect();
    let v: Vec<f64> = pos.iter().map(|r| r.value).collect();
    let l: Vec<f64> = pos.iter().map(|r| r.linear).collect();
    let ls = if l.iter().all(|x| *x > 0.0) { loglog_slope(&e, &l) } else { f64::NAN };
    (loglog_slope(&e, &v), ls)
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 4 || ladder.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Error::arg("ladder needs at least 4 non-negative amplitudes"));
    }
    Ok(())
}

/// `||psi_eps^* g - g - 2 eps dw||` in the grid `L2` norm for each `eps`.
pub fn linearization_split(
    chart: &MetricChart,
    psi: &BoundaryFixingDiffeo,
    ladder: &[f64],
    grid: TensorGrid,
) -> Result<SlopeReport> {
    check_ladder(ladder)?;
    let geom = GridGeometry::new(chart, grid)?;
    let dw = PotentialField { chart, field: psi.field.clone() };
    let dw_grid = SymTensorField::from_fn(grid, |p| dw.value(p));
    let mut rows = Vec::new();
    for &eps in ladder {
        let p = psi.with_eps(eps);
        let ghat = pullback_metric(chart, &p)?;
        let diff = Difference(MetricField(&ghat), MetricField(chart));
        let f = SymTensorField::from_fn(grid, |x| diff.value(x));
        let lin = dw_grid.scaled(2.0 * eps);
        let rem = f.axpy(-1.0, &lin)?;
        let norm = |t: &SymTensorField| crate::tensor::l2_inner_with(&geom, t, t).max(0.0).sqrt();
        rows.push(SlopeRow { eps, value: norm(&rem), linear: norm(&lin) });
    }
    let (slope, linear_slope) = slopes(&rows);
    Ok(SlopeReport { rows, slope, linear_slope })
}

/// Max over `paths` (geodesics of `g`) of `|I(psi_eps^* g - g)|`; the linear
/// column holds the max of `|I(2 eps dw)|`, which vanishes up to quadrature.
pub fn xray_gauge_remainder(
    chart: &MetricChart,
    paths: &[TracedPath],
    psi: &BoundaryFixingDiffeo,
    ladder: &[f64],
) -> Result<SlopeReport> {
    check_ladder(ladder)?;
    if paths.is_empty() {
        return Err(Error::EmptySystem("no paths for the gauge experiment".into()));
    }
    let mut rows = Vec::new();
    for &eps in ladder {
        let ghat = pullback_metric(chart, &psi.with_eps(eps))?;
        let diff = Difference(MetricField(&ghat), MetricField(chart));
        let pot = PotentialField { chart, field: psi.field.scaled(2.0 * eps) };
        let vals = paths
            .par_iter()
            .map(|t| Ok((xray(&diff, &t.path)?.abs(), xray(&pot, &t.path)?.abs())))
            .collect::<Result<Vec<_>>>()?;
        let value = vals.iter().fold(0.0_f64, |m, v| m.max(v.0));
        let linear = vals.iter().fold(0.0_f64, |m, v| m.max(v.1));
        rows.push(SlopeRow { eps, value, linear });
    }
    let (slope, _) = slopes(&rows);
    Ok(SlopeReport { rows, slope, linear_slope: f64::NAN })
}

/// Curve samples on `t in [0, 1]` with velocities in that parameter.
#[derive(Clone, Debug)]
pub struct CurveSamples {
    pub t: Vec<f64>,
    pub x: Vec<Point>,
    pub v: Vec<Vector2<f64>>,
    /// Nominal spacing of the uniform part of `t`.
    pub step: f64,
}

impl CurveSamples {
    /// Reparametrizes the interior part of an exited unit-speed geodesic to `[0, 1]`.
    pub fn from_path(path: &GeodesicPath) -> Result<Self> {
        if !path.exited() {
            return Err(Error::UndefinedIntegral("energy needs an exited path".into()));
        }
        let s = path.interior_samples();
        let t0 = s[0].t;
        let len = path.length - t0;
        if !(len > 0.0) {
            return Err(Error::arg("path has zero length"));
        }
        Ok(CurveSamples {
            t: s.iter().map(|p| (p.t - t0) / len).collect(),
            x: s.iter().map(|p| p.x).collect(),
            v: s.iter().map(|p| p.xi * len).collect(),
            step: path.step / len,
        })
    }

    /// Straight segment from `a` to `b` with `n` uniform samples.
    pub fn segment(a: Point, b: Point, n: usize) -> Self {
        let n = n.max(3);
        let t: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        CurveSamples {
            x: t.iter().map(|s| a + (b - a) * *s).collect(),
            v: vec![b - a; n],
            t,
            step: 1.0 / (n - 1) as f64,
        }
    }
}

/// `g + tau (ghat - g)`.
pub struct InterpolatedMetric<'a> {
    pub g: &'a MetricChart,
    pub ghat: &'a MetricChart,
    pub tau: f64,
}

impl TensorFieldFn for InterpolatedMetric<'_> {
    fn value(&self, x: &Point) -> Matrix2<f64> {
        let a = MetricField(self.g).value(x);
        let b = MetricField(self.ghat).value(x);
        a + (b - a) * self.tau
    }
}

/// `E = int_0^1 <c', c'>_g dt`.
pub fn energy(curve: &CurveSamples, metric: &dyn TensorFieldFn) -> f64 {
    let w = path_weights(&curve.t, curve.step);
    curve.x.iter().zip(&curve.v).zip(&w).map(|((x, v), w)| w * v.dot(&(metric.value(x) * v))).sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaylorReport {
    pub label: BallPoint,
    pub length: f64,
    pub length_hat: f64,
    pub e0: f64,
    pub e1: f64,
    pub de0: f64,
    /// `E(1) - E(0) - E'(0)`.
    pub lhs: f64,
    /// `int_0^1 (1 - tau) E''(tau) d tau`.
    pub rhs: f64,
}

/// Energy along `c_tau = (1 - tau) gamma + tau gamma_hat` under `g^tau`, where
/// `gamma` and `gamma_hat` are the `g`- and `ghat`-geodesics with label `b`.
pub fn taylor_check(
    chart: &MetricChart,
    ghat: &MetricChart,
    b: &BallPoint,
    params: &ShootParams,
    n_tau: usize,
) -> Result<TaylorReport> {
    let n_tau = (n_tau.max(8) / 2) * 2;
    let p = shoot(chart, lift(chart, b)?, params)?;
    let q = shoot(ghat, lift(ghat, b)?, params)?;
    let c = CurveSamples::from_path(&p)?;
    let d = CurveSamples::from_path(&q)?;
    if c.t.len() != d.t.len() {
        return Err(Error::ViolatedHypothesis(format!(
            "geodesic lengths differ ({} vs {}): lens data do not agree",
            p.length, q.length
        )));
    }
    let e_at = |tau: f64| {
        let curve = CurveSamples {
            t: c.t.clone(),
            x: c.x.iter().zip(&d.x).map(|(a, b)| a * (1.0 - tau) + b * tau).collect(),
            v: c.v.iter().zip(&d.v).map(|(a, b)| a * (1.0 - tau) + b * tau).collect(),
            step: c.step,
        };
        energy(&curve, &InterpolatedMetric { g: chart, ghat, tau })
    };
    let h = 1.0 / n_tau as f64;
    let e: Vec<f64> = (0..=n_tau).into_par_iter().map(|k| e_at(k as f64 * h)).collect();
    let m = n_tau;
    let de0 = (-25.0 * e[0] + 48.0 * e[1] - 36.0 * e[2] + 16.0 * e[3] - 3.0 * e[4]) / (12.0 * h);
    let d2: Vec<f64> = (0..=m)
        .map(|k| {
            if k == 0 {
                (2.0 * e[0] - 5.0 * e[1] + 4.0 * e[2] - e[3]) / (h * h)
            } else if k == m {
                (2.0 * e[m] - 5.0 * e[m - 1] + 4.0 * e[m - 2] - e[m - 3]) / (h * h)
            } else {
                (e[k - 1] - 2.0 * e[k] + e[k + 1]) / (h * h)
            }
        })
        .collect();
    let ts: Vec<f64> = (0..=m).map(|k| k as f64 * h).collect();
    let w = path_weights(&ts, h);
    let rhs: f64 = (0..=m).map(|k| w[k] * (1.0 - ts[k]) * d2[k]).sum();
    Ok(TaylorReport {
        label: *b,
        length: p.length,
        length_hat: q.length,
        e0: e[0],
        e1: e[m],
        de0,
        lhs: e[m] - e[0] - de0,
        rhs,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaugeInvarianceReport {
    pub records: usize,
    pub compared: usize,
    pub max_length_diff: f64,
    pub max_s_diff: f64,
    pub max_mu_diff: f64,
}

impl GaugeInvarianceReport {
    pub fn max_diff(&self) -> f64 {
        self.max_length_diff.max(self.max_s_diff).max(self.max_mu_diff)
    }
}

/// Compares the lens datasets of `g` and `psi^* g` record by record.
pub fn lens_gauge_invariance(
    chart: &MetricChart,
    psi: &BoundaryFixingDiffeo,
    grid: &LensGrid,
    params: &DatasetParams,
) -> Result<GaugeInvarianceReport> {
    let ghat = pullback_metric(chart, psi)?;
    let a = generate_dataset(chart, grid, params)?;
    let b = generate_dataset(&ghat, grid, params)?;
    let mut rep = GaugeInvarianceReport { records: a.records.len(), compared: 0, max_length_diff: 0.0, max_s_diff: 0.0, max_mu_diff: 0.0 };
    for (r, q) in a.records.iter().zip(&b.records) {
        if r.status != q.status {
            return Err(Error::ViolatedHypothesis(format!(
                "record at ({}, {}) is {} for g but {} for the pullback",
                r.input.s,
                r.input.mu,
                r.status.as_str(),
                q.status.as_str()
            )));
        }
        if !r.is_regular() {
            continue;
        }
        rep.compared += 1;
        rep.max_length_diff = rep.max_length_diff.max((r.length - q.length).abs());
        rep.max_s_diff = rep.max_s_diff.max(angle_diff(r.output.s, q.output.s).abs());
        rep.max_mu_diff = rep.max_mu_diff.max((r.output.mu - q.output.mu).abs());
    }
    Ok(rep)
}
