//! The geodesic ray transform of symmetric 2-tensors.
//!
//! A [`ForwardSystem`] stores one sparse row per geodesic: quadrature weights
//! along the path times bilinear interpolation weights, scaled by the aperture
//! `alpha`. Rows act on all `3 N^2` grid values; spectra and reconstructions
//! use the masked columns only. Path weights `W` discretize the measure
//! `|<nu, xi>| dSigma`, which in `(s, mu)` coordinates is `|dx/ds|_g ds dmu`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sprs::CsMat;

use crate::cg::{pcg, CgOutcome};
use crate::field::DirichletField;
use crate::fit::smootherstep;
use crate::geodesic::{shoot, GeodesicPath, PhasePoint, ShootParams};
use crate::lens::{jittered_nodes, lift, project, BallPoint, LensDataset, LensGrid, RecordStatus};
use crate::metric::{Christoffel, MetricChart};
use crate::tensor::{spmv, spmv_t, Decomposer, SymTensorField, TensorGrid, VectorFieldGrid};
use crate::{Error, Point, Result};

/// A symmetric 2-tensor field that can be evaluated anywhere on the chart.
pub trait TensorFieldFn: Sync {
    fn value(&self, x: &Point) -> Matrix2<f64>;
}

impl TensorFieldFn for SymTensorField {
    fn value(&self, x: &Point) -> Matrix2<f64> {
        self.interpolate(x)
    }
}

pub(crate) fn clamp_to_chart(chart: &MetricChart, x: &Point) -> Point {
    let r = x.norm();
    if r > chart.extent() { x * (chart.extent() / r) } else { *x }
}

/// The metric itself, clamped radially beyond the chart.
pub struct MetricField<'a>(pub &'a MetricChart);

impl TensorFieldFn for MetricField<'_> {
    fn value(&self, x: &Point) -> Matrix2<f64> {
        self.0.metric_unchecked(&clamp_to_chart(self.0, x))
    }
}

/// `dv` for an analytic Dirichlet field `v`, evaluated pointwise.
pub struct PotentialField<'a> {
    pub chart: &'a MetricChart,
    pub field: DirichletField,
}

impl TensorFieldFn for PotentialField<'_> {
    fn value(&self, x: &Point) -> Matrix2<f64> {
        let jet = self.chart.jet_unchecked(&clamp_to_chart(self.chart, x));
        let v = self.field.value(*x);
        let jac = self.field.jacobian(*x);
        let lower = jet.g * v;
        let gam = Christoffel::from_jet(&jet).0;
        // d_i v_j = d_i g_jm v^m + g_jm d_i v^m
        let dlow = Matrix2::from_fn(|i, j| jet.dg[i].row(j).dot(&v.transpose()) + (jet.g.row(j) * jac.column(i))[0]);
        let cov = Matrix2::from_fn(|i, j| dlow[(i, j)] - (0..2).map(|k| gam[k][i][j] * lower[k]).sum::<f64>());
        (cov + cov.transpose()) * 0.5
    }
}

/// Pointwise difference of two fields.
pub struct Difference<A, B>(pub A, pub B);

impl<A: TensorFieldFn, B: TensorFieldFn> TensorFieldFn for Difference<A, B> {
    fn value(&self, x: &Point) -> Matrix2<f64> {
        self.0.value(x) - self.1.value(x)
    }
}

/// Quadrature weights for samples at times `ts`. The uniform core uses
/// composite Simpson (with a 3/8 panel for an odd count); partial first and
/// last intervals integrate the quadratic through their three nearest samples.
pub fn path_weights(ts: &[f64], h: f64) -> Vec<f64> {
    let n = ts.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    if n == 2 {
        let d = 0.5 * (ts[1] - ts[0]);
        return vec![d, d];
    }
    let uniform = |k: usize| ((ts[k + 1] - ts[k]) - h).abs() <= 1e-9 * h;
    let lo = if uniform(0) { 0 } else { 1 };
    let hi = if uniform(n - 2) { n - 1 } else { n - 2 };
    if lo >= hi || !(lo..hi).all(uniform) {
        for k in 0..n - 1 {
            let d = 0.5 * (ts[k + 1] - ts[k]);
            w[k] += d;
            w[k + 1] += d;
        }
        return w;
    }
    let m = hi - lo;
    let simpson = |w: &mut [f64], a: usize, panels: usize| {
        for p in 0..panels {
            let k = a + 2 * p;
            w[k] += h / 3.0;
            w[k + 1] += 4.0 * h / 3.0;
            w[k + 2] += h / 3.0;
        }
    };
    match m {
        1 => {
            w[lo] += 0.5 * h;
            w[hi] += 0.5 * h;
        }
        _ if m % 2 == 0 => simpson(&mut w, lo, m / 2),
        _ => {
            simpson(&mut w, lo, (m - 3) / 2);
            let k = hi - 3;
            for (o, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
                w[k + o] += 3.0 * h / 8.0 * c;
            }
        }
    }
    if lo == 1 {
        partial(&mut w, ts, [0, 1, 2], ts[0], ts[1]);
    }
    if hi == n - 2 {
        partial(&mut w, ts, [n - 3, n - 2, n - 1], ts[n - 2], ts[n - 1]);
    }
    w
}

/// Adds the weights of `int_a^b` of the quadratic interpolant through `nodes`.
fn partial(w: &mut [f64], ts: &[f64], nodes: [usize; 3], a: f64, b: f64) {
    if b - a <= 0.0 {
        return;
    }
    let x = nodes.map(|k| ts[k]);
    if (x[1] - x[0]).abs() < 1e-15 || (x[2] - x[1]).abs() < 1e-15 {
        // degenerate spacing: trapezoid on the interval itself
        let d = 0.5 * (b - a);
        let (i, j) = if a == x[0] { (nodes[0], nodes[1]) } else { (nodes[1], nodes[2]) };
        w[i] += d;
        w[j] += d;
        return;
    }
    let gauss = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
    for (z, gw) in gauss {
        let t = 0.5 * (a + b) + 0.5 * (b - a) * z;
        for l in 0..3 {
            let mut basis = 1.0;
            for m in 0..3 {
                if m != l {
                    basis *= (t - x[m]) / (x[l] - x[m]);
                }
            }
            w[nodes[l]] += 0.5 * (b - a) * gw * basis;
        }
    }
}

/// `int <f(gamma), gamma'^2> dt` over the part of `path` inside the disc.
pub fn xray(f: &dyn TensorFieldFn, path: &GeodesicPath) -> Result<f64> {
    if !path.exited() {
        return Err(Error::UndefinedIntegral(format!("path is {:?}; the ray transform needs an exit", path.status)));
    }
    let samples = path.interior_samples();
    let ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let w = path_weights(&ts, path.step);
    Ok(samples.iter().zip(&w).map(|(s, w)| w * s.xi.dot(&(f.value(&s.x) * s.xi))).sum())
}

/// Ramp profile: 0 outside `outer`, 1 on `inner`, smootherstep in between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub outer: (f64, f64),
    pub inner: (f64, f64),
}

impl Window {
    pub fn new(outer: (f64, f64), inner: (f64, f64)) -> Result<Self> {
        if !(outer.0 <= inner.0 && inner.0 <= inner.1 && inner.1 <= outer.1) {
            return Err(Error::arg(format!("window inner {inner:?} must lie inside outer {outer:?}")));
        }
        Ok(Window { outer, inner })
    }

    pub fn value(&self, t: f64) -> f64 {
        if t < self.outer.0 || t > self.outer.1 {
            0.0
        } else if t >= self.inner.0 && t <= self.inner.1 {
            1.0
        } else if t < self.inner.0 {
            smootherstep((t - self.outer.0) / (self.inner.0 - self.outer.0))
        } else {
            smootherstep((self.outer.1 - t) / (self.outer.1 - self.inner.1))
        }
    }
}

/// `alpha(s, mu) = B(s) B(|mu|)`; a missing window means no cut.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aperture {
    pub abs_mu: Option<Window>,
    pub s: Option<Window>,
}

impl Aperture {
    pub fn full() -> Self {
        Aperture::default()
    }

    /// Near-tangential band `|mu| >= lo`, ramping up to 1 at `lo + ramp`.
    pub fn tangential_band(lo: f64, ramp: f64) -> Result<Self> {
        Ok(Aperture { abs_mu: Some(Window::new((lo, 1.0), ((lo + ramp).min(1.0), 1.0))?), s: None })
    }

    pub fn value(&self, b: &BallPoint) -> f64 {
        let m = self.abs_mu.map_or(1.0, |w| w.value(b.mu.abs()));
        let s = self.s.map_or(1.0, |w| w.value(b.s));
        m * s
    }
}

#[derive(Clone, Debug)]
pub enum PathFamily {
    /// Inward labels on the `(s, mu)` grid of the boundary.
    Boundary { grid: LensGrid, jitter: f64, seed: u64 },
    /// Explicit labels with a common cell size `(ds, dmu)`.
    Labels { labels: Vec<BallPoint>, cell: (f64, f64) },
    /// Geodesics launched from the circle `|x| = 1 + offset` outside the disc,
    /// at angles up to `max_angle` from the inward normal.
    Hypersurface { n_angle: usize, n_dir: usize, offset: f64, max_angle: f64 },
}

impl PathFamily {
    pub fn from_dataset(ds: &LensDataset) -> Self {
        let labels = ds.records.iter().filter(|r| r.status == RecordStatus::Exited).map(|r| r.input).collect();
        PathFamily::Labels { labels, cell: ds.grid.cell() }
    }

    pub fn is_hypersurface(&self) -> bool {
        matches!(self, PathFamily::Hypersurface { .. })
    }

    fn launches(&self, chart: &MetricChart) -> Result<Vec<Launch>> {
        let boundary = |labels: Vec<BallPoint>, (ds, dmu): (f64, f64)| -> Result<Vec<Launch>> {
            labels
                .into_iter()
                .map(|b| {
                    let fr = chart.boundary_frame(b.s)?;
                    Ok(Launch { start: None, label: Some(b), measure: fr.arc_speed * ds * dmu })
                })
                .collect()
        };
        match self {
            PathFamily::Boundary { grid, jitter, seed } => {
                grid.validate()?;
                boundary(jittered_nodes(grid, *jitter, *seed), grid.cell())
            }
            PathFamily::Labels { labels, cell } => boundary(labels.clone(), *cell),
            PathFamily::Hypersurface { n_angle, n_dir, offset, max_angle } => {
                if *n_angle == 0 || *n_dir == 0 {
                    return Err(Error::arg("hypersurface family needs at least one angle and direction"));
                }
                if !(*offset > 0.0 && 1.0 + offset < chart.extent()) {
                    return Err(Error::arg(format!("hypersurface offset {offset} must lie in (0, {})", chart.margin())));
                }
                if !(*max_angle > 0.0 && *max_angle < std::f64::consts::FRAC_PI_2) {
                    return Err(Error::arg("max_angle must lie in (0, pi/2)"));
                }
                let db = std::f64::consts::TAU / *n_angle as f64;
                let dth = 2.0 * max_angle / *n_dir as f64;
                let mut out = Vec::with_capacity(n_angle * n_dir);
                for i in 0..*n_angle {
                    let fr = chart.frame_on_circle(1.0 + offset, db * i as f64)?;
                    for j in 0..*n_dir {
                        let th = -max_angle + dth * (j as f64 + 0.5);
                        let xi = fr.normal * th.cos() + fr.tangent * th.sin();
                        out.push(Launch {
                            start: Some(PhasePoint { x: fr.x, xi }),
                            label: None,
                            measure: fr.arc_speed * db * th.cos() * dth,
                        });
                    }
                }
                Ok(out)
            }
        }
    }
}

struct Launch {
    start: Option<PhasePoint>,
    label: Option<BallPoint>,
    measure: f64,
}

/// A traced geodesic with its boundary label, measure weight and aperture.
#[derive(Clone, Debug)]
pub struct TracedPath {
    pub label: BallPoint,
    pub weight: f64,
    pub alpha: f64,
    pub path: GeodesicPath,
}

fn trace_one(chart: &MetricChart, l: &Launch, params: &AssembleParams) -> Result<Option<TracedPath>> {
    let (start, pre_label) = match (l.start, l.label) {
        (Some(p), _) => (p, None),
        (None, Some(b)) => {
            if b.is_tangential() {
                return Ok(None);
            }
            let a = params.aperture.value(&b);
            if a == 0.0 {
                return Ok(None);
            }
            (lift(chart, &b)?, Some(b))
        }
        (None, None) => unreachable!("launch without start or label"),
    };
    let path = shoot(chart, start, &params.shoot)?;
    if !path.exited() || path.length <= path.entry_time {
        return Ok(None);
    }
    let label = match pre_label {
        Some(b) => b,
        None => {
            let s = path.samples[path.entry_index];
            project(chart, &PhasePoint { x: s.x, xi: s.xi })?
        }
    };
    let alpha = params.aperture.value(&label);
    if alpha == 0.0 {
        return Ok(None);
    }
    Ok(Some(TracedPath { label, weight: l.measure, alpha, path }))
}

/// Traces every path of `family` that passes the aperture, in launch order.
pub fn trace_family(chart: &MetricChart, family: &PathFamily, params: &AssembleParams) -> Result<Vec<TracedPath>> {
    params.shoot.validate()?;
    let launches = family.launches(chart)?;
    let out = launches.par_iter().map(|l| trace_one(chart, l, params)).collect::<Result<Vec<_>>>()?;
    Ok(out.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssembleParams {
    pub shoot: ShootParams,
    pub aperture: Aperture,
}

#[derive(Clone, Debug)]
pub struct ForwardSystem {
    pub grid: TensorGrid,
    /// Rows are paths, columns are `3 * node + component`.
    pub a: CsMat<f64>,
    pub weights: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lengths: Vec<f64>,
    pub labels: Vec<BallPoint>,
    pub hypersurface: bool,
    /// Up to 16 ASCII characters identifying the configuration.
    pub fingerprint: String,
}

fn row_entries(grid: &TensorGrid, t: &TracedPath) -> (Vec<usize>, Vec<f64>) {
    let samples = t.path.interior_samples();
    let ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let q = path_weights(&ts, t.path.step);
    let mut acc: Vec<(usize, f64)> = Vec::with_capacity(12 * samples.len());
    for (s, w) in samples.iter().zip(&q) {
        let Some(bl) = grid.bilinear(&s.x) else { continue };
        let xi = s.xi;
        let dir = [xi.x * xi.x, 2.0 * xi.x * xi.y, xi.y * xi.y];
        for (node, b) in bl {
            if b == 0.0 {
                continue;
            }
            for c in 0..3 {
                acc.push((3 * node + c, t.alpha * w * b * dir[c]));
            }
        }
    }
    acc.sort_unstable_by_key(|e| e.0);
    let mut cols = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    for (c, v) in acc {
        if cols.last() == Some(&c) {
            *vals.last_mut().unwrap() += v;
        } else {
            cols.push(c);
            vals.push(v);
        }
    }
    (cols, vals)
}

/// Builds the forward matrix for `family` on `grid`.
pub fn assemble(chart: &MetricChart, family: &PathFamily, grid: TensorGrid, params: &AssembleParams) -> Result<ForwardSystem> {
    params.shoot.validate()?;
    let launches = family.launches(chart)?;
    let rows = launches
        .par_iter()
        .map(|l| {
            Ok(trace_one(chart, l, params)?.map(|t| {
                let (c, v) = row_entries(&grid, &t);
                (c, v, t.weight, t.alpha, t.path.length - t.path.entry_time, t.label)
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<_> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::EmptySystem("no path survives the aperture".into()));
    }
    let mut indptr = vec![0usize];
    let (mut indices, mut data) = (Vec::new(), Vec::new());
    let (mut weights, mut alpha, mut lengths, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (c, v, w, a, l, b) in rows {
        indices.extend(c);
        data.extend(v);
        indptr.push(indices.len());
        weights.push(w);
        alpha.push(a);
        lengths.push(l);
        labels.push(b);
    }
    let a = CsMat::new((weights.len(), 3 * grid.len()), indptr, indices, data);
    Ok(ForwardSystem {
        grid,
        a,
        weights,
        alpha,
        lengths,
        labels,
        hypersurface: family.is_hypersurface(),
        fingerprint: chart.fingerprint(),
    })
}

impl ForwardSystem {
    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    pub fn apply(&self, f: &SymTensorField) -> Result<Vec<f64>> {
        self.grid.same_as(&f.grid)?;
        Ok(spmv(&self.a, &f.to_vec()))
    }

    /// `A^T W A x` on full-grid vectors.
    pub fn normal_apply(&self, x: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = spmv(&self.a, x).iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        spmv_t(&self.a, &y)
    }

    /// Columns of the masked nodes, in the order used by [`Decomposer`].
    pub fn masked_matrix(&self) -> CsMat<f64> {
        let mut map = vec![usize::MAX; self.grid.len()];
        for (r, q) in self.grid.masked_nodes().into_iter().enumerate() {
            map[q] = r;
        }
        let ncols = 3 * self.grid.masked_nodes().len();
        let mut indptr = vec![0usize];
        let (mut indices, mut data) = (Vec::new(), Vec::new());
        for row in self.a.outer_iterator() {
            for (c, &v) in row.iter() {
                let r = map[c / 3];
                if r != usize::MAX {
                    indices.push(3 * r + c % 3);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsMat::new((self.rows(), ncols), indptr, indices, data)
    }

    /// Dense `A^T W A`; only the upper triangle is summed and then mirrored.
    pub fn normal_dense(&self, masked: bool) -> DMatrix<f64> {
        let a = if masked { self.masked_matrix() } else { self.a.clone() };
        let n = a.cols();
        let mut out = DMatrix::zeros(n, n);
        for (row, w) in a.outer_iterator().zip(&self.weights) {
            let entries: Vec<(usize, f64)> = row.iter().map(|(c, &v)| (c, v)).collect();
            for (i, &(ci, vi)) in entries.iter().enumerate() {
                for &(cj, vj) in &entries[i..] {
                    let (lo, hi) = if ci <= cj { (ci, cj) } else { (cj, ci) };
                    out[(lo, hi)] += w * vi * vj;
                }
            }
        }
        for j in 0..n {
            for i in j + 1..n {
                out[(i, j)] = out[(j, i)];
            }
        }
        out
    }
}

/// Full-grid samples of the metric, radially clamped beyond the chart.
pub fn metric_samples(chart: &MetricChart, grid: TensorGrid) -> SymTensorField {
    SymTensorField::from_fn_all(grid, |p| chart.metric_unchecked(&clamp_to_chart(chart, p)))
}

/// `M`-orthonormal basis of the span of `cols` (masked tensor dofs).
pub fn m_orthonormalize(dec: &Decomposer, cols: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if cols.is_empty() {
        return Err(Error::arg("empty spanning set"));
    }
    let n = dec.n_tensor_dofs();
    let s = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let mut ms = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        ms.set_column(j, &DVector::from_vec(dec.mass_apply(c)));
    }
    let gram = s.transpose() * &ms;
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(*v));
    let keep: Vec<usize> = (0..cols.len()).filter(|&k| eig.eigenvalues[k] > 1e-10 * top).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateDirections("spanning set has no nonzero direction".into()));
    }
    let mut q = DMatrix::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let u = eig.eigenvectors.column(k) / eig.eigenvalues[k].sqrt();
        q.set_column(c, &(&s * u));
    }
    Ok(q)
}

pub const DEFAULT_BUMP_SPACING: f64 = 0.5;
pub const DEFAULT_BUMP_RADIUS: f64 = 0.7;
pub const DEFAULT_BUMP_MAX_CENTER: f64 = 0.5;
pub const DEFAULT_POTENTIAL_DEGREE: u32 = 2;

/// Compactly supported smooth bumps `(1 - |x - c|^2 / r^2)^4` on a square
/// lattice of centres with `|c| <= max_center`, one per tensor component.
pub fn bump_spanning_set(grid: TensorGrid, spacing: f64, radius: f64, max_center: f64) -> Vec<SymTensorField> {
    let k = (max_center / spacing).floor() as i64;
    let mut out = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            let c = Point::new(i as f64 * spacing, j as f64 * spacing);
            if c.norm() > max_center + 1e-12 {
                continue;
            }
            for comp in 0..3 {
                out.push(SymTensorField::from_fn(grid, |p| {
                    let q = 1.0 - (p - c).norm_squared() / (radius * radius);
                    let b = if q > 0.0 { q.powi(4) } else { 0.0 };
                    let e = match comp {
                        0 => Matrix2::new(1.0, 0.0, 0.0, 0.0),
                        1 => Matrix2::new(0.0, 1.0, 1.0, 0.0),
                        _ => Matrix2::new(0.0, 0.0, 0.0, 1.0),
                    };
                    e * b
                }));
            }
        }
    }
    out
}

/// `M`-orthonormal basis of the solenoidal parts of `spanning`.
pub fn solenoidal_basis(dec: &Decomposer, spanning: &[SymTensorField]) -> Result<DMatrix<f64>> {
    let cols = spanning
        .iter()
        .map(|f| Ok(dec.decompose_dofs(&dec.restrict(f))?.0))
        .collect::<Result<Vec<_>>>()?;
    m_orthonormalize(dec, &cols)
}

/// `M`-orthonormal basis of `d v` for smooth Dirichlet fields
/// `(1 - |x|^2 / R^2)^3 x^a y^b e_i`, `a + b <= degree`, where `R` is the
/// radius of the active region.
pub fn potential_basis(dec: &Decomposer, degree: u32) -> Result<DMatrix<f64>> {
    let grid = dec.grid();
    let r = 1.0 - 2.0 * grid.spacing();
    let mut cols = Vec::new();
    for d in 0..=degree {
        for a in 0..=d {
            for comp in 0..2 {
                let v = VectorFieldGrid::from_fn(grid, true, |p| {
                    let q = 1.0 - p.norm_squared() / (r * r);
                    let b = if q > 0.0 { q.powi(3) } else { 0.0 };
                    let m = b * p.x.powi(a as i32) * p.y.powi((d - a) as i32);
                    if comp == 0 { Vector2::new(m, 0.0) } else { Vector2::new(0.0, m) }
                });
                cols.push(dec.d_apply(&dec.restrict_vector(&v)));
            }
        }
    }
    m_orthonormalize(dec, &cols)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub dimension: usize,
    pub rows: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub potential_sigma_max: Option<f64>,
    /// Supremum over the subspace of `||f|| / ||N f||`, with `N f` measured
    /// in the Riesz norm dual to the tensor `L2` pairing.
    pub c_hat: f64,
}

fn weighted_product(sys: &ForwardSystem, am: &CsMat<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(sys.rows(), q.ncols());
    for j in 0..q.ncols() {
        let col: Vec<f64> = q.column(j).iter().copied().collect();
        let y = spmv(am, &col);
        for (i, v) in y.iter().enumerate() {
            out[(i, j)] = v * sys.weights[i].sqrt();
        }
    }
    out
}

fn singular_values_desc(m: DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Singular values of `sqrt(W) A` on the span of `basis`, which must be
/// `M`-orthonormal and solenoidal.
pub fn sinjectivity_spectrum(
    sys: &ForwardSystem,
    dec: &Decomposer,
    basis: &DMatrix<f64>,
    potential: Option<&DMatrix<f64>>,
) -> Result<SpectrumReport> {
    dec.grid().same_as(&sys.grid)?;
    if basis.nrows() != dec.n_tensor_dofs() || basis.ncols() == 0 {
        return Err(Error::arg("basis does not match the masked tensor dofs"));
    }
    for j in 0..basis.ncols() {
        let col: Vec<f64> = basis.column(j).iter().copied().collect();
        let r = dec.divergence_ratio(&col);
        if r > 1e-6 {
            return Err(Error::arg(format!("basis column {j} is not solenoidal (divergence ratio {r:.2e})")));
        }
    }
    let am = sys.masked_matrix();
    let b = weighted_product(sys, &am, basis);
    let sv = singular_values_desc(b.clone());
    // N Q = A^T W A Q; Riesz norm through the Cholesky factor of each mass block
    let mut nq = DMatrix::zeros(basis.nrows(), basis.ncols());
    for j in 0..basis.ncols() {
        let wa: Vec<f64> = b.column(j).iter().zip(&sys.weights).map(|(v, w)| v * w.sqrt()).collect();
        let y = spmv_t(&am, &wa);
        nq.set_column(j, &DVector::from_vec(y));
    }
    let blocks = dec.mass_blocks();
    for (r, m) in blocks.iter().enumerate() {
        let l = m.cholesky().expect("mass block is positive definite").l();
        let linv = l.try_inverse().unwrap_or_else(Matrix3::zeros);
        for j in 0..nq.ncols() {
            let v = linv * nalgebra::Vector3::new(nq[(3 * r, j)], nq[(3 * r + 1, j)], nq[(3 * r + 2, j)]);
            for c in 0..3 {
                nq[(3 * r + c, j)] = v[c];
            }
        }
    }
    let nsv = singular_values_desc(nq);
    let nmin = *nsv.last().unwrap();
    let potential_sigma_max = potential.map(|p| singular_values_desc(weighted_product(sys, &am, p))[0]);
    Ok(SpectrumReport {
        dimension: basis.ncols(),
        rows: sys.rows(),
        sigma_min: *sv.last().unwrap(),
        sigma_max: sv[0],
        singular_values: sv,
        potential_sigma_max,
        c_hat: if nmin > 0.0 { 1.0 / nmin } else { f64::INFINITY },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructParams {
    /// Absolute regularization; when absent `lambda_factor * sigma_max^2`.
    pub lambda: Option<f64>,
    pub lambda_factor: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Weighted data noise level; enables the discrepancy principle.
    pub discrepancy: Option<f64>,
    pub tau: f64,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        ReconstructParams { lambda: None, lambda_factor: 1e-6, tol: 1e-10, max_iter: 20_000, discrepancy: None, tau: 1.1 }
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub f: SymTensorField,
    pub solenoidal: SymTensorField,
    pub lambda: f64,
    pub sigma_max: f64,
    /// `||sqrt(W)(A f - d)|| / ||sqrt(W) d||`.
    pub relative_residual: f64,
    pub cg: CgOutcome,
}

/// Largest eigenvalue of `M^{-1} A^T W A` on masked dofs by power iteration.
pub fn sigma_max_squared(sys: &ForwardSystem, dec: &Decomposer, am: &CsMat<f64>) -> f64 {
    let n = am.cols();
    let mut x = vec![1.0; n];
    let mut est = 0.0;
    for _ in 0..200 {
        let nx = dec.norm(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y: Vec<f64> = spmv(am, &x).iter().zip(&sys.weights).map(|(a, w)| a * w).collect();
        let z = dec.mass_solve(&spmv_t(am, &y));
        let new = dec.inner(&x, &z);
        x = z;
        if (new - est).abs() <= 1e-8 * new {
            return new;
        }
        est = new;
    }
    est
}

/// Tikhonov-regularized least squares on the masked dofs, followed by the
/// solenoidal projection.
pub fn reconstruct(sys: &ForwardSystem, dec: &Decomposer, data: &[f64], params: &ReconstructParams) -> Result<Reconstruction> {
    dec.grid().same_as(&sys.grid)?;
    if data.len() != sys.rows() {
        return Err(Error::arg(format!("{} data values for {} paths", data.len(), sys.rows())));
    }
    if !(params.tol > 0.0 && params.lambda_factor > 0.0) {
        return Err(Error::arg("tolerance and lambda factor must be positive"));
    }
    let am = sys.masked_matrix();
    let s2 = sigma_max_squared(sys, dec, &am);
    let wd: Vec<f64> = data.iter().zip(&sys.weights).map(|(d, w)| d * w).collect();
    let rhs = spmv_t(&am, &wd);
    let wnorm = |r: &[f64]| r.iter().zip(&sys.weights).map(|(r, w)| w * r * r).sum::<f64>().sqrt();
    let dnorm = wnorm(data);
    let mut diag_n = vec![0.0; am.cols()];
    for (row, w) in am.outer_iterator().zip(&sys.weights) {
        for (c, &v) in row.iter() {
            diag_n[c] += w * v * v;
        }
    }
    let mdiag = dec.mass_diag();
    let solve = |lambda: f64, x: &mut Vec<f64>| -> Result<CgOutcome> {
        let diag: Vec<f64> = diag_n.iter().zip(&mdiag).map(|(a, m)| a + lambda * m).collect();
        pcg(
            |v, out| {
                let y: Vec<f64> = spmv(&am, v).iter().zip(&sys.weights).map(|(a, w)| a * w).collect();
                let n = spmv_t(&am, &y);
                let m = dec.mass_apply(v);
                for i in 0..out.len() {
                    out[i] = n[i] + lambda * m[i];
                }
            },
            Some(&diag),
            &rhs,
            x,
            params.tol,
            params.max_iter,
        )
    };
    let residual = |x: &[f64]| {
        let r: Vec<f64> = spmv(&am, x).iter().zip(data).map(|(a, d)| a - d).collect();
        wnorm(&r)
    };
    let mut x = vec![0.0; am.cols()];
    let (lambda, cg) = match (params.lambda, params.discrepancy) {
        (Some(l), _) if !(l > 0.0) => return Err(Error::arg("lambda must be positive")),
        (Some(l), None) => (l, solve(l, &mut x)?),
        (None, None) => {
            let l = params.lambda_factor * s2;
            (l, solve(l, &mut x)?)
        }
        (start, Some(delta)) => {
            let mut l = start.unwrap_or(s2).max(f64::MIN_POSITIVE);
            let floor = params.lambda_factor * s2 * 1e-6;
            loop {
                let cg = solve(l, &mut x)?;
                if residual(&x) <= params.tau * delta || l * 0.1 < floor {
                    break (l, cg);
                }
                l *= 0.1;
            }
        }
    };
    let rel = if dnorm > 0.0 { residual(&x) / dnorm } else { 0.0 };
    let (fs, _, _) = dec.decompose_dofs(&x)?;
    Ok(Reconstruction {
        f: dec.extend(&x),
        solenoidal: dec.extend(&fs),
        lambda,
        sigma_max: s2.sqrt(),
        relative_residual: rel,
        cg,
    })
}

pub const LLFS_MAGIC: [u8; 8] = *b"LLFS1\0\0\0";
pub const LLFS_VERSION: u32 = 1;
const FLAG_HYPERSURFACE: u32 = 1;

fn fingerprint_bytes(s: &str) -> [u8; 16] {
    let mut out = [0u8; 16];
    for (o, b) in out.iter_mut().zip(s.bytes()) {
        *o = b;
    }
    out
}

impl ForwardSystem {
    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        for &v in self.a.indptr().raw_storage() {
            p.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &v in self.a.indices() {
            p.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for arr in [self.a.data(), &self.weights, &self.alpha, &self.lengths] {
            for v in arr {
                p.extend_from_slice(&v.to_le_bytes());
            }
        }
        for b in &self.labels {
            p.extend_from_slice(&b.s.to_le_bytes());
        }
        for b in &self.labels {
            p.extend_from_slice(&b.mu.to_le_bytes());
        }
        p
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let payload = self.payload();
        let digest = Sha256::digest(&payload);
        let checksum = u64::from_le_bytes(digest[..8].try_into().unwrap());
        w.write_all(&LLFS_MAGIC)?;
        w.write_all(&LLFS_VERSION.to_le_bytes())?;
        let flags = if self.hypersurface { FLAG_HYPERSURFACE } else { 0 };
        w.write_all(&flags.to_le_bytes())?;
        for v in [self.rows(), self.a.cols(), self.a.nnz(), self.grid.n()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.grid.half_width().to_le_bytes())?;
        w.write_all(&fingerprint_bytes(&self.fingerprint))?;
        w.write_all(&checksum.to_le_bytes())?;
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(8)? != LLFS_MAGIC {
            return Err(Error::Format("not an LLFS1 file".into()));
        }
        let version = cur.u32()?;
        if version != LLFS_VERSION {
            return Err(Error::Format(format!("unsupported LLFS version {version}")));
        }
        let flags = cur.u32()?;
        let rows = cur.u64()? as usize;
        let cols = cur.u64()? as usize;
        let nnz = cur.u64()? as usize;
        let n = cur.u64()? as usize;
        let half_width = cur.f64()?;
        let fp = cur.take(16)?;
        let fingerprint = String::from_utf8_lossy(fp).trim_end_matches('\0').to_string();
        let checksum = cur.u64()?;
        let payload = &buf[cur.pos..];
        let expect = 8 * ((rows + 1) + 2 * nnz + 5 * rows);
        if payload.len() != expect {
            return Err(Error::Format(format!("payload has {} bytes, header implies {expect}", payload.len())));
        }
        let digest = Sha256::digest(payload);
        if u64::from_le_bytes(digest[..8].try_into().unwrap()) != checksum {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let grid = TensorGrid::new(n, half_width).map_err(|e| Error::Format(e.to_string()))?;
        if cols != 3 * grid.len() {
            return Err(Error::Format(format!("{cols} columns for a {n}x{n} grid")));
        }
        let indptr: Vec<usize> = (0..=rows).map(|_| cur.u64().map(|v| v as usize)).collect::<Result<_>>()?;
        let indices: Vec<usize> = (0..nnz).map(|_| cur.u64().map(|v| v as usize)).collect::<Result<_>>()?;
        let data: Vec<f64> = (0..nnz).map(|_| cur.f64()).collect::<Result<_>>()?;
        let mut vecs = Vec::new();
        for _ in 0..5 {
            vecs.push((0..rows).map(|_| cur.f64()).collect::<Result<Vec<f64>>>()?);
        }
        let mu = vecs.pop().unwrap();
        let s = vecs.pop().unwrap();
        let lengths = vecs.pop().unwrap();
        let alpha = vecs.pop().unwrap();
        let weights = vecs.pop().unwrap();
        if indptr[0] != 0 || indptr[rows] != nnz || indptr.windows(2).any(|w| w[0] > w[1]) || indices.iter().any(|&c| c >= cols) {
            return Err(Error::Format("inconsistent sparse structure".into()));
        }
        let a = CsMat::try_new((rows, cols), indptr, indices, data)
            .map_err(|e| Error::Format(format!("invalid sparse matrix: {}", e.3)))?;
        Ok(ForwardSystem {
            grid,
            a,
            weights,
            alpha,
            lengths,
            labels: s.into_iter().zip(mu).map(|(s, mu)| BallPoint { s, mu }).collect(),
            hypersurface: flags & FLAG_HYPERSURFACE != 0,
            fingerprint,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

const ROW_HEADER: &str = "s,mu,alpha,weight,length,value";

/// Writes one line per system row: `s,mu,alpha,weight,length,value`.
pub fn write_row_values<W: Write>(w: &mut W, sys: &ForwardSystem, values: &[f64], comment: Option<&str>) -> Result<()> {
    if values.len() != sys.rows() {
        return Err(Error::arg(format!("{} values for {} rows", values.len(), sys.rows())));
    }
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{ROW_HEADER}")?;
    for i in 0..sys.rows() {
        let b = sys.labels[i];
        writeln!(w, "{},{},{},{},{},{}", b.s, b.mu, sys.alpha[i], sys.weights[i], sys.lengths[i], values[i])?;
    }
    Ok(())
}

/// Reads the `value` column written by [`write_row_values`].
pub fn read_row_values(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h.trim() == "value")
        .ok_or_else(|| Error::Format("row data lacks a `value` column".into()))?;
    rdr.records()
        .map(|r| {
            let r = r?;
            let v = r.get(col).ok_or_else(|| Error::Format("short row".into()))?;
            v.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{v}`")))
        })
        .collect()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_polynomials() {
        let h = 0.1;
        let mut ts: Vec<f64> = (0..8).map(|k| k as f64 * h).collect();
        ts.push(0.7 + 0.037);
        let w = path_weights(&ts, h);
        let quad: f64 = ts.iter().zip(&w).map(|(t, w)| w * t * t).sum();
        let exact = 0.737f64.powi(3) / 3.0;
        assert!((quad - exact).abs() < 1e-13);
        // partial first interval, odd core
        let mut ts2 = vec![0.0, 0.02];
        ts2.extend((1..7).map(|k| 0.02 + k as f64 * h));
        let w2 = path_weights(&ts2, h);
        let quad2: f64 = ts2.iter().zip(&w2).map(|(t, w)| w * t * t).sum();
        assert!((quad2 - ts2.last().unwrap().powi(3) / 3.0).abs() < 1e-13);
    }

    #[test]
    fn window_ramps_smoothly() {
        let w = Window::new((0.5, 1.0), (0.6, 1.0)).unwrap();
        assert_eq!(w.value(0.4), 0.0);
        assert_eq!(w.value(0.5), 0.0);
        assert_eq!(w.value(0.7), 1.0);
        assert!((w.value(0.55) - 0.5).abs() < 1e-12);
        assert!(Window::new((0.5, 1.0), (0.4, 1.0)).is_err());
    }

    #[test]
    fn euclidean_chord_has_length_integral() {
        let chart = MetricChart::euclidean();
        let b = BallPoint::new(-std::f64::consts::FRAC_PI_2, 0.5);
        let path = shoot(&chart, lift(&chart, &b).unwrap(), &ShootParams::default()).unwrap();
        let v = xray(&MetricField(&chart), &path).unwrap();
        assert!((v - 3f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn empty_aperture_is_rejected() {
        let chart = MetricChart::euclidean();
        let params = AssembleParams {
            shoot: ShootParams::default(),
            aperture: Aperture { abs_mu: Some(Window::new((2.0, 3.0), (2.0, 3.0)).unwrap()), s: None },
        };
        let fam = PathFamily::Boundary { grid: LensGrid::full(4, 4), jitter: 0.0, seed: 1 };
        let grid = TensorGrid::with_size(9).unwrap();
        assert!(matches!(assemble(&chart, &fam, grid, &params), Err(Error::EmptySystem(_))));
    }

    #[test]
    fn llfs_round_trip_and_corruption() {
        let chart = MetricChart::euclidean();
        let fam = PathFamily::Boundary { grid: LensGrid::full(6, 4), jitter: 0.0, seed: 1 };
        let sys = assemble(&chart, &fam, TensorGrid::with_size(9).unwrap(), &AssembleParams::default()).unwrap();
        let mut buf = Vec::new();
        sys.write_to(&mut buf).unwrap();
        let back = ForwardSystem::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.a, sys.a);
        assert_eq!(back.weights, sys.weights);
        assert_eq!(back.labels, sys.labels);
        assert_eq!(back.fingerprint, sys.fingerprint);
        let last = buf.len() - 1;
        buf[last] ^= 1;
        assert!(matches!(ForwardSystem::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
