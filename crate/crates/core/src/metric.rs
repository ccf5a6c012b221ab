//! Metric charts on the closed unit disc with an extension margin.
//!
//! Every family is evaluated through one generic routine over dual numbers so
//! that first and second derivatives of `g` are exact. Points are in chart
//! coordinates; the physical disc is `|x| <= 1` and the chart is valid up to
//! `|x| <= 1 + margin`.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, SVector, Vector2};
use num_dual::{Dual2SVec64, DualNum, DualSVec64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::field::DirichletField;
use crate::{Error, Point, Result};

pub const DEFAULT_MARGIN: f64 = 0.1;
/// Smoothness reported for analytic families.
pub const ANALYTIC_SMOOTHNESS: u32 = 8;
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: [f64; 2],
    pub radius: f64,
}

/// Conformal factor `phi` of `g = exp(2 phi) I`:
/// `a (1 - |x|^2) + b + t x_1 + bump`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConformalFactor {
    pub amplitude: f64,
    pub offset: f64,
    pub tilt: f64,
    pub bump: Option<Bump>,
}

impl ConformalFactor {
    pub fn radial(amplitude: f64) -> Self {
        ConformalFactor { amplitude, ..Default::default() }
    }

    pub fn phi<D: DualNum<Primitive = f64> + Copy>(&self, x: [D; 2]) -> D {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let mut phi = (-r2 + 1.0) * self.amplitude + self.offset + x[0] * self.tilt;
        if let Some(b) = &self.bump {
            let dx = x[0] - b.center[0];
            let dy = x[1] - b.center[1];
            let q = (dx * dx + dy * dy) / (b.radius * b.radius);
            if q.re() < 1.0 {
                // exp(1 - 1/(1 - q)) is smooth and flat at q = 1
                phi += ((-(-q + 1.0).recip()) + 1.0).exp() * b.amplitude;
            }
        }
        phi
    }
}

#[derive(Clone, Debug)]
pub enum Family {
    Euclidean,
    Conformal(ConformalFactor),
    /// `g = 4 / (1 + c |x|^2)^2 I`, Gauss curvature `c`.
    ConstantCurvature { curvature: f64 },
    /// Polar metric `dr^2 + (r (1 + c r^2))^2 dtheta^2` in Cartesian chart coordinates.
    PolarNormal { c: f64 },
    Tabulated(Arc<TabulatedMetric>),
    /// `psi^* g` with `psi(x) = x + eps w(x)`.
    Pullback { base: Arc<MetricChart>, field: DirichletField, eps: f64 },
}

#[derive(Clone, Debug)]
pub struct MetricChart {
    family: Family,
    margin: f64,
    smoothness: u32,
}

/// `g` and its first derivatives, `dg[k] = d g / d x^k`.
#[derive(Clone, Copy, Debug)]
pub struct MetricJet {
    pub g: Matrix2<f64>,
    pub dg: [Matrix2<f64>; 2],
}

#[derive(Clone, Copy, Debug)]
pub struct MetricJet2 {
    pub g: Matrix2<f64>,
    pub dg: [Matrix2<f64>; 2],
    pub d2g: [[Matrix2<f64>; 2]; 2],
}

/// Christoffel symbols `gamma[k][i][j]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Christoffel(pub [[[f64; 2]; 2]; 2]);

impl Christoffel {
    /// `Gamma^k_ij a^i b^j`
    pub fn contract(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
        let mut out = Vector2::zeros();
        for k in 0..2 {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    s += self.0[k][i][j] * a[i] * b[j];
                }
            }
            out[k] = s;
        }
        out
    }

    pub fn from_jet(jet: &MetricJet) -> Self {
        let ginv = inverse2(&jet.g);
        let mut gamma = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for l in 0..2 {
                        s += ginv[(k, l)] * (jet.dg[i][(l, j)] + jet.dg[j][(l, i)] - jet.dg[l][(i, j)]);
                    }
                    gamma[k][i][j] = 0.5 * s;
                }
            }
        }
        Christoffel(gamma)
    }
}

/// g-orthonormal frame on a coordinate circle: unit tangent along increasing
/// angle, inward unit normal, and `|d x / d s|_g`.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryFrame {
    pub s: f64,
    pub x: Point,
    pub tangent: Vector2<f64>,
    pub normal: Vector2<f64>,
    pub arc_speed: f64,
}

pub(crate) fn inverse2(g: &Matrix2<f64>) -> Matrix2<f64> {
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    Matrix2::new(g[(1, 1)], -g[(0, 1)], -g[(1, 0)], g[(0, 0)]) / det
}

pub(crate) fn det2(g: &Matrix2<f64>) -> f64 {
    g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)]
}

fn sym(c: [f64; 3]) -> Matrix2<f64> {
    Matrix2::new(c[0], c[1], c[1], c[2])
}

impl MetricChart {
    pub fn new(family: Family) -> Self {
        let smoothness = match &family {
            Family::Tabulated(_) => 2,
            Family::Pullback { base, .. } => base.smoothness,
            _ => ANALYTIC_SMOOTHNESS,
        };
        MetricChart { family, margin: DEFAULT_MARGIN, smoothness }
    }

    pub fn euclidean() -> Self {
        Self::new(Family::Euclidean)
    }

    pub fn conformal(phi: ConformalFactor) -> Self {
        Self::new(Family::Conformal(phi))
    }

    pub fn constant_curvature(curvature: f64) -> Self {
        Self::new(Family::ConstantCurvature { curvature })
    }

    /// Upper hemisphere in stereographic coordinates; the unit disc maps onto it.
    pub fn sphere() -> Self {
        Self::constant_curvature(1.0)
    }

    pub fn polar_normal(c: f64) -> Self {
        Self::new(Family::PolarNormal { c })
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::arg(format!("margin must be positive, got {margin}")));
        }
        self.margin = margin;
        Ok(self)
    }

    pub fn with_smoothness(mut self, k: u32) -> Self {
        self.smoothness = k;
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.family, Family::Euclidean)
    }

    pub fn extent(&self) -> f64 {
        1.0 + self.margin
    }

    pub fn contains(&self, x: &Point) -> bool {
        x.norm() <= self.extent() + DOMAIN_SLACK
    }

    pub fn check_domain(&self, x: &Point) -> Result<()> {
        if self.contains(x) && x.x.is_finite() && x.y.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain { x: x.x, y: x.y, limit: self.extent() })
        }
    }

    fn conformal_phi<D: DualNum<Primitive = f64> + Copy>(&self, x: [D; 2]) -> Option<D> {
        match &self.family {
            Family::Conformal(f) => Some(f.phi(x)),
            Family::ConstantCurvature { curvature } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                Some(-(r2 * *curvature + 1.0).ln() + std::f64::consts::LN_2)
            }
            _ => None,
        }
    }

    /// Components `(g11, g12, g22)` in any dual number type.
    pub fn components_generic<D: DualNum<Primitive = f64> + Copy>(&self, x: [D; 2]) -> [D; 3] {
        let zero = D::from(0.0);
        let one = D::from(1.0);
        match &self.family {
            Family::Euclidean => [one, zero, one],
            Family::Conformal(_) | Family::ConstantCurvature { .. } => {
                let e = (self.conformal_phi(x).unwrap() * 2.0).exp();
                [e, zero, e]
            }
            Family::PolarNormal { c } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let a = (r2 * *c + 1.0).powi(2);
                let b = -(r2 * (c * c) + 2.0 * c);
                [a + b * x[0] * x[0], b * x[0] * x[1], a + b * x[1] * x[1]]
            }
            Family::Tabulated(t) => t.eval_generic(x),
            Family::Pullback { base, field, eps } => {
                let (w, dw) = field.eval_generic(x);
                let y = [x[0] + w[0] * *eps, x[1] + w[1] * *eps];
                let j = [
                    [dw[0][0] * *eps + 1.0, dw[0][1] * *eps],
                    [dw[1][0] * *eps, dw[1][1] * *eps + 1.0],
                ];
                let gb = base.components_generic(y);
                let gm = [[gb[0], gb[1]], [gb[1], gb[2]]];
                let entry = |a: usize, b: usize| {
                    let mut s = zero;
                    for i in 0..2 {
                        for k in 0..2 {
                            s += j[i][a] * gm[i][k] * j[k][b];
                        }
                    }
                    s
                };
                [entry(0, 0), entry(0, 1), entry(1, 1)]
            }
        }
    }

    pub(crate) fn metric_unchecked(&self, x: &Point) -> Matrix2<f64> {
        sym(self.components_generic([x.x, x.y]))
    }

    pub fn metric(&self, x: &Point) -> Result<Matrix2<f64>> {
        self.check_domain(x)?;
        Ok(self.metric_unchecked(x))
    }

    pub(crate) fn jet_unchecked(&self, x: &Point) -> MetricJet {
        if self.is_euclidean() {
            return MetricJet { g: Matrix2::identity(), dg: [Matrix2::zeros(); 2] };
        }
        let p = SVector::<f64, 2>::new(x.x, x.y);
        if self.conformal_phi([x.x, x.y]).is_some() {
            let (phi, grad) = num_dual::gradient(
                |v: SVector<DualSVec64<2>, 2>| self.conformal_phi([v[0], v[1]]).unwrap(),
                &p,
            );
            let e = (2.0 * phi).exp();
            return MetricJet {
                g: Matrix2::identity() * e,
                dg: [Matrix2::identity() * (2.0 * grad[0] * e), Matrix2::identity() * (2.0 * grad[1] * e)],
            };
        }
        let out = num_dual::gradient(
            |v: SVector<DualSVec64<2>, 2>| self.components_generic([v[0], v[1]]),
            &p,
        );
        let g = sym([out[0].0, out[1].0, out[2].0]);
        let dg = [0, 1].map(|k| sym([out[0].1[k], out[1].1[k], out[2].1[k]]));
        MetricJet { g, dg }
    }

    pub fn jet(&self, x: &Point) -> Result<MetricJet> {
        self.check_domain(x)?;
        Ok(self.jet_unchecked(x))
    }

    pub(crate) fn jet2_unchecked(&self, x: &Point) -> MetricJet2 {
        if self.is_euclidean() {
            return MetricJet2 {
                g: Matrix2::identity(),
                dg: [Matrix2::zeros(); 2],
                d2g: [[Matrix2::zeros(); 2]; 2],
            };
        }
        let p = SVector::<f64, 2>::new(x.x, x.y);
        if self.conformal_phi([x.x, x.y]).is_some() {
            let (phi, grad, hess) = num_dual::hessian(
                |v: SVector<Dual2SVec64<2>, 2>| self.conformal_phi([v[0], v[1]]).unwrap(),
                &p,
            );
            let e = (2.0 * phi).exp();
            let id = Matrix2::identity();
            let d2 = |k: usize, l: usize| id * (e * (4.0 * grad[k] * grad[l] + 2.0 * hess[(k, l)]));
            return MetricJet2 {
                g: id * e,
                dg: [id * (2.0 * grad[0] * e), id * (2.0 * grad[1] * e)],
                d2g: [[d2(0, 0), d2(0, 1)], [d2(1, 0), d2(1, 1)]],
            };
        }
        let out = num_dual::hessian(
            |v: SVector<Dual2SVec64<2>, 2>| self.components_generic([v[0], v[1]]),
            &p,
        );
        let g = sym([out[0].0, out[1].0, out[2].0]);
        let dg = [0, 1].map(|k| sym([out[0].1[k], out[1].1[k], out[2].1[k]]));
        let d2 = |k: usize, l: usize| sym([out[0].2[(k, l)], out[1].2[(k, l)], out[2].2[(k, l)]]);
        MetricJet2 { g, dg, d2g: [[d2(0, 0), d2(0, 1)], [d2(1, 0), d2(1, 1)]] }
    }

    pub fn jet2(&self, x: &Point) -> Result<MetricJet2> {
        self.check_domain(x)?;
        Ok(self.jet2_unchecked(x))
    }

    pub fn christoffel(&self, x: &Point) -> Result<Christoffel> {
        if self.smoothness < 2 {
            return Err(Error::arg("Christoffel symbols need a chart of smoothness at least 2"));
        }
        Ok(Christoffel::from_jet(&self.jet(x)?))
    }

    /// Geodesic acceleration `-Gamma(x)(xi, xi)` without domain checks.
    #[inline]
    pub(crate) fn acceleration(&self, x: &Point, xi: &Vector2<f64>) -> Vector2<f64> {
        if self.is_euclidean() {
            return Vector2::zeros();
        }
        -Christoffel::from_jet(&self.jet_unchecked(x)).contract(xi, xi)
    }

    pub fn gauss_curvature(&self, x: &Point) -> Result<f64> {
        if self.smoothness < 3 {
            return Err(Error::arg("Gauss curvature needs a chart of smoothness at least 3"));
        }
        self.check_domain(x)?;
        Ok(self.gauss_curvature_unchecked(x))
    }

    pub(crate) fn gauss_curvature_unchecked(&self, x: &Point) -> f64 {
        if self.is_euclidean() {
            return 0.0;
        }
        let j = self.jet2_unchecked(x);
        let (e, f, g) = (j.g[(0, 0)], j.g[(0, 1)], j.g[(1, 1)]);
        let (eu, ev) = (j.dg[0][(0, 0)], j.dg[1][(0, 0)]);
        let (fu, fv) = (j.dg[0][(0, 1)], j.dg[1][(0, 1)]);
        let (gu, gv) = (j.dg[0][(1, 1)], j.dg[1][(1, 1)]);
        let evv = j.d2g[1][1][(0, 0)];
        let fuv = j.d2g[0][1][(0, 1)];
        let guu = j.d2g[0][0][(1, 1)];
        let a = Matrix3::new(
            -0.5 * evv + fuv - 0.5 * guu, 0.5 * eu, fu - 0.5 * ev,
            fv - 0.5 * gu, e, f,
            0.5 * gv, f, g,
        );
        let b = Matrix3::new(0.0, 0.5 * ev, 0.5 * gu, 0.5 * ev, e, f, 0.5 * gu, f, g);
        let d = e * g - f * f;
        (a.determinant() - b.determinant()) / (d * d)
    }

    pub fn inner(&self, x: &Point, a: &Vector2<f64>, b: &Vector2<f64>) -> Result<f64> {
        Ok(a.dot(&(self.metric(x)? * b)))
    }

    pub fn norm(&self, x: &Point, a: &Vector2<f64>) -> Result<f64> {
        Ok(self.inner(x, a, a)?.sqrt())
    }

    /// Frame on the circle `|x| = radius` at angle `s`.
    pub fn frame_on_circle(&self, radius: f64, s: f64) -> Result<BoundaryFrame> {
        let x = Point::new(radius * s.cos(), radius * s.sin());
        let g = self.metric(&x)?;
        let t_coord = Vector2::new(-radius * s.sin(), radius * s.cos());
        let arc_speed = t_coord.dot(&(g * t_coord)).sqrt();
        let tangent = t_coord / arc_speed;
        let n0 = -x / radius;
        let n1 = n0 - tangent * tangent.dot(&(g * n0));
        let normal = n1 / n1.dot(&(g * n1)).sqrt();
        Ok(BoundaryFrame { s, x, tangent, normal, arc_speed })
    }

    pub fn boundary_frame(&self, s: f64) -> Result<BoundaryFrame> {
        self.frame_on_circle(1.0, s)
    }

    /// Geodesic curvature of the boundary circle at `s` with respect to the inward normal.
    pub fn boundary_curvature(&self, s: f64) -> Result<f64> {
        let fr = self.boundary_frame(s)?;
        let g = self.metric(&fr.x)?;
        let t_coord = fr.tangent * fr.arc_speed;
        let acc = -fr.x + self.christoffel(&fr.x)?.contract(&t_coord, &t_coord);
        Ok(acc.dot(&(g * fr.normal)) / (fr.arc_speed * fr.arc_speed))
    }

    /// `(g_11, d g_11 / d x^n)` at `s` in boundary normal coordinates `(s, x^n)`.
    pub fn boundary_normal_jet(&self, s: f64) -> Result<(f64, f64)> {
        let fr = self.boundary_frame(s)?;
        let g11 = fr.arc_speed * fr.arc_speed;
        let kappa = self.boundary_curvature(s)?;
        Ok((g11, -2.0 * kappa * g11))
    }

    pub fn fingerprint(&self) -> String {
        let mut desc = String::new();
        self.describe(&mut desc);
        let _ = write!(desc, ";margin={:?};k={}", self.margin, self.smoothness);
        let digest = Sha256::digest(desc.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn describe(&self, out: &mut String) {
        match &self.family {
            Family::Tabulated(t) => {
                let mut h = Sha256::new();
                for v in t.xs.iter().chain(&t.ys).chain(t.values.iter().flat_map(|n| n.iter().flatten())) {
                    h.update(v.to_le_bytes());
                }
                let d = h.finalize();
                let _ = write!(out, "tabulated:{}", d.iter().take(8).map(|b| format!("{b:02x}")).collect::<String>());
            }
            Family::Pullback { base, field, eps } => {
                let _ = write!(out, "pullback({field:?},{eps:?})<");
                base.describe(out);
                out.push('>');
            }
            other => {
                let _ = write!(out, "{other:?}");
            }
        }
    }

    /// Samples this chart on an `n x n` grid covering the extended chart and
    /// returns the bicubic interpolant.
    pub fn tabulate(&self, n: usize) -> Result<MetricChart> {
        if n < 5 {
            return Err(Error::arg("tabulation needs at least 5 nodes per axis"));
        }
        let half = self.extent() + 0.05;
        let xs: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
        let mut samples = Vec::with_capacity(n * n);
        for &y in &xs {
            for &x in &xs {
                // corners of the square lie outside the chart; use the radial projection there
                let p = Point::new(x, y);
                let q = if p.norm() > self.extent() { p * (self.extent() / p.norm()) } else { p };
                samples.push(self.components_generic([q.x, q.y]));
            }
        }
        let table = TabulatedMetric::from_samples(xs.clone(), xs, samples)?;
        Ok(MetricChart { family: Family::Tabulated(Arc::new(table)), margin: self.margin, smoothness: 2 })
    }

    pub fn from_table_csv(path: &Path) -> Result<MetricChart> {
        let table = TabulatedMetric::read_csv(path)?;
        Ok(MetricChart::new(Family::Tabulated(Arc::new(table))))
    }
}

/// Bicubic Hermite interpolant of metric samples on a rectangular grid.
///
/// Node derivatives are fourth-order finite differences. The interpolant is
/// C^1 with Lipschitz second derivatives, so the chart reports smoothness 2.
/// Outside the table box the metric is continued radially from the unit circle.
#[derive(Clone, Debug)]
pub struct TabulatedMetric {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// per node, per component: `[f, f_x, f_y, f_xy]`
    values: Vec<[[f64; 4]; 3]>,
}

fn fd4(vals: &[f64], i: usize, h: f64) -> f64 {
    let n = vals.len();
    let f = |k: usize| vals[k];
    if i >= 2 && i + 2 < n {
        (f(i - 2) - 8.0 * f(i - 1) + 8.0 * f(i + 1) - f(i + 2)) / (12.0 * h)
    } else if i == 0 {
        (-25.0 * f(0) + 48.0 * f(1) - 36.0 * f(2) + 16.0 * f(3) - 3.0 * f(4)) / (12.0 * h)
    } else if i == 1 {
        (-3.0 * f(0) - 10.0 * f(1) + 18.0 * f(2) - 6.0 * f(3) + f(4)) / (12.0 * h)
    } else if i == n - 2 {
        -(-3.0 * f(n - 1) - 10.0 * f(n - 2) + 18.0 * f(n - 3) - 6.0 * f(n - 4) + f(n - 5)) / (12.0 * h)
    } else {
        -(-25.0 * f(n - 1) + 48.0 * f(n - 2) - 36.0 * f(n - 3) + 16.0 * f(n - 4) - 3.0 * f(n - 5)) / (12.0 * h)
    }
}

fn is_uniform(v: &[f64]) -> bool {
    let h = (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
    v.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0))
}

impl TabulatedMetric {
    /// `samples` is row-major with x varying fastest.
    pub fn from_samples(xs: Vec<f64>, ys: Vec<f64>, samples: Vec<[f64; 3]>) -> Result<Self> {
        let (nx, ny) = (xs.len(), ys.len());
        if nx < 5 || ny < 5 || samples.len() != nx * ny {
            return Err(Error::arg("table must be a full grid with at least 5 nodes per axis"));
        }
        if !is_uniform(&xs) || !is_uniform(&ys) {
            return Err(Error::arg("table grid must be uniform"));
        }
        if xs[0] > -1.0 || xs[nx - 1] < 1.0 || ys[0] > -1.0 || ys[ny - 1] < 1.0 {
            return Err(Error::arg("table must cover [-1, 1]^2"));
        }
        for s in &samples {
            if !(s[0] > 0.0 && s[0] * s[2] - s[1] * s[1] > 0.0) {
                return Err(Error::arg("table contains a sample that is not positive definite"));
            }
        }
        let hx = xs[1] - xs[0];
        let hy = ys[1] - ys[0];
        let mut values = vec![[[0.0; 4]; 3]; nx * ny];
        for c in 0..3 {
            let field: Vec<f64> = samples.iter().map(|s| s[c]).collect();
            let mut fx = vec![0.0; nx * ny];
            let mut fy = vec![0.0; nx * ny];
            for j in 0..ny {
                let row: Vec<f64> = (0..nx).map(|i| field[j * nx + i]).collect();
                for i in 0..nx {
                    fx[j * nx + i] = fd4(&row, i, hx);
                }
            }
            for i in 0..nx {
                let col: Vec<f64> = (0..ny).map(|j| field[j * nx + i]).collect();
                let colx: Vec<f64> = (0..ny).map(|j| fx[j * nx + i]).collect();
                for j in 0..ny {
                    fy[j * nx + i] = fd4(&col, j, hy);
                    values[j * nx + i][c][3] = fd4(&colx, j, hy);
                }
            }
            for k in 0..nx * ny {
                values[k][c][0] = field[k];
                values[k][c][1] = fx[k];
                values[k][c][2] = fy[k];
            }
        }
        Ok(TabulatedMetric { xs, ys, values })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let mut rows: Vec<[f64; 5]> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::Format("table rows need columns x,y,g11,g12,g22".into()));
            }
            let mut r = [0.0; 5];
            for (k, v) in rec.iter().enumerate() {
                r[k] = v.trim().parse().map_err(|_| Error::Format(format!("bad number `{v}`")))?;
            }
            rows.push(r);
        }
        let mut xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let mut ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        for v in [&mut xs, &mut ys] {
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        }
        let mut samples = vec![[f64::NAN; 3]; xs.len() * ys.len()];
        for r in &rows {
            let i = xs.iter().position(|&x| (x - r[0]).abs() < 1e-12).unwrap();
            let j = ys.iter().position(|&y| (y - r[1]).abs() < 1e-12).unwrap();
            samples[j * xs.len() + i] = [r[2], r[3], r[4]];
        }
        if samples.iter().any(|s| s[0].is_nan()) {
            return Err(Error::Format("table is not a full grid".into()));
        }
        Self::from_samples(xs, ys, samples)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(["x", "y", "g11", "g12", "g22"])?;
        for (j, y) in self.ys.iter().enumerate() {
            for (i, x) in self.xs.iter().enumerate() {
                let v = &self.values[j * self.xs.len() + i];
                w.write_record([x, y, &v[0][0], &v[1][0], &v[2][0]].map(|f| f.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn in_box(&self, x: f64, y: f64) -> bool {
        x >= self.xs[0] && x <= self.xs[self.xs.len() - 1] && y >= self.ys[0] && y <= self.ys[self.ys.len() - 1]
    }

    fn eval_generic<D: DualNum<Primitive = f64> + Copy>(&self, x: [D; 2]) -> [D; 3] {
        let mut p = x;
        if !self.in_box(p[0].re(), p[1].re()) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            p = [p[0] / r, p[1] / r];
        }
        let nx = self.xs.len();
        let hx = self.xs[1] - self.xs[0];
        let hy = self.ys[1] - self.ys[0];
        let cell = |v: f64, v0: f64, h: f64, n: usize| (((v - v0) / h).floor().max(0.0) as usize).min(n - 2);
        let i = cell(p[0].re(), self.xs[0], hx, nx);
        let j = cell(p[1].re(), self.ys[0], hy, self.ys.len());
        let u = (p[0] - self.xs[i]) / hx;
        let v = (p[1] - self.ys[j]) / hy;
        let basis = |t: D| {
            let t2 = t * t;
            let t3 = t2 * t;
            [
                t3 * 2.0 - t2 * 3.0 + 1.0,
                t3 - t2 * 2.0 + t,
                t3 * (-2.0) + t2 * 3.0,
                t3 - t2,
            ]
        };
        let bu = basis(u);
        let bv = basis(v);
        let mut out = [D::from(0.0); 3];
        for (ci, cj) in [(0usize, 0usize), (1, 0), (0, 1), (1, 1)] {
            let node = &self.values[(j + cj) * nx + i + ci];
            let (h0u, h1u) = (bu[2 * ci], bu[2 * ci + 1]);
            let (h0v, h1v) = (bv[2 * cj], bv[2 * cj + 1]);
            for c in 0..3 {
                let d = &node[c];
                out[c] += h0u * h0v * d[0] + h1u * h0v * (d[1] * hx) + h0u * h1v * (d[2] * hy)
                    + h1u * h1v * (d[3] * hx * hy);
            }
        }
        out
    }
}
