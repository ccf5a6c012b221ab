//! Unit-speed geodesics by classical Runge-Kutta with exit localization.
//!
//! The direction is renormalized to unit length after every step. A path that
//! starts on the boundary is followed until it reaches `|x| = 1` again; a path
//! that starts outside the disc is followed until it has entered and left.
//! Crossings are located by bisection on `|x(t)|^2 - 1` over a fractional
//! Runge-Kutta step.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::metric::MetricChart;
use crate::{Error, Point, Result};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_MAX_LENGTH: f64 = 50.0;
const BOUNDARY_TOL: f64 = 1e-12;
const CROSSING_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: Point,
    pub xi: Vector2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathStatus {
    Exited,
    Trapped,
    LeftExtendedChart,
}

#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub t: f64,
    pub x: Point,
    pub xi: Vector2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootParams {
    pub step: f64,
    pub max_length: f64,
}

impl Default for ShootParams {
    fn default() -> Self {
        ShootParams { step: DEFAULT_STEP, max_length: DEFAULT_MAX_LENGTH }
    }
}

impl ShootParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::arg(format!("step must be positive, got {}", self.step)));
        }
        if !(self.max_length > 0.0 && self.max_length.is_finite()) {
            return Err(Error::arg(format!("max length must be positive, got {}", self.max_length)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GeodesicPath {
    pub start: PhasePoint,
    /// Samples at every step. The entry point (if the path started outside)
    /// and the exit point are included as samples.
    pub samples: Vec<Sample>,
    pub status: PathStatus,
    /// Exit time `l`; infinite when trapped.
    pub length: f64,
    pub exit: Option<PhasePoint>,
    /// Time at which the path is first in the closed disc.
    pub entry_time: f64,
    pub entry_index: usize,
    pub step: f64,
}

impl GeodesicPath {
    pub fn exited(&self) -> bool {
        self.status == PathStatus::Exited
    }

    /// Samples inside the disc, from the entry point to the exit point.
    pub fn interior_samples(&self) -> &[Sample] {
        &self.samples[self.entry_index..]
    }
}

type State = (Point, Vector2<f64>);

#[inline]
fn rk4(chart: &MetricChart, y: &State, h: f64, ext2: f64) -> Option<State> {
    let (x, xi) = y;
    let inside = |p: &Point| p.norm_squared() <= ext2;
    let a1 = chart.acceleration(x, xi);
    let x2 = x + xi * (0.5 * h);
    let v2 = xi + a1 * (0.5 * h);
    if !inside(&x2) {
        return None;
    }
    let a2 = chart.acceleration(&x2, &v2);
    let x3 = x + v2 * (0.5 * h);
    let v3 = xi + a2 * (0.5 * h);
    if !inside(&x3) {
        return None;
    }
    let a3 = chart.acceleration(&x3, &v3);
    let x4 = x + v3 * h;
    let v4 = xi + a3 * h;
    if !inside(&x4) {
        return None;
    }
    let a4 = chart.acceleration(&x4, &v4);
    let xn = x + (xi + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0);
    let vn = xi + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
    if !inside(&xn) {
        return None;
    }
    Some((xn, vn))
}

fn normalize(chart: &MetricChart, x: &Point, xi: &Vector2<f64>) -> Vector2<f64> {
    let g = chart.metric_unchecked(x);
    xi / xi.dot(&(g * xi)).sqrt()
}

#[inline]
fn level(x: &Point) -> f64 {
    x.norm_squared() - 1.0
}

/// Locates the fractional step at which `level` changes sign between `y`
/// (`level < 0` when `inward` is false) and the full step.
fn bisect_crossing(chart: &MetricChart, y: &State, h: f64, ext2: f64, exiting: bool) -> (f64, State) {
    let eval = |th: f64| rk4(chart, y, th * h, ext2).map(|s| (level(&s.0), s));
    let sign = |v: f64| if exiting { v >= 0.0 } else { v < 0.0 };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best = eval(1.0).expect("full step was evaluated before");
    for _ in 0..80 {
        if (hi - lo) * h <= 1e-16 || best.0.abs() <= CROSSING_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match eval(mid) {
            Some(v) if sign(v.0) => {
                hi = mid;
                best = v;
            }
            Some(_) => lo = mid,
            None => hi = mid,
        }
    }
    (hi, best.1)
}

fn shoot_impl(chart: &MetricChart, start: PhasePoint, params: &ShootParams, store: bool) -> Result<GeodesicPath> {
    params.validate()?;
    chart.check_domain(&start.x)?;
    let speed2 = start.xi.dot(&(chart.metric_unchecked(&start.x) * start.xi));
    if !(speed2 > 0.0 && speed2.is_finite()) {
        return Err(Error::arg("initial direction must be nonzero"));
    }
    let h = params.step;
    let ext2 = chart.extent() * chart.extent();
    let xi0 = start.xi / speed2.sqrt();
    let start = PhasePoint { x: start.x, xi: xi0 };
    let mut y: State = (start.x, xi0);
    let mut t = 0.0;
    let mut f_prev = level(&start.x);
    let mut entered = f_prev <= BOUNDARY_TOL;
    let mut entry_time = if entered { 0.0 } else { f64::NAN };
    let mut entry_index = 0;
    let mut samples = Vec::new();
    let push = |samples: &mut Vec<Sample>, t: f64, s: &State| {
        if store {
            samples.push(Sample { t, x: s.0, xi: s.1 });
        }
    };
    push(&mut samples, 0.0, &y);
    let finish = |samples: Vec<Sample>, status, length, exit, entry_time: f64, entry_index| GeodesicPath {
        start,
        samples,
        status,
        length,
        exit,
        entry_time: if entry_time.is_nan() { f64::INFINITY } else { entry_time },
        entry_index,
        step: h,
    };
    while t < params.max_length {
        let Some(next) = rk4(chart, &y, h, ext2) else {
            return Ok(finish(samples, PathStatus::LeftExtendedChart, f64::INFINITY, None, entry_time, entry_index));
        };
        let f_next = level(&next.0);
        if entered && f_next >= 0.0 {
            if t == 0.0 && f_prev > -BOUNDARY_TOL {
                // leaves within the first step: treated as tangential
                push(&mut samples, 0.0, &(start.x, xi0));
                return Ok(finish(samples, PathStatus::Exited, 0.0, Some(start), entry_time, entry_index));
            }
            let (theta, s) = bisect_crossing(chart, &y, h, ext2, true);
            let xi = normalize(chart, &s.0, &s.1);
            let te = t + theta * h;
            push(&mut samples, te, &(s.0, xi));
            let exit = PhasePoint { x: s.0, xi };
            return Ok(finish(samples, PathStatus::Exited, te, Some(exit), entry_time, entry_index));
        }
        if !entered && f_next < 0.0 {
            let (theta, s) = bisect_crossing(chart, &y, h, ext2, false);
            let xi = normalize(chart, &s.0, &s.1);
            entered = true;
            entry_time = t + theta * h;
            entry_index = samples.len();
            push(&mut samples, entry_time, &(s.0, xi));
        }
        y = (next.0, normalize(chart, &next.0, &next.1));
        t += h;
        f_prev = f_next;
        push(&mut samples, t, &y);
    }
    Ok(finish(samples, PathStatus::Trapped, f64::INFINITY, None, entry_time, entry_index))
}

/// Traces the geodesic with initial data `start`, storing all samples.
pub fn shoot(chart: &MetricChart, start: PhasePoint, params: &ShootParams) -> Result<GeodesicPath> {
    shoot_impl(chart, start, params, true)
}

/// Like [`shoot`] but keeps no samples.
pub fn shoot_summary(chart: &MetricChart, start: PhasePoint, params: &ShootParams) -> Result<GeodesicPath> {
    shoot_impl(chart, start, params, false)
}

/// Jacobi field `J'' + K J = 0`, `J(0) = 0`, `J'(0) = 1` along a path.
#[derive(Clone, Debug)]
pub struct JacobiTrace {
    /// `(t, J, J')`
    pub samples: Vec<(f64, f64, f64)>,
    pub first_zero: Option<f64>,
}

/// Tolerance by which a zero may lie beyond the exit time and still count.
pub const CONJUGATE_END_TOL: f64 = 1e-6;

pub fn jacobi_field(chart: &MetricChart, path: &GeodesicPath) -> Result<JacobiTrace> {
    if chart.smoothness() < 3 {
        return Err(Error::arg("Jacobi fields need a chart of smoothness at least 3"));
    }
    let h = path.step;
    let ext2 = chart.extent() * chart.extent();
    let t_end = if path.length.is_finite() {
        path.length + (0.05 * path.length).max(4.0 * h)
    } else {
        path.samples.last().map(|s| s.t).unwrap_or(0.0)
    };
    type Aug = (Point, Vector2<f64>, f64, f64);
    let step = |s: &Aug, h: f64| -> Option<Aug> {
        let k = |x: &Point| chart.gauss_curvature_unchecked(x);
        let (x, xi, j, dj) = *s;
        let inside = |p: &Point| p.norm_squared() <= ext2;
        let a1 = chart.acceleration(&x, &xi);
        let b1 = -k(&x) * j;
        let x2 = x + xi * (0.5 * h);
        let v2 = xi + a1 * (0.5 * h);
        let (j2, dj2) = (j + dj * 0.5 * h, dj + b1 * 0.5 * h);
        if !inside(&x2) {
            return None;
        }
        let a2 = chart.acceleration(&x2, &v2);
        let b2 = -k(&x2) * j2;
        let x3 = x + v2 * (0.5 * h);
        let v3 = xi + a2 * (0.5 * h);
        let (j3, dj3) = (j + dj2 * 0.5 * h, dj + b2 * 0.5 * h);
        if !inside(&x3) {
            return None;
        }
        let a3 = chart.acceleration(&x3, &v3);
        let b3 = -k(&x3) * j3;
        let x4 = x + v3 * h;
        let v4 = xi + a3 * h;
        let (j4, dj4) = (j + dj3 * h, dj + b3 * h);
        if !inside(&x4) {
            return None;
        }
        let a4 = chart.acceleration(&x4, &v4);
        let b4 = -k(&x4) * j4;
        let xn = x + (xi + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0);
        let vn = xi + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        let jn = j + (dj + dj2 * 2.0 + dj3 * 2.0 + dj4) * (h / 6.0);
        let djn = dj + (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0);
        if !inside(&xn) {
            return None;
        }
        Some((xn, vn, jn, djn))
    };
    let mut s: Aug = (path.start.x, path.start.xi, 0.0, 1.0);
    let mut t = 0.0;
    let mut samples = vec![(0.0, 0.0, 1.0)];
    let mut first_zero = None;
    while t < t_end {
        let hh = h.min(t_end - t);
        let Some(next) = step(&s, hh) else { break };
        if t > 0.0 && s.2 > 0.0 && next.2 <= 0.0 || t == 0.0 && next.2 <= 0.0 {
            let (mut lo, mut hi) = (0.0, hh);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                match step(&s, mid) {
                    Some(v) if v.2 > 0.0 => lo = mid,
                    _ => hi = mid,
                }
            }
            first_zero = Some(t + 0.5 * (lo + hi));
            samples.push((t + hh, next.2, next.3));
            break;
        }
        let xi = normalize(chart, &next.0, &next.1);
        s = (next.0, xi, next.2, next.3);
        t += hh;
        samples.push((t, s.2, s.3));
    }
    let limit = if path.length.is_finite() { path.length + CONJUGATE_END_TOL } else { f64::INFINITY };
    Ok(JacobiTrace { samples, first_zero: first_zero.filter(|&z| z <= limit) })
}

/// Writes `t,x,y,xi1,xi2,J`. `J` is the Jacobi trace interpolated to the
/// path samples, empty where the trace has ended.
pub fn write_path_csv<W: std::io::Write>(w: &mut W, path: &GeodesicPath, jacobi: Option<&JacobiTrace>) -> Result<()> {
    writeln!(w, "t,x,y,xi1,xi2,J")?;
    let mut k = 0;
    for s in &path.samples {
        let j = jacobi.and_then(|tr| {
            let js = &tr.samples;
            while k + 1 < js.len() && js[k + 1].0 < s.t {
                k += 1;
            }
            if k + 1 >= js.len() {
                return (js.last()?.0 == s.t).then(|| js.last().unwrap().1);
            }
            let (t0, j0, _) = js[k];
            let (t1, j1, _) = js[k + 1];
            (s.t >= t0).then(|| j0 + (j1 - j0) * (s.t - t0) / (t1 - t0))
        });
        let j = j.map_or(String::new(), |v| v.to_string());
        writeln!(w, "{},{},{},{},{},{}", s.t, s.x.x, s.x.y, s.xi.x, s.xi.y, j)?;
    }
    Ok(())
}

/// First time in `(0, l]` at which the Jacobi field vanishes, if any.
pub fn jacobi_first_conjugate(chart: &MetricChart, path: &GeodesicPath) -> Result<Option<f64>> {
    Ok(jacobi_field(chart, path)?.first_zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::ConformalFactor;

    fn boundary_start(chart: &MetricChart, s: f64, mu: f64) -> PhasePoint {
        let fr = chart.boundary_frame(s).unwrap();
        PhasePoint { x: fr.x, xi: fr.tangent * mu + fr.normal * (1.0 - mu * mu).sqrt() }
    }

    #[test]
    fn euclidean_chord_length() {
        let chart = MetricChart::euclidean();
        for mu in [-0.9, -0.3, 0.0, 0.5, 0.95] {
            let p = shoot(&chart, boundary_start(&chart, 0.4, mu), &ShootParams::default()).unwrap();
            assert_eq!(p.status, PathStatus::Exited);
            assert!((p.length - 2.0 * (1.0 - mu * mu).sqrt()).abs() < 1e-10);
            assert!((p.exit.unwrap().x.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sphere_diameter_and_conjugate_point() {
        let chart = MetricChart::sphere();
        let p = shoot(&chart, boundary_start(&chart, 0.0, 0.0), &ShootParams::default()).unwrap();
        assert!((p.length - std::f64::consts::PI).abs() < 1e-8);
        let z = jacobi_first_conjugate(&chart, &p).unwrap().unwrap();
        assert!((z - std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn tangential_start_is_identity() {
        let chart = MetricChart::conformal(ConformalFactor::radial(0.2));
        let fr = chart.boundary_frame(1.0).unwrap();
        let p = shoot(&chart, PhasePoint { x: fr.x, xi: fr.tangent }, &ShootParams::default()).unwrap();
        assert_eq!(p.length, 0.0);
        assert_eq!(p.exit.unwrap().x, fr.x);
    }

    #[test]
    fn speed_is_conserved() {
        let chart = MetricChart::polar_normal(0.3);
        let p = shoot(&chart, boundary_start(&chart, 2.0, 0.4), &ShootParams::default()).unwrap();
        for s in &p.samples {
            let g = chart.metric(&s.x).unwrap();
            assert!((s.xi.dot(&(g * s.xi)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_start_enters_and_exits() {
        let chart = MetricChart::euclidean();
        let start = PhasePoint { x: Point::new(-1.05, 0.3), xi: Vector2::new(1.0, 0.0) };
        let p = shoot(&chart, start, &ShootParams::default()).unwrap();
        let chord = 2.0 * (1.0 - 0.09_f64).sqrt();
        assert!((p.length - p.entry_time - chord).abs() < 1e-10);
        assert!((p.samples[p.entry_index].x.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn invalid_step_is_rejected() {
        let chart = MetricChart::euclidean();
        let start = boundary_start(&chart, 0.0, 0.0);
        let bad = ShootParams { step: -1.0, ..Default::default() };
        assert!(matches!(shoot(&chart, start, &bad), Err(Error::Argument(_))));
    }

    #[test]
    fn path_csv_carries_jacobi_column() {
        let chart = MetricChart::euclidean();
        let p = shoot(&chart, boundary_start(&chart, 0.0, 0.0), &ShootParams { step: 0.1, ..Default::default() }).unwrap();
        let tr = jacobi_field(&chart, &p).unwrap();
        let mut out = Vec::new();
        write_path_csv(&mut out, &p, Some(&tr)).unwrap();
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "t,x,y,xi1,xi2,J");
        assert_eq!(rows.len(), p.samples.len() + 1);
        // flat metric: J(t) = t
        for r in &rows[1..] {
            let c: Vec<f64> = r.split(',').map(|v| v.parse().unwrap()).collect();
            assert!((c[5] - c[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn euclidean_has_no_conjugate_points() {
        let chart = MetricChart::euclidean();
        let p = shoot(&chart, boundary_start(&chart, 0.0, 0.1), &ShootParams::default()).unwrap();
        assert_eq!(jacobi_first_conjugate(&chart, &p).unwrap(), None);
    }
}
