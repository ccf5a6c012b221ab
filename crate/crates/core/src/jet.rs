//! Boundary jet of the metric from travel times near a tangential direction.
//!
//! At an anchor `x0 = (cos s0, sin s0)` a family of geodesics is launched in
//! the direction `xi0 + eps nu` and exits at `y_eps`. The travel time
//! `tau(x) = d(x, y_eps)` is sampled on a boundary patch around `x0` by
//! shooting back from `y_eps`. Its tangential derivatives at `x0` give
//! `g_11` in the limit `eps -> 0`, and the first normal derivative follows
//! from the normal derivative of the eikonal equation.
//!
//! On a strictly convex boundary `y_eps -> x0`, and the term
//! `tau_n tau_nn` does not vanish in the limit: it converges to the same
//! value as the retained terms. The recovery detects this regime from the
//! extrapolated chord length and doubles the limit accordingly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fit::{polyfit, richardson};
use crate::geodesic::{jacobi_first_conjugate, shoot, PathStatus, ShootParams};
use crate::lens::{angle_diff, lift, project, scatter, BallPoint, RecordStatus};
use crate::metric::MetricChart;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetParams {
    /// Strictly decreasing, positive.
    pub ladder: Vec<f64>,
    /// Samples per patch, including the anchor.
    pub patch_points: usize,
    /// Patch width as a fraction of the angular distance from `x0` to `y_eps`.
    pub patch_fraction: f64,
    pub fit_degree: usize,
    /// Sample both sides of `x0` instead of the side away from `y_eps`.
    pub both_sides: bool,
    /// Anchor spacing for the tangential derivative of `g_11`.
    pub neighbor_spacing: f64,
    /// Largest accepted extrapolation residual, relative to the value.
    pub order0_tol: f64,
    pub order1_tol: f64,
    pub check_conjugacy: bool,
    pub shoot: ShootParams,
}

impl Default for JetParams {
    fn default() -> Self {
        JetParams {
            ladder: vec![0.2, 0.1, 0.05, 0.025],
            patch_points: 9,
            patch_fraction: 0.25,
            fit_degree: 4,
            both_sides: false,
            neighbor_spacing: 0.02,
            order0_tol: 1e-3,
            order1_tol: 5e-2,
            check_conjugacy: true,
            shoot: ShootParams::default(),
        }
    }
}

impl JetParams {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() || self.ladder.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::arg("epsilon ladder entries must be positive"));
        }
        if self.ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::arg("epsilon ladder must be strictly decreasing"));
        }
        if self.patch_points < self.fit_degree + 2 {
            return Err(Error::arg("patch needs more points than the fit degree plus one"));
        }
        if !(self.patch_fraction > 0.0 && self.patch_fraction < 1.0) {
            return Err(Error::arg("patch fraction must lie in (0, 1)"));
        }
        self.shoot.validate()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PatchSample {
    pub s: f64,
    pub tau: f64,
    /// Tangential component of the unit direction from `x` towards `y_eps`.
    pub mu_toward: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatchLevel {
    pub epsilon: f64,
    pub launch_mu: f64,
    pub endpoint: BallPoint,
    pub length: f64,
    pub samples: Vec<PatchSample>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TravelTimePatch {
    pub anchor_s: f64,
    /// `+1` launches along increasing `s`, `-1` along decreasing `s`.
    pub orientation: f64,
    pub levels: Vec<PatchLevel>,
}

/// Inward label at `y` whose geodesic lands at boundary angle `target`.
fn aim(chart: &MetricChart, y_s: f64, mu0: f64, target: f64, params: &ShootParams) -> Result<(f64, f64, BallPoint)> {
    let land = |mu: f64| -> Result<(f64, f64, BallPoint)> {
        let r = scatter(chart, &BallPoint { s: y_s, mu }, params)?;
        if r.status != RecordStatus::Exited || r.length == 0.0 {
            return Err(Error::Unrecoverable(format!("reverse ray from s = {y_s:.6} did not exit")));
        }
        Ok((angle_diff(r.output.s, target), r.length, r.output))
    };
    let (mut m0, mut m1) = (mu0, (mu0 + if mu0 > 0.0 { -1e-4 } else { 1e-4 }).clamp(-1.0 + 1e-12, 1.0 - 1e-12));
    let mut f0 = land(m0)?;
    if f0.0.abs() < 1e-13 {
        return Ok((m0, f0.1, f0.2));
    }
    let mut f1 = land(m1)?;
    for _ in 0..40 {
        if f1.0.abs() < 1e-13 {
            return Ok((m1, f1.1, f1.2));
        }
        let denom = f1.0 - f0.0;
        if denom == 0.0 {
            break;
        }
        let m2 = (m1 - f1.0 * (m1 - m0) / denom).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        m0 = m1;
        f0 = f1;
        m1 = m2;
        f1 = land(m1)?;
        if (m1 - m0).abs() < 1e-15 {
            break;
        }
    }
    // the landing map is only smooth to integrator accuracy; callers use the actual landing point
    if f1.0.abs() < 1e-6 {
        Ok((m1, f1.1, f1.2))
    } else {
        Err(Error::Unrecoverable(format!("could not aim a reverse ray at s = {target:.6} (miss {:.3e})", f1.0)))
    }
}

pub fn build_travel_time_patch(
    chart: &MetricChart,
    anchor_s: f64,
    orientation: f64,
    params: &JetParams,
) -> Result<TravelTimePatch> {
    params.validate()?;
    if orientation.abs() != 1.0 {
        return Err(Error::arg("orientation must be +1 or -1"));
    }
    let levels = params
        .ladder
        .par_iter()
        .map(|&eps| -> Result<PatchLevel> {
            let launch_mu = orientation / (1.0 + eps * eps).sqrt();
            let b = BallPoint { s: anchor_s, mu: launch_mu };
            let path = shoot(chart, lift(chart, &b)?, &params.shoot)?;
            match path.status {
                PathStatus::Exited if path.length > 0.0 => {}
                PathStatus::Trapped => {
                    return Err(Error::Unrecoverable(format!("launch with eps = {eps} is trapped")));
                }
                _ => return Err(Error::Unrecoverable(format!("launch with eps = {eps} does not exit the disc"))),
            }
            if params.check_conjugacy && chart.smoothness() >= 3 {
                if let Some(t) = jacobi_first_conjugate(chart, &path)? {
                    return Err(Error::ViolatedHypothesis(format!(
                        "conjugate point at t = {t:.6} along the launch with eps = {eps} (exit at {:.6})",
                        path.length
                    )));
                }
            }
            let endpoint = project(chart, &path.exit.unwrap())?;
            let span = angle_diff(endpoint.s, anchor_s);
            let width = params.patch_fraction * span.abs();
            let k = params.patch_points;
            let offsets: Vec<f64> = if params.both_sides {
                (0..k).map(|i| width * (2.0 * i as f64 / (k - 1) as f64 - 1.0)).collect()
            } else {
                // away from y_eps
                (0..k).map(|i| -span.signum() * width * i as f64 / (k - 1) as f64).collect()
            };
            let mut samples = Vec::with_capacity(k);
            for off in offsets {
                let target = anchor_s + off;
                let (_, tau, out) = aim(chart, endpoint.s, -endpoint.mu, target, &params.shoot)?;
                let s = target + angle_diff(out.s, target);
                samples.push(PatchSample { s, tau, mu_toward: -out.mu });
            }
            Ok(PatchLevel { epsilon: eps, launch_mu, endpoint, length: path.length, samples })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TravelTimePatch { anchor_s, orientation, levels })
}

/// First and second derivatives of `tau` in `s` at the anchor.
fn tau_derivatives(level: &PatchLevel, anchor_s: f64, degree: usize) -> Result<(f64, f64)> {
    let xs: Vec<f64> = level.samples.iter().map(|p| p.s - anchor_s).collect();
    let ys: Vec<f64> = level.samples.iter().map(|p| p.tau).collect();
    let c = polyfit(&xs, &ys, degree)?;
    Ok((c[1], 2.0 * c[2]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Order0 {
    pub g11: f64,
    pub levels: Vec<f64>,
    pub residual: f64,
}

/// `g_11(x0)` as the limit of `tau_s^2`.
pub fn recover_boundary_metric(patch: &TravelTimePatch, params: &JetParams) -> Result<Order0> {
    if patch.levels.len() < 3 {
        return Err(Error::arg("order-0 recovery needs at least three epsilon levels"));
    }
    let mut eps = Vec::new();
    let mut vals = Vec::new();
    for l in &patch.levels {
        let (ts, _) = tau_derivatives(l, patch.anchor_s, params.fit_degree)?;
        eps.push(l.epsilon);
        vals.push(ts * ts);
    }
    let (g11, residual) = richardson(&eps, &vals);
    if !(g11 > 0.0) || residual > params.order0_tol * g11.abs() {
        return Err(Error::IllConditioned(format!(
            "order-0 extrapolation residual {residual:.3e} exceeds tolerance (value {g11:.6})"
        )));
    }
    Ok(Order0 { g11, levels: vals, residual })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Order1 {
    pub dn_g11: f64,
    /// `-d g^11 / d x^n`, the quadratic-form coefficient of the normal derivative equation.
    pub g_upper: f64,
    pub levels: Vec<f64>,
    pub limit: f64,
    pub residual: f64,
    pub short_chord: bool,
    pub length_limit: f64,
    pub curvature_estimate: f64,
}

/// `d g_11 / d x^n (x0)` from the normal derivative of the eikonal equation.
///
/// `g11` is the order-0 value and `ds_g11` its tangential derivative.
pub fn recover_normal_derivative(patch: &TravelTimePatch, g11: f64, ds_g11: f64, params: &JetParams) -> Result<Order1> {
    if patch.levels.len() < 3 {
        return Err(Error::arg("order-1 recovery needs at least three epsilon levels"));
    }
    let mut eps = Vec::new();
    let mut vals = Vec::new();
    let mut lens = Vec::new();
    let mut kap = Vec::new();
    for l in &patch.levels {
        let (ts, tss) = tau_derivatives(l, patch.anchor_s, params.fit_degree)?;
        // negative root on the visible side; magnitude from the launch label
        let tn = -l.epsilon / (1.0 + l.epsilon * l.epsilon).sqrt();
        let tn_eik2 = 1.0 - ts * ts / g11;
        if tn_eik2 < -1e-4 {
            return Err(Error::Visibility(format!(
                "eikonal gives tau_n^2 = {tn_eik2:.3e} < 0 at eps = {}",
                l.epsilon
            )));
        }
        eps.push(l.epsilon);
        vals.push((2.0 * tss - ts * ds_g11 / g11) / tn.abs());
        lens.push(l.length);
        kap.push(2.0 * tn.abs() / l.length);
    }
    let (limit, residual) = richardson(&eps, &vals);
    let (length_limit, _) = richardson(&eps, &lens);
    let max_len = lens.iter().cloned().fold(0.0, f64::max);
    let short_chord = length_limit.abs() < 1e-2 * max_len;
    let (curvature_estimate, _) = richardson(&eps, &kap);
    let dn_g11 = if short_chord { 2.0 * limit } else { limit };
    if residual > params.order1_tol * limit.abs().max(1.0) {
        return Err(Error::IllConditioned(format!("order-1 extrapolation residual {residual:.3e} exceeds tolerance")));
    }
    Ok(Order1 {
        dn_g11,
        g_upper: -dn_g11 / (g11 * g11),
        levels: vals,
        limit,
        residual,
        short_chord,
        length_limit,
        curvature_estimate,
    })
}

/// Cross-check: `tau` on the patch from integrating the tangential component
/// of the direction towards `y_eps` along the boundary. Returns the largest
/// deviation from the shot values.
pub fn eta_integration_check(chart: &MetricChart, patch: &TravelTimePatch) -> Result<f64> {
    let mut worst = 0.0_f64;
    for l in &patch.levels {
        let mut idx: Vec<usize> = (0..l.samples.len()).collect();
        idx.sort_by(|&a, &b| l.samples[a].s.total_cmp(&l.samples[b].s));
        let a = idx.iter().position(|&i| i == 0).unwrap_or(0);
        let slope = |i: usize| -> Result<f64> {
            let p = &l.samples[i];
            Ok(-p.mu_toward * chart.boundary_frame(p.s)?.arc_speed)
        };
        // trapezoid outward from the anchor in both directions
        for dir in [1isize, -1] {
            let mut acc = l.samples[idx[a]].tau;
            let mut k = a as isize;
            loop {
                let n = k + dir;
                if n < 0 || n as usize >= idx.len() {
                    break;
                }
                let (i0, i1) = (idx[k as usize], idx[n as usize]);
                let ds = l.samples[i1].s - l.samples[i0].s;
                acc += 0.5 * ds * (slope(i0)? + slope(i1)?);
                worst = worst.max((acc - l.samples[i1].tau).abs());
                k = n;
            }
        }
    }
    Ok(worst)
}

/// Least-squares symmetric tensor `f` with `f(v_k, v_k) = values_k`.
pub fn quad_form_solve(directions: &[DVector<f64>], values: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    let n = directions.first().map(|d| d.len()).unwrap_or(0);
    let m = n * (n + 1) / 2;
    if n == 0 || directions.len() != values.len() || directions.iter().any(|d| d.len() != n) {
        return Err(Error::arg("directions must be nonempty, of equal length, and match the values"));
    }
    if directions.len() < m {
        return Err(Error::DegenerateDirections(format!("{} directions for {m} unknowns", directions.len())));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let a = DMatrix::from_fn(directions.len(), m, |r, c| {
        let (i, j) = pairs[c];
        let v = &directions[r];
        if i == j { v[i] * v[j] } else { 2.0 * v[i] * v[j] }
    });
    let b = DVector::from_column_slice(values);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::DegenerateDirections(format!("design matrix is rank deficient (sigma_min/sigma_max = {:.3e})", smin / smax)));
    }
    let c = svd.solve(&b, 0.0).map_err(|e| Error::DegenerateDirections(e.to_string()))?;
    let residual = (&a * &c - &b).norm();
    let mut f = DMatrix::zeros(n, n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        f[(i, j)] = c[k];
        f[(j, i)] = c[k];
    }
    Ok((f, residual))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrientationReport {
    pub orientation: f64,
    pub order0: Order0,
    pub order1: Order1,
    pub lengths: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryJet {
    pub anchor_s: f64,
    pub g11: f64,
    pub dn_g11: f64,
    pub ds_g11: f64,
    pub order0_residual: f64,
    pub order1_residual: f64,
    pub ladder: Vec<f64>,
    pub orientations: Vec<OrientationReport>,
}

fn order0_at(chart: &MetricChart, s: f64, orientation: f64, params: &JetParams) -> Result<f64> {
    let patch = build_travel_time_patch(chart, s, orientation, params)?;
    Ok(recover_boundary_metric(&patch, params)?.g11)
}

/// Orders 0 and 1 of the boundary jet at angle `anchor_s`, using both
/// tangential orientations as redundant directions.
pub fn recover_jet(chart: &MetricChart, anchor_s: f64, params: &JetParams) -> Result<BoundaryJet> {
    params.validate()?;
    let h = params.neighbor_spacing;
    let mut reports = Vec::new();
    for orientation in [1.0, -1.0] {
        let patch = build_travel_time_patch(chart, anchor_s, orientation, params)?;
        let order0 = recover_boundary_metric(&patch, params)?;
        let nb = [-2.0, -1.0, 1.0, 2.0]
            .par_iter()
            .map(|k| order0_at(chart, anchor_s + k * h, orientation, params))
            .collect::<Result<Vec<_>>>()?;
        let ds_g11 = (nb[0] - 8.0 * nb[1] + 8.0 * nb[2] - nb[3]) / (12.0 * h);
        let order1 = recover_normal_derivative(&patch, order0.g11, ds_g11, params)?;
        let lengths = patch.levels.iter().map(|l| l.length).collect();
        reports.push((OrientationReport { orientation, order0, order1, lengths }, ds_g11));
    }
    let dirs: Vec<DVector<f64>> = reports.iter().map(|r| DVector::from_element(1, r.0.orientation)).collect();
    let (g, r0) = quad_form_solve(&dirs, &reports.iter().map(|r| r.0.order0.g11).collect::<Vec<_>>())?;
    let (dn, r1) = quad_form_solve(&dirs, &reports.iter().map(|r| r.0.order1.dn_g11).collect::<Vec<_>>())?;
    let ds_g11 = 0.5 * (reports[0].1 + reports[1].1);
    Ok(BoundaryJet {
        anchor_s,
        g11: g[(0, 0)],
        dn_g11: dn[(0, 0)],
        ds_g11,
        order0_residual: r0,
        order1_residual: r1,
        ladder: params.ladder.clone(),
        orientations: reports.into_iter().map(|r| r.0).collect(),
    })
}
