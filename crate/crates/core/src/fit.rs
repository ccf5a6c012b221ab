//! Small fitting helpers: polynomial least squares, Richardson extrapolation,
//! log-log slopes and the quintic ramp.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Least-squares polynomial coefficients `c[0] + c[1] x + ...`.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    if xs.len() != ys.len() || xs.len() <= degree {
        return Err(Error::arg(format!("need more than {degree} points for a degree-{degree} fit")));
    }
    let scale = xs.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let a = DMatrix::from_fn(xs.len(), degree + 1, |i, j| (xs[i] / scale).powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let c = svd.solve(&b, 1e-13).map_err(|e| Error::IllConditioned(e.to_string()))?;
    Ok((0..=degree).map(|j| c[j] / scale.powi(j as i32)).collect())
}

pub fn polyval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// Value at `x0` of the interpolating polynomial through all points.
pub fn neville(xs: &[f64], ys: &[f64], x0: f64) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = ((x0 - xs[i + k]) * p[i] + (xs[i] - x0) * p[i + 1]) / (xs[i] - xs[i + k]);
        }
    }
    p[0]
}

/// Extrapolates `vals(eps)` to `eps = 0` using all levels. The residual is the
/// distance to the extrapolant that omits the coarsest level.
pub fn richardson(eps: &[f64], vals: &[f64]) -> (f64, f64) {
    let full = neville(eps, vals, 0.0);
    if eps.len() < 2 {
        return (full, f64::INFINITY);
    }
    let (idx, _) = eps
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &e)| if e > acc.1 { (i, e) } else { acc });
    let e2: Vec<f64> = eps.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, &e)| e).collect();
    let v2: Vec<f64> = vals.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, &v)| v).collect();
    let lower = neville(&e2, &v2, 0.0);
    (full, (full - lower).abs())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `6 t^5 - 15 t^4 + 10 t^3` on `[0, 1]`, clamped outside.
pub fn smootherstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyfit_recovers_cubic() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * 0.1 - 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x * x).collect();
        let c = polyfit(&xs, &ys, 4).unwrap();
        for (a, b) in c.iter().zip([1.0, -2.0, 0.0, 0.5, 0.0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn richardson_is_exact_for_polynomials() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let vals: Vec<f64> = eps.iter().map(|e| 3.0 + e - 4.0 * e * e + e * e * e).collect();
        let (v, r) = richardson(&eps, &vals);
        assert!((v - 3.0).abs() < 1e-12);
        // dropping eps = 0.2 leaves a quadratic fit, off by 0.1 * 0.05 * 0.025
        assert!((r - 1.25e-4).abs() < 1e-12);
        let quad: Vec<f64> = eps.iter().map(|e| 3.0 + e - 4.0 * e * e).collect();
        assert!(richardson(&eps, &quad).1 < 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [0.1, 0.05, 0.025];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 7.0 * x.powi(2)).collect();
        assert!((loglog_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn smootherstep_is_c2_at_ends() {
        let h = 1e-4;
        assert_eq!(smootherstep(0.0), 0.0);
        assert_eq!(smootherstep(1.0), 1.0);
        let d2 = (smootherstep(2.0 * h) - 2.0 * smootherstep(h) + smootherstep(0.0)) / (h * h);
        assert!(d2.abs() < 1e-2);
    }
}
