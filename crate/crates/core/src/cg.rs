//! Preconditioned conjugate gradients for symmetric positive definite operators.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from `x`. `apply` writes `A v` into its second
/// argument; `diag` is an optional Jacobi preconditioner.
pub fn pcg<F>(apply: F, diag: Option<&[f64]>, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome { iterations: 0, relative_residual: 0.0 });
    }
    let precond = |r: &[f64], z: &mut [f64]| match diag {
        Some(d) => {
            for i in 0..n {
                z[i] = if d[i] > 0.0 { r[i] / d[i] } else { r[i] };
            }
        }
        None => z.copy_from_slice(r),
    };
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if rel <= tol {
            return Ok(CgOutcome { iterations: it, relative_residual: rel });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::IllConditioned(format!("operator not positive definite (p.Ap = {pap:.3e})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rel <= tol {
        return Ok(CgOutcome { iterations: max_iter, relative_residual: rel });
    }
    Err(Error::Solver { iterations: max_iter, residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal() {
        let n = 50;
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < n { v[i + 1] } else { 0.0 };
                out[i] = 2.5 * v[i] - l - r;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        let out = pcg(apply, None, &b, &mut x, 1e-12, 500).unwrap();
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{out:?}");
    }

    #[test]
    fn reports_non_convergence() {
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..v.len() {
                out[i] = (i + 1) as f64 * v[i];
            }
        };
        let b = vec![1.0; 20];
        let mut x = vec![0.0; 20];
        assert!(matches!(pcg(apply, None, &b, &mut x, 1e-14, 2), Err(Error::Solver { .. })));
    }
}
