//! Polynomial vector fields vanishing on the unit circle.
//!
//! A [`DirichletField`] has the form `(1 - |x|^2)^p * sum_k c_k x^a_k y^b_k`
//! and is used both as a displacement generator for boundary-fixing maps and
//! as the potential of exactly known potential tensor fields.

use nalgebra::{Matrix2, Vector2};
use num_dual::DualNum;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub a: u32,
    pub b: u32,
    pub coeff: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletField {
    pub power: u32,
    pub terms: Vec<Term>,
}

impl DirichletField {
    /// Constant vector `c` times `(1 - |x|^2)^power`.
    pub fn constant(power: u32, c: [f64; 2]) -> Self {
        DirichletField { power, terms: vec![Term { a: 0, b: 0, coeff: c }] }
    }

    /// Random coefficients for all monomials of total degree at most `degree`.
    pub fn random<R: Rng>(rng: &mut R, power: u32, degree: u32) -> Self {
        let mut terms = Vec::new();
        for d in 0..=degree {
            for a in 0..=d {
                let coeff = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                terms.push(Term { a, b: d - a, coeff });
            }
        }
        DirichletField { power, terms }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Term { a: t.a, b: t.b, coeff: [t.coeff[0] * s, t.coeff[1] * s] })
            .collect();
        DirichletField { power: self.power, terms }
    }

    /// Value and Jacobian `J[i][j] = d v^i / d x^j` in any dual number type.
    pub fn eval_generic<D: DualNum<Primitive = f64> + Copy>(&self, x: [D; 2]) -> ([D; 2], [[D; 2]; 2]) {
        let zero = D::from(0.0);
        let q = -(x[0] * x[0] + x[1] * x[1]) + 1.0;
        let p = self.power as i32;
        let qp = if p == 0 { D::from(1.0) } else { q.powi(p) };
        let dqp = if p == 0 { [zero, zero] } else {
            let c = q.powi(p - 1) * (-2.0 * p as f64);
            [c * x[0], c * x[1]]
        };
        let mut poly = [zero, zero];
        let mut dpoly = [[zero, zero], [zero, zero]];
        for t in &self.terms {
            let xa = pow_u(x[0], t.a);
            let yb = pow_u(x[1], t.b);
            let m = xa * yb;
            let mx = if t.a == 0 { zero } else { pow_u(x[0], t.a - 1) * (t.a as f64) * yb };
            let my = if t.b == 0 { zero } else { xa * pow_u(x[1], t.b - 1) * (t.b as f64) };
            for i in 0..2 {
                poly[i] += m * t.coeff[i];
                dpoly[i][0] += mx * t.coeff[i];
                dpoly[i][1] += my * t.coeff[i];
            }
        }
        let v = [qp * poly[0], qp * poly[1]];
        let mut j = [[zero, zero], [zero, zero]];
        for i in 0..2 {
            for k in 0..2 {
                j[i][k] = dqp[k] * poly[i] + qp * dpoly[i][k];
            }
        }
        (v, j)
    }

    pub fn value(&self, x: Point) -> Vector2<f64> {
        let (v, _) = self.eval_generic([x.x, x.y]);
        Vector2::new(v[0], v[1])
    }

    pub fn jacobian(&self, x: Point) -> Matrix2<f64> {
        let (_, j) = self.eval_generic([x.x, x.y]);
        Matrix2::new(j[0][0], j[0][1], j[1][0], j[1][1])
    }
}

fn pow_u<D: DualNum<Primitive = f64> + Copy>(x: D, n: u32) -> D {
    match n {
        0 => D::from(1.0),
        1 => x,
        _ => x.powi(n as i32),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn vanishes_on_circle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let f = DirichletField::random(&mut rng, 2, 3);
        for k in 0..16 {
            let s = k as f64 * 0.39;
            let v = f.value(Point::new(s.cos(), s.sin()));
            assert!(v.norm() < 1e-14);
        }
    }

    #[test]
    fn jacobian_matches_difference_quotient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let f = DirichletField::random(&mut rng, 1, 2);
        let x = Point::new(0.3, -0.2);
        let h = 1e-6;
        let j = f.jacobian(x);
        for k in 0..2 {
            let mut e = Vector2::zeros();
            e[k] = h;
            let d = (f.value(x + e) - f.value(x - e)) / (2.0 * h);
            for i in 0..2 {
                assert!((d[i] - j[(i, k)]).abs() < 1e-8);
            }
        }
    }
}
