use std::f64::consts::PI;

use lenslab::geodesic::{jacobi_field, shoot, PathStatus, PhasePoint, ShootParams};
use lenslab::lens::{lift, BallPoint};
use lenslab::metric::{ConformalFactor, MetricChart};
use proptest::prelude::*;

// The diameter of g = 4 / (1 + K r^2)^2 through the origin has length
// (4 / sqrt K) atan(sqrt K), and its Jacobi field is sin(sqrt K t) / sqrt K.
#[test]
fn constant_curvature_jacobi_field() {
    for k in [0.5, 1.0, 4.0] {
        let chart = MetricChart::constant_curvature(k);
        let path = shoot(&chart, lift(&chart, &BallPoint::new(0.7, 0.0)).unwrap(), &ShootParams::default()).unwrap();
        let rk: f64 = k.sqrt();
        assert!((path.length - 4.0 / rk * rk.atan()).abs() < 1e-9, "K = {k}");
        let tr = jacobi_field(&chart, &path).unwrap();
        for &(t, j, dj) in &tr.samples {
            assert!((j - (rk * t).sin() / rk).abs() < 1e-8);
            assert!((dj - (rk * t).cos()).abs() < 1e-8);
        }
        let expect = PI / rk;
        match tr.first_zero {
            Some(z) => assert!(expect <= path.length + 1e-6 && (z - expect).abs() < 1e-6, "K = {k}"),
            None => assert!(expect > path.length, "K = {k}"),
        }
    }
}

fn conformal() -> MetricChart {
    MetricChart::conformal(ConformalFactor { amplitude: 0.25, offset: 0.0, tilt: 0.1, bump: None })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn speed_is_conserved(s in 0.0..std::f64::consts::TAU, mu in -0.95..0.95f64) {
        let chart = conformal();
        let path = shoot(&chart, lift(&chart, &BallPoint::new(s, mu)).unwrap(), &ShootParams::default()).unwrap();
        prop_assert_eq!(path.status, PathStatus::Exited);
        for smp in &path.samples {
            prop_assert!((chart.norm(&smp.x, &smp.xi).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reversed_path_returns(s in 0.0..std::f64::consts::TAU, mu in -0.95..0.95f64) {
        let chart = conformal();
        let params = ShootParams::default();
        let fwd = shoot(&chart, lift(&chart, &BallPoint::new(s, mu)).unwrap(), &params).unwrap();
        let exit = fwd.exit.unwrap();
        let back = shoot(&chart, PhasePoint { x: exit.x, xi: -exit.xi }, &params).unwrap();
        let end = back.exit.unwrap();
        prop_assert!((end.x - fwd.start.x).norm() < 1e-7);
        prop_assert!((end.xi + fwd.start.xi).norm() < 1e-7);
        prop_assert!((back.length - fwd.length).abs() < 1e-7);
    }

    // Euclidean exit point is the other end of the chord.
    #[test]
    fn euclidean_exit_point(s in 0.0..std::f64::consts::TAU, mu in -0.99..0.99f64) {
        let chart = MetricChart::euclidean();
        let path = shoot(&chart, lift(&chart, &BallPoint::new(s, mu)).unwrap(), &ShootParams::default()).unwrap();
        let a = s + PI - 2.0 * mu.asin();
        let exit = path.exit.unwrap();
        prop_assert!((exit.x - nalgebra::Vector2::new(a.cos(), a.sin())).norm() < 1e-9);
        prop_assert!((exit.xi - path.start.xi).norm() < 1e-12);
    }
}
