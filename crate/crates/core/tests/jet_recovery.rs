use std::f64::consts::TAU;

use lenslab::jet::{recover_jet, JetParams};
use lenslab::metric::{ConformalFactor, MetricChart};

// For g = exp(2 phi) I with phi = a (1 - r^2) + b the boundary normal
// coordinates are (theta, n) with dn = -exp(phi) dr, so
// g_11 = r^2 exp(2 phi) and d_n g_11 = -exp(b) (2 - 4 a) at r = 1.
#[test]
fn radial_conformal_closed_form() {
    let (a, b) = (0.1, 0.1);
    let chart = MetricChart::conformal(ConformalFactor { amplitude: a, offset: b, tilt: 0.0, bump: None });
    let g11 = (2.0 * b).exp();
    let dn = -b.exp() * (2.0 - 4.0 * a);
    for k in 0..4 {
        let x0 = 0.3 + TAU * k as f64 / 4.0;
        let jet = recover_jet(&chart, x0, &JetParams::default()).unwrap();
        assert!((jet.g11 - g11).abs() < 1e-4 * g11, "g11 {} vs {g11}", jet.g11);
        assert!((jet.dn_g11 - dn).abs() < 1e-2, "dn g11 {} vs {dn}", jet.dn_g11);
        assert!(jet.ds_g11.abs() < 1e-3);
    }
}

#[test]
fn tilted_metric_matches_chart_jet() {
    let chart = MetricChart::conformal(ConformalFactor { amplitude: 0.15, offset: 0.0, tilt: 0.2, bump: None });
    for x0 in [0.0, 1.3, 2.9, 4.4] {
        let jet = recover_jet(&chart, x0, &JetParams::default()).unwrap();
        let (g11, dn) = chart.boundary_normal_jet(x0).unwrap();
        assert!((jet.g11 - g11).abs() < 1e-4 * g11, "x0 {x0}: {} vs {g11}", jet.g11);
        assert!((jet.dn_g11 - dn).abs() < 1e-2, "x0 {x0}: {} vs {dn}", jet.dn_g11);
    }
}

#[test]
fn invalid_ladder_is_rejected() {
    let params = JetParams { ladder: vec![0.1, 0.2], ..JetParams::default() };
    assert!(recover_jet(&MetricChart::euclidean(), 0.0, &params).is_err());
}

// Hyperbolic cap: g11 = 4 / (1 + c)^2 is far from 1, so the order-0 bound is
// relative.
#[test]
fn negative_curvature_cap() {
    let c = -0.5;
    let chart = MetricChart::constant_curvature(c);
    let g11 = 4.0 / ((1.0 + c) * (1.0 + c));
    let jet = recover_jet(&chart, 0.7, &JetParams::default()).unwrap();
    let (_, dn) = chart.boundary_normal_jet(0.7).unwrap();
    assert!((jet.g11 - g11).abs() < 1e-4 * g11, "{} vs {g11}", jet.g11);
    assert!((jet.dn_g11 - dn).abs() < 1e-2 * dn.abs().max(1.0), "{} vs {dn}", jet.dn_g11);
}
