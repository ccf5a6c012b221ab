use std::f64::consts::PI;

use lenslab::geodesic::ShootParams;
use lenslab::lens::{
    angle_diff, audit_completeness, generate_dataset, lift, project, scatter, AuditGrid, BallPoint, DatasetParams, LensDataset,
    LensGrid, RecordStatus,
};
use lenslab::metric::{ConformalFactor, MetricChart};
use proptest::prelude::*;

fn conformal() -> MetricChart {
    MetricChart::conformal(ConformalFactor { amplitude: 0.2, offset: 0.05, tilt: 0.1, bump: None })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lift_then_project_is_identity(s in 0.0..std::f64::consts::TAU, mu in -1.0..1.0f64) {
        let chart = conformal();
        let b = project(&chart, &lift(&chart, &BallPoint::new(s, mu)).unwrap()).unwrap();
        prop_assert!(angle_diff(b.s, s).abs() < 1e-10);
        prop_assert!((b.mu - mu).abs() < 1e-10);
    }

    // Reversing the outgoing label scatters back to the reversed input.
    #[test]
    fn scattering_is_reversible(s in 0.0..std::f64::consts::TAU, mu in -0.95..0.95f64) {
        let chart = conformal();
        let p = ShootParams::default();
        let r = scatter(&chart, &BallPoint::new(s, mu), &p).unwrap();
        prop_assert_eq!(r.status, RecordStatus::Exited);
        let back = scatter(&chart, &BallPoint::new(r.output.s, -r.output.mu), &p).unwrap();
        prop_assert!(angle_diff(back.output.s, s).abs() < 1e-7);
        prop_assert!((back.output.mu + mu).abs() < 1e-7);
        prop_assert!((back.length - r.length).abs() < 1e-7);
    }

    #[test]
    fn euclidean_chord_oracle(s in 0.0..std::f64::consts::TAU, mu in -0.999..0.999f64) {
        let chart = MetricChart::euclidean();
        let r = scatter(&chart, &BallPoint::new(s, mu), &ShootParams::default()).unwrap();
        prop_assert!((r.length - 2.0 * (1.0 - mu * mu).sqrt()).abs() < 1e-9);
        prop_assert!(angle_diff(r.output.s, s + PI - 2.0 * mu.asin()).abs() < 1e-9);
        prop_assert!((r.output.mu - mu).abs() < 1e-9);
    }
}

#[test]
fn tagged_dataset_survives_csv() {
    let chart = conformal();
    let mut ds = generate_dataset(&chart, &LensGrid::full(6, 5), &DatasetParams::default()).unwrap();
    ds.config_fingerprint = Some("0123456789abcdef".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lens.csv");
    ds.write_csv(&path).unwrap();
    let back = LensDataset::read_csv(&path).unwrap();
    assert_eq!(back.config_fingerprint, ds.config_fingerprint);
    assert_eq!(back.records.len(), ds.records.len());
    for (a, b) in back.records.iter().zip(&ds.records) {
        assert_eq!(a.status, b.status);
        assert_eq!(a.length, b.length);
        assert_eq!(a.output.s, b.output.s);
    }
}

#[test]
fn malformed_csv_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "s_in,mu_in,s_out,mu_out,ell\n0,0,0,0,1\n").unwrap();
    assert!(matches!(LensDataset::read_csv(&path), Err(lenslab::Error::Format(_))));
}

// Near-tangential data only sees conormals close to the boundary, so the
// audit reports it as incomplete while the full grid is complete.
#[test]
fn band_data_is_incomplete() {
    let chart = MetricChart::euclidean();
    let params = DatasetParams::default();
    let audit = AuditGrid::default();
    let full = generate_dataset(&chart, &LensGrid::full(32, 32), &params).unwrap();
    let band = generate_dataset(&chart, &LensGrid::band(32, 16, 0.9, 1.0), &params).unwrap();
    let rf = audit_completeness(&chart, &full, &audit, &params.shoot).unwrap();
    let rb = audit_completeness(&chart, &band, &audit, &params.shoot).unwrap();
    assert_eq!(rf.fraction, 1.0);
    assert!(rb.fraction < 0.5, "band coverage {}", rb.fraction);
    assert!(rb.worst.is_some());
}
