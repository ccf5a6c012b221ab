use lenslab::geodesic::ShootParams;
use lenslab::lens::LensGrid;
use lenslab::metric::MetricChart;
use lenslab::ray::{
    assemble, metric_samples, trace_family, xray, Aperture, AssembleParams, ForwardSystem, PathFamily, TensorFieldFn,
};
use lenslab::tensor::{SymTensorField, TensorGrid};
use lenslab::{Error, Point};
use nalgebra::Matrix2;
use proptest::prelude::*;

const SIGMA: f64 = 0.25;

fn center() -> Point {
    Point::new(0.1, -0.1)
}

struct Gaussian;

impl TensorFieldFn for Gaussian {
    fn value(&self, x: &Point) -> Matrix2<f64> {
        Matrix2::identity() * (-(x - center()).norm_squared() / (SIGMA * SIGMA)).exp()
    }
}

// Integral of exp(-|p + t w - c|^2 / s^2) over t in [0, l] for unit w.
fn gaussian_line_integral(p: Point, w: Point, l: f64) -> f64 {
    let d = p - center();
    let b = d.dot(&w);
    let q = d.norm_squared() - b * b;
    let s = SIGMA;
    (-q / (s * s)).exp() * s * std::f64::consts::PI.sqrt() / 2.0 * (libm::erf((l + b) / s) - libm::erf(b / s))
}

fn family(n: usize) -> PathFamily {
    PathFamily::Boundary { grid: LensGrid::full(n, n), jitter: 0.0, seed: 0 }
}

#[test]
fn pointwise_transform_matches_erf_oracle() {
    let chart = MetricChart::euclidean();
    let paths = trace_family(&chart, &family(12), &AssembleParams::default()).unwrap();
    assert_eq!(paths.len(), 144);
    for t in &paths {
        let oracle = gaussian_line_integral(t.path.start.x, t.path.start.xi, t.path.length);
        let got = xray(&Gaussian, &t.path).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }
}

// Bilinear sampling makes the assembled transform second order in h.
#[test]
fn assembled_transform_converges_to_oracle() {
    let chart = MetricChart::euclidean();
    let mut errors = Vec::new();
    for n in [17, 33, 65] {
        let grid = TensorGrid::with_size(n).unwrap();
        let sys = assemble(&chart, &family(12), grid, &AssembleParams::default()).unwrap();
        let f = SymTensorField::from_fn(grid, |x| Gaussian.value(x));
        let data = sys.apply(&f).unwrap();
        let mut worst: f64 = 0.0;
        for (r, label) in sys.labels.iter().enumerate() {
            let fr = chart.boundary_frame(label.s).unwrap();
            let w = fr.tangent * label.mu + fr.normal * (1.0 - label.mu * label.mu).sqrt();
            let oracle = gaussian_line_integral(fr.x, w, sys.lengths[r]);
            worst = worst.max((data[r] / sys.alpha[r] - oracle).abs());
        }
        // bilinear error h^2 / 8 max|f''| over a chord of length at most 2
        let h = grid.spacing();
        assert!(worst <= h * h / 8.0 * (2.0 / (SIGMA * SIGMA)) * 2.0, "n = {n}: {worst}");
        errors.push(worst);
    }
    assert!(errors[1] < errors[0] / 3.0 && errors[2] < errors[1] / 3.0, "{errors:?}");
}

#[test]
fn hypersurface_rows_integrate_the_metric_to_length() {
    let chart = MetricChart::euclidean();
    let grid = TensorGrid::with_size(17).unwrap();
    let fam = PathFamily::Hypersurface { n_angle: 12, n_dir: 7, offset: 0.05, max_angle: 1.4 };
    let sys = assemble(&chart, &fam, grid, &AssembleParams::default()).unwrap();
    assert!(sys.hypersurface && sys.rows() > 0);
    let ag = sys.apply(&metric_samples(&chart, grid)).unwrap();
    for ((a, al), l) in ag.iter().zip(&sys.alpha).zip(&sys.lengths) {
        assert!((a - al * l).abs() < 1e-10);
    }
}

#[test]
fn band_aperture_weights_lie_in_unit_interval() {
    let chart = MetricChart::euclidean();
    let params = AssembleParams { shoot: ShootParams::default(), aperture: Aperture::tangential_band(0.6, 0.1).unwrap() };
    let sys = assemble(&chart, &family(10), TensorGrid::with_size(9).unwrap(), &params).unwrap();
    for (a, l) in sys.alpha.iter().zip(&sys.labels) {
        assert!((0.0..=1.0).contains(a));
        if l.mu.abs() < 0.6 {
            assert_eq!(*a, 0.0);
        }
    }
}

fn small_system() -> (ForwardSystem, Vec<u8>) {
    let chart = MetricChart::euclidean();
    let mut sys = assemble(&chart, &family(5), TensorGrid::with_size(9).unwrap(), &AssembleParams::default()).unwrap();
    sys.fingerprint = "00ff00ff00ff00ff".into();
    let mut buf = Vec::new();
    sys.write_to(&mut buf).unwrap();
    (sys, buf)
}

#[test]
fn llfs_header_layout() {
    let (sys, buf) = small_system();
    assert_eq!(&buf[..8], b"LLFS1\0\0\0");
    assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 0);
    assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), sys.rows() as u64);
    assert_eq!(u64::from_le_bytes(buf[24..32].try_into().unwrap()), sys.a.cols() as u64);
    assert_eq!(u64::from_le_bytes(buf[32..40].try_into().unwrap()), sys.a.nnz() as u64);
    assert_eq!(u64::from_le_bytes(buf[40..48].try_into().unwrap()), 9);
    assert_eq!(f64::from_le_bytes(buf[48..56].try_into().unwrap()), 1.05);
    assert_eq!(&buf[56..72], b"00ff00ff00ff00ff");
    let back = ForwardSystem::read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(back.a, sys.a);
    assert_eq!(back.lengths, sys.lengths);
    assert_eq!(back.alpha, sys.alpha);
}

#[test]
fn truncated_llfs_is_rejected() {
    let (_, buf) = small_system();
    for cut in [0, 40, 79, buf.len() - 1] {
        assert!(ForwardSystem::read_from(&mut &buf[..cut]).is_err(), "cut at {cut}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corrupted_llfs_payload_is_rejected(pos in 80usize..10_000, bit in 0u8..8) {
        let (_, mut buf) = small_system();
        let pos = 80 + (pos - 80) % (buf.len() - 80);
        buf[pos] ^= 1 << bit;
        prop_assert!(matches!(ForwardSystem::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
