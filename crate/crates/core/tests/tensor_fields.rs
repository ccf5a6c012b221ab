use lenslab::metric::{ConformalFactor, MetricChart};
use lenslab::tensor::{Decomposer, SymTensorField, TensorGrid, VectorFieldGrid};
use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;

fn coeffs() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(-1.0..1.0f64)
}

fn dirichlet(c: [f64; 6]) -> impl Fn(&lenslab::Point) -> Vector2<f64> {
    move |p| {
        let b = 1.0 - p.norm_squared();
        Vector2::new(b * (c[0] + c[1] * p.x + c[2] * p.y), b * (c[3] + c[4] * p.x * p.y + c[5] * p.y * p.y))
    }
}

fn smooth(c: [f64; 6]) -> impl Fn(&lenslab::Point) -> Matrix2<f64> {
    move |p| {
        let off = c[2] * p.x * p.y + c[3];
        Matrix2::new(c[0] + c[1] * p.x * p.x, off, off, c[4] * p.y + c[5] * (2.0 * p.x).sin())
    }
}

fn charts() -> [MetricChart; 2] {
    [MetricChart::euclidean(), MetricChart::conformal(ConformalFactor { amplitude: 0.2, offset: 0.0, tilt: 0.1, bump: None })]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // f = dv for a discrete Dirichlet v is entirely potential.
    #[test]
    fn potential_fields_have_no_solenoidal_part(c in coeffs()) {
        for chart in charts() {
            let grid = TensorGrid::with_size(33).unwrap();
            let dec = Decomposer::new(&chart, grid).unwrap();
            let v = dec.restrict_vector(&VectorFieldGrid::from_fn(grid, true, dirichlet(c)));
            let f = dec.d_apply(&v);
            let (fs, w, _) = dec.decompose_dofs(&f).unwrap();
            prop_assert!(dec.norm(&fs) <= 1e-6 * dec.norm(&f));
            let dw: Vec<f64> = dec.d_apply(&w).iter().zip(&f).map(|(a, b)| a - b).collect();
            prop_assert!(dec.norm(&dw) <= 1e-6 * dec.norm(&f));
        }
    }

    #[test]
    fn decomposition_is_an_orthogonal_split(c in coeffs()) {
        for chart in charts() {
            let grid = TensorGrid::with_size(33).unwrap();
            let dec = Decomposer::new(&chart, grid).unwrap();
            let f = dec.restrict(&SymTensorField::from_fn(grid, smooth(c)));
            let (fs, v, _) = dec.decompose_dofs(&f).unwrap();
            let dv = dec.d_apply(&v);
            let nf2 = dec.inner(&f, &f);
            prop_assert!(dec.inner(&fs, &dv).abs() <= 1e-8 * nf2);
            let sum: Vec<f64> = fs.iter().zip(&dv).zip(&f).map(|((a, b), x)| a + b - x).collect();
            prop_assert!(dec.norm(&sum) <= 1e-10 * nf2.sqrt());
            // Pythagoras, and a second pass leaves f^s unchanged.
            prop_assert!((dec.inner(&fs, &fs) + dec.inner(&dv, &dv) - nf2).abs() <= 1e-8 * nf2);
            let (fs2, _, _) = dec.decompose_dofs(&fs).unwrap();
            let d: Vec<f64> = fs2.iter().zip(&fs).map(|(a, b)| a - b).collect();
            prop_assert!(dec.norm(&d) <= 1e-6 * dec.norm(&fs).max(1e-300));
        }
    }
}

// Saint-Venant tensors are divergence free in the flat metric; refinement
// drives the recovered potential towards zero.
#[test]
fn saint_venant_potential_shrinks_with_refinement() {
    let chart = MetricChart::euclidean();
    let f = |p: &lenslab::Point| {
        let h = (-2.0 * p.norm_squared()).exp();
        let (hxx, hyy, hxy) = ((16.0 * p.x * p.x - 4.0) * h, (16.0 * p.y * p.y - 4.0) * h, 16.0 * p.x * p.y * h);
        Matrix2::new(hyy, -hxy, -hxy, hxx)
    };
    let mut ratios = Vec::new();
    for n in [33, 65] {
        let grid = TensorGrid::with_size(n).unwrap();
        let dec = Decomposer::new(&chart, grid).unwrap();
        let x = dec.restrict(&SymTensorField::from_fn(grid, f));
        let (_, v, _) = dec.decompose_dofs(&x).unwrap();
        ratios.push(dec.vector_norm(&v) / dec.norm(&x));
    }
    assert!(ratios[1] < 1e-3, "{ratios:?}");
    assert!(ratios[1] < ratios[0], "{ratios:?}");
}

#[test]
fn vector_csv_round_trip() {
    let grid = TensorGrid::with_size(9).unwrap();
    let v = VectorFieldGrid::from_fn(grid, true, dirichlet([0.3, -0.2, 0.1, 0.5, 0.7, -0.4]));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    v.write_csv_with_comment(&path, Some("config=abc")).unwrap();
    let back = VectorFieldGrid::read_csv(&path).unwrap();
    assert_eq!(back.values, v.values);
    assert!(back.dirichlet);
}

// f^s extended by zero is divergence free inside and spikes at the mask edge.
#[test]
fn solenoidal_divergence_concentrates_at_the_mask_edge() {
    let chart = MetricChart::euclidean();
    let grid = TensorGrid::with_size(65).unwrap();
    let f = SymTensorField::from_fn(grid, smooth([0.4, -0.3, 0.8, 0.1, 0.5, -0.2]));
    let d = Decomposer::new(&chart, grid).unwrap().decompose(&f).unwrap();
    let e = lenslab::tensor::edge_divergence(&chart, &d.solenoidal).unwrap();
    assert!(e.interior_max < 1e-6, "{e:?}");
    assert!(e.edge_max > 1e-2 && e.edge_nodes > 0, "{e:?}");
}
