use std::f64::consts::PI;
use std::sync::Arc;

use pmeinv_core::*;
use proptest::prelude::*;

fn square(n: usize) -> Arc<Grid> {
    Arc::new(Grid::new(2, &[1.0, 1.0], &[n, n]).unwrap())
}

#[test]
fn grid_examples() {
    let g = Grid::new(1, &[1.0], &[11]).unwrap();
    assert!((g.spacing()[0] - 0.1).abs() < 1e-15);
    assert_eq!(g.boundary_len(), 2);
    let g = Grid::cube(3, 1.0, 4).unwrap();
    assert_eq!(g.len(), 64);
    assert_eq!(g.boundary_len(), 64 - 8);
    assert!(Grid::new(2, &[1.0, 1.0], &[3, 2]).is_err());
}

#[test]
fn quadrature_is_second_order() {
    // trapezoid error for sin(πx)sin(πy) shrinks by about 4 per halving
    let exact = 4.0 / (PI * PI);
    let err = |n| {
        let f = ScalarField::from_fn(square(n), |p| (PI * p[0]).sin() * (PI * p[1]).sin());
        (integrate(&f) - exact).abs()
    };
    let (e1, e2) = (err(26), err(51));
    assert!(e1 / e2 > 3.8 && e1 / e2 < 4.2, "{e1} {e2}");
    assert!(err(101) < 1e-4);
}

#[test]
fn surface_quadrature_matches_edgewise_integrals() {
    let g = square(201);
    let x1 = BoundaryField::from_fn(g.clone(), |p| p[0]);
    let x2 = BoundaryField::from_fn(g.clone(), |p| p[1]);
    // only the faces x1 = 1 and x2 = 1 contribute, 1/2 each
    assert!((boundary_pair(&x1, &x2).unwrap() - 1.0).abs() < 1e-3);
    // ∫ x1² over the boundary: 0 + 1 + 1/3 + 1/3
    assert!((boundary_pair(&x1, &x1).unwrap() - 5.0 / 3.0).abs() < 1e-4);
}

#[test]
fn coefficient_ranges() {
    let g = Arc::new(Grid::new(1, &[1.0], &[41]).unwrap());
    let c = eval_coefficient(&CoefficientSpec::expression("exp(x1)", 0.1, 10.0).unwrap(), &g).unwrap();
    assert!((c.field().min() - 1.0).abs() < 1e-14);
    assert!((c.field().max() - std::f64::consts::E).abs() < 1e-14);
    let s = eval_coefficient(&CoefficientSpec::expression("1 + 0.5*sin(pi*x1)", 0.1, 10.0).unwrap(), &g).unwrap();
    assert!(s.field().min() >= 1.0 - 1e-15 && s.field().max() <= 1.5 + 1e-15);
    assert!(eval_coefficient(&CoefficientSpec::expression("x1 - 0.5", 0.1, 10.0).unwrap(), &g).is_err());
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integrate_is_linear(a in values(49), b in values(49), s in -3.0..3.0f64, t in -3.0..3.0f64) {
        let g = square(7);
        let fa = ScalarField::new(g.clone(), a).unwrap();
        let fb = ScalarField::new(g, b).unwrap();
        let lhs = integrate(&fa.combine(s, &fb, t).unwrap());
        let rhs = s * integrate(&fa) + t * integrate(&fb);
        let scale = 1.0 + integrate(&fa.map(f64::abs)) * s.abs() + integrate(&fb.map(f64::abs)) * t.abs();
        prop_assert!((lhs - rhs).abs() <= 1e-14 * scale);
    }

    #[test]
    fn integrate_preserves_sign(a in prop::collection::vec(0.0..10.0f64, 49)) {
        let f = ScalarField::new(square(7), a).unwrap();
        prop_assert!(integrate(&f) >= 0.0);
    }

    #[test]
    fn boundary_pair_is_symmetric_and_bilinear(a in values(24), b in values(24), c in values(24), s in -3.0..3.0f64) {
        let g = square(7);
        let (fa, fb, fc) = (
            BoundaryField::new(g.clone(), a).unwrap(),
            BoundaryField::new(g.clone(), b).unwrap(),
            BoundaryField::new(g, c).unwrap(),
        );
        prop_assert_eq!(boundary_pair(&fa, &fb).unwrap(), boundary_pair(&fb, &fa).unwrap());
        let lhs = boundary_pair(&fa.combine(s, &fb, 1.0).unwrap(), &fc).unwrap();
        let rhs = s * boundary_pair(&fa, &fc).unwrap() + boundary_pair(&fb, &fc).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}
