use std::sync::Arc;

use pmeinv_core::math::log_log_slope;
use pmeinv_core::*;
use proptest::prelude::*;

fn square(n: usize) -> Arc<Grid> {
    Arc::new(Grid::new(2, &[1.0, 1.0], &[n, n]).unwrap())
}

fn field(g: &Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> ScalarField {
    ScalarField::from_fn(g.clone(), |p| f(p[0], p[1]))
}

fn harmonic_error(n: usize, gamma: impl Fn(f64, f64) -> f64, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let g = square(n);
    let gm = Coefficient::from_field(field(&g, gamma)).unwrap();
    let u = field(&g, exact);
    let v = solve_dirichlet(&EllipticProblem::harmonic(gm, u.trace()).unwrap()).unwrap();
    v.max_abs_diff(&u).unwrap()
}

#[test]
fn saddle_is_reproduced() {
    let ns = [26, 51, 101];
    let errs: Vec<f64> = ns.iter().map(|&n| harmonic_error(n, |_, _| 1.0, |x, y| x * x - y * y)).collect();
    assert!(errs[2] <= 1e-3, "{errs:?}");
    // the five-point stencil is exact on quadratics; only the solver residual remains
    assert!(errs.iter().all(|e| *e < 1e-8), "{errs:?}");
}

#[test]
fn exponential_gamma_example_is_exact() {
    // harmonic face averages of e^x make the discrete flux of e^{-x} constant
    for n in [17, 33, 65] {
        assert!(harmonic_error(n, |x, _| x.exp(), |x, _| (-x).exp()) < 1e-12);
    }
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    // div(e^x ∇u) for u = sin(πx) sin(πy)
    use std::f64::consts::PI;
    let ns = [17, 33, 65];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let g = square(n);
            let solver = EllipticSolver::new(&field(&g, |x, _| x.exp())).unwrap();
            let u = field(&g, |x, y| (PI * x).sin() * (PI * y).sin());
            let rhs = field(&g, |x, y| x.exp() * (PI * (PI * x).cos() - 2.0 * PI * PI * (PI * x).sin()) * (PI * y).sin());
            solver.solve(Some(&rhs), &u.trace()).unwrap().max_abs_diff(&u).unwrap()
        })
        .collect();
    let hs: Vec<f64> = ns.iter().map(|n| 1.0 / (*n as f64 - 1.0)).collect();
    let order = log_log_slope(&hs, &errs);
    assert!(order >= 1.9, "order {order}, errors {errs:?}");
}

#[test]
fn nonpolynomial_harmonic_converges_at_second_order() {
    // e^x sin y is harmonic and not reproduced exactly by the stencil
    let ns = [17, 33, 65];
    let errs: Vec<f64> = ns.iter().map(|&n| harmonic_error(n, |_, _| 1.0, |x, y| x.exp() * y.sin())).collect();
    let hs: Vec<f64> = ns.iter().map(|n| 1.0 / (*n as f64 - 1.0)).collect();
    let order = log_log_slope(&hs, &errs);
    assert!(order >= 1.9, "order {order}, errors {errs:?}");
}

#[test]
fn harmonic_family_reproduces_harmonic_polynomials() {
    let g = square(41);
    let gamma = ScalarField::constant(g.clone(), 1.0);
    let polys: [fn(f64, f64) -> f64; 5] = [|_, _| 1.0, |x, _| x, |_, y| y, |x, y| x * y, |x, y| x * x - y * y];
    let basis: Vec<BoundaryField> = polys.iter().map(|p| field(&g, p).trace()).collect();
    let fam = harmonic_family(&gamma, &basis).unwrap();
    for (w, p) in fam.iter().zip(polys) {
        assert!(w.max_abs_diff(&field(&g, p)).unwrap() < 1e-8);
    }
    let eg = field(&g, |x, _| x.exp());
    let fam = harmonic_family(&eg, &[field(&g, |x, _| (-x).exp()).trace()]).unwrap();
    assert!(fam[0].max_abs_diff(&field(&g, |x, _| (-x).exp())).unwrap() < 1e-4);
}

#[test]
fn harmonic_flux_balances() {
    let g = square(33);
    let gamma = field(&g, |x, y| 1.0 + 0.5 * (3.0 * x).sin() * y);
    let solver = EllipticSolver::new(&gamma).unwrap();
    let data = BoundaryField::from_fn(g.clone(), |p| (p[0] * 2.0).cos() + p[1] * p[1]);
    let v = solver.solve(None, &data).unwrap();
    let t = solver.neumann_trace(&v, None).unwrap();
    let one = BoundaryField::constant(g.clone(), 1.0);
    assert!(boundary_pair(&t, &one).unwrap().abs() < 1e-8);
}

#[test]
fn dn_matrix_of_linear_trace() {
    let g = square(51);
    let gamma = ScalarField::constant(g.clone(), 1.0);
    let m = dn_matrix(&gamma, &[BoundaryField::constant(g.clone(), 1.0), field(&g, |x, _| x).trace()]).unwrap();
    assert!(m[(0, 0)].abs() < 1e-8);
    assert!((m[(1, 1)] - 1.0).abs() < 1e-6);
}

#[test]
fn maximum_principle_and_source_signs() {
    let g = square(25);
    let gamma = field(&g, |x, y| 0.5 + x * x + 0.7 * y);
    let solver = EllipticSolver::new(&gamma).unwrap();
    let data = BoundaryField::from_fn(g.clone(), |p| (5.0 * p[0]).sin() * (1.0 + p[1]));
    let v = solver.solve(None, &data).unwrap();
    assert!(v.max() <= data.max() + 1e-12 && v.min() >= data.min() - 1e-12);
    let zero = BoundaryField::constant(g.clone(), 0.0);
    let src = field(&g, |x, y| 1.0 + (7.0 * x * y).sin().abs());
    let sub = solver.solve(Some(&src), &zero).unwrap();
    assert!(sub.max() <= 1e-12);
    let sup = solver.solve(Some(&src.scale(-1.0)), &zero).unwrap();
    assert!(sup.min() >= -1e-12);
    // a negative source lifts V above the boundary maximum, so only the lower bound survives
    let lifted = solver.solve(Some(&src.scale(-1.0)), &data).unwrap();
    assert!(lifted.min() >= data.min() - 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dn_matrix_is_symmetric(a in 0.1..0.9f64, b in 0.0..6.0f64, c in -0.5..0.5f64) {
        let g = square(15);
        let gamma = field(&g, |x, y| 1.0 + a * (b * x + c).sin() * (y + c).cos());
        let basis: Vec<BoundaryField> = inverse::polynomial_traces(&g, 2).into_iter().map(|(_, t)| t).collect();
        let m = dn_matrix(&gamma, &basis).unwrap();
        for i in 0..m.rows {
            for j in 0..m.cols {
                prop_assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-8 * (1.0 + m[(i, i)].abs()));
            }
        }
    }
}
