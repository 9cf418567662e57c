use std::sync::Arc;

use pmeinv_core::pme::{cfl_steps, conservation_defect, uniform_times};
use pmeinv_core::*;

fn wave_problem(n: usize, steps: Option<usize>) -> PMEProblem {
    let g = Arc::new(Grid::new(1, &[2.0], &[n]).unwrap());
    let one = Coefficient::constant(g.clone(), 1.0).unwrap();
    let phi = BoundaryData::Expression(Expression::parse("max((t - x1)/2, 0)").unwrap());
    let p = PMEProblem::new(one.clone(), one, 2.0, phi.clone(), Source::Zero, uniform_times(0.5, 1)).unwrap();
    let steps = steps.unwrap_or_else(|| cfl_steps(&g, 1.0, 2.0, p.lambda_max(1e6), 0.5));
    p.with_times(uniform_times(0.5, steps)).unwrap()
}

fn wave_error(p: &PMEProblem, u: &TimeField) -> f64 {
    let g = p.grid();
    let t = u.final_time();
    let last = u.frame(u.len() - 1);
    (0..g.len())
        .map(|i| (last[i] - ((t - g.point(i)[0]) / 2.0).max(0.0)).abs())
        .fold(0.0, f64::max)
}

fn square(n: usize) -> Arc<Grid> {
    Arc::new(Grid::new(2, &[1.0, 1.0], &[n, n]).unwrap())
}

/// ε, γ variable; `φ = profile(t) g`.
fn bump_problem(profile: &str, scale: f64, m: f64, horizon: f64, steps: usize) -> PMEProblem {
    let g = square(13);
    let eps = Coefficient::from_field(ScalarField::from_fn(g.clone(), |p| 1.0 + 0.3 * p[0] * p[1])).unwrap();
    let gamma = Coefficient::from_field(ScalarField::from_fn(g.clone(), |p| 0.7 + 0.5 * (3.0 * p[1]).sin().abs())).unwrap();
    let data = BoundaryField::from_fn(g.clone(), |p| scale * (1.0 + p[0] - 0.5 * p[1]).max(0.0));
    let phi = BoundaryData::Separable {
        g: data,
        profile: Expression::parse(profile).unwrap(),
    };
    PMEProblem::new(eps, gamma, m, phi, Source::Zero, uniform_times(horizon, steps)).unwrap()
}

#[test]
fn traveling_wave() {
    let p = wave_problem(401, None);
    let lvl = RegularizationLevel::for_problem(&p, 1e6).unwrap();
    let (u, _) = solve_level(&p, lvl).unwrap();
    assert!(wave_error(&p, &u) <= 5e-3);
}

#[test]
fn traveling_wave_through_the_k_limit() {
    let p = wave_problem(201, None);
    let sched = KSchedule {
        k0: 1e4,
        factor: 2.0,
        k_max: 1e9,
    };
    let s = solve_pme(&p, 1e-4, sched).unwrap();
    assert!(s.differences.last().unwrap() <= &1e-4);
    assert!(s.monotonicity_defect <= 1e-9, "{}", s.monotonicity_defect);
    assert!(wave_error(&p, &s.u) <= 1e-2);
}

#[test]
fn zero_data_converges_to_zero() {
    let g = square(5);
    let one = Coefficient::constant(g.clone(), 1.0).unwrap();
    let p = PMEProblem::new(
        one.clone(),
        one,
        2.0,
        BoundaryData::PowerLaw(BoundaryField::constant(g, 0.0)),
        Source::Zero,
        uniform_times(1.0, 4),
    )
    .unwrap();
    let s = solve_pme(&p, 1e-6, KSchedule::default()).unwrap();
    assert!(s.u.max() <= 1e-6);
    assert!(s.u.min() >= 0.0);
}

#[test]
fn maximum_principle_nonnegativity_and_conservation() {
    let p = bump_problem("min(t, 1)", 1.0, 2.0, 1.5, 60);
    let lvl = RegularizationLevel::for_problem(&p, 1e4).unwrap();
    let (u, _) = solve_level(&p, lvl).unwrap();
    assert!(u.max() <= p.sup_phi() + lvl.floor() + 1e-9);
    assert!(u.min() >= lvl.floor() - 1e-12);
    let d = conservation_defect(&p, &lvl, &u).unwrap();
    assert!(d <= 1e-8, "{d}");
}

#[test]
fn comparison_and_k_monotonicity() {
    let lo = bump_problem("t", 1.0, 3.0, 0.5, 40);
    let hi = bump_problem("t", 2.0, 3.0, 0.5, 40);
    let lambda_max = hi.lambda_max(1e3);
    let mut prev: Option<TimeField> = None;
    for k in [1e3, 2e3, 4e3] {
        let lvl = RegularizationLevel::new(k, lambda_max).unwrap();
        let (a, _) = solve_level(&lo, lvl).unwrap();
        let (b, _) = solve_level(&hi, lvl).unwrap();
        assert!(a.max_excess_over(&b).unwrap() <= 1e-9);
        if let Some(p) = &prev {
            assert!(a.max_excess_over(p).unwrap() <= 1e-9);
        }
        prev = Some(a);
    }
}

#[test]
fn polynomial_growth() {
    // φᵐ = t g, so sup u(T)ᵐ <= T sup g + O(1/k) at every T
    let g = square(11);
    let one = Coefficient::constant(g.clone(), 1.0).unwrap();
    let data = BoundaryField::from_fn(g.clone(), |p| 1.0 + p[0] * p[1]);
    let p = PMEProblem::new(one.clone(), one, 2.0, BoundaryData::PowerLaw(data.clone()), Source::Zero, uniform_times(4.0, 80)).unwrap();
    let lvl = RegularizationLevel::for_problem(&p, 1e5).unwrap();
    let (u, _) = solve_level(&p, lvl).unwrap();
    for (n, t) in u.stamps().iter().enumerate() {
        let sup = u.frame(n).iter().fold(0.0f64, |a, b| a.max(*b));
        assert!(sup * sup <= t * data.max() + 1e-3, "t = {t}");
    }
}

#[test]
fn energy_norm_examples() {
    let g = square(9);
    let stamps: Vec<f64> = (0..=400).map(|i| i as f64 / 400.0).collect();
    let constant = TimeField::new(g.clone(), stamps.clone(), vec![vec![0.3; g.len()]; stamps.len()]).unwrap();
    assert_eq!(energy_norm(&constant, 2.0), 0.0);
    // u = t x1: |∇u|² = t², so the squared norm over [0, 1] is 1/3
    let frames = stamps.iter().map(|t| (0..g.len()).map(|i| t * g.point(i)[0]).collect()).collect();
    let u = TimeField::new(g, stamps, frames).unwrap();
    let e = energy_norm(&u, 1.0);
    assert!((e * e - 1.0 / 3.0).abs() < 1e-5, "{e}");
}

#[test]
fn traveling_wave_energy_is_stable_under_refinement() {
    let e: Vec<f64> = [201, 401]
        .iter()
        .map(|&n| {
            let p = wave_problem(n, None);
            let (u, _) = solve_level(&p, RegularizationLevel::for_problem(&p, 1e6).unwrap()).unwrap();
            energy_norm(&u, 2.0)
        })
        .collect();
    assert!(e[0] > 0.0);
    assert!((e[0] - e[1]).abs() <= 0.02 * e[1], "{e:?}");
}
