use std::f64::consts::PI;
use std::sync::Arc;

use pmeinv_core::*;

fn square(n: usize) -> Arc<Grid> {
    Arc::new(Grid::new(2, &[1.0, 1.0], &[n, n]).unwrap())
}

fn dense_config() -> PipelineConfig {
    PipelineConfig {
        schedule: HSchedule::new(vec![1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 16.0], 40.0, true).unwrap(),
        ..PipelineConfig::default()
    }
}

fn traces(g: &Arc<Grid>, degree: usize) -> Vec<BoundaryField> {
    polynomial_traces(g, degree).into_iter().map(|(_, t)| t).collect()
}

#[test]
fn unit_gamma_from_eight_exact_data() {
    let g = square(13);
    let data: Vec<BoundaryField> = traces(&g, 3).into_iter().skip(1).take(8).collect();
    let truth = ScalarField::constant(g.clone(), 1.0);
    let measured = dn_data(&truth, &data).unwrap();
    let p = GammaInverseProblem::new(data, measured, CoarseBasis::new(g.clone(), 5).unwrap(), AlphaRule::Fixed(1e-4)).unwrap();
    assert!(p.asymmetry().unwrap() < 1e-9);
    let r = recover_gamma(&p).unwrap();
    assert!(relative_l2_error(&r.gamma, &truth).unwrap() < 1e-3);
}

#[test]
fn sine_gamma_from_sixteen_exact_data() {
    let g = square(17);
    let data: Vec<BoundaryField> = traces(&g, 5).into_iter().skip(1).take(16).collect();
    assert_eq!(data.len(), 16);
    let truth = ScalarField::from_fn(g.clone(), |p| 1.0 + 0.3 * (PI * p[0]).sin() * (PI * p[1]).sin());
    let measured = dn_data(&truth, &data).unwrap();
    let scale = measured.iter().map(|m| m.l2_norm().powi(2)).sum::<f64>().sqrt();
    let rule = AlphaRule::Discrepancy {
        noise: 1e-4 * scale,
        tau: 1.5,
    };
    let p = GammaInverseProblem::new(data, measured, CoarseBasis::new(g.clone(), 9).unwrap(), rule).unwrap();
    let r = recover_gamma(&p).unwrap();
    let err = relative_l2_error(&r.gamma, &truth).unwrap();
    assert!(err <= 0.1, "{err}");
    assert!(!r.path.is_empty());
}

#[test]
fn epsilon_moments_of_constant_coefficients() {
    let g = square(11);
    let eps0 = 2.0;
    let eps = Coefficient::constant(g.clone(), eps0).unwrap();
    let one = Coefficient::constant(g.clone(), 1.0).unwrap();
    let h = BoundaryField::constant(g.clone(), 1.0);
    let cfg = dense_config();
    let s = default_s_step(&h);
    let data = moment_data(&eps, &one, 2.0, &h, s, &cfg).unwrap();
    let w1 = BoundaryField::constant(g.clone(), 1.0);
    let wx = BoundaryField::from_fn(g.clone(), |p| p[0]);
    let m1 = epsilon_moment(&data, 2.0, &w1).unwrap();
    let mx = epsilon_moment(&data, 2.0, &wx).unwrap();
    assert!((m1.value - eps0).abs() <= 0.03 * eps0, "{}", m1.value);
    assert!((mx.value - 0.5 * eps0).abs() <= 0.03 * 0.5 * eps0, "{}", mx.value);
    // linear in W
    let mix = epsilon_moment(&data, 2.0, &w1.combine(2.0, &wx, -3.0).unwrap()).unwrap();
    assert!((mix.value - (2.0 * m1.value - 3.0 * mx.value)).abs() <= 1e-10 * m1.value.abs());
    // halving s moves the moment by no more than the reported bias
    let half = moment_data(&eps, &one, 2.0, &h, 0.5 * s, &cfg).unwrap();
    let m_half = epsilon_moment(&half, 2.0, &w1).unwrap();
    assert!((m_half.value - m1.value).abs() <= m1.bias, "{} vs {}", (m_half.value - m1.value).abs(), m1.bias);
}

#[test]
fn pipeline_moments_match_direct_integrals() {
    // γ = 1, variable ε: every moment of the degree-2 families within 5%
    let g = square(9);
    let eps = Coefficient::from_field(ScalarField::from_fn(g.clone(), |p| 1.0 + 0.5 * (PI * p[0]).sin() * (PI * p[1]).sin())).unwrap();
    let one = Coefficient::constant(g.clone(), 1.0).unwrap();
    let fam = moment_families(one.field(), 2).unwrap();
    let cfg = dense_config();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (t, hi) in moment_traces(&g, 2).iter().zip(&fam.h) {
        let data = moment_data(&eps, &one, 2.0, &t.1, default_s_step(&t.1), &cfg).unwrap();
        for wj in &fam.w {
            let got = epsilon_moment(&data, 2.0, &wj.trace()).unwrap().value;
            let want = eps.field().mul(hi).unwrap().mul(wj).unwrap().integrate();
            worst = worst.max((got - want).abs());
            scale = scale.max(want.abs());
        }
    }
    assert!(worst <= 0.05 * scale, "{worst} vs {scale}");
}

#[test]
fn consistent_extra_moment_leaves_the_estimate_unchanged() {
    let g = square(9);
    let one = ScalarField::constant(g.clone(), 1.0);
    let fam = moment_families(&one, 2).unwrap();
    let eps = ScalarField::constant(g.clone(), 2.0);
    let base = MomentSystem::exact(&eps, fam.h.clone(), fam.w.clone(), 2.0).unwrap();
    let mut w = fam.w.clone();
    w.push(fam.w[1].combine(1.0, &fam.w[2], 0.5).unwrap());
    let extended = MomentSystem::exact(&eps, fam.h, w, 2.0).unwrap();
    let a = recover_epsilon(&base, AlphaRule::Fixed(1e-3), 0.01, 100.0).unwrap();
    let b = recover_epsilon(&extended, AlphaRule::Fixed(1e-3), 0.01, 100.0).unwrap();
    assert!(a.eps.max_abs_diff(&b.eps).unwrap() <= 1e-8);
}

#[test]
fn reconstructions_are_deterministic() {
    let g = square(9);
    let fam = moment_families(&ScalarField::constant(g.clone(), 1.0), 2).unwrap();
    let eps = ScalarField::from_fn(g.clone(), |p| 1.0 + p[0] * p[1]);
    let sys = MomentSystem::exact(&eps, fam.h, fam.w, 2.0).unwrap();
    let a = recover_epsilon(&sys, AlphaRule::Fixed(1e-4), 0.01, 100.0).unwrap();
    let b = recover_epsilon(&sys, AlphaRule::Fixed(1e-4), 0.01, 100.0).unwrap();
    assert_eq!(a.eps, b.eps);
}
