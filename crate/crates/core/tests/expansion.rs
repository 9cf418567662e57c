use std::sync::Arc;

use pmeinv_core::expansion::remainder_exponent;
use pmeinv_core::*;
use proptest::prelude::*;

fn square(n: usize) -> Arc<Grid> {
    Arc::new(Grid::new(2, &[1.0, 1.0], &[n, n]).unwrap())
}

/// Center value of the unit-square torsion function, `-Δp = 1`, `p = 0` on
/// the boundary, from its double sine series.
fn torsion_center() -> f64 {
    let pi = std::f64::consts::PI;
    let mut s = 0.0;
    for j in (1..400).step_by(2) {
        for k in (1..400).step_by(2) {
            let (j, k) = (j as f64, k as f64);
            let sign = if ((j + k) as i64 / 2 - 1) % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * 16.0 / (pi.powi(4) * j * k * (j * j + k * k));
        }
    }
    s
}

#[test]
fn torsion_oracle_for_the_second_term() {
    let p = torsion_center();
    assert!((p - 0.073_671_353).abs() < 1e-6, "{p}");
    let g = square(65);
    let one = ScalarField::constant(g.clone(), 1.0);
    let o = build_oracle(&one, &one, 2.0, &BoundaryField::constant(g.clone(), 1.0)).unwrap();
    assert!(o.v0.max_abs_diff(&one).unwrap() < 1e-10);
    let center = o.v1.values()[g.node(&[32, 32])];
    assert!((center + gamma_one_plus(2.0) * p).abs() < 1e-3, "{center}");
}

#[test]
fn zero_datum_gives_zero_oracle() {
    let g = square(9);
    let one = ScalarField::constant(g.clone(), 1.0);
    let o = build_oracle(&one, &one, 2.0, &BoundaryField::constant(g.clone(), 0.0)).unwrap();
    assert_eq!(o.v0.max_abs(), 0.0);
    assert_eq!(o.v1.max_abs(), 0.0);
}

#[test]
fn gamma_of_four_thirds() {
    assert!((gamma_one_plus(3.0) - 0.892_979_511_569_249_2).abs() < 1e-10);
    assert!((gamma_one_plus(1000.0) - 1.0).abs() < 1e-3);
}

#[test]
fn synthetic_remainder_moves_a_within_the_amplification_bound() {
    let g = square(5);
    let m = 2.0;
    let e = remainder_exponent(m);
    // the fit needs a full decade of h
    let hs = [4.0, 8.0, 16.0, 32.0, 64.0];
    let a = BoundaryField::from_fn(g.clone(), |p| 1.0 + p[0]);
    let b = BoundaryField::from_fn(g.clone(), |p| 0.3 - p[1]);
    let c = 2.5;
    let lambdas: Vec<BoundaryField> = hs
        .iter()
        .map(|&h: &f64| {
            a.combine(1.0, &b, h.powf(1.0 / m - 2.0))
                .unwrap()
                .map(|v| v + c * h.powf(-e - 2.0))
        })
        .collect();
    let fit = fit_expansion(&hs, &lambdas, m).unwrap();
    let da = fit.a.combine(1.0, &a, -1.0).unwrap().max_abs();
    let bound = c * 64f64.powf(-e - 2.0) * fit.amplification;
    assert!(da > 0.0 && da <= bound * (1.0 + 1e-9), "{da} > {bound}");
    // hand-solved weighted normal equations at node 0, weights h^{M+2}
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (h, l) in hs.iter().zip(&lambdas) {
        let (w, q, y) = (h.powf(e + 2.0), h.powf(1.0 / m - 2.0), l.values()[0]);
        s11 += w;
        s12 += w * q;
        s22 += w * q * q;
        r1 += w * y;
        r2 += w * q * y;
    }
    let det = s11 * s22 - s12 * s12;
    let a0 = (s22 * r1 - s12 * r2) / det;
    let b0 = (s11 * r2 - s12 * r1) / det;
    assert!((fit.a.values()[0] - a0).abs() < 1e-10 * a0.abs().max(1.0));
    assert!((fit.b.values()[0] - b0).abs() < 1e-8 * b0.abs().max(1.0));
    assert!(fit.condition.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn second_term_is_nonpositive(a in 0.0..1.0f64, b in 0.0..4.0f64, c in 0.2..1.0f64, m in 1.2..4.0f64) {
        let g = square(13);
        let eps = ScalarField::from_fn(g.clone(), |p| 0.5 + c * (b * p[0]).sin().abs());
        let gamma = ScalarField::from_fn(g.clone(), |p| 0.6 + a * p[1] * p[0]);
        let data = BoundaryField::from_fn(g.clone(), |p| (p[0] - a).abs() + c * p[1]);
        let o = build_oracle(&eps, &gamma, m, &data).unwrap();
        prop_assert!(o.v1.max() <= 1e-9);
    }
}

#[test]
fn unit_datum_has_vanishing_leading_term() {
    // Λ_γ 1 = 0, so the fitted A must be small against the samples themselves
    let g = square(11);
    let one = Coefficient::constant(g.clone(), 1.0).unwrap();
    let data = BoundaryField::constant(g.clone(), 1.0);
    let set = dn_samples(&one, &one, 2.0, &data, "1", &PipelineConfig::default()).unwrap();
    let fit = fit_expansion(&set.hs(), &set.lambdas(), 2.0).unwrap();
    let scale = set.lambdas().iter().map(|l| l.max_abs()).fold(0.0, f64::max);
    assert!(fit.a.max_abs() <= 0.02 * scale, "{} vs {scale}", fit.a.max_abs());
    // and B carries the pairing identity against W = 1
    let o = build_oracle(one.field(), one.field(), 2.0, &data).unwrap();
    let err = pairing_identity_normalized(&fit.b, &o, &ScalarField::constant(g.clone(), 1.0)).unwrap();
    assert!(err <= 0.03, "{err}");
}
