//! Large-`h` asymptotics `V = h² V₀ + h^{1/m} V₁ + R₂` and the induced
//! expansion `Λ^h = A + h^{1/m-2} B + O(h^{-M-2})`, `M = min(1, 2 - 2/m)`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::elliptic::EllipticSolver;
use crate::error::{invalid, Error, Result};
use crate::field::{check_grid, BoundaryField, ScalarField, TimeField};
use crate::laplace::{product_weights, TransformResult};
use crate::math;
use crate::pme::RegularizationLevel;
use crate::special::gamma;

/// `Γ(1 + 1/m)`.
pub fn gamma_one_plus(m: f64) -> f64 {
    gamma(1.0 + 1.0 / m)
}

/// `M = min(1, 2 - 2/m)`.
pub fn remainder_exponent(m: f64) -> f64 {
    (2.0 - 2.0 / m).min(1.0)
}

/// `V₀` (γ-harmonic with trace `g`) and `V₁` (`div(γ ∇V₁) = Γ(1+1/m) ε V₀^{1/m}`,
/// zero trace).
#[derive(Debug, Clone)]
pub struct ExpansionOracle {
    pub v0: ScalarField,
    pub v1: ScalarField,
    /// Right-hand side of the `V₁` problem.
    pub rhs1: ScalarField,
    pub m: f64,
    pub gamma_value: f64,
    pub eps: ScalarField,
}

pub fn build_oracle(eps: &ScalarField, gamma: &ScalarField, m: f64, g: &BoundaryField) -> Result<ExpansionOracle> {
    let solver = EllipticSolver::new(gamma)?;
    build_oracle_with(&solver, eps, m, g)
}

/// As [`build_oracle`] with a prepared solver for `γ`.
pub fn build_oracle_with(solver: &EllipticSolver, eps: &ScalarField, m: f64, g: &BoundaryField) -> Result<ExpansionOracle> {
    if !(m > 1.0) {
        return Err(invalid("expansion requires m > 1"));
    }
    check_grid(eps.grid(), solver.grid())?;
    let v0 = solver.solve(None, g)?;
    let gv = gamma_one_plus(m);
    let rhs1 = ScalarField::new(
        eps.grid().clone(),
        v0.values()
            .iter()
            .zip(eps.values())
            .map(|(v, e)| gv * e * math::pos_pow(v.max(0.0), 1.0 / m))
            .collect(),
    )?;
    let v1 = solver.solve(Some(&rhs1), &BoundaryField::constant(eps.grid().clone(), 0.0))?;
    Ok(ExpansionOracle {
        v0,
        v1,
        rhs1,
        m,
        gamma_value: gv,
        eps: eps.clone(),
    })
}

impl ExpansionOracle {
    /// `A = γ ∂_ν V₀`.
    pub fn leading_trace(&self, solver: &EllipticSolver) -> Result<BoundaryField> {
        solver.neumann_trace(&self.v0, None)
    }

    /// `B = γ ∂_ν V₁` with the `V₁` source in the weak trace.
    pub fn second_trace(&self, solver: &EllipticSolver) -> Result<BoundaryField> {
        solver.neumann_trace(&self.v1, Some(&self.rhs1))
    }

    /// `N₀(h) = Γ(1+1/m) ε h^{1/m} V₀^{1/m}`.
    pub fn n0(&self, h: f64) -> ScalarField {
        self.rhs1.scale(math::powf(h, 1.0 / self.m))
    }
}

/// `R₁ = V - h² V₀` and `R₂ = R₁ - h^{1/m} V₁`.
pub fn remainders(result: &TransformResult, oracle: &ExpansionOracle) -> Result<(ScalarField, ScalarField)> {
    let h = result.h;
    let r1 = result.v.combine(1.0, &oracle.v0, -h * h)?;
    let r2 = r1.combine(1.0, &oracle.v1, -math::powf(h, 1.0 / oracle.m))?;
    Ok((r1, r2))
}

/// Sign defects of one remainder pair, scaled by `h²`: `max R₁ / h²`,
/// `max V₁` and `max(-R₂) / h²`. All three should be `<= 1e-9`.
pub fn sign_defects(result: &TransformResult, oracle: &ExpansionOracle) -> Result<[f64; 3]> {
    let (r1, r2) = remainders(result, oracle)?;
    let h2 = result.h * result.h;
    Ok([r1.max() / h2, oracle.v1.max(), -r2.min() / h2])
}

/// Per-node weighted least squares of `Λ^h` on `{1, h^{1/m-2}}`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub m: f64,
    pub hs: Vec<f64>,
    pub a: BoundaryField,
    pub b: BoundaryField,
    /// Boundary L² norm of `Λ^h - A - h^{1/m-2} B` for each `h`.
    pub residual_norms: Vec<f64>,
    /// Weighted RMS residual per boundary node.
    pub node_residuals: Vec<f64>,
    /// Log-log slope of `residual_norms` against `h`.
    pub remainder_slope: f64,
    /// Condition number of the column-scaled weighted design.
    pub condition: f64,
    /// `Σ_j |∂Â/∂Λ_j| h_j^{-M-2} / h_max^{-M-2}`: a remainder `c h^{-M-2}`
    /// moves `A` by at most `|c| h_max^{-M-2}` times this factor.
    pub amplification: f64,
    /// Two-point solve at the two largest `h`, as a cross-check.
    pub peel_a: BoundaryField,
    pub peel_b: BoundaryField,
    /// Per-node spread of `A` and `B` from propagating the fit residuals
    /// through the estimator weights.
    pub a_uncertainty: Vec<f64>,
    pub b_uncertainty: Vec<f64>,
}

/// Per-sample weights of the expansion fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FitWeights {
    /// `h^{M+2}`, the inverse of the remainder order.
    #[default]
    RemainderOrder,
    /// Inverse total variance `1 / (σ_model² + σ_noise²)` for samples carrying
    /// multiplicative noise of the given relative size. `σ_model = c h^{-M-2}`
    /// with `c` taken from the smallest-h residual of a remainder-order pass.
    NoiseAware { relative_noise: f64 },
}

/// Fits `Λ^{h_j} ≈ A + h_j^{1/m-2} B` with weights `h_j^{M+2}`.
pub fn fit_expansion(hs: &[f64], lambdas: &[BoundaryField], m: f64) -> Result<FitResult> {
    fit_expansion_with(hs, lambdas, m, FitWeights::RemainderOrder)
}

pub fn fit_expansion_with(hs: &[f64], lambdas: &[BoundaryField], m: f64, weights: FitWeights) -> Result<FitResult> {
    if hs.len() != lambdas.len() {
        return Err(Error::LengthMismatch {
            expected: hs.len(),
            got: lambdas.len(),
        });
    }
    if !(m > 1.0) {
        return Err(invalid("expansion requires m > 1"));
    }
    let mut sorted = hs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    sorted.dedup();
    if sorted.len() < 3 || sorted.len() != hs.len() {
        return Err(Error::Fit(String::from("need at least 3 distinct h values")));
    }
    let (hmin, hmax) = (sorted[0], *sorted.last().unwrap());
    if !(hmin > 0.0) || hmax / hmin < 10.0 * (1.0 - 1e-12) {
        return Err(Error::Fit(String::from("h values must span at least one decade")));
    }
    let grid = lambdas[0].grid().clone();
    for l in lambdas {
        check_grid(l.grid(), &grid)?;
    }
    let q = 1.0 / m - 2.0;
    let mm = remainder_exponent(m);
    let x: Vec<f64> = hs.iter().map(|h| math::powf(*h, q)).collect();
    let w: Vec<f64> = match weights {
        FitWeights::RemainderOrder => hs.iter().map(|h| math::powf(*h, mm + 2.0)).collect(),
        FitWeights::NoiseAware { relative_noise } => {
            if !(relative_noise >= 0.0) {
                return Err(invalid("relative noise must be nonnegative"));
            }
            let first = fit_expansion_with(hs, lambdas, m, FitWeights::RemainderOrder)?;
            // per-node RMS so that norms compare with nodal noise
            let rms = |f: &BoundaryField| f.l2_norm() / math::sqrt(grid.surface_measure());
            let sigma_noise: Vec<f64> = lambdas.iter().map(|l| relative_noise * rms(l)).collect();
            // the remainder is most visible at the smallest h; larger h only
            // contribute noise amplified by h^{M+2}
            let j0 = (0..hs.len())
                .min_by(|&i, &j| hs[i].partial_cmp(&hs[j]).unwrap_or(core::cmp::Ordering::Equal))
                .unwrap_or(0);
            let r0 = first.residual_norms[j0] / math::sqrt(grid.surface_measure());
            let c = math::sqrt((r0 * r0 - sigma_noise[j0] * sigma_noise[j0]).max(0.0)) * math::powf(hs[j0], mm + 2.0);
            let var: Vec<f64> = hs
                .iter()
                .zip(&sigma_noise)
                .map(|(h, sn)| {
                    let sm = c * math::powf(*h, -mm - 2.0);
                    sm * sm + sn * sn
                })
                .collect();
            if var.iter().any(|v| !(*v > 0.0)) {
                hs.iter().map(|h| math::powf(*h, mm + 2.0)).collect()
            } else {
                let vmin = var.iter().copied().fold(f64::INFINITY, f64::min);
                var.iter().map(|v| vmin / v).collect()
            }
        }
    };
    let (mut g00, mut g01, mut g11) = (0.0, 0.0, 0.0);
    for (xj, wj) in x.iter().zip(&w) {
        g00 += wj;
        g01 += wj * xj;
        g11 += wj * xj * xj;
    }
    let det = g00 * g11 - g01 * g01;
    // condition of the column-scaled normal matrix
    let c01 = g01 / math::sqrt(g00 * g11);
    let condition = math::sqrt((1.0 + math::abs(c01)) / (1.0 - math::abs(c01)).max(f64::MIN_POSITIVE));
    if !(det > 0.0) || condition > 1e12 {
        return Err(Error::Fit(String::from("design is collinear; spread the h values")));
    }
    // Â = Σ_j α_j Λ_j, B̂ = Σ_j β_j Λ_j
    let alpha: Vec<f64> = x.iter().zip(&w).map(|(xj, wj)| wj * (g11 - g01 * xj) / det).collect();
    let beta: Vec<f64> = x.iter().zip(&w).map(|(xj, wj)| wj * (g00 * xj - g01) / det).collect();
    let nb = grid.boundary_len();
    let mut a = alloc::vec![0.0; nb];
    let mut b = alloc::vec![0.0; nb];
    for (j, l) in lambdas.iter().enumerate() {
        for (i, v) in l.values().iter().enumerate() {
            a[i] += alpha[j] * v;
            b[i] += beta[j] * v;
        }
    }
    let a = BoundaryField::new(grid.clone(), a)?;
    let b = BoundaryField::new(grid.clone(), b)?;
    let mut residual_norms = Vec::with_capacity(hs.len());
    let mut node_sq = alloc::vec![0.0; nb];
    let mut a_var = alloc::vec![0.0; nb];
    let mut b_var = alloc::vec![0.0; nb];
    let wsum: f64 = w.iter().sum();
    let dof = hs.len() as f64 / (hs.len() as f64 - 2.0);
    for (j, l) in lambdas.iter().enumerate() {
        let r = l.combine(1.0, &a, -1.0)?.combine(1.0, &b, -x[j])?;
        residual_norms.push(r.l2_norm());
        for (i, v) in r.values().iter().enumerate() {
            node_sq[i] += w[j] * v * v / wsum;
            a_var[i] += dof * alpha[j] * alpha[j] * v * v;
            b_var[i] += dof * beta[j] * beta[j] * v * v;
        }
    }
    let a_uncertainty = a_var.iter().map(|s| math::sqrt(*s)).collect();
    let b_uncertainty = b_var.iter().map(|s| math::sqrt(*s)).collect();
    let node_residuals = node_sq.iter().map(|s| math::sqrt(*s)).collect();
    let positive: Vec<(f64, f64)> = hs
        .iter()
        .zip(&residual_norms)
        .filter(|(_, r)| **r > 0.0)
        .map(|(h, r)| (*h, *r))
        .collect();
    let remainder_slope = if positive.len() >= 2 {
        let (hh, rr): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        math::log_log_slope(&hh, &rr)
    } else {
        f64::NEG_INFINITY
    };
    let amplification = alpha
        .iter()
        .zip(hs)
        .map(|(a, h)| math::abs(*a) * math::powf(*h / hmax, -mm - 2.0))
        .sum();
    // peeling: exact solve at the two largest h
    let mut order: Vec<usize> = (0..hs.len()).collect();
    order.sort_by(|&i, &j| hs[i].partial_cmp(&hs[j]).unwrap_or(core::cmp::Ordering::Equal));
    let (i1, i2) = (order[order.len() - 2], order[order.len() - 1]);
    let dx = x[i1] - x[i2];
    let peel_b = lambdas[i1].combine(1.0 / dx, &lambdas[i2], -1.0 / dx)?;
    let peel_a = lambdas[i2].combine(1.0, &peel_b, -x[i2])?;
    Ok(FitResult {
        m,
        hs: hs.to_vec(),
        a,
        b,
        residual_norms,
        node_residuals,
        remainder_slope,
        condition,
        amplification,
        peel_a,
        peel_b,
        a_uncertainty,
        b_uncertainty,
    })
}

/// Boundary L² norms of `Λ^{h_j} - A - h_j^{1/m-2} B` for given coefficients.
pub fn remainder_norms(hs: &[f64], lambdas: &[BoundaryField], a: &BoundaryField, b: &BoundaryField, m: f64) -> Result<Vec<f64>> {
    let q = 1.0 / m - 2.0;
    hs.iter()
        .zip(lambdas)
        .map(|(h, l)| Ok(l.combine(1.0, a, -1.0)?.combine(1.0, b, -math::powf(*h, q))?.l2_norm()))
        .collect()
}

/// Relative boundary L² distance `‖a - b‖ / ‖b‖`.
pub fn relative_boundary_error(a: &BoundaryField, b: &BoundaryField) -> Result<f64> {
    let d = a.combine(1.0, b, -1.0)?;
    Ok(d.l2_norm() / b.l2_norm().max(f64::MIN_POSITIVE))
}

/// `⟨B, W|∂Ω⟩` against its predicted value `Γ(1+1/m) ∫ ε V₀^{1/m} W`.
pub fn pairing_identity(b: &BoundaryField, oracle: &ExpansionOracle, w: &ScalarField) -> Result<(f64, f64)> {
    let lhs = b.pair(&w.trace())?;
    let rhs = oracle.rhs1.mul(w)?.integrate();
    Ok((lhs, rhs))
}

/// `|⟨B, W⟩ - Γ(1+1/m) ∫ ε V₀^{1/m} W|` relative to `∫ |Γ(1+1/m) ε V₀^{1/m} W|`.
/// The absolute-value scale keeps the error meaningful for `W` whose moment
/// nearly cancels.
pub fn pairing_identity_normalized(b: &BoundaryField, oracle: &ExpansionOracle, w: &ScalarField) -> Result<f64> {
    let (lhs, rhs) = pairing_identity(b, oracle, w)?;
    let scale = oracle.rhs1.mul(&w.map(math::abs))?.integrate();
    Ok(math::abs(lhs - rhs) / scale.max(f64::MIN_POSITIVE))
}

/// Outcome of the cut-off subsolution comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsolutionReport {
    /// First grid time at which `t V₀ + Γ(1/m)^{-1} t^{1/m-1} V₁ >= 0` everywhere.
    pub sigma: f64,
    /// `max (w - v) / max v` over stamps `t >= σ` (nonpositive when `w <= v`).
    pub w_excess: f64,
    /// Per `h`: `max (N₁ - N) / max N₀`.
    pub n1_excess: Vec<f64>,
    /// Per `h`: `max (N - N₀) / max N₀`.
    pub n_excess: Vec<f64>,
}

fn profile(t: f64, v0: f64, v1: f64, m: f64, inv_gamma: f64) -> f64 {
    t * v0 + inv_gamma * math::powf(t, 1.0 / m - 1.0) * v1
}

/// Smooth non-decreasing cut-off: 0 below `σ/2`, 1 above `σ`.
pub fn cutoff(t: f64, sigma: f64) -> f64 {
    if t <= 0.5 * sigma {
        0.0
    } else if t >= sigma {
        1.0
    } else {
        let s = (t - 0.5 * sigma) / (0.5 * sigma);
        s * s * (3.0 - 2.0 * s)
    }
}

/// Compares the forward solution `u` (level `level`) with the cut-off
/// subsolution `w = χ^m [t V₀ + Γ(1/m)^{-1} t^{1/m-1} V₁]` and checks
/// `N₁ <= N <= N₀` for the supplied transforms.
pub fn subsolution_check(
    oracle: &ExpansionOracle,
    level: &RegularizationLevel,
    u: &TimeField,
    results: &[TransformResult],
) -> Result<SubsolutionReport> {
    check_grid(u.grid(), oracle.v0.grid())?;
    let m = oracle.m;
    let inv_gamma = 1.0 / gamma(1.0 / m);
    let v0 = oracle.v0.values();
    let v1 = oracle.v1.values();
    // per-node zero of the profile, then the first stamp beyond all of them
    let mut t_star = 0.0f64;
    for (a, b) in v0.iter().zip(v1) {
        if *b < 0.0 {
            if *a <= 0.0 {
                return Err(Error::Fit(String::from("profile never becomes nonnegative where V0 vanishes")));
            }
            let t = math::powf(-b * inv_gamma / a, 1.0 / (2.0 - 1.0 / m));
            t_star = t_star.max(t);
        }
    }
    let stamps = u.stamps();
    let sigma = stamps
        .iter()
        .copied()
        .find(|t| *t > 0.0 && *t >= t_star)
        .ok_or_else(|| Error::Fit(String::from("time grid ends before the profile turns nonnegative")))?;
    let mut w_excess = f64::NEG_INFINITY;
    let mut vmax = 0.0f64;
    for (n, &t) in stamps.iter().enumerate() {
        if t < sigma {
            continue;
        }
        let frame = u.frame(n);
        for i in 0..v0.len() {
            let v = level.phi(frame[i], m);
            vmax = vmax.max(v);
            w_excess = w_excess.max(profile(t, v0[i], v1[i], m, inv_gamma) - v);
        }
    }
    let w_excess = w_excess / vmax.max(f64::MIN_POSITIVE);
    let mut n1_excess = Vec::with_capacity(results.len());
    let mut n_excess = Vec::with_capacity(results.len());
    for r in results {
        let h = r.h;
        let n0 = oracle.n0(h);
        let scale = n0.max_abs().max(f64::MIN_POSITIVE);
        // fine geometric grid on [σ, σ + 60h] for the analytic integrand
        let mut grid_t = alloc::vec![0.0];
        let mut t = 0.0;
        let mut dt = 1e-3 * sigma.max(1e-3 * h);
        while t < 60.0 * h {
            t += dt;
            grid_t.push(t);
            dt *= 1.002;
        }
        let c = product_weights(&grid_t, h);
        let shift = math::exp(-sigma / h);
        let mut worst1 = f64::NEG_INFINITY;
        for i in 0..v0.len() {
            let s: f64 = grid_t
                .iter()
                .zip(&c)
                .map(|(tt, ci)| ci * math::pos_pow(profile(sigma + tt, v0[i], v1[i], m, inv_gamma).max(0.0), 1.0 / m))
                .sum();
            let n1 = oracle.eps.values()[i] * shift * s / h;
            worst1 = worst1.max(n1 - r.n.values()[i]);
        }
        n1_excess.push(worst1 / scale);
        let worst = r
            .n
            .values()
            .iter()
            .zip(n0.values())
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        n_excess.push(worst / scale);
    }
    Ok(SubsolutionReport {
        sigma,
        w_excess,
        n1_excess,
        n_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use alloc::sync::Arc;

    #[test]
    fn gamma_values() {
        assert!((gamma_one_plus(2.0) - 0.886_226_925_452_758).abs() < 1e-10);
        assert!((gamma_one_plus(3.0) - 0.892_979_511_569_249_2).abs() < 1e-10);
        assert!((gamma_one_plus(1000.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exact_synthetic_fit() {
        let g = Arc::new(Grid::cube(2, 1.0, 5).unwrap());
        let a = BoundaryField::from_fn(g.clone(), |x| 1.0 + x[0]);
        let b = BoundaryField::from_fn(g.clone(), |x| x[1] - 2.0);
        let hs: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];
        let m = 2.0;
        let ls: Vec<BoundaryField> = hs
            .iter()
            .map(|h| a.combine(1.0, &b, h.powf(1.0 / m - 2.0)).unwrap())
            .collect();
        let fit = fit_expansion(&hs, &ls, m).unwrap();
        assert!(relative_boundary_error(&fit.a, &a).unwrap() < 1e-12);
        assert!(relative_boundary_error(&fit.b, &b).unwrap() < 1e-10);
        assert!(relative_boundary_error(&fit.peel_a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn fit_preconditions() {
        let g = Arc::new(Grid::cube(2, 1.0, 5).unwrap());
        let l = BoundaryField::constant(g, 1.0);
        assert!(fit_expansion(&[4.0, 8.0], &[l.clone(), l.clone()], 2.0).is_err());
        assert!(fit_expansion(&[4.0, 8.0, 16.0], &[l.clone(), l.clone(), l.clone()], 2.0).is_err());
    }

    #[test]
    fn cutoff_is_smoothstep() {
        assert_eq!(cutoff(0.4, 1.0), 0.0);
        assert_eq!(cutoff(1.0, 1.0), 1.0);
        assert!((cutoff(0.75, 1.0) - 0.5).abs() < 1e-15);
    }
}
