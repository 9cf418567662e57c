//! Laplace transforms `V(h) = ∫ e^{-t/h} u^m dt` of forward solutions with
//! boundary data `φ^m = t g`, the matching right-hand side `N(h)` and the
//! transformed Dirichlet-to-Neumann data `Λ^h g = h^{-2} γ ∂_ν V`.
//!
//! Quadrature is the product trapezoid rule: `e^{-t/h}` times the piecewise
//! linear interpolant of the series, integrated exactly. `N` is not formed by
//! quadrature of `u` but by summation by parts against the implicit Euler
//! increments, which makes `div(γ ∇V) = N` hold to solver precision on the
//! grid. Two forward solves (the time grid and its midpoint refinement) are
//! combined by Richardson extrapolation to cancel the first-order time bias.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::coefficient::Coefficient;
use crate::elliptic::DiscreteOperator;
use crate::error::{invalid, Error, Result};
use crate::field::{check_grid, BoundaryField, ScalarField, TimeField};
use crate::grid::Grid;
use crate::math;
use crate::pme::{self, BoundaryData, KSchedule, PMEProblem, PmeSolution, BoundaryLift, RegularizationLevel, Source};
use crate::special::upper_incomplete_gamma;

/// Transform parameters and the truncation horizon rule `T = factor * h`.
#[derive(Debug, Clone, PartialEq)]
pub struct HSchedule {
    values: Vec<f64>,
    pub horizon_factor: f64,
    pub tail: bool,
}

impl HSchedule {
    pub fn new(values: Vec<f64>, horizon_factor: f64, tail: bool) -> Result<HSchedule> {
        if values.is_empty() || values.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(invalid("h values must be positive and finite"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("h values must be strictly increasing"));
        }
        if !(horizon_factor >= 10.0) {
            return Err(invalid("horizon factor must be at least 10"));
        }
        Ok(HSchedule {
            values,
            horizon_factor,
            tail,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self, h: f64) -> f64 {
        self.horizon_factor * h
    }

    /// Horizon of the shared forward solve.
    pub fn max_horizon(&self) -> f64 {
        self.horizon(*self.values.last().unwrap())
    }
}

impl Default for HSchedule {
    fn default() -> Self {
        HSchedule {
            values: alloc::vec![4.0, 8.0, 16.0, 32.0, 64.0],
            horizon_factor: 40.0,
            tail: true,
        }
    }
}

// (τ - 1 + e^{-τ}) / τ and (1 - e^{-τ} - τ e^{-τ}) / τ
fn interval_factors(tau: f64) -> (f64, f64) {
    if tau < 1e-2 {
        let (mut left, mut right) = (0.0, 0.0);
        let mut p = 1.0;
        let mut fact = 1.0;
        for j in 1..=8 {
            p *= tau;
            fact *= (j + 1) as f64;
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            left += sign * p / fact;
            right += sign * j as f64 * p / fact;
        }
        (left, right)
    } else {
        let em = math::exp(-tau);
        ((tau + math::expm1(-tau)) / tau, (-math::expm1(-tau) - tau * em) / tau)
    }
}

/// Product trapezoid weights `c_n` with `∫_0^T e^{-t/h} y ≈ Σ c_n y_n` exact
/// for piecewise linear `y`.
pub fn product_weights(stamps: &[f64], h: f64) -> Vec<f64> {
    let mut c = alloc::vec![0.0; stamps.len()];
    for n in 1..stamps.len() {
        let (a, b) = (stamps[n - 1], stamps[n]);
        let (l, r) = interval_factors((b - a) / h);
        let s = h * math::exp(-a / h);
        c[n - 1] += s * l;
        c[n] += s * r;
    }
    c
}

/// Two-term power model `a t^p + b t^q` for the long-time behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub exponents: [f64; 2],
}

impl TailModel {
    /// `v = u^m ≈ a t + b t^{1/m - 1}`.
    pub fn for_v(m: f64) -> TailModel {
        TailModel {
            exponents: [1.0, 1.0 / m - 1.0],
        }
    }

    /// `u ≈ a t^{1/m} + b t^{2/m - 2}`.
    pub fn for_u(m: f64) -> TailModel {
        TailModel {
            exponents: [1.0 / m, 2.0 / m - 2.0],
        }
    }
}

/// Precomputed least-squares fit on the last decade of a time grid and the
/// closed-form `∫_T^∞ e^{-t/h} t^p dt = h^{p+1} Γ(p+1, T/h)` for each mode.
#[derive(Debug, Clone)]
struct TailFit {
    indices: Vec<usize>,
    // rows of (G^{-1} Xᵀ W) restricted to the fitting window
    coef: [Vec<f64>; 2],
    integrals: [f64; 2],
}

impl TailFit {
    fn new(stamps: &[f64], model: TailModel, h: f64) -> Result<TailFit> {
        let t_end = *stamps.last().unwrap();
        let indices: Vec<usize> = (0..stamps.len()).filter(|&i| stamps[i] >= 0.1 * t_end && stamps[i] > 0.0).collect();
        if indices.len() < 2 {
            return Err(Error::Fit(String::from("tail fit needs at least two stamps in the last decade")));
        }
        let [p, q] = model.exponents;
        // rows scaled by t^{-p} so the leading mode has unit size
        let rows: Vec<[f64; 2]> = indices
            .iter()
            .map(|&i| {
                let t = stamps[i];
                [1.0, math::powf(t, q - p)]
            })
            .collect();
        let (mut g00, mut g01, mut g11) = (0.0, 0.0, 0.0);
        for r in &rows {
            g00 += r[0] * r[0];
            g01 += r[0] * r[1];
            g11 += r[1] * r[1];
        }
        let det = g00 * g11 - g01 * g01;
        if !(det > 1e-14 * g00 * g11) {
            return Err(Error::Fit(String::from("tail fit design is singular")));
        }
        let mut ca = Vec::with_capacity(rows.len());
        let mut cb = Vec::with_capacity(rows.len());
        for (r, &i) in rows.iter().zip(&indices) {
            let scale = math::powf(stamps[i], -p);
            ca.push(scale * (g11 * r[0] - g01 * r[1]) / det);
            cb.push(scale * (g00 * r[1] - g01 * r[0]) / det);
        }
        let x = t_end / h;
        let integrals = [
            math::powf(h, p + 1.0) * upper_incomplete_gamma(p + 1.0, x),
            math::powf(h, q + 1.0) * upper_incomplete_gamma(q + 1.0, x),
        ];
        Ok(TailFit {
            indices,
            coef: [ca, cb],
            integrals,
        })
    }

    /// `∫_T^∞ e^{-t/h} (a t^p + b t^q)` for the series `y`.
    fn integral(&self, y: impl Fn(usize) -> f64) -> f64 {
        let (mut a, mut b) = (0.0, 0.0);
        for (k, &i) in self.indices.iter().enumerate() {
            let v = y(i);
            a += self.coef[0][k] * v;
            b += self.coef[1][k] * v;
        }
        a * self.integrals[0] + b * self.integrals[1]
    }
}

/// A transformed scalar with its truncation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceValue {
    pub value: f64,
    /// `|y(T)| h e^{-T/h} (1 + h/T)`: the neglected integral when `y` grows at
    /// most linearly beyond `T`.
    pub truncation_bound: f64,
}

fn truncation_bound(last: f64, t_end: f64, h: f64) -> f64 {
    math::abs(last) * h * math::exp(-t_end / h) * (1.0 + h / t_end)
}

/// `∫_0^∞ e^{-t/h} y(t) dt` from samples on `stamps` (starting at 0), with an
/// optional tail fitted on the last decade.
pub fn laplace_of_series(values: &[f64], stamps: &[f64], h: f64, tail: Option<TailModel>) -> Result<LaplaceValue> {
    if !(h > 0.0) {
        return Err(invalid("h must be positive"));
    }
    if values.is_empty() || values.len() != stamps.len() {
        return Err(Error::LengthMismatch {
            expected: stamps.len(),
            got: values.len(),
        });
    }
    crate::field::check_stamps(stamps)?;
    let c = product_weights(stamps, h);
    let mut value = math::dot(&c, values);
    let t_end = *stamps.last().unwrap();
    if let Some(model) = tail {
        value += TailFit::new(stamps, model, h)?.integral(|i| values[i]);
    }
    Ok(LaplaceValue {
        value,
        truncation_bound: truncation_bound(*values.last().unwrap(), t_end, h),
    })
}

/// Nodal transforms of one forward solution.
#[derive(Debug, Clone)]
pub struct Transformed {
    pub v: ScalarField,
    /// `(ε/h) ∫ e^{-t/h} u` in summation-by-parts form.
    pub n: ScalarField,
    /// `∫ e^{-t/h} f_k`, the source part of the elliptic right-hand side.
    pub source: ScalarField,
    pub truncation: Vec<f64>,
}

/// Transforms `u` at level `level`: `V` from `Φ_k(u)`, `N` from the increments
/// of `u - 1/k`. Then `div(γ ∇V) = N - source` at interior nodes up to the
/// Newton tolerance and the tail model.
pub fn transform_solution(
    p: &PMEProblem,
    level: &RegularizationLevel,
    u: &TimeField,
    h: f64,
    tail: bool,
) -> Result<Transformed> {
    check_grid(u.grid(), p.grid())?;
    if !(h > 0.0) {
        return Err(invalid("h must be positive"));
    }
    let grid = p.grid().clone();
    let m = p.m;
    let stamps = u.stamps();
    let nt = stamps.len();
    let t_end = u.final_time();
    let floor = level.floor();
    let c = product_weights(stamps, h);
    let decay = math::exp(-t_end / h);
    let (tail_v, tail_u) = if tail {
        (
            Some(TailFit::new(stamps, TailModel::for_v(m), h)?),
            Some(TailFit::new(stamps, TailModel::for_u(m), h)?),
        )
    } else {
        (None, None)
    };
    let eps = p.eps.values();
    let mut v = alloc::vec![0.0; grid.len()];
    let mut n = alloc::vec![0.0; grid.len()];
    let mut trunc = alloc::vec![0.0; grid.len()];
    let frames = u.frames();
    let phi: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|x| level.phi(*x, m)).collect()).collect();
    for i in 0..grid.len() {
        let mut sv = 0.0;
        let mut sn = 0.0;
        for k in 0..nt {
            sv += c[k] * phi[k][i];
        }
        for k in 1..nt {
            sn += c[k] * (frames[k][i] - frames[k - 1][i]) / (stamps[k] - stamps[k - 1]);
        }
        let last_u = frames[nt - 1][i] - floor;
        sn -= decay * last_u;
        if let Some(t) = &tail_v {
            sv += t.integral(|k| phi[k][i]);
        }
        if let Some(t) = &tail_u {
            sn += t.integral(|k| frames[k][i] - floor) / h;
        }
        v[i] = sv;
        n[i] = eps[i] * sn;
        trunc[i] = truncation_bound(phi[nt - 1][i], t_end, h);
    }
    let shift = p.source_shift(level);
    let source = if matches!(p.source, Source::Zero) {
        let total: f64 = c[1..].iter().sum::<f64>() * shift;
        ScalarField::constant(grid.clone(), total)
    } else {
        let mut src = alloc::vec![0.0; grid.len()];
        for k in 1..nt {
            for (s, f) in src.iter_mut().zip(p.source.eval(&grid, stamps[k])) {
                *s += c[k] * (f + shift);
            }
        }
        ScalarField::new(grid.clone(), src)?
    };
    Ok(Transformed {
        v: ScalarField::new(grid.clone(), v)?,
        n: ScalarField::new(grid.clone(), n)?,
        source,
        truncation: trunc,
    })
}

/// Forward time grid: uniform start then geometric steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGridSpec {
    pub t0: f64,
    pub n0: usize,
    pub ratio: f64,
}

impl Default for TimeGridSpec {
    fn default() -> Self {
        TimeGridSpec {
            t0: 0.1,
            n0: 100,
            ratio: 1.02,
        }
    }
}

/// Settings shared by every transform pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub schedule: HSchedule,
    pub time: TimeGridSpec,
    pub k: KSchedule,
    /// Stopping tolerance of the `k` iteration.
    pub k_tol: f64,
    /// Combine the time grid with its refinement to cancel the O(Δt) bias.
    pub richardson: bool,
    /// Largest admissible relative truncation bound.
    pub truncation_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schedule: HSchedule::default(),
            time: TimeGridSpec::default(),
            k: KSchedule {
                k0: 1e6,
                factor: 2.0,
                k_max: 1e9,
            },
            k_tol: 1e-6,
            richardson: true,
            truncation_tol: 1e-6,
        }
    }
}

/// Transformed data for one `h`.
#[derive(Debug, Clone)]
pub struct TransformResult {
    pub h: f64,
    pub v: ScalarField,
    pub n: ScalarField,
    /// Right-hand side actually satisfied by `V`: `N` minus the transformed
    /// regularization source.
    pub rhs: ScalarField,
    pub lambda: BoundaryField,
    pub truncation: Vec<f64>,
    /// `max |div(γ ∇V) - rhs| / max |rhs|` over interior nodes.
    pub consistency: f64,
    /// Relative boundary L² change of `Λ^h` between the extrapolated and the
    /// fine-grid-only values, an estimate of the time discretization error.
    pub time_error: f64,
}

/// Diagnostics of one forward solve.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub steps: usize,
    pub k_sequence: Vec<f64>,
    pub monotonicity_defect: f64,
    pub newton_iterations: usize,
    pub max_newton_iterations: usize,
    pub halvings: usize,
}

impl ForwardRecord {
    fn from_solution(s: &PmeSolution) -> ForwardRecord {
        ForwardRecord {
            steps: s.u.len() - 1,
            k_sequence: s.k_sequence.clone(),
            monotonicity_defect: s.monotonicity_defect,
            newton_iterations: s.stats.iter().map(|x| x.newton_iterations).sum(),
            max_newton_iterations: s.stats.iter().map(|x| x.max_newton_iterations).max().unwrap_or(0),
            halvings: s.stats.iter().map(|x| x.halvings).sum(),
        }
    }
}

/// `Λ^h g` samples for one boundary datum across an h schedule.
#[derive(Debug, Clone)]
pub struct DnSampleSet {
    pub label: String,
    pub g: BoundaryField,
    pub results: Vec<TransformResult>,
    pub forward: Vec<ForwardRecord>,
}

impl DnSampleSet {
    pub fn hs(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.h).collect()
    }

    pub fn lambdas(&self) -> Vec<BoundaryField> {
        self.results.iter().map(|r| r.lambda.clone()).collect()
    }

    /// Largest relative time-discretization estimate over the schedule.
    pub fn tolerance(&self) -> f64 {
        self.results.iter().map(|r| r.time_error).fold(0.0, f64::max)
    }
}

/// Forward problem with `φ = (t g)^{1/m}` and no source on the given times.
/// The regularized source is `f_k = f = 0`, the lower end of the admissible
/// bracket, so the transformed equation carries no `1/k` source term.
pub fn pipeline_problem(eps: &Coefficient, gamma: &Coefficient, m: f64, g: &BoundaryField, times: Vec<f64>) -> Result<PMEProblem> {
    if let Some(v) = g.values().iter().find(|v| !(**v >= 0.0)) {
        return Err(invalid(alloc::format!("boundary datum must be nonnegative, got {v}")));
    }
    let mut p = PMEProblem::new(
        eps.clone(),
        gamma.clone(),
        m,
        BoundaryData::PowerLaw(g.clone()),
        Source::Zero,
        times,
    )?;
    p.source_floor = false;
    p.boundary_lift = BoundaryLift::Potential;
    Ok(p)
}

fn transform_all(p: &PMEProblem, s: &PmeSolution, hs: &[f64], tail: bool) -> Result<Vec<Transformed>> {
    let level = s.level();
    hs.iter().map(|&h| transform_solution(p, &level, &s.u, h, tail)).collect()
}

fn lambda_of(op: &DiscreteOperator, v: &ScalarField, rhs: &ScalarField, h: f64) -> Result<BoundaryField> {
    let grid = op.grid();
    let f = op.flux_functional(v.values(), Some(rhs.values()));
    let s = grid.surface_weights();
    BoundaryField::new(grid.clone(), f.iter().zip(s).map(|(f, s)| f / (s * h * h)).collect())
}

fn consistency(op: &DiscreteOperator, v: &ScalarField, rhs: &ScalarField) -> Result<f64> {
    let div = op.divergence(v)?;
    let grid = op.grid();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for &i in grid.interior_nodes() {
        worst = worst.max(math::abs(div.values()[i] - rhs.values()[i]));
        scale = scale.max(math::abs(rhs.values()[i]));
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

/// Runs the forward solve(s) for `g` and returns `Λ^h g` for every scheduled
/// `h`.
pub fn dn_samples(
    eps: &Coefficient,
    gamma: &Coefficient,
    m: f64,
    g: &BoundaryField,
    label: &str,
    config: &PipelineConfig,
) -> Result<DnSampleSet> {
    check_grid(eps.grid(), g.grid())?;
    let sched = &config.schedule;
    let hs = sched.values();
    let times = pme::geometric_times(config.time.t0, config.time.n0, config.time.ratio, sched.max_horizon())?;
    let coarse_p = pipeline_problem(eps, gamma, m, g, times.clone())?;
    let coarse = pme::solve_pme(&coarse_p, config.k_tol, config.k)?;
    let mut forward = alloc::vec![ForwardRecord::from_solution(&coarse)];
    let tc = transform_all(&coarse_p, &coarse, hs, sched.tail)?;
    let combined: Vec<(Transformed, Option<Transformed>)> = if config.richardson {
        let fine_p = coarse_p.with_times(pme::refine_times(&times))?;
        let fine = pme::solve_pme(&fine_p, config.k_tol, config.k)?;
        forward.push(ForwardRecord::from_solution(&fine));
        let tf = transform_all(&fine_p, &fine, hs, sched.tail)?;
        tc.into_iter()
            .zip(tf)
            .map(|(c, f)| {
                let ex = Transformed {
                    v: f.v.combine(2.0, &c.v, -1.0)?,
                    n: f.n.combine(2.0, &c.n, -1.0)?,
                    source: f.source.combine(2.0, &c.source, -1.0)?,
                    truncation: f.truncation.iter().zip(&c.truncation).map(|(a, b)| 2.0 * a + b).collect(),
                };
                Ok((ex, Some(f)))
            })
            .collect::<Result<_>>()?
    } else {
        tc.into_iter().map(|c| (c, None)).collect()
    };
    let op = DiscreteOperator::new(gamma.field())?;
    let mut results = Vec::with_capacity(hs.len());
    for (&h, (t, fine)) in hs.iter().zip(combined) {
        let vmax = t.v.max_abs().max(f64::MIN_POSITIVE);
        let worst = t.truncation.iter().copied().fold(0.0, f64::max);
        if worst > config.truncation_tol * vmax {
            return Err(Error::HorizonTooShort {
                bound: worst / vmax,
                tolerance: config.truncation_tol,
            });
        }
        let rhs = t.n.combine(1.0, &t.source, -1.0)?;
        let lambda = lambda_of(&op, &t.v, &rhs, h)?;
        let time_error = match fine {
            Some(f) => {
                let frhs = f.n.combine(1.0, &f.source, -1.0)?;
                let fl = lambda_of(&op, &f.v, &frhs, h)?;
                let d = lambda.combine(1.0, &fl, -1.0)?;
                d.l2_norm() / lambda.l2_norm().max(f64::MIN_POSITIVE)
            }
            None => 0.0,
        };
        results.push(TransformResult {
            h,
            consistency: consistency(&op, &t.v, &rhs)?,
            v: t.v,
            n: t.n,
            rhs,
            lambda,
            truncation: t.truncation,
            time_error,
        });
    }
    Ok(DnSampleSet {
        label: String::from(label),
        g: g.clone(),
        results,
        forward,
    })
}

/// `Λ^h g` for a single `h`, with the horizon rule applied to that `h`.
pub fn lambda_h(
    eps: &Coefficient,
    gamma: &Coefficient,
    m: f64,
    g: &BoundaryField,
    h: f64,
    config: &PipelineConfig,
) -> Result<TransformResult> {
    let mut cfg = config.clone();
    cfg.schedule = HSchedule::new(alloc::vec![h], config.schedule.horizon_factor, config.schedule.tail)?;
    let mut set = dn_samples(eps, gamma, m, g, "", &cfg)?;
    Ok(set.results.remove(0))
}

/// Largest relative deviation of `V|∂Ω` from `h² g`.
pub fn boundary_identity_error(result: &TransformResult, g: &BoundaryField) -> Result<f64> {
    let trace = result.v.trace();
    let h2 = result.h * result.h;
    let scale = g.max_abs().max(f64::MIN_POSITIVE) * h2;
    let mut worst = 0.0f64;
    for (a, b) in trace.values().iter().zip(g.values()) {
        worst = worst.max(math::abs(a - h2 * b) / scale);
    }
    Ok(worst)
}

/// Largest excess of `N` over the Hölder bound `ε h^{-1/m} V^{1/m}`,
/// relative to the bound's maximum.
pub fn holder_excess(result: &TransformResult, eps: &ScalarField, m: f64) -> f64 {
    let h = result.h;
    let bound: Vec<f64> = result
        .v
        .values()
        .iter()
        .zip(eps.values())
        .map(|(v, e)| e * math::powf(h, -1.0 / m) * math::pos_pow(v.max(0.0), 1.0 / m))
        .collect();
    let scale = math::max_abs(&bound).max(f64::MIN_POSITIVE);
    result
        .n
        .values()
        .iter()
        .zip(&bound)
        .map(|(n, b)| (n - b) / scale)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Grid of a sample set.
pub fn sample_grid(set: &DnSampleSet) -> &Arc<Grid> {
    set.g.grid()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_exponential_moments() {
        let t = pme::geometric_times(0.1, 50, 1.05, 80.0).unwrap();
        let h = 2.0;
        let c = product_weights(&t, h);
        // linear functions are integrated exactly
        let one: f64 = c.iter().sum();
        assert!((one - h * (1.0 - (-40.0f64).exp())).abs() < 1e-13);
        let lin: f64 = c.iter().zip(&t).map(|(c, t)| c * t).sum();
        let exact = h * h * (1.0 - (-40.0f64).exp() * 41.0);
        assert!((lin - exact).abs() < 1e-12);
    }

    #[test]
    fn linear_series_gives_h_squared() {
        let h = 2.0;
        let t = pme::geometric_times(0.1, 100, 1.02, 40.0 * h).unwrap();
        let y: Vec<f64> = t.clone();
        let r = laplace_of_series(&y, &t, h, Some(TailModel::for_v(2.0))).unwrap();
        assert!((r.value - 4.0).abs() < 1e-6);
        let zero = laplace_of_series(&alloc::vec![0.0; t.len()], &t, h, None).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn square_root_series() {
        // interpolating sqrt needs a finer grid than the pipeline default
        let t = pme::geometric_times(0.1, 400, 1.01, 40.0).unwrap();
        let y: Vec<f64> = t.iter().map(|t| t.sqrt()).collect();
        let r = laplace_of_series(&y, &t, 1.0, Some(TailModel::for_u(2.0))).unwrap();
        assert!((r.value - 0.886_226_925_452_758).abs() < 1e-5, "{}", r.value);
    }

    #[test]
    fn small_tau_series_matches_closed_form() {
        for &tau in &[1e-3, 5e-3, 9.9e-3] {
            let (l, r) = interval_factors(tau);
            let em = (-tau as f64).exp();
            assert!((l - (tau - 1.0 + em) / tau).abs() < 1e-12);
            assert!((r - (1.0 - em - tau * em) / tau).abs() < 1e-12);
        }
    }
}
