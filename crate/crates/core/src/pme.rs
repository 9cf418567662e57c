//! Regularized implicit solver for `ε ∂_t u - div(γ ∇u^m) = f`, `u(0) = 0`,
//! `u = φ` on the boundary.
//!
//! Level `k` replaces `λ^m` by the convex, C¹ clamp
//! `Φ_k(λ) = λ̃^m + m λ̃^{m-1}(λ - λ̃)`, `λ̃ = clamp(λ, 1/k, λ_max)`, starts
//! from `1/k`, lifts the boundary data by `1/k` and uses `f_k = f + 1/k`.
//! Each implicit Euler step is solved for `v = Φ_k(u)`. In that variable the
//! step equation `w ε (β(v) - u_old)/Δt + K v = w f_k` has a concave, M-matrix
//! monotone left side (`β = Φ_k^{-1}`), so Newton iterates are globally
//! convergent and increase monotonically after the first update.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::coefficient::Coefficient;
use crate::elliptic::DiscreteOperator;
use crate::error::{invalid, Error, Result};
use crate::expr::Expression;
use crate::field::{check_grid, check_stamps, BoundaryField, ScalarField, TimeField};
use crate::grid::Grid;
use crate::linalg::SpdSolver;
use crate::math;

/// Dirichlet data `φ(t, x)` on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryData {
    /// `φ = (t g)^{1/m}`, so that `φ^m = t g`.
    PowerLaw(BoundaryField),
    /// `φ = profile(t) g` with a scalar time profile.
    Separable { g: BoundaryField, profile: Expression },
    /// `φ` given by an expression in `x1, x2, x3, t`.
    Expression(Expression),
}

impl BoundaryData {
    /// Values at time `t`, one per boundary node.
    pub fn eval(&self, grid: &Grid, m: f64, t: f64) -> Vec<f64> {
        match self {
            BoundaryData::PowerLaw(g) => g.values().iter().map(|v| math::pos_pow(t * v, 1.0 / m)).collect(),
            BoundaryData::Separable { g, profile } => {
                let p = profile.eval(&[0.0; 3], t);
                g.values().iter().map(|v| p * v).collect()
            }
            BoundaryData::Expression(e) => grid
                .boundary_nodes()
                .iter()
                .map(|b| e.eval(&grid.point(b.node), t))
                .collect(),
        }
    }

    fn grid(&self) -> Option<&Arc<Grid>> {
        match self {
            BoundaryData::PowerLaw(g) | BoundaryData::Separable { g, .. } => Some(g.grid()),
            BoundaryData::Expression(_) => None,
        }
    }
}

/// Source term `f(t, x) >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Zero,
    /// Time-independent nodal values.
    Field(ScalarField),
    Expression(Expression),
}

impl Source {
    pub fn eval(&self, grid: &Grid, t: f64) -> Vec<f64> {
        match self {
            Source::Zero => alloc::vec![0.0; grid.len()],
            Source::Field(f) => f.values().to_vec(),
            Source::Expression(e) => (0..grid.len()).map(|i| e.eval(&grid.point(i), t)).collect(),
        }
    }
}

/// How the boundary data is raised off zero at a regularization level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryLift {
    /// `u = φ + 1/k`.
    #[default]
    Additive,
    /// `uᵐ = φᵐ + k⁻ᵐ`: the lift stays constant in `v`, so it does not leak a
    /// `√t / k` mode into transformed boundary values. Still in `[1/k, φ + 1/k]`.
    Potential,
}

impl BoundaryLift {
    pub fn lifted_v(&self, level: &RegularizationLevel, phi: f64, m: f64) -> f64 {
        match self {
            BoundaryLift::Additive => level.phi(phi + level.floor(), m),
            BoundaryLift::Potential => math::pos_pow(phi, m) + level.phi(level.floor(), m),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PMEProblem {
    pub eps: Coefficient,
    pub gamma: Coefficient,
    pub m: f64,
    pub phi: BoundaryData,
    pub source: Source,
    /// Use `f_k = f + 1/k` (default) rather than `f_k = f`.
    pub source_floor: bool,
    pub boundary_lift: BoundaryLift,
    times: Vec<f64>,
    // cached suprema over the time stamps
    sup_phi: f64,
    sup_f: f64,
}

impl PMEProblem {
    /// Validates the data on the given time stamps (`0 = t_0 < … < t_N = T`).
    pub fn new(
        eps: Coefficient,
        gamma: Coefficient,
        m: f64,
        phi: BoundaryData,
        source: Source,
        times: Vec<f64>,
    ) -> Result<PMEProblem> {
        check_grid(eps.grid(), gamma.grid())?;
        if !(m >= 1.0) || !m.is_finite() {
            return Err(invalid("exponent m must satisfy m >= 1"));
        }
        if let Some(g) = phi.grid() {
            check_grid(g, eps.grid())?;
        }
        if let Source::Field(f) = &source {
            check_grid(f.grid(), eps.grid())?;
        }
        check_stamps(&times)?;
        if times.len() < 2 {
            return Err(invalid("time grid needs at least one step"));
        }
        let grid = eps.grid().clone();
        let mut sup_phi = 0.0f64;
        let mut sup_f = 0.0f64;
        for (n, &t) in times.iter().enumerate() {
            let b = phi.eval(&grid, m, t);
            if n == 0 && math::max_abs(&b) > 1e-14 {
                return Err(invalid("boundary data must vanish at t = 0"));
            }
            if let Some(v) = b.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(invalid(alloc::format!("boundary data must be finite and nonnegative, got {v} at t = {t}")));
            }
            sup_phi = sup_phi.max(b.iter().copied().fold(0.0, f64::max));
            let f = source.eval(&grid, t);
            if let Some(v) = f.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(invalid(alloc::format!("source must be finite and nonnegative, got {v} at t = {t}")));
            }
            sup_f = sup_f.max(f.iter().copied().fold(0.0, f64::max));
        }
        Ok(PMEProblem {
            eps,
            gamma,
            m,
            phi,
            source,
            source_floor: true,
            boundary_lift: BoundaryLift::Additive,
            times,
            sup_phi,
            sup_f,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.eps.grid()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn sup_phi(&self) -> f64 {
        self.sup_phi
    }

    pub fn sup_f(&self) -> f64 {
        self.sup_f
    }

    /// Smallest admissible upper clamp for level `k`.
    pub fn lambda_max(&self, k: f64) -> f64 {
        let t = self.horizon();
        self.sup_phi + t * self.sup_f + (1.0 + t) / k
    }

    /// Same problem on another time grid.
    pub fn with_times(&self, times: Vec<f64>) -> Result<PMEProblem> {
        let mut p = PMEProblem::new(
            self.eps.clone(),
            self.gamma.clone(),
            self.m,
            self.phi.clone(),
            self.source.clone(),
            times,
        )?;
        p.source_floor = self.source_floor;
        p.boundary_lift = self.boundary_lift;
        Ok(p)
    }

    /// The shift added to the source at level `k`.
    pub fn source_shift(&self, level: &RegularizationLevel) -> f64 {
        if self.source_floor {
            level.floor()
        } else {
            0.0
        }
    }
}

/// Uniform steps `Δt = T / n`.
pub fn uniform_times(horizon: f64, steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    let mut t: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
    t[steps] = horizon;
    t
}

/// `n0` uniform steps up to `t0`, then geometric growth by `ratio` until
/// `horizon`; a short final step is merged into its predecessor.
pub fn geometric_times(t0: f64, n0: usize, ratio: f64, horizon: f64) -> Result<Vec<f64>> {
    if !(t0 > 0.0) || n0 == 0 || !(ratio > 1.0) || !(horizon > t0) {
        return Err(invalid("geometric time grid needs t0 > 0, n0 >= 1, ratio > 1, horizon > t0"));
    }
    let mut t = uniform_times(t0, n0);
    let mut last = t0;
    let mut dt = t0 / n0 as f64;
    loop {
        dt = dt.max(last * (ratio - 1.0));
        let next = last + dt;
        if next >= horizon * (1.0 - 1e-12) || horizon - next < 0.5 * dt {
            t.push(horizon);
            break;
        }
        t.push(next);
        last = next;
    }
    Ok(t)
}

/// Inserts the midpoint of every step.
pub fn refine_times(times: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * times.len());
    for w in times.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*times.last().unwrap());
    out
}

/// Step count keeping `Δt <= Δx² / (2 m sup γ λ_max^{m-1})`.
pub fn cfl_steps(grid: &Grid, gamma_sup: f64, m: f64, lambda_max: f64, horizon: f64) -> usize {
    let dx = grid.spacing()[..grid.dim()].iter().copied().fold(f64::INFINITY, f64::min);
    let dt = dx * dx / (2.0 * m * gamma_sup * math::powf(lambda_max, m - 1.0));
    let n = horizon / dt;
    let whole = n as usize;
    (whole + usize::from(n - whole as f64 > 1e-9 * n)).max(1)
}

/// Level `k` of the regularization: floor `1/k` and mobility window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationLevel {
    pub k: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl RegularizationLevel {
    pub fn new(k: f64, lambda_max: f64) -> Result<RegularizationLevel> {
        if !(k >= 1.0) || !k.is_finite() {
            return Err(invalid("regularization index must satisfy k >= 1"));
        }
        if !(lambda_max > 1.0 / k) {
            return Err(invalid("lambda_max must exceed 1/k"));
        }
        Ok(RegularizationLevel {
            k,
            lambda_min: 1.0 / k,
            lambda_max,
        })
    }

    /// Level `k` with the smallest admissible window for `p`.
    pub fn for_problem(p: &PMEProblem, k: f64) -> Result<RegularizationLevel> {
        RegularizationLevel::new(k, p.lambda_max(k))
    }

    pub fn floor(&self) -> f64 {
        self.lambda_min
    }

    #[inline]
    pub fn clamp(&self, lambda: f64) -> f64 {
        lambda.clamp(self.lambda_min, self.lambda_max)
    }

    /// `Φ_k(λ)`.
    #[inline]
    pub fn phi(&self, lambda: f64, m: f64) -> f64 {
        let c = self.clamp(lambda);
        let p = math::powf(c, m - 1.0);
        c * p + m * p * (lambda - c)
    }

    /// `Φ_k'(λ) = m λ̃^{m-1}`.
    #[inline]
    pub fn phi_prime(&self, lambda: f64, m: f64) -> f64 {
        m * math::powf(self.clamp(lambda), m - 1.0)
    }

    /// `Φ_k^{-1}(v)`.
    pub fn phi_inverse(&self, v: f64, m: f64) -> f64 {
        let lo = math::powf(self.lambda_min, m);
        let hi = math::powf(self.lambda_max, m);
        if v < lo {
            self.lambda_min + (v - lo) / self.phi_prime(self.lambda_min, m)
        } else if v > hi {
            self.lambda_max + (v - hi) / self.phi_prime(self.lambda_max, m)
        } else {
            math::powf(v, 1.0 / m)
        }
    }
}

/// `m γ λ̃^{m-1}` with `λ̃` clamped to the level window.
pub fn mobility(gamma: f64, lambda: f64, level: &RegularizationLevel, m: f64) -> f64 {
    gamma * level.phi_prime(lambda, m)
}

/// Newton and step-control bookkeeping for one level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelStats {
    pub k: f64,
    pub steps: usize,
    pub newton_iterations: usize,
    pub max_newton_iterations: usize,
    pub halvings: usize,
    pub max_residual: f64,
}

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;
pub const MAX_HALVINGS: u32 = 8;

struct Stepper<'a> {
    p: &'a PMEProblem,
    level: RegularizationLevel,
    op: DiscreteOperator,
    // w ε per node
    mass: Vec<f64>,
    w: Vec<f64>,
}

struct StepOutcome {
    iterations: usize,
    residual: f64,
}

impl<'a> Stepper<'a> {
    fn new(p: &'a PMEProblem, level: RegularizationLevel) -> Result<Stepper<'a>> {
        let op = DiscreteOperator::new(p.gamma.field())?;
        let w = p.grid().volume_weights().to_vec();
        let mass = w.iter().zip(p.eps.values()).map(|(w, e)| w * e).collect();
        Ok(Stepper { p, level, op, mass, w })
    }

    fn boundary_v(&self, t: f64) -> Vec<f64> {
        let m = self.p.m;
        self.p
            .phi
            .eval(self.p.grid(), m, t)
            .into_iter()
            .map(|b| self.p.boundary_lift.lifted_v(&self.level, b, m))
            .collect()
    }

    fn source(&self, t: f64) -> Vec<f64> {
        let floor = self.p.source_shift(&self.level);
        self.p.source.eval(self.p.grid(), t).into_iter().map(|f| f + floor).collect()
    }

    /// One implicit step of length `dt` ending at `t`; `v` holds the predictor
    /// on entry (boundary entries are overwritten) and the solution on exit.
    fn step(&self, u_old: &[f64], t: f64, dt: f64, v: &mut [f64]) -> Result<StepOutcome> {
        let grid = self.p.grid();
        let m = self.p.m;
        let lvl = &self.level;
        for (b, val) in grid.boundary_nodes().iter().zip(self.boundary_v(t)) {
            v[b.node] = val;
        }
        let f = self.source(t);
        let interior = grid.interior_nodes();
        let mut kv = alloc::vec![0.0; v.len()];
        let mut res = alloc::vec![0.0; interior.len()];
        let mut scaled_max = f64::INFINITY;
        for it in 0..=NEWTON_MAX_ITER {
            self.op.apply_into(v, &mut kv);
            let kabs = self.op.apply_abs(v);
            let mut rmax = 0.0f64;
            let mut umax = 0.0f64;
            let mut floor = 0.0f64;
            for (s, &i) in interior.iter().enumerate() {
                let u = lvl.phi_inverse(v[i], m);
                let r = self.mass[i] * (u - u_old[i]) / dt + kv[i] - self.w[i] * f[i];
                res[s] = r;
                let scale = dt / self.mass[i];
                rmax = rmax.max(math::abs(r) * scale);
                umax = umax.max(math::abs(u));
                floor = floor.max(math::abs(u) + math::abs(u_old[i]) + scale * (kabs[i] + self.w[i] * f[i]));
            }
            if !rmax.is_finite() {
                break;
            }
            scaled_max = rmax;
            if rmax <= NEWTON_TOL * (1.0 + umax) || rmax <= 64.0 * f64::EPSILON * floor {
                return Ok(StepOutcome {
                    iterations: it,
                    residual: rmax,
                });
            }
            if it == NEWTON_MAX_ITER {
                break;
            }
            // (diag(w ε β'(v)/Δt) + K_II) δv = -R
            let diag: Vec<f64> = interior
                .iter()
                .map(|&i| self.mass[i] / (dt * lvl.phi_prime(lvl.phi_inverse(v[i], m), m)))
                .collect();
            let jac = self.op.interior_matrix().with_added_diagonal(&diag);
            let solver = SpdSolver::new(&jac)?;
            let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
            let mut dv = alloc::vec![0.0; rhs.len()];
            solver.solve(&rhs, &mut dv)?;
            for (s, &i) in interior.iter().enumerate() {
                v[i] += dv[s];
            }
        }
        Err(Error::Newton {
            step: 0,
            time: t,
            residual: scaled_max,
            iterations: NEWTON_MAX_ITER,
        })
    }

    /// Advances from `t0` to `t1`, halving the step on Newton failure.
    fn advance(&self, u_old: &[f64], v_pred: &[f64], t0: f64, t1: f64, stats: &mut LevelStats) -> Result<Vec<f64>> {
        let m = self.p.m;
        let mut v = v_pred.to_vec();
        match self.step(u_old, t1, t1 - t0, &mut v) {
            Ok(o) => {
                stats.newton_iterations += o.iterations;
                stats.max_newton_iterations = stats.max_newton_iterations.max(o.iterations);
                stats.max_residual = stats.max_residual.max(o.residual);
                return Ok(v);
            }
            Err(e @ Error::Newton { .. }) => {
                let mut last = e;
                for level in 1..=MAX_HALVINGS {
                    let parts = 1usize << level;
                    let mut u = u_old.to_vec();
                    let mut v = v_pred.to_vec();
                    let mut ok = true;
                    for j in 0..parts {
                        let a = t0 + (t1 - t0) * j as f64 / parts as f64;
                        let b = if j + 1 == parts {
                            t1
                        } else {
                            t0 + (t1 - t0) * (j + 1) as f64 / parts as f64
                        };
                        match self.step(&u, b, b - a, &mut v) {
                            Ok(o) => {
                                stats.newton_iterations += o.iterations;
                                stats.max_residual = stats.max_residual.max(o.residual);
                                u = v.iter().map(|x| self.level.phi_inverse(*x, m)).collect();
                            }
                            Err(e @ Error::Newton { .. }) => {
                                last = e;
                                ok = false;
                                break;
                            }
                            Err(e) => return Err(e),
                        }
                    }
                    if ok {
                        stats.halvings += level as usize;
                        return Ok(v);
                    }
                }
                Err(last)
            }
            Err(e) => Err(e),
        }
    }
}

/// Solves level `k` on the problem's time grid.
pub fn solve_level(p: &PMEProblem, level: RegularizationLevel) -> Result<(TimeField, LevelStats)> {
    let grid = p.grid().clone();
    let m = p.m;
    let stepper = Stepper::new(p, level)?;
    let floor = level.floor();
    let mut u = TimeField::start(ScalarField::constant(grid.clone(), floor));
    let mut stats = LevelStats {
        k: level.k,
        ..LevelStats::default()
    };
    let times = p.times();
    let mut u_old = alloc::vec![floor; grid.len()];
    let mut v_prev = alloc::vec![level.phi(floor, m); grid.len()];
    let mut v_cur = v_prev.clone();
    for n in 1..times.len() {
        let (t0, t1) = (times[n - 1], times[n]);
        // linear extrapolation in v
        let pred: Vec<f64> = if n >= 2 {
            let r = (t1 - t0) / (t0 - times[n - 2]);
            v_cur.iter().zip(&v_prev).map(|(c, p)| c + r * (c - p)).collect()
        } else {
            v_cur.clone()
        };
        let v_new = stepper.advance(&u_old, &pred, t0, t1, &mut stats).map_err(|e| match e {
            Error::Newton {
                time,
                residual,
                iterations,
                ..
            } => Error::Newton {
                step: n,
                time,
                residual,
                iterations,
            },
            other => other,
        })?;
        let u_new: Vec<f64> = v_new.iter().map(|x| level.phi_inverse(*x, m)).collect();
        u.push(t1, u_new.clone())?;
        u_old = u_new;
        v_prev = core::mem::replace(&mut v_cur, v_new);
        stats.steps += 1;
    }
    Ok((u, stats))
}

/// Geometric `k` schedule for the monotone limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSchedule {
    pub k0: f64,
    pub factor: f64,
    pub k_max: f64,
}

impl Default for KSchedule {
    fn default() -> Self {
        KSchedule {
            k0: 100.0,
            factor: 2.0,
            k_max: 1e9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PmeSolution {
    pub u: TimeField,
    pub k_sequence: Vec<f64>,
    /// `max |u_{2k} - u_k|` for each consecutive pair.
    pub differences: Vec<f64>,
    /// `max (u_{2k} - u_k)` over all pairs; nonpositive up to round-off.
    pub monotonicity_defect: f64,
    pub stats: Vec<LevelStats>,
    /// The clamp window top shared by every level.
    pub lambda_max: f64,
}

impl PmeSolution {
    /// Level of the returned iterate.
    pub fn level(&self) -> RegularizationLevel {
        RegularizationLevel {
            k: *self.k_sequence.last().unwrap(),
            lambda_min: 1.0 / *self.k_sequence.last().unwrap(),
            lambda_max: self.lambda_max,
        }
    }
}

/// Runs levels `k0, 2k0, …` until successive iterates differ by at most
/// `tol` in the max norm. All levels share the clamp top computed for `k0`,
/// which is admissible for every larger `k`.
pub fn solve_pme(p: &PMEProblem, tol: f64, schedule: KSchedule) -> Result<PmeSolution> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if !(schedule.factor > 1.0) || !(schedule.k0 >= 1.0) {
        return Err(invalid("k schedule needs k0 >= 1 and factor > 1"));
    }
    let lambda_max = p.lambda_max(schedule.k0);
    let mut k = schedule.k0;
    let (mut prev, s0) = solve_level(p, RegularizationLevel::new(k, lambda_max)?)?;
    let mut ks = alloc::vec![k];
    let mut stats = alloc::vec![s0];
    let mut diffs = Vec::new();
    let mut defect = f64::NEG_INFINITY;
    loop {
        k *= schedule.factor;
        if k > schedule.k_max {
            return Err(Error::ScheduleExhausted {
                k,
                difference: diffs.last().copied().unwrap_or(f64::INFINITY),
                tolerance: tol,
            });
        }
        let (next, s) = solve_level(p, RegularizationLevel::new(k, lambda_max)?)?;
        let d = next.max_abs_diff(&prev)?;
        defect = defect.max(next.max_excess_over(&prev)?);
        ks.push(k);
        stats.push(s);
        diffs.push(d);
        prev = next;
        if d <= tol {
            break;
        }
    }
    Ok(PmeSolution {
        u: prev,
        k_sequence: ks,
        differences: diffs,
        monotonicity_defect: defect,
        stats,
        lambda_max,
    })
}

/// `‖∇(u^m)‖_{L²(Q_T)}`: edge differences in space, trapezoid in time.
pub fn energy_norm(u: &TimeField, m: f64) -> f64 {
    let grid = u.grid();
    let edges = grid.edges();
    let density: Vec<f64> = u
        .frames()
        .iter()
        .map(|f| {
            edges
                .iter()
                .map(|e| {
                    let d = math::pos_pow(f[e.p], m) - math::pos_pow(f[e.q], m);
                    e.geometry * d * d
                })
                .sum()
        })
        .collect();
    let t = u.stamps();
    let mut total = 0.0;
    for n in 1..t.len() {
        total += 0.5 * (t[n] - t[n - 1]) * (density[n] + density[n - 1]);
    }
    math::sqrt(total)
}

/// Largest defect of the per-step balance
/// `∫ ε (u^{n+1} - u^n) = Δt (∫ f_k + ⟨flux, 1⟩)`, where the flux is the weak
/// conormal derivative of `Φ_k(u^{n+1})`, relative to the mass `∫ ε u^{n+1}`
/// plus the step terms.
pub fn conservation_defect(p: &PMEProblem, level: &RegularizationLevel, u: &TimeField) -> Result<f64> {
    check_grid(u.grid(), p.grid())?;
    let grid = p.grid();
    let op = DiscreteOperator::new(p.gamma.field())?;
    let w = grid.volume_weights();
    let eps = p.eps.values();
    let m = p.m;
    let mut worst = 0.0f64;
    for n in 1..u.len() {
        let dt = u.stamps()[n] - u.stamps()[n - 1];
        let (a, b) = (u.frame(n - 1), u.frame(n));
        let v: Vec<f64> = b.iter().map(|x| level.phi(*x, m)).collect();
        let f: Vec<f64> = p
            .source
            .eval(grid, u.stamps()[n])
            .into_iter()
            .map(|f| f + p.source_shift(level))
            .collect();
        let rhs: Vec<f64> = (0..grid.len()).map(|i| eps[i] * (b[i] - a[i]) / dt - f[i]).collect();
        let flux: f64 = op.flux_functional(&v, Some(&rhs)).iter().sum();
        let mass: f64 = (0..grid.len()).map(|i| w[i] * eps[i] * (b[i] - a[i])).sum();
        let source: f64 = (0..grid.len()).map(|i| w[i] * f[i]).sum();
        // the total mass keeps the scale from collapsing near steady state
        let total: f64 = (0..grid.len()).map(|i| w[i] * eps[i] * math::abs(b[i])).sum();
        let scale = total + math::abs(mass) + dt * (math::abs(source) + math::abs(flux)) + f64::MIN_POSITIVE;
        worst = worst.max(math::abs(mass - dt * (source + flux)) / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mobility_examples() {
        let l = RegularizationLevel::new(10.0, 10.0).unwrap();
        assert_eq!(mobility(1.0, 2.0, &l, 2.0), 4.0);
        assert!((mobility(1.0, 0.01, &l, 2.0) - 0.2).abs() < 1e-15);
        let l = RegularizationLevel::new(2.0, 5.0).unwrap();
        assert_eq!(mobility(3.0, 1.0, &l, 3.0), 9.0);
    }

    #[test]
    fn phi_inverse_roundtrip() {
        let l = RegularizationLevel::new(100.0, 3.0).unwrap();
        for &x in &[-1.0, 0.0, 0.005, 0.01, 0.5, 2.9, 3.0, 7.0] {
            let v = l.phi(x, 2.5);
            assert!((l.phi_inverse(v, 2.5) - x).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn time_grids() {
        let t = geometric_times(0.1, 10, 1.1, 5.0).unwrap();
        assert_eq!(t[0], 0.0);
        assert_eq!(*t.last().unwrap(), 5.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        let r = refine_times(&t);
        assert_eq!(r.len(), 2 * t.len() - 1);
        assert_eq!(uniform_times(1.0, 4), [0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn zero_data_stays_at_floor() {
        let g = Arc::new(Grid::cube(2, 1.0, 7).unwrap());
        let one = Coefficient::constant(g.clone(), 1.0).unwrap();
        let mut p = PMEProblem::new(
            one.clone(),
            one,
            2.0,
            BoundaryData::PowerLaw(BoundaryField::constant(g, 0.0)),
            Source::Zero,
            uniform_times(1.0, 10),
        )
        .unwrap();
        let lvl = RegularizationLevel::for_problem(&p, 100.0).unwrap();
        // with f_k = f + 1/k the floor rises at most like t/k
        let (u, _) = solve_level(&p, lvl).unwrap();
        assert!(u.min() >= 0.01 - 1e-14 && u.max() <= 0.02 + 1e-12);
        p.source_floor = false;
        let (u, _) = solve_level(&p, lvl).unwrap();
        assert!(u.max() <= 0.01 + 1e-14 && u.min() >= 0.01 - 1e-14);
    }
}
