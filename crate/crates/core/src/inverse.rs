//! Reconstruction of `γ` from leading DN terms and of `ε` from moments of the
//! second-order term.
//!
//! `γ` is sought on a coarse multilinear grid by projected Gauss–Newton. The
//! Jacobian uses the discrete identity `∂F_b/∂c_e = (Z_b,p - Z_b,q)(V_p - V_q)`
//! where `Z_b` is the harmonic lift of the boundary unit vector at `b`, so one
//! factorization serves all data and all parameters.
//!
//! `ε` is nodal. Each moment `∫ ε H W` is linear in `ε`, which makes the
//! reconstruction a Tikhonov-regularized least-squares problem.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::coefficient::Coefficient;
use crate::elliptic::{harmonic_mean_da, EllipticSolver};
use crate::error::{invalid, Error, Result};
use crate::expansion::{fit_expansion_with, gamma_one_plus, FitWeights};
use crate::field::{check_grid, BoundaryField, ScalarField};
use crate::grid::{Grid, MAX_DIM};
use crate::laplace::{dn_samples, PipelineConfig};
use crate::linalg::{cholesky_solve, symmetric_eigenvalues, DenseMatrix};
use crate::math;

/// Multilinear interpolation from a coarse tensor grid onto the fine grid.
#[derive(Debug, Clone)]
pub struct CoarseBasis {
    grid: Arc<Grid>,
    counts: Vec<usize>,
    // per fine node: (coarse index, weight), at most 2^dim entries
    rows: Vec<Vec<(usize, f64)>>,
}

impl CoarseBasis {
    /// `points` coarse nodes per axis (at least 2), spanning the fine extents.
    pub fn new(grid: Arc<Grid>, points: usize) -> Result<CoarseBasis> {
        if points < 2 {
            return Err(invalid("coarse basis needs at least 2 points per axis"));
        }
        let dim = grid.dim();
        let counts = alloc::vec![points; dim];
        let mut strides = alloc::vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * counts[a + 1];
        }
        let mut rows = Vec::with_capacity(grid.len());
        for node in 0..grid.len() {
            let x = grid.point(node);
            let mut cell = [0usize; MAX_DIM];
            let mut frac = [0.0f64; MAX_DIM];
            for a in 0..dim {
                let s = x[a] / grid.extents()[a] * (points - 1) as f64;
                let c = (math::floor(s) as usize).min(points - 2);
                cell[a] = c;
                frac[a] = (s - c as f64).clamp(0.0, 1.0);
            }
            let mut row = Vec::with_capacity(1 << dim);
            for corner in 0..(1usize << dim) {
                let mut w = 1.0;
                let mut idx = 0;
                for a in 0..dim {
                    let up = (corner >> a) & 1 == 1;
                    w *= if up { frac[a] } else { 1.0 - frac[a] };
                    idx += (cell[a] + usize::from(up)) * strides[a];
                }
                if w > 0.0 {
                    row.push((idx, w));
                }
            }
            rows.push(row);
        }
        Ok(CoarseBasis { grid, counts, rows })
    }

    /// One parameter per fine node.
    pub fn nodal(grid: Arc<Grid>) -> CoarseBasis {
        let rows = (0..grid.len()).map(|i| alloc::vec![(i, 1.0)]).collect();
        let counts = grid.counts().to_vec();
        CoarseBasis { grid, counts, rows }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn expand(&self, theta: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(j, w)| w * theta[*j]).sum()).collect()
    }

    /// `Pᵀ y`.
    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.len()];
        for (r, yi) in self.rows.iter().zip(y) {
            for (j, w) in r {
                out[*j] += w * yi;
            }
        }
        out
    }

    /// `Pᵀ K₁ P` with `K₁` the unit-conductivity stiffness matrix, so that
    /// `θᵀ R θ = ‖∇(Pθ)‖²` in the discrete energy.
    pub fn gradient_penalty(&self) -> DenseMatrix {
        let n = self.len();
        let mut r = DenseMatrix::zeros(n, n);
        for e in self.grid.edges() {
            let mut d: Vec<(usize, f64)> = self.rows[e.p].clone();
            for (j, w) in &self.rows[e.q] {
                d.push((*j, -w));
            }
            for (i, wi) in &d {
                for (j, wj) in &d {
                    r[(*i, *j)] += e.geometry * wi * wj;
                }
            }
        }
        r
    }
}

/// How the Tikhonov weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaRule {
    Fixed(f64),
    /// Largest weight on a decreasing geometric path whose data misfit is at
    /// most `tau · noise`, where `noise` estimates the data error norm. When
    /// the misfit levels off above that target the path stops at the last
    /// weight before the plateau.
    Discrepancy { noise: f64, tau: f64 },
}

/// One point of a regularization path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub alpha: f64,
    pub misfit: f64,
    pub seminorm: f64,
}

const PATH_STEPS: usize = 12;
const PATH_FACTOR: f64 = 0.1;
/// Relative misfit drop below which further decrease of `α` is treated as
/// fitting parameterization error rather than data.
pub const PLATEAU: f64 = 0.1;

enum PathStep {
    Continue,
    Take,
    KeepPrevious,
}

// The last path point has just been computed.
fn path_decision(rule: &AlphaRule, path: &[PathPoint]) -> PathStep {
    let last = path[path.len() - 1];
    match *rule {
        AlphaRule::Fixed(_) => PathStep::Take,
        AlphaRule::Discrepancy { noise, tau } => {
            if last.misfit <= tau * noise {
                PathStep::Take
            } else if path.len() >= 2 && last.misfit > (1.0 - PLATEAU) * path[path.len() - 2].misfit {
                PathStep::KeepPrevious
            } else {
                PathStep::Continue
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GammaInverseProblem {
    pub data: Vec<BoundaryField>,
    /// Measured `Λ_γ g_i`, nodal boundary values.
    pub measured: Vec<BoundaryField>,
    pub basis: CoarseBasis,
    pub alpha: AlphaRule,
    pub lower: f64,
    pub upper: f64,
    pub max_iter: usize,
    /// Allowed `|⟨A_i, g_j⟩ - ⟨A_j, g_i⟩|` relative to the largest pairing.
    pub symmetry_tol: f64,
}

impl GammaInverseProblem {
    pub fn new(data: Vec<BoundaryField>, measured: Vec<BoundaryField>, basis: CoarseBasis, alpha: AlphaRule) -> Result<Self> {
        if data.is_empty() || data.len() != measured.len() {
            return Err(Error::LengthMismatch {
                expected: data.len(),
                got: measured.len(),
            });
        }
        for f in data.iter().chain(&measured) {
            check_grid(f.grid(), basis.grid())?;
        }
        Ok(GammaInverseProblem {
            data,
            measured,
            basis,
            alpha,
            lower: 0.1,
            upper: 10.0,
            max_iter: 40,
            symmetry_tol: 1e-2,
        })
    }

    /// Largest relative asymmetry of the measured pairing matrix.
    pub fn asymmetry(&self) -> Result<f64> {
        let n = self.data.len();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let a = self.measured[i].pair(&self.data[j])?;
                scale = scale.max(math::abs(a));
                if j > i {
                    let b = self.measured[j].pair(&self.data[i])?;
                    worst = worst.max(math::abs(a - b));
                }
            }
        }
        Ok(worst / scale.max(f64::MIN_POSITIVE))
    }
}

#[derive(Debug, Clone)]
pub struct GammaReconstruction {
    pub gamma: ScalarField,
    pub parameters: Vec<f64>,
    pub alpha: f64,
    /// `sqrt(Σ_i ‖Λ̂_i - A_i‖²)` at the returned estimate.
    pub misfit: f64,
    pub initial_misfit: f64,
    pub gradient_norm: f64,
    pub initial_gradient_norm: f64,
    pub iterations: usize,
    pub path: Vec<PathPoint>,
    pub asymmetry: f64,
    /// Data count over parameter count; below 1/4 the problem is badly
    /// underdetermined.
    pub data_ratio: f64,
    /// Set when Gauss–Newton stopped on stagnation above the noise target.
    pub stagnated: bool,
}

struct GnState {
    theta: Vec<f64>,
    misfit_sq: f64,
    residual: Vec<f64>,
    jacobian: Option<DenseMatrix>,
}

// Weighted residuals `sqrt(s_b)(Λ̂ - A)` and, on request, their Jacobian.
fn gamma_forward(p: &GammaInverseProblem, theta: &[f64], with_jacobian: bool) -> Result<GnState> {
    let grid = p.basis.grid().clone();
    let gamma = ScalarField::new(grid.clone(), p.basis.expand(theta))?;
    let solver = EllipticSolver::new(&gamma)?;
    let sw = grid.surface_weights();
    let nb = grid.boundary_len();
    let nd = p.data.len();
    let mut residual = Vec::with_capacity(nd * nb);
    let mut states = Vec::with_capacity(nd);
    for (g, a) in p.data.iter().zip(&p.measured) {
        let v = solver.solve(None, g)?;
        let lam = solver.neumann_trace(&v, None)?;
        for b in 0..nb {
            residual.push(math::sqrt(sw[b]) * (lam.values()[b] - a.values()[b]));
        }
        states.push(v);
    }
    let misfit_sq = residual.iter().map(|r| r * r).sum();
    let jacobian = if with_jacobian {
        let np = p.basis.len();
        let mut lifts = Vec::with_capacity(nb);
        for b in 0..nb {
            let mut e = alloc::vec![0.0; nb];
            e[b] = 1.0;
            lifts.push(solver.solve(None, &BoundaryField::new(grid.clone(), e)?)?);
        }
        let mut jac = DenseMatrix::zeros(nd * nb, np);
        let gv = gamma.values();
        let mut dz = alloc::vec![0.0; nb];
        let mut dv = alloc::vec![0.0; nd];
        for e in grid.edges() {
            for (b, z) in lifts.iter().enumerate() {
                dz[b] = z.values()[e.p] - z.values()[e.q];
            }
            for (i, v) in states.iter().enumerate() {
                dv[i] = v.values()[e.p] - v.values()[e.q];
            }
            let dp = e.geometry * harmonic_mean_da(gv[e.p], gv[e.q]);
            let dq = e.geometry * harmonic_mean_da(gv[e.q], gv[e.p]);
            let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(2 << grid.dim());
            for (j, w) in &p.basis.rows[e.p] {
                coeffs.push((*j, dp * w));
            }
            for (j, w) in &p.basis.rows[e.q] {
                coeffs.push((*j, dq * w));
            }
            for i in 0..nd {
                if dv[i] == 0.0 {
                    continue;
                }
                for b in 0..nb {
                    let base = dz[b] * dv[i] / math::sqrt(sw[b]);
                    if base == 0.0 {
                        continue;
                    }
                    let row = (i * nb + b) * np;
                    for (j, c) in &coeffs {
                        jac.data[row + j] += c * base;
                    }
                }
            }
        }
        Some(jac)
    } else {
        None
    };
    Ok(GnState {
        theta: theta.to_vec(),
        misfit_sq,
        residual,
        jacobian,
    })
}

fn quad_form(r: &DenseMatrix, x: &[f64]) -> f64 {
    math::dot(x, &r.mul_vec(x))
}

// Projected gradient norm of ½‖r‖² + ½α θᵀRθ.
fn projected_gradient(grad: &[f64], theta: &[f64], lower: f64, upper: f64) -> f64 {
    let mut s = 0.0;
    for (g, t) in grad.iter().zip(theta) {
        let blocked = (*t <= lower && *g > 0.0) || (*t >= upper && *g < 0.0);
        if !blocked {
            s += g * g;
        }
    }
    math::sqrt(s)
}

struct GnOutcome {
    state: GnState,
    gradient_norm: f64,
    initial_gradient_norm: f64,
    iterations: usize,
    stagnated: bool,
}

fn gauss_newton(p: &GammaInverseProblem, reg: &DenseMatrix, alpha: f64, theta0: &[f64]) -> Result<GnOutcome> {
    let objective = |s: &GnState| 0.5 * s.misfit_sq + 0.5 * alpha * quad_form(reg, &s.theta);
    let mut state = gamma_forward(p, theta0, true)?;
    let mut initial_gradient_norm = f64::NAN;
    let mut gradient_norm = f64::NAN;
    let mut stagnated = false;
    let mut iterations = 0;
    for it in 0..p.max_iter {
        iterations = it;
        let jac = state.jacobian.take().expect("jacobian requested");
        let mut grad = jac.transpose_mul(&state.residual);
        let rt = reg.mul_vec(&state.theta);
        for (g, r) in grad.iter_mut().zip(&rt) {
            *g += alpha * r;
        }
        gradient_norm = projected_gradient(&grad, &state.theta, p.lower, p.upper);
        if it == 0 {
            initial_gradient_norm = gradient_norm;
        }
        if gradient_norm <= 1e-6 * initial_gradient_norm || gradient_norm == 0.0 {
            break;
        }
        let mut h = jac.gram();
        h.add_scaled(reg, alpha);
        // a whisper of Levenberg damping keeps the factorization defined
        let tr: f64 = (0..h.rows).map(|i| h[(i, i)]).sum::<f64>() / h.rows as f64;
        for i in 0..h.rows {
            h[(i, i)] += 1e-12 * tr;
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = cholesky_solve(&h, &neg)?;
        let f0 = objective(&state);
        let slope = math::dot(&grad, &step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = state
                .theta
                .iter()
                .zip(&step)
                .map(|(x, d)| (x + t * d).clamp(p.lower, p.upper))
                .collect();
            let s = gamma_forward(p, &trial, false)?;
            if objective(&s) <= f0 + 1e-4 * t * slope.min(0.0) {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(trial) = accepted else {
            // a failed search is only an error when the model promised real progress
            if -slope > 1e-10 * f0 {
                return Err(Error::LineSearch { iteration: it, attempts: 30 });
            }
            stagnated = true;
            state.jacobian = None;
            break;
        };
        let next = gamma_forward(p, &trial, true)?;
        let f1 = objective(&next);
        state = next;
        if f0 - f1 <= 1e-14 * f0.max(f64::MIN_POSITIVE) {
            stagnated = true;
            iterations = it + 1;
            break;
        }
        iterations = it + 1;
    }
    Ok(GnOutcome {
        state,
        gradient_norm,
        initial_gradient_norm,
        iterations,
        stagnated,
    })
}

/// Projected Gauss–Newton for `Σ_i ‖Λ_γ̂ g_i - A_i‖² + α ‖∇γ̂‖²`.
pub fn recover_gamma(p: &GammaInverseProblem) -> Result<GammaReconstruction> {
    if !(p.lower > 0.0 && p.upper > p.lower) {
        return Err(invalid("gamma bounds must satisfy 0 < lower < upper"));
    }
    let asymmetry = p.asymmetry()?;
    if asymmetry > p.symmetry_tol {
        return Err(invalid(alloc::format!(
            "measured DN data not symmetric: relative asymmetry {asymmetry:e} exceeds {:e}",
            p.symmetry_tol
        )));
    }
    let np = p.basis.len();
    let grid = p.basis.grid().clone();
    // best constant: Λ_c = c Λ_1
    let unit = gamma_forward_constant(p)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (l1, a) in unit.iter().zip(&p.measured) {
        num += l1.pair(a)?;
        den += l1.pair(l1)?;
    }
    let c0 = if den > 0.0 { (num / den).clamp(p.lower, p.upper) } else { 1.0 };
    let theta0 = alloc::vec![c0; np];
    let reg = p.basis.gradient_penalty();
    let start = gamma_forward(p, &theta0, true)?;
    let initial_misfit = math::sqrt(start.misfit_sq);
    let jac = start.jacobian.as_ref().expect("jacobian requested");
    let jt: f64 = {
        let g = jac.gram();
        (0..np).map(|i| g[(i, i)]).sum()
    };
    let rt: f64 = (0..np).map(|i| reg[(i, i)]).sum();
    let alpha0 = if rt > 0.0 { jt / rt } else { 1.0 };
    let alphas: Vec<f64> = match p.alpha {
        AlphaRule::Fixed(a) => alloc::vec![a],
        AlphaRule::Discrepancy { .. } => (0..PATH_STEPS).map(|i| alpha0 * math::powf(PATH_FACTOR, i as f64)).collect(),
    };
    let mut path = Vec::with_capacity(alphas.len());
    let mut theta = theta0;
    let mut best: Option<(f64, GnOutcome)> = None;
    for &alpha in &alphas {
        let out = gauss_newton(p, &reg, alpha, &theta)?;
        theta = out.state.theta.clone();
        let misfit = math::sqrt(out.state.misfit_sq);
        path.push(PathPoint {
            alpha,
            misfit,
            seminorm: math::sqrt(quad_form(&reg, &theta).max(0.0)),
        });
        match path_decision(&p.alpha, &path) {
            PathStep::Continue => best = Some((alpha, out)),
            PathStep::Take => {
                best = Some((alpha, out));
                break;
            }
            PathStep::KeepPrevious => break,
        }
    }
    let (alpha, out) = best.expect("alpha path is never empty");
    let gamma = ScalarField::new(grid, p.basis.expand(&out.state.theta))?;
    Ok(GammaReconstruction {
        gamma,
        parameters: out.state.theta.clone(),
        alpha,
        misfit: math::sqrt(out.state.misfit_sq),
        initial_misfit,
        gradient_norm: out.gradient_norm,
        initial_gradient_norm: out.initial_gradient_norm,
        iterations: out.iterations,
        path,
        asymmetry,
        data_ratio: p.data.len() as f64 / np as f64,
        stagnated: out.stagnated,
    })
}

fn gamma_forward_constant(p: &GammaInverseProblem) -> Result<Vec<BoundaryField>> {
    let solver = EllipticSolver::new(&ScalarField::constant(p.basis.grid().clone(), 1.0))?;
    p.data
        .iter()
        .map(|g| solver.neumann_trace(&solver.solve(None, g)?, None))
        .collect()
}

/// Exact DN data `Λ_γ g_i` on the grid, used for synthetic tests.
pub fn dn_data(gamma: &ScalarField, data: &[BoundaryField]) -> Result<Vec<BoundaryField>> {
    let solver = EllipticSolver::new(gamma)?;
    data.iter().map(|g| solver.neumann_trace(&solver.solve(None, g)?, None)).collect()
}

/// Boundary traces of the monomials `x^a y^b …` with total degree at most
/// `degree`, labelled like `x1^2*x2`.
pub fn polynomial_traces(grid: &Arc<Grid>, degree: usize) -> Vec<(String, BoundaryField)> {
    monomials(grid.dim(), degree)
        .into_iter()
        .map(|powers| {
            let label = monomial_label(&powers);
            let f = BoundaryField::from_fn(grid.clone(), |x| {
                powers.iter().enumerate().map(|(a, k)| math::powf(x[a], *k as f64)).product()
            });
            (label, f)
        })
        .collect()
}

fn monomials(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut cur = alloc::vec![0usize; dim];
        push_compositions(&mut out, &mut cur, 0, total);
    }
    out
}

fn push_compositions(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, axis: usize, left: usize) {
    if axis + 1 == cur.len() {
        cur[axis] = left;
        out.push(cur.clone());
        return;
    }
    for k in (0..=left).rev() {
        cur[axis] = k;
        push_compositions(out, cur, axis + 1, left - k);
    }
}

fn monomial_label(powers: &[usize]) -> String {
    let parts: Vec<String> = powers
        .iter()
        .enumerate()
        .filter(|(_, k)| **k > 0)
        .map(|(a, k)| if *k == 1 { alloc::format!("x{}", a + 1) } else { alloc::format!("x{}^{}", a + 1, k) })
        .collect();
    if parts.is_empty() {
        String::from("1")
    } else {
        parts.join("*")
    }
}

/// Harmonic test families for the moment method.
#[derive(Debug, Clone)]
pub struct MomentFamilies {
    pub labels: Vec<String>,
    /// Positive members, `lift(q) - min lift(q) + 1` for non-constant `q`.
    pub h: Vec<ScalarField>,
    pub w: Vec<ScalarField>,
}

/// Boundary traces of the positive family: `q - min q + 1` for non-constant
/// monomial traces `q`, and `1` for the constant one. By the maximum
/// principle the interior minimum of a harmonic lift equals the minimum of
/// its trace, so these are the traces of [`MomentFamilies::h`] for any `γ`.
pub fn moment_traces(grid: &Arc<Grid>, degree: usize) -> Vec<(String, BoundaryField)> {
    polynomial_traces(grid, degree)
        .into_iter()
        .map(|(label, t)| {
            let lo = t.min();
            let hi = t.max();
            let pos = if hi - lo <= 1e-12 * math::abs(hi).max(1.0) {
                BoundaryField::constant(grid.clone(), 1.0)
            } else {
                t.map(|v| v - lo + 1.0)
            };
            (label, pos)
        })
        .collect()
}

/// `γ`-harmonic lifts of polynomial traces up to `degree`; the `H` family is
/// the lift of [`moment_traces`].
pub fn moment_families(gamma: &ScalarField, degree: usize) -> Result<MomentFamilies> {
    let solver = EllipticSolver::new(gamma)?;
    let grid = gamma.grid();
    let mut labels = Vec::new();
    let mut h = Vec::new();
    let mut w = Vec::new();
    for ((label, t), (_, pos)) in polynomial_traces(grid, degree).into_iter().zip(moment_traces(grid, degree)) {
        w.push(solver.solve(None, &t)?);
        h.push(solver.solve(None, &pos)?);
        labels.push(label);
    }
    Ok(MomentFamilies { labels, h, w })
}

/// Fitted DN expansion terms at boundary data `1 ± sH`.
#[derive(Debug, Clone)]
pub struct MomentData {
    pub s_step: f64,
    pub h_sup: f64,
    pub h_trace: BoundaryField,
    pub b_plus: BoundaryField,
    pub b_minus: BoundaryField,
    /// Fit spread of `B(+s) - B(-s)`, taken from a fit of the sample
    /// differences so that systematic remainders cancel as they do in the
    /// moment itself.
    pub b_difference_uncertainty: Vec<f64>,
    /// `A(+s) - A(-s) ≈ 2s Λ_γ H`.
    pub a_difference: BoundaryField,
    pub a_difference_uncertainty: Vec<f64>,
}

impl MomentData {
    pub fn from_samples(
        h_trace: &BoundaryField,
        s_step: f64,
        hs: &[f64],
        plus: &[BoundaryField],
        minus: &[BoundaryField],
        m: f64,
        weights: FitWeights,
    ) -> Result<MomentData> {
        if plus.len() != minus.len() {
            return Err(Error::LengthMismatch {
                expected: plus.len(),
                got: minus.len(),
            });
        }
        let fp = fit_expansion_with(hs, plus, m, weights)?;
        let fm = fit_expansion_with(hs, minus, m, weights)?;
        let diff: Vec<BoundaryField> = plus
            .iter()
            .zip(minus)
            .map(|(a, b)| a.combine(1.0, b, -1.0))
            .collect::<Result<_>>()?;
        let fd = fit_expansion_with(hs, &diff, m, weights)?;
        Ok(MomentData {
            s_step,
            h_sup: h_trace.max_abs(),
            h_trace: h_trace.clone(),
            b_plus: fp.b,
            b_minus: fm.b,
            b_difference_uncertainty: fd.b_uncertainty,
            a_difference: fd.a,
            a_difference_uncertainty: fd.a_uncertainty,
        })
    }

    /// Leading-term datum for the `γ` step: `(2sH|∂Ω, A(+s) - A(-s))`.
    pub fn gamma_datum(&self) -> (BoundaryField, BoundaryField) {
        (self.h_trace.scale(2.0 * self.s_step), self.a_difference.clone())
    }

    /// `sqrt(Σ_b s_b σ_b²)` for the leading-term datum.
    pub fn gamma_datum_noise(&self) -> f64 {
        let sw = self.h_trace.grid().surface_weights();
        math::sqrt(sw.iter().zip(&self.a_difference_uncertainty).map(|(s, u)| s * u * u).sum())
    }
}

/// Default step `0.1 / ‖H‖∞`, taken on the trace where the maximum sits.
pub fn default_s_step(h: &BoundaryField) -> f64 {
    0.1 / h.max_abs().max(f64::MIN_POSITIVE)
}

/// Boundary data `1 ± sH` from the trace of `H`, checking positivity.
pub fn shifted_data(trace: &BoundaryField, s_step: f64) -> Result<(BoundaryField, BoundaryField)> {
    if !(s_step > 0.0) {
        return Err(invalid("s_step must be positive"));
    }
    let margin = 1.0 - s_step * trace.max_abs();
    if trace.min() <= 0.0 || !(margin > 0.0) {
        return Err(invalid("1 + sH must stay positive for |s| <= s_step with H > 0"));
    }
    Ok((trace.map(|v| 1.0 + s_step * v), trace.map(|v| 1.0 - s_step * v)))
}

/// Runs both pipelines and fits the expansion at `1 ± sH`.
pub fn moment_data(
    eps: &Coefficient,
    gamma: &Coefficient,
    m: f64,
    h_trace: &BoundaryField,
    s_step: f64,
    config: &PipelineConfig,
) -> Result<MomentData> {
    let (gp, gm) = shifted_data(h_trace, s_step)?;
    let plus = dn_samples(eps, gamma, m, &gp, "+s", config)?;
    let minus = dn_samples(eps, gamma, m, &gm, "-s", config)?;
    MomentData::from_samples(h_trace, s_step, &plus.hs(), &plus.lambdas(), &minus.lambdas(), m, FitWeights::RemainderOrder)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub value: f64,
    /// Leading central-difference bias `s²/6 |(1/m-1)(1/m-2)| ‖H‖²∞ |μ|`.
    pub bias: f64,
    /// Fit spread propagated through the pairing.
    pub uncertainty: f64,
}

/// `m [⟨B(+s), W⟩ - ⟨B(-s), W⟩] / (2 s Γ(1+1/m)) ≈ ∫ ε H W`.
pub fn epsilon_moment(data: &MomentData, m: f64, w: &BoundaryField) -> Result<MomentEstimate> {
    let scale = m / (2.0 * data.s_step * gamma_one_plus(m));
    let value = scale * (data.b_plus.pair(w)? - data.b_minus.pair(w)?);
    let sw = w.grid().surface_weights();
    let var: f64 = (0..sw.len())
        .map(|b| {
            let c = sw[b] * w.values()[b];
            c * c * data.b_difference_uncertainty[b] * data.b_difference_uncertainty[b]
        })
        .sum();
    let q = 1.0 / m;
    let bias = data.s_step * data.s_step / 6.0 * math::abs((q - 1.0) * (q - 2.0)) * data.h_sup * data.h_sup * math::abs(value);
    Ok(MomentEstimate {
        value,
        bias,
        uncertainty: scale * math::sqrt(var),
    })
}

/// Moments `μ_ij ≈ ∫ ε H_i W_j` with their error estimates.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub h: Vec<ScalarField>,
    pub w: Vec<ScalarField>,
    /// Row-major `h.len() × w.len()`.
    pub moments: DenseMatrix,
    pub errors: DenseMatrix,
    pub s_steps: Vec<f64>,
    pub gamma_factor: f64,
}

impl MomentSystem {
    pub fn new(h: Vec<ScalarField>, w: Vec<ScalarField>, moments: DenseMatrix, errors: DenseMatrix, s_steps: Vec<f64>, m: f64) -> Result<Self> {
        if moments.rows != h.len() || moments.cols != w.len() || errors.rows != h.len() || errors.cols != w.len() {
            return Err(invalid("moment matrix shape does not match the families"));
        }
        if moments.data.iter().chain(&errors.data).any(|v| !v.is_finite()) {
            return Err(invalid("moment entries must be finite"));
        }
        if let Some(f) = h.first() {
            for x in h.iter().chain(&w) {
                check_grid(x.grid(), f.grid())?;
            }
        }
        Ok(MomentSystem {
            h,
            w,
            moments,
            errors,
            s_steps,
            gamma_factor: gamma_one_plus(m),
        })
    }

    /// Exact moments of a known `ε`, bypassing the pipeline.
    pub fn exact(eps: &ScalarField, h: Vec<ScalarField>, w: Vec<ScalarField>, m: f64) -> Result<Self> {
        let mut mu = DenseMatrix::zeros(h.len(), w.len());
        for (i, hi) in h.iter().enumerate() {
            for (j, wj) in w.iter().enumerate() {
                mu[(i, j)] = eps.mul(hi)?.mul(wj)?.integrate();
            }
        }
        let err = DenseMatrix::zeros(h.len(), w.len());
        MomentSystem::new(h, w, mu, err, Vec::new(), m)
    }

    /// `sqrt(Σ errors²)`, the data-error level for the discrepancy principle.
    pub fn noise_level(&self) -> f64 {
        math::sqrt(self.errors.data.iter().map(|e| e * e).sum())
    }
}

#[derive(Debug, Clone)]
pub struct EpsilonReconstruction {
    pub eps: ScalarField,
    pub alpha: f64,
    pub residual: f64,
    pub path: Vec<PathPoint>,
    pub effective_rank: usize,
    /// Nodes held at a bound by the active set.
    pub active: usize,
}

/// Tikhonov least squares `min Σ (∫ ε̂ H_i W_j - μ_ij)² + α ‖∇ε̂‖²` with
/// active-set projection onto `[lower, upper]`.
pub fn recover_epsilon(sys: &MomentSystem, alpha: AlphaRule, lower: f64, upper: f64) -> Result<EpsilonReconstruction> {
    let grid = sys
        .h
        .first()
        .ok_or_else(|| invalid("moment system has no H family"))?
        .grid()
        .clone();
    if !(lower < upper) {
        return Err(invalid("epsilon bounds must satisfy lower < upper"));
    }
    let n = grid.len();
    let wv = grid.volume_weights();
    let rows: Vec<Vec<f64>> = sys
        .h
        .iter()
        .flat_map(|hi| {
            sys.w
                .iter()
                .map(move |wj| (0..n).map(|k| wv[k] * hi.values()[k] * wj.values()[k]).collect())
        })
        .collect();
    let d = DenseMatrix::from_rows(&rows);
    let mu = sys.moments.data.clone();
    // rows scaled by inverse error, floored so that exact moments stay usable
    let mean_err = sys.errors.data.iter().map(|e| math::abs(*e)).sum::<f64>() / mu.len().max(1) as f64;
    let mu_max = mu.iter().fold(0.0f64, |a, b| a.max(math::abs(*b)));
    let floor = (0.1 * mean_err).max(1e-12 * mu_max).max(f64::MIN_POSITIVE);
    // normalized to a largest weight of one; only the ratios matter
    let row_weight: Vec<f64> = sys.errors.data.iter().map(|e| floor / math::abs(*e).max(floor)).collect();
    let mut dw = d.clone();
    for (r, wr) in row_weight.iter().enumerate() {
        for v in &mut dw.data[r * n..(r + 1) * n] {
            *v *= wr;
        }
    }
    let muw: Vec<f64> = mu.iter().zip(&row_weight).map(|(m, w)| m * w).collect();
    // effective rank from the small Gram D Dᵀ
    let mut ddt = DenseMatrix::zeros(d.rows, d.rows);
    for i in 0..d.rows {
        for j in i..d.rows {
            let v = math::dot(d.row(i), d.row(j));
            ddt[(i, j)] = v;
            ddt[(j, i)] = v;
        }
    }
    let eig = symmetric_eigenvalues(&ddt);
    let top = eig.last().copied().unwrap_or(0.0);
    let effective_rank = eig.iter().filter(|l| **l > 1e-12 * top).count();
    const REQUIRED: usize = 6;
    if effective_rank < REQUIRED {
        return Err(Error::RankDeficient {
            rank: effective_rank,
            required: REQUIRED,
        });
    }
    let normal = dw.gram();
    let rhs = dw.transpose_mul(&muw);
    let k1 = CoarseBasis::nodal(grid.clone()).gradient_penalty();
    let tn: f64 = (0..n).map(|i| normal[(i, i)]).sum();
    let tk: f64 = (0..n).map(|i| k1[(i, i)]).sum();
    let alpha0 = tn / tk.max(f64::MIN_POSITIVE);
    let alphas: Vec<f64> = match alpha {
        AlphaRule::Fixed(a) => alloc::vec![a],
        AlphaRule::Discrepancy { .. } => (0..PATH_STEPS).map(|i| 1e2 * alpha0 * math::powf(PATH_FACTOR, i as f64)).collect(),
    };
    let mut path = Vec::with_capacity(alphas.len());
    let mut chosen = None;
    for &a in &alphas {
        let (x, active) = constrained_solve(&normal, &k1, &rhs, a, lower, upper)?;
        let r: Vec<f64> = d.mul_vec(&x).iter().zip(&mu).map(|(p, q)| p - q).collect();
        let residual = math::sqrt(math::dot(&r, &r));
        path.push(PathPoint {
            alpha: a,
            misfit: residual,
            seminorm: math::sqrt(quad_form(&k1, &x).max(0.0)),
        });
        match path_decision(&alpha, &path) {
            PathStep::Continue => chosen = Some((a, x, residual, active)),
            PathStep::Take => {
                chosen = Some((a, x, residual, active));
                break;
            }
            PathStep::KeepPrevious => break,
        }
    }
    let (alpha, x, residual, active) = chosen.expect("alpha path is never empty");
    Ok(EpsilonReconstruction {
        eps: ScalarField::new(grid, x)?,
        alpha,
        residual,
        path,
        effective_rank,
        active,
    })
}

// (N + αK) x = r with variables outside [lower, upper] pinned to the bound
// until the free set stops changing.
fn constrained_solve(normal: &DenseMatrix, k: &DenseMatrix, rhs: &[f64], alpha: f64, lower: f64, upper: f64) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let mut pinned: Vec<Option<f64>> = alloc::vec![None; n];
    for _ in 0..n.max(1) {
        let free: Vec<usize> = (0..n).filter(|i| pinned[*i].is_none()).collect();
        let mut a = DenseMatrix::zeros(free.len(), free.len());
        let mut b = Vec::with_capacity(free.len());
        for (fi, &i) in free.iter().enumerate() {
            let mut s = rhs[i];
            for j in 0..n {
                let aij = normal[(i, j)] + alpha * k[(i, j)];
                match pinned[j] {
                    Some(v) => s -= aij * v,
                    None => {}
                }
            }
            for (fj, &j) in free.iter().enumerate() {
                a[(fi, fj)] = normal[(i, j)] + alpha * k[(i, j)];
            }
            b.push(s);
        }
        let y = if free.is_empty() { Vec::new() } else { cholesky_solve(&a, &b)? };
        let mut x: Vec<f64> = pinned.iter().map(|p| p.unwrap_or(0.0)).collect();
        for (fi, &i) in free.iter().enumerate() {
            x[i] = y[fi];
        }
        let mut changed = false;
        for &i in &free {
            if x[i] < lower {
                pinned[i] = Some(lower);
                changed = true;
            } else if x[i] > upper {
                pinned[i] = Some(upper);
                changed = true;
            }
        }
        if !changed {
            let active = pinned.iter().filter(|p| p.is_some()).count();
            return Ok((x, active));
        }
    }
    Err(invalid("active set did not settle"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<Grid> {
        Arc::new(Grid::cube(2, 1.0, n).unwrap())
    }

    #[test]
    fn coarse_basis_reproduces_bilinear_functions() {
        let g = grid(9);
        let b = CoarseBasis::new(g.clone(), 3).unwrap();
        assert_eq!(b.len(), 9);
        // θ from f = 1 + x + 2y + xy sampled on the coarse nodes
        let theta: Vec<f64> = (0..9)
            .map(|j| {
                let (i0, i1) = (j / 3, j % 3);
                let (x, y) = (i0 as f64 / 2.0, i1 as f64 / 2.0);
                1.0 + x + 2.0 * y + x * y
            })
            .collect();
        let f = b.expand(&theta);
        for (i, v) in f.iter().enumerate() {
            let p = g.point(i);
            assert!((v - (1.0 + p[0] + 2.0 * p[1] + p[0] * p[1])).abs() < 1e-12);
        }
        let y: Vec<f64> = (0..g.len()).map(|i| i as f64).collect();
        let lhs = math::dot(&b.adjoint(&y), &theta);
        let rhs = math::dot(&y, &f);
        assert!((lhs - rhs).abs() < 1e-9 * rhs.abs());
    }

    #[test]
    fn gradient_penalty_matches_energy_of_linear_field() {
        let g = grid(9);
        let b = CoarseBasis::new(g, 3).unwrap();
        // θ = x: energy ∫|∇x|² = 1
        let theta: Vec<f64> = (0..9).map(|j| (j / 3) as f64 / 2.0).collect();
        let r = b.gradient_penalty();
        assert!((quad_form(&r, &theta) - 1.0).abs() < 1e-12);
        let ones = alloc::vec![1.0; 9];
        assert!(quad_form(&r, &ones).abs() < 1e-12);
    }

    #[test]
    fn monomial_enumeration() {
        let g = grid(5);
        let t = polynomial_traces(&g, 2);
        let labels: Vec<&str> = t.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2"]);
        assert_eq!(polynomial_traces(&g, 3).len(), 10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = grid(7);
        let basis = CoarseBasis::new(g.clone(), 3).unwrap();
        let data: Vec<BoundaryField> = polynomial_traces(&g, 2).into_iter().map(|(_, f)| f).collect();
        let truth = ScalarField::from_fn(g.clone(), |x| 1.0 + 0.3 * x[0] * x[1]);
        let measured = dn_data(&truth, &data).unwrap();
        let p = GammaInverseProblem::new(data, measured, basis, AlphaRule::Fixed(0.0)).unwrap();
        let theta: Vec<f64> = (0..9).map(|j| 1.0 + 0.05 * j as f64).collect();
        let s = gamma_forward(&p, &theta, true).unwrap();
        let jac = s.jacobian.unwrap();
        for j in [0usize, 4, 8] {
            let d = 1e-6;
            let mut tp = theta.clone();
            tp[j] += d;
            let mut tm = theta.clone();
            tm[j] -= d;
            let rp = gamma_forward(&p, &tp, false).unwrap().residual;
            let rm = gamma_forward(&p, &tm, false).unwrap().residual;
            let mut worst = 0.0f64;
            let mut scale = 0.0f64;
            for r in 0..rp.len() {
                let fd = (rp[r] - rm[r]) / (2.0 * d);
                worst = worst.max((fd - jac[(r, j)]).abs());
                scale = scale.max(fd.abs());
            }
            assert!(worst <= 1e-6 * scale.max(1e-3), "column {j}: {worst} vs {scale}");
        }
    }

    #[test]
    fn constant_gamma_recovered_from_exact_data() {
        let g = grid(9);
        let data: Vec<BoundaryField> = polynomial_traces(&g, 2).into_iter().map(|(_, f)| f).collect();
        let truth = ScalarField::constant(g.clone(), 1.7);
        let measured = dn_data(&truth, &data).unwrap();
        let basis = CoarseBasis::new(g.clone(), 3).unwrap();
        let p = GammaInverseProblem::new(data, measured, basis, AlphaRule::Fixed(1e-6)).unwrap();
        let r = recover_gamma(&p).unwrap();
        let err = crate::field::relative_l2_error(&r.gamma, &truth).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_epsilon_from_exact_moments() {
        let g = grid(9);
        let one = ScalarField::constant(g.clone(), 1.0);
        let fam = moment_families(&one, 2).unwrap();
        let eps = ScalarField::constant(g.clone(), 2.0);
        let sys = MomentSystem::exact(&eps, fam.h, fam.w, 2.0).unwrap();
        let r = recover_epsilon(&sys, AlphaRule::Fixed(1e-3), 0.01, 100.0).unwrap();
        assert!(r.eps.max_abs_diff(&eps).unwrap() < 1e-6);
        assert!(r.effective_rank >= 6);
    }

    #[test]
    fn shifted_data_checks_positivity() {
        let g = grid(5);
        let h = BoundaryField::constant(g.clone(), 2.0);
        let (p, m) = shifted_data(&h, default_s_step(&h)).unwrap();
        assert!((p.values()[0] - 1.1).abs() < 1e-15 && (m.values()[0] - 0.9).abs() < 1e-15);
        assert!(shifted_data(&h, 0.6).is_err());
        assert!(shifted_data(&BoundaryField::constant(g, -1.0), 0.1).is_err());
    }

    #[test]
    fn moment_traces_match_lifted_family() {
        let g = grid(9);
        let gamma = ScalarField::from_fn(g.clone(), |x| 1.0 + 0.3 * x[0] * x[1]);
        let fam = moment_families(&gamma, 3).unwrap();
        for (h, (_, t)) in fam.h.iter().zip(moment_traces(&g, 3)) {
            assert!(h.min() >= 1.0 - 1e-10);
            assert!(math::max_abs_diff(h.trace().values(), t.values()) < 1e-12);
        }
    }
}
