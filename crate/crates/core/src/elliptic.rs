//! Divergence-form operator `div(γ ∇·)` on the tensor grid, Dirichlet solves,
//! weak Neumann traces and Dirichlet-to-Neumann matrices.
//!
//! The discretization is the vertex-centred finite-volume (equivalently
//! lumped bilinear) scheme: every nearest-neighbour edge carries the
//! conductance `c_e = H(γ_p, γ_q) |dual face| / spacing` with `H` the harmonic
//! mean, and the stiffness form is `a(V, W) = Σ_e c_e (V_p - V_q)(W_p - W_q)`.
//! Writing `K` for its matrix and `w` for the volume weights, the interior
//! equation for `div(γ ∇V) = rhs` is `-(K V)_i = w_i rhs_i`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::coefficient::Coefficient;
use crate::error::{invalid, Error, Result};
use crate::field::{check_grid, BoundaryField, ScalarField};
use crate::grid::{Edge, Grid};
use crate::linalg::{CsrMatrix, DenseMatrix, SpdSolver};
use crate::math;

/// How face coefficients are formed from nodal values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceAverage {
    Harmonic,
}

/// `2ab / (a + b)`.
#[inline]
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Partial derivative of the harmonic mean in its first argument.
#[inline]
pub fn harmonic_mean_da(a: f64, b: f64) -> f64 {
    let s = a + b;
    2.0 * b * b / (s * s)
}

/// Stiffness matrix of `-div(γ ∇·)` with its interior block.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Arc<Grid>,
    edges: Vec<Edge>,
    conductance: Vec<f64>,
    interior: CsrMatrix,
    pub average: FaceAverage,
}

impl DiscreteOperator {
    pub fn new(gamma: &ScalarField) -> Result<DiscreteOperator> {
        if let Some((node, v)) = gamma.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::OutOfBounds {
                node,
                value: *v,
                lower: 0.0,
                upper: f64::INFINITY,
            });
        }
        let grid = gamma.grid().clone();
        let edges = grid.edges();
        let g = gamma.values();
        let conductance: Vec<f64> = edges
            .iter()
            .map(|e| harmonic_mean(g[e.p], g[e.q]) * e.geometry)
            .collect();
        let interior = interior_block(&grid, &edges, &conductance);
        Ok(DiscreteOperator {
            grid,
            edges,
            conductance,
            interior,
            average: FaceAverage::Harmonic,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn conductance(&self) -> &[f64] {
        &self.conductance
    }

    /// `K_II`, indexed by interior slot; symmetric positive definite.
    pub fn interior_matrix(&self) -> &CsrMatrix {
        &self.interior
    }

    /// `K v` over all nodes.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (e, c) in self.edges.iter().zip(&self.conductance) {
            let flux = c * (v[e.p] - v[e.q]);
            out[e.p] += flux;
            out[e.q] -= flux;
        }
    }

    /// Row sums of `|K_ij v_j|`, the scale against which `K v` loses digits.
    pub fn apply_abs(&self, v: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; v.len()];
        for (e, c) in self.edges.iter().zip(&self.conductance) {
            let s = c * (math::abs(v[e.p]) + math::abs(v[e.q]));
            out[e.p] += s;
            out[e.q] += s;
        }
        out
    }

    /// The bilinear form `a(v, w)`.
    pub fn energy(&self, v: &[f64], w: &[f64]) -> f64 {
        self.edges
            .iter()
            .zip(&self.conductance)
            .map(|(e, c)| c * (v[e.p] - v[e.q]) * (w[e.p] - w[e.q]))
            .sum()
    }

    /// Nodal `div(γ ∇v)`; boundary entries are zero.
    pub fn divergence(&self, v: &ScalarField) -> Result<ScalarField> {
        check_grid(v.grid(), &self.grid)?;
        let kv = self.apply(v.values());
        let w = self.grid.volume_weights();
        let mut out = alloc::vec![0.0; kv.len()];
        for &i in self.grid.interior_nodes() {
            out[i] = -kv[i] / w[i];
        }
        ScalarField::new(self.grid.clone(), out)
    }

    /// Boundary functionals `F_b = (K v)_b + w_b rhs_b`, one per boundary node.
    pub fn flux_functional(&self, v: &[f64], rhs: Option<&[f64]>) -> Vec<f64> {
        let kv = self.apply(v);
        let w = self.grid.volume_weights();
        self.grid
            .boundary_nodes()
            .iter()
            .map(|b| kv[b.node] + rhs.map_or(0.0, |r| w[b.node] * r[b.node]))
            .collect()
    }
}

fn interior_block(grid: &Grid, edges: &[Edge], conductance: &[f64]) -> CsrMatrix {
    let n = grid.interior_nodes().len();
    let mut trip = Vec::with_capacity(n * (2 * grid.dim() + 1));
    for (e, c) in edges.iter().zip(conductance) {
        let sp = grid.interior_slot(e.p);
        let sq = grid.interior_slot(e.q);
        if let Some(i) = sp {
            trip.push((i, i, *c));
        }
        if let Some(j) = sq {
            trip.push((j, j, *c));
        }
        if let (Some(i), Some(j)) = (sp, sq) {
            trip.push((i, j, -c));
            trip.push((j, i, -c));
        }
    }
    CsrMatrix::from_triplets(n, trip)
}

/// Relative residual target for every elliptic solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// `div(γ ∇V) = rhs` in the interior, `V = g` on the boundary.
#[derive(Debug, Clone)]
pub struct EllipticProblem {
    pub gamma: Coefficient,
    pub rhs: ScalarField,
    pub g: BoundaryField,
}

impl EllipticProblem {
    pub fn new(gamma: Coefficient, rhs: ScalarField, g: BoundaryField) -> Result<EllipticProblem> {
        check_grid(gamma.grid(), rhs.grid())?;
        check_grid(gamma.grid(), g.grid())?;
        Ok(EllipticProblem { gamma, rhs, g })
    }

    /// Homogeneous problem with boundary data `g`.
    pub fn harmonic(gamma: Coefficient, g: BoundaryField) -> Result<EllipticProblem> {
        let rhs = ScalarField::zeros(gamma.grid().clone());
        EllipticProblem::new(gamma, rhs, g)
    }
}

/// An operator together with a factorization of its interior block, for
/// repeated solves with one `γ`.
#[derive(Debug, Clone)]
pub struct EllipticSolver {
    op: DiscreteOperator,
    solver: SpdSolver,
}

impl EllipticSolver {
    pub fn new(gamma: &ScalarField) -> Result<EllipticSolver> {
        let op = DiscreteOperator::new(gamma)?;
        let solver = SpdSolver::new(op.interior_matrix())?;
        Ok(EllipticSolver { op, solver })
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.op.grid()
    }

    /// Solves `div(γ ∇V) = rhs` with `V = g` on the boundary; `rhs = None`
    /// means zero.
    pub fn solve(&self, rhs: Option<&ScalarField>, g: &BoundaryField) -> Result<ScalarField> {
        let grid = self.op.grid();
        check_grid(g.grid(), grid)?;
        if let Some(r) = rhs {
            check_grid(r.grid(), grid)?;
        }
        let mut v = g.extend(0.0).into_values();
        let kg = self.op.apply(&v);
        let w = grid.volume_weights();
        let b: Vec<f64> = grid
            .interior_nodes()
            .iter()
            .map(|&i| -kg[i] - rhs.map_or(0.0, |r| w[i] * r.values()[i]))
            .collect();
        let mut x = alloc::vec![0.0; b.len()];
        self.solver.solve(&b, &mut x)?;
        let res = crate::linalg::relative_residual(self.op.interior_matrix(), &x, &b);
        if res > SOLVE_TOL && res > 1e3 * f64::EPSILON * math::max_abs(&b) {
            return Err(Error::LinearSolver {
                iterations: 0,
                residual: res,
            });
        }
        for (&i, xi) in grid.interior_nodes().iter().zip(x) {
            v[i] = xi;
        }
        ScalarField::new(grid.clone(), v)
    }

    /// Solves the interior system `K_II y = b` directly (slot-indexed).
    pub fn solve_interior(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = alloc::vec![0.0; b.len()];
        self.solver.solve(b, &mut x)?;
        Ok(x)
    }

    pub fn neumann_trace(&self, v: &ScalarField, rhs: Option<&ScalarField>) -> Result<BoundaryField> {
        neumann_trace_with(&self.op, v, rhs)
    }
}

/// Solves an elliptic problem.
pub fn solve_dirichlet(p: &EllipticProblem) -> Result<ScalarField> {
    EllipticSolver::new(p.gamma.field())?.solve(Some(&p.rhs), &p.g)
}

fn neumann_trace_with(op: &DiscreteOperator, v: &ScalarField, rhs: Option<&ScalarField>) -> Result<BoundaryField> {
    let grid = op.grid();
    check_grid(v.grid(), grid)?;
    if let Some(r) = rhs {
        check_grid(r.grid(), grid)?;
    }
    let f = op.flux_functional(v.values(), rhs.map(|r| r.values()));
    let s = grid.surface_weights();
    BoundaryField::new(grid.clone(), f.iter().zip(s).map(|(f, s)| f / s).collect())
}

/// Weak conormal derivative `γ ∂_ν V`: the functional
/// `ψ ↦ a(V, ψ) + ∫ rhs ψ` over boundary hat functions, divided by the
/// surface weights so that `boundary_pair(trace, ψ)` reproduces it.
pub fn neumann_trace(gamma: &ScalarField, v: &ScalarField, rhs: &ScalarField) -> Result<BoundaryField> {
    check_grid(gamma.grid(), v.grid())?;
    let op = DiscreteOperator::new(gamma)?;
    neumann_trace_with(&op, v, Some(rhs))
}

/// One `γ`-harmonic field per boundary datum, sharing one factorization.
pub fn harmonic_family(gamma: &ScalarField, basis: &[BoundaryField]) -> Result<Vec<ScalarField>> {
    let solver = EllipticSolver::new(gamma)?;
    basis.iter().map(|g| solver.solve(None, g)).collect()
}

/// `M_ij = boundary_pair(Λ_γ g_i, g_j)`, which equals `a(V_i, V_j)`.
pub fn dn_matrix(gamma: &ScalarField, basis: &[BoundaryField]) -> Result<DenseMatrix> {
    if basis.is_empty() {
        return Err(invalid("dn_matrix needs at least one basis function"));
    }
    let solver = EllipticSolver::new(gamma)?;
    let fields: Vec<ScalarField> = basis.iter().map(|g| solver.solve(None, g)).collect::<Result<_>>()?;
    let traces: Vec<BoundaryField> = fields
        .iter()
        .map(|v| solver.neumann_trace(v, None))
        .collect::<Result<_>>()?;
    let n = basis.len();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = traces[i].pair(&basis[j])?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize) -> Arc<Grid> {
        Arc::new(Grid::cube(2, 1.0, n).unwrap())
    }

    #[test]
    fn linear_is_exact() {
        let g = square(9);
        let x1 = ScalarField::from_fn(g.clone(), |x| x[0]);
        let v = harmonic_family(&ScalarField::constant(g, 1.0), &[x1.trace()]).unwrap();
        assert!(v[0].max_abs_diff(&x1).unwrap() < 1e-14);
    }

    #[test]
    fn trace_of_x1() {
        let g = square(9);
        let x1 = ScalarField::from_fn(g.clone(), |x| x[0]);
        let one = ScalarField::constant(g.clone(), 1.0);
        let t = neumann_trace(&one, &x1, &ScalarField::zeros(g.clone())).unwrap();
        for (b, v) in g.boundary_nodes().iter().zip(t.values()) {
            let p = g.point(b.node);
            let on_side = p[1] > 0.0 && p[1] < 1.0;
            if on_side && p[0] == 1.0 {
                assert!((v - 1.0).abs() < 1e-12);
            } else if on_side && p[0] == 0.0 {
                assert!((v + 1.0).abs() < 1e-12);
            } else if on_side {
                assert!(v.abs() < 1e-12);
            } else {
                // corners average the two faces they touch
                assert!((v.abs() - 0.5).abs() < 1e-12 || v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dn_constant_and_x1() {
        let g = square(11);
        let one = ScalarField::constant(g.clone(), 1.0);
        let basis = [BoundaryField::constant(g.clone(), 1.0), BoundaryField::from_fn(g.clone(), |x| x[0])];
        let m = dn_matrix(&one, &basis).unwrap();
        assert!(m[(0, 0)].abs() < 1e-8);
        assert!((m[(1, 1)] - 1.0).abs() < 1e-6);
        assert!((m[(0, 1)] - m[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn unit_source_flux() {
        let g = square(17);
        let gamma = Coefficient::constant(g.clone(), 1.0).unwrap();
        let p = EllipticProblem::new(gamma, ScalarField::constant(g.clone(), 1.0), BoundaryField::constant(g.clone(), 0.0)).unwrap();
        let v = solve_dirichlet(&p).unwrap();
        assert!(v.max() <= 0.0);
        let t = neumann_trace(p.gamma.field(), &v, &p.rhs).unwrap();
        assert!((t.pair(&BoundaryField::constant(g, 1.0)).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_gamma() {
        let g = square(5);
        assert!(DiscreteOperator::new(&ScalarField::constant(g, 0.0)).is_err());
    }
}
