//! Nodal, boundary and time-indexed fields over a shared [`Grid`].

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, MAX_DIM};
use crate::math;

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn check_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> ScalarField {
        let values = alloc::vec![value; grid.len()];
        ScalarField { grid, values }
    }

    pub fn zeros(grid: Arc<Grid>) -> ScalarField {
        ScalarField::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64; MAX_DIM]) -> f64) -> ScalarField {
        let values = (0..grid.len()).map(|n| f(&grid.point(n))).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        math::max_abs(&self.values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &ScalarField, beta: f64) -> Result<ScalarField> {
        check_grid(&self.grid, &other.grid)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        })
    }

    pub fn mul(&self, other: &ScalarField) -> Result<ScalarField> {
        check_grid(&self.grid, &other.grid)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn scale(&self, alpha: f64) -> ScalarField {
        self.map(|v| alpha * v)
    }

    /// Values at boundary nodes, in boundary order.
    pub fn trace(&self) -> BoundaryField {
        let values = self
            .grid
            .boundary_nodes()
            .iter()
            .map(|b| self.values[b.node])
            .collect();
        BoundaryField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        check_grid(&self.grid, &other.grid)?;
        Ok(math::max_abs_diff(&self.values, &other.values))
    }

    /// Trapezoid L2 norm.
    pub fn l2_norm(&self) -> f64 {
        math::sqrt(
            self.values
                .iter()
                .zip(self.grid.volume_weights())
                .map(|(v, w)| w * v * v)
                .sum(),
        )
    }

    pub fn integrate(&self) -> f64 {
        integrate(self)
    }
}

/// Trapezoid-rule volume integral; exact for fields that are multilinear on
/// every cell.
pub fn integrate(field: &ScalarField) -> f64 {
    field
        .values
        .iter()
        .zip(field.grid.volume_weights())
        .map(|(v, w)| v * w)
        .sum()
}

/// `|a - b|_2 / |b|_2` in the trapezoid norm.
pub fn relative_l2_error(estimate: &ScalarField, truth: &ScalarField) -> Result<f64> {
    let diff = estimate.combine(1.0, truth, -1.0)?;
    Ok(diff.l2_norm() / truth.l2_norm())
}

/// One real value per boundary node, in the grid's boundary order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl BoundaryField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<BoundaryField> {
        if values.len() != grid.boundary_len() {
            return Err(Error::LengthMismatch {
                expected: grid.boundary_len(),
                got: values.len(),
            });
        }
        Ok(BoundaryField { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> BoundaryField {
        let values = alloc::vec![value; grid.boundary_len()];
        BoundaryField { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64; MAX_DIM]) -> f64) -> BoundaryField {
        let values = grid
            .boundary_nodes()
            .iter()
            .map(|b| f(&grid.point(b.node)))
            .collect();
        BoundaryField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        math::max_abs(&self.values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> BoundaryField {
        BoundaryField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn combine(&self, alpha: f64, other: &BoundaryField, beta: f64) -> Result<BoundaryField> {
        check_grid(&self.grid, &other.grid)?;
        Ok(BoundaryField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        })
    }

    pub fn scale(&self, alpha: f64) -> BoundaryField {
        self.map(|v| alpha * v)
    }

    pub fn pair(&self, other: &BoundaryField) -> Result<f64> {
        boundary_pair(self, other)
    }

    /// Surface L2 norm.
    pub fn l2_norm(&self) -> f64 {
        math::sqrt(
            self.values
                .iter()
                .zip(self.grid.surface_weights())
                .map(|(v, s)| s * v * v)
                .sum(),
        )
    }

    /// Nodal field equal to `self` on the boundary and `interior` elsewhere.
    pub fn extend(&self, interior: f64) -> ScalarField {
        let mut values = alloc::vec![interior; self.grid.len()];
        for (b, v) in self.grid.boundary_nodes().iter().zip(&self.values) {
            values[b.node] = *v;
        }
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Trapezoid approximation of the surface integral of `a * b`. Exactly
/// symmetric in its arguments.
pub fn boundary_pair(a: &BoundaryField, b: &BoundaryField) -> Result<f64> {
    check_grid(&a.grid, &b.grid)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .zip(a.grid.surface_weights())
        .map(|((x, y), s)| s * (x * y))
        .sum())
}

/// Snapshots of a nodal field at strictly increasing times starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeField {
    grid: Arc<Grid>,
    stamps: Vec<f64>,
    frames: Vec<Vec<f64>>,
}

impl TimeField {
    pub fn new(grid: Arc<Grid>, stamps: Vec<f64>, frames: Vec<Vec<f64>>) -> Result<TimeField> {
        check_stamps(&stamps)?;
        if frames.len() != stamps.len() {
            return Err(Error::LengthMismatch {
                expected: stamps.len(),
                got: frames.len(),
            });
        }
        if let Some(f) = frames.iter().find(|f| f.len() != grid.len()) {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: f.len(),
            });
        }
        Ok(TimeField { grid, stamps, frames })
    }

    /// Starts a series with the frame at `t = 0`.
    pub fn start(initial: ScalarField) -> TimeField {
        TimeField {
            grid: initial.grid,
            stamps: alloc::vec![0.0],
            frames: alloc::vec![initial.values],
        }
    }

    pub fn push(&mut self, time: f64, frame: Vec<f64>) -> Result<()> {
        if frame.len() != self.grid.len() {
            return Err(Error::LengthMismatch {
                expected: self.grid.len(),
                got: frame.len(),
            });
        }
        let last = *self.stamps.last().unwrap_or(&0.0);
        if !(time > last) {
            return Err(invalid("time stamps must increase strictly"));
        }
        self.stamps.push(time);
        self.frames.push(frame);
        Ok(())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn frame(&self, index: usize) -> &[f64] {
        &self.frames[index]
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn field(&self, index: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.frames[index].clone(),
        }
    }

    pub fn last(&self) -> ScalarField {
        self.field(self.len() - 1)
    }

    pub fn final_time(&self) -> f64 {
        *self.stamps.last().unwrap_or(&0.0)
    }

    /// Time series at one node.
    pub fn series(&self, node: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f[node]).collect()
    }

    pub fn max(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|f| f.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|f| f.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TimeField {
        TimeField {
            grid: self.grid.clone(),
            stamps: self.stamps.clone(),
            frames: self
                .frames
                .iter()
                .map(|fr| fr.iter().map(|v| f(*v)).collect())
                .collect(),
        }
    }

    /// Largest `self - other` over all nodes and common stamps.
    pub fn max_excess_over(&self, other: &TimeField) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .frames
            .iter()
            .zip(&other.frames)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn max_abs_diff(&self, other: &TimeField) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| math::max_abs_diff(a, b))
            .fold(0.0, f64::max))
    }

    fn check_compatible(&self, other: &TimeField) -> Result<()> {
        check_grid(&self.grid, &other.grid)?;
        if self.stamps != other.stamps {
            return Err(invalid("time fields have different stamps"));
        }
        Ok(())
    }
}

pub(crate) fn check_stamps(stamps: &[f64]) -> Result<()> {
    if stamps.is_empty() {
        return Err(invalid("empty time series"));
    }
    if stamps[0] != 0.0 {
        return Err(invalid("first time stamp must be 0"));
    }
    if stamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("time stamps must increase strictly"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn square(n: usize) -> Arc<Grid> {
        Arc::new(Grid::cube(2, 1.0, n).unwrap())
    }

    #[test]
    fn integrate_examples() {
        let g = square(11);
        assert!((integrate(&ScalarField::constant(g.clone(), 1.0)) - 1.0).abs() < 1e-14);
        let x = ScalarField::from_fn(g, |p| p[0]);
        assert!((integrate(&x) - 0.5).abs() < 1e-14);
        let g = square(101);
        let f = ScalarField::from_fn(g, |p| math::sin(PI * p[0]) * math::sin(PI * p[1]));
        assert!((integrate(&f) - 4.0 / (PI * PI)).abs() < 1e-4);
    }

    #[test]
    fn boundary_pair_examples() {
        let g = square(11);
        let one = BoundaryField::constant(g.clone(), 1.0);
        assert!((boundary_pair(&one, &one).unwrap() - 4.0).abs() < 1e-13);
        let x1 = BoundaryField::from_fn(g.clone(), |p| p[0]);
        assert!((boundary_pair(&one, &x1).unwrap() - 2.0).abs() < 1e-13);
        // edgewise: faces x1 = 1 and x2 = 1 each contribute 1/2, the others vanish
        let g = square(201);
        let x1 = BoundaryField::from_fn(g.clone(), |p| p[0]);
        let x2 = BoundaryField::from_fn(g, |p| p[1]);
        assert!((boundary_pair(&x1, &x2).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = BoundaryField::constant(square(5), 1.0);
        let b = BoundaryField::constant(square(7), 1.0);
        assert_eq!(boundary_pair(&a, &b), Err(Error::GridMismatch));
    }

    #[test]
    fn time_field_validates_stamps() {
        let g = square(3);
        let f = alloc::vec![alloc::vec![0.0; 9]; 2];
        assert!(TimeField::new(g.clone(), alloc::vec![0.0, 1.0], f.clone()).is_ok());
        assert!(TimeField::new(g.clone(), alloc::vec![0.5, 1.0], f.clone()).is_err());
        assert!(TimeField::new(g, alloc::vec![0.0, 0.0], f).is_err());
    }
}
