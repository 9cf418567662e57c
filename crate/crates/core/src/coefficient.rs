//! Positive, bounded coefficient fields (conductivity and storage).

use alloc::sync::Arc;
use core::ops::Deref;

use crate::error::{invalid, Error, Result};
use crate::expr::Expression;
use crate::field::{check_grid, ScalarField};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSource {
    Expression(Expression),
    /// Nodal values already loaded from a field file.
    Field(ScalarField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSpec {
    pub source: CoefficientSource,
    pub lower: f64,
    pub upper: f64,
}

impl CoefficientSpec {
    pub fn expression(source: &str, lower: f64, upper: f64) -> Result<CoefficientSpec> {
        Ok(CoefficientSpec {
            source: CoefficientSource::Expression(Expression::parse(source)?),
            lower,
            upper,
        })
    }
}

/// A nodal field known to lie in `[lower, upper]` with `lower > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    field: ScalarField,
    lower: f64,
    upper: f64,
}

impl Coefficient {
    pub fn new(field: ScalarField, lower: f64, upper: f64) -> Result<Coefficient> {
        if !(lower > 0.0) || !(upper >= lower) || !upper.is_finite() {
            return Err(invalid("coefficient bounds must satisfy 0 < lower <= upper < inf"));
        }
        // a few ulps of slack so closed-form bounds survive rounding in libm
        let slack = 8.0 * f64::EPSILON;
        let (lo, hi) = (lower * (1.0 - slack), upper * (1.0 + slack));
        if let Some((node, value)) = field
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= lo && **v <= hi))
        {
            return Err(Error::OutOfBounds {
                node,
                value: *value,
                lower,
                upper,
            });
        }
        Ok(Coefficient { field, lower, upper })
    }

    /// Constant coefficient with tight bounds.
    pub fn constant(grid: Arc<Grid>, value: f64) -> Result<Coefficient> {
        Coefficient::new(ScalarField::constant(grid, value), value, value)
    }

    /// Wraps a field using its own range as the declared bounds.
    pub fn from_field(field: ScalarField) -> Result<Coefficient> {
        let (lo, hi) = (field.min(), field.max());
        Coefficient::new(field, lo, hi)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn into_field(self) -> ScalarField {
        self.field
    }
}

impl Deref for Coefficient {
    type Target = ScalarField;

    fn deref(&self) -> &ScalarField {
        &self.field
    }
}

/// Evaluates a coefficient specification on `grid`, enforcing its bounds.
pub fn eval_coefficient(spec: &CoefficientSpec, grid: &Arc<Grid>) -> Result<Coefficient> {
    let field = match &spec.source {
        CoefficientSource::Expression(e) => {
            if e.uses_time() {
                return Err(invalid("coefficient expressions may not depend on t"));
            }
            if e.spatial_arity() > grid.dim() {
                return Err(invalid("coefficient expression uses a coordinate beyond the grid dimension"));
            }
            ScalarField::from_fn(grid.clone(), |x| e.eval_space(x))
        }
        CoefficientSource::Field(f) => {
            check_grid(f.grid(), grid)?;
            f.clone()
        }
    };
    Coefficient::new(field, spec.lower, spec.upper)
}
