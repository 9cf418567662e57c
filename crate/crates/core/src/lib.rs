//! Numerical core for the inhomogeneous porous medium equation
//! `ε ∂_t u - div(γ ∇u^m) = f` on a box: discrete elliptic operators, the
//! regularized forward solver, Laplace-domain Dirichlet-to-Neumann data,
//! large-`h` asymptotic fits and recovery of `γ` and `ε`.
//!
//! The crate is `no_std` with `alloc`. Error types implement
//! `core::error::Error`; the `std` feature forwards to `thiserror/std`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod coefficient;
pub mod elliptic;
pub mod error;
pub mod expansion;
pub mod expr;
pub mod field;
pub mod grid;
pub mod inverse;
pub mod laplace;
pub mod linalg;
pub mod pme;
pub mod math;
pub mod special;

pub use coefficient::{eval_coefficient, Coefficient, CoefficientSource, CoefficientSpec};
pub use error::{Error, Result};
pub use expr::Expression;
pub use field::{boundary_pair, integrate, relative_l2_error, BoundaryField, ScalarField, TimeField};
pub use grid::{BoundaryNode, Edge, Grid, Normal, Side};
pub use elliptic::{dn_matrix, harmonic_family, neumann_trace, solve_dirichlet, DiscreteOperator, EllipticProblem, EllipticSolver};
pub use linalg::{CsrMatrix, DenseMatrix, SpdSolver};
pub use pme::{
    energy_norm, mobility, solve_level, solve_pme, BoundaryData, BoundaryLift, KSchedule, LevelStats, PMEProblem, PmeSolution,
    RegularizationLevel, Source,
};
pub use laplace::{
    dn_samples, lambda_h, laplace_of_series, transform_solution, DnSampleSet, HSchedule, PipelineConfig, TransformResult,
};
pub use expansion::{build_oracle, build_oracle_with, fit_expansion, fit_expansion_with, FitWeights, gamma_one_plus, pairing_identity, pairing_identity_normalized, remainder_norms, remainders, ExpansionOracle, FitResult};
pub use inverse::{
    default_s_step, dn_data, epsilon_moment, moment_families, moment_traces, moment_data, polynomial_traces, recover_epsilon, shifted_data, recover_gamma, AlphaRule, CoarseBasis, EpsilonReconstruction, GammaInverseProblem,
    GammaReconstruction, MomentData, MomentEstimate, MomentFamilies, MomentSystem, PathPoint,
};
