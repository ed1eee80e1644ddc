//! Validated polynomial parameterizations of local stable/unstable manifolds.
//!
//! The pipeline: represent a polynomial ODE `y' = g(y)`, locate an
//! equilibrium and the stable eigenpairs of its Jacobian, solve the
//! order-by-order homological equations for a truncated Taylor
//! parameterization of the local manifold, and then certify the result —
//! either a-posteriori through the defect of the invariance equation, or
//! rigorously through radii-polynomial contraction bounds evaluated with
//! outward-rounded interval arithmetic. Eigenvector scalings act on the
//! coefficients as a cheap diagonal rescaling, which makes searching for the
//! largest certified manifold patch inexpensive; the `optimize` module
//! automates that search.
//!
//! The coefficient-level layer (`series`, `interval`, `field`) is generic
//! over the floating point scalar; the solver and validation pipeline uses
//! the `f64` aliases below.
#![allow(clippy::needless_range_loop)]
// Comparisons like `!(x > 0)` deliberately catch NaN alongside the sign.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod scalar;
pub mod series;
pub mod interval;
pub mod linalg;
pub mod field;
pub mod spectrum;
pub mod parm;
pub mod validation;
pub mod optimize;
pub mod geometry;
pub mod problem;

pub use error::{Error, Result};

/// Concrete scalar used by the solver pipeline.
pub type Real = f64;
/// Complex scalar of the pipeline.
pub type Cx = num_complex::Complex<Real>;
/// Coefficient sequence over the pipeline scalar.
pub type Series = series::VectorSeq<Real>;
/// Single-component sequence over the pipeline scalar.
pub type Component = series::CoeffSeq<Real>;
/// Eigendirection scaling over the pipeline scalar.
pub type PatchScaling = series::Scaling<Real>;
/// Real interval over the pipeline scalar.
pub type RInterval = interval::Interval<Real>;
/// Complex (rectangle) interval over the pipeline scalar.
pub type CInterval = interval::ComplexInterval<Real>;
