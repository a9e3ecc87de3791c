//! Fixed points of affine maps on L1-type convex bodies: grid spaces, the
//! in-measure metric, operator catalogs, geometric coefficients, and a
//! Cesàro/Komlós solver that either finds a fixed point or reports why not.

pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod operators;
pub mod point;
pub mod report;
pub mod sets;
pub mod solver;

pub use error::{FptError, Result};
pub use grid::{GridFunction, RealSequenceWindow, DEFAULT_WINDOW, MAX_LEVEL};
pub use operators::{AffineOperator, OperatorSpec};
pub use point::{CoordPoint, Point};
pub use report::{BoundType, CoefficientReport};
pub use sets::{BodySpec, ConvexBody};
pub use solver::{SolveOutcome, SolveStatus};

/// Default numerical tolerance for membership and residual checks.
pub const DEFAULT_TOL: f64 = 1e-9;
