//! Reverse-mode differentiation, Adam, and finite-difference checking.

mod adam;
mod gradcheck;
mod tape;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{LocalDerivative, Tape, Var};

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Denominator guard for average representation normalization.
pub const AVG_RNORM_EPS: f64 = 1e-8;
