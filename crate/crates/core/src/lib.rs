//! Numerical laboratory for linear and perturbed differential equations with
//! piecewise constant arguments `x'(t) = A(t)x(t) + B(t)x([t]) + f(t)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod depca;
pub mod dichotomy;
pub mod error;
pub mod expr;
pub mod grid;
pub mod lasota;
pub mod linalg;
pub mod perturb;
#[cfg(test)]
mod properties;
pub mod quadrature;
pub mod rap;
pub mod reduction;
pub mod sequence;
pub mod system;
pub mod transition;

pub use error::{Error, Result};
pub use grid::{GridNode, TimeGrid};
pub use linalg::{Matrix, Vector};
pub use sequence::SequenceWindow;
pub use system::{CoefficientSpec, CoefficientSystem, Coefficients, FnCoefficients};
