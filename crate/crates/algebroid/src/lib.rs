//! Mechanics on skew-symmetric algebroids.
//!
//! The central object is a bundle with a pointwise frame, an anchor into the
//! tangent of the base, and antisymmetric structure functions. That data
//! induces an almost-differential on sections, a linear almost-Poisson
//! bracket on the dual bundle, Hamiltonian and nonholonomic flows, and a
//! Hamilton-Jacobi theory whose solutions are closed sections of the dual.
//! The crate evaluates all of it numerically from expression-level input and
//! ships the worked models this machinery was built to handle.

pub mod algebroid;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod models;
pub mod morphism;
pub mod nonholonomy;
pub mod numeric;
pub mod poisson;

#[cfg(test)]
pub(crate) mod test_fixtures;

pub use error::{Error, Result};
pub use expr::{Expr, VarBinding, parse};
