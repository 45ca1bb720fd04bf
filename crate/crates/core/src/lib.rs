//! Numerical laboratory for Lorenz-like classes: flows and tangent flows,
//! linear Poincaré cocycles, dominated and sectional-hyperbolic splittings,
//! topological entropy estimates and shadowing-based periodic orbits.

pub mod entropy;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod poincare;
pub mod shadowing;
pub mod splitting;

pub use error::{Error, Result};
