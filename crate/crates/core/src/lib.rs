//! Minimal-entropy moment closures for the linear Boltzmann equation.
//!
//! The crate provides the full pipeline around the entropy closure of a
//! moment system: velocity-space quadrature and monomial moment bases,
//! the Maxwell-Boltzmann dual objective, a Newton solver for the dual
//! problem, the realizability geometry of normalized moments, training
//! data generators, an input-convex neural surrogate for the entropy
//! functional, and a first-order kinetic finite-volume solver that can
//! run with either closure backend.

pub mod bench;
pub mod entropy;
pub mod metrics;
pub mod solver;
pub mod icnn;
pub mod sampler;
pub mod error;
pub mod moments;
pub mod newton;
pub mod realizability;
pub mod velocity;

pub use error::{Error, Result};
pub use moments::{Dimension, LagrangeMultipliers, MomentVector};
pub use velocity::{MomentBasis, QuadratureRule};
