//! Hamiltonian mechanics on locally conformal symplectic manifolds.
//!
//! The crate evaluates exterior calculus pointwise by forward-mode automatic
//! differentiation, builds Hamiltonian vector fields from the twisted
//! differential `d^θ = d − θ∧`, certifies symmetry and dissipation identities
//! on sample sets, and integrates the resulting dynamics.

pub mod ad;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod lcs;
pub mod report;
pub mod scenario;
pub mod symmetry;

pub use error::{Error, Result};
