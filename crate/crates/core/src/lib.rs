//! Adaptive P1 finite elements for a control-constrained elliptic optimal
//! control problem with bang-bang solutions.
//!
//! The library provides conforming triangular meshes with longest-edge
//! bisection, P1 Galerkin assembly with a degree-19 quadrature rule, a
//! fixed-point solver for the variational-discretization optimality system,
//! residual a posteriori error indicators, and the adaptive/uniform
//! refinement loops used by the convergence studies in the `bbafem-cli`
//! binary.

pub mod adaptive;
pub mod error;
pub mod estimators;
pub mod fem;
pub mod mesh;
pub mod ocp;
pub mod problems;
pub mod quadrature;
pub mod sparse;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
