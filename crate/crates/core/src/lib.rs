//! Numerical homogenization toolkit for Hamiltonian systems on cotangent
//! bundles of tori: action minimization, generating functions, cubical
//! persistence, and the invariants built on top of them.

pub mod expr;
pub mod flow;
pub mod geometry;
pub mod gfqi;
pub mod grid;
pub mod persistence;
pub mod quasimorphism;
pub mod variational;
