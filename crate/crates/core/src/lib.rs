//! Finite element Galerkin scheme for the competing (p,q)-Laplacian Dirichlet
//! problem with convection and an unbounded weight, together with the
//! a priori estimates it rests on and checks of the generalized-solution
//! conditions along a nested mesh hierarchy.

// `!(x < y)` is how NaN inputs get rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimates;
pub mod fespace;
pub mod galerkin;
mod linalg;
pub mod mesh;
pub mod operators;
pub mod sampling;
pub mod verify;

pub use error::{MeshError, OperatorError, SolveError, SpaceError, SpecError};
pub use fespace::{DualVector, FeFunction, FeSpace};
pub use mesh::{DomainDescriptor, MeshLevel, QuadratureRule};
pub use operators::{ConvectionFamily, FeOperator, ProblemSpec, Regime, TruncatedWeight, Variant};
