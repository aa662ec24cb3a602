//! Finite element spaces, operators and field evaluation.

pub mod assemble;
pub mod quadrature;
pub mod space;
pub mod sparse;
pub mod vtk;

pub use assemble::{assemble, assemble_blocks, assemble_vector, OperatorKind};
pub use quadrature::QuadratureRule;
pub use space::{FunctionSpace, PointLocation, QuadPoint, ScalarField, VectorField};
pub use sparse::CsrMatrix;
