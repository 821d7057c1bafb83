//! Dense linear algebra and seeded sampling shared by the other modules.
//!
//! Everything here is deterministic: a given [`RngStream`] always yields the
//! same draws, and the eigensolver performs a fixed sequence of floating-point
//! operations for a given input.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{sym_eigen, SymEigen};
pub use matrix::{gram, matmul, DenseMatrix, DenseVector};
pub use rng::{gaussian_matrix, gaussian_vector, RngStream};
