//! Numerical laboratory for the sharpness/diversity trade-off of flat ensembles.
//!
//! The crate is layered bottom-up:
//!
//! - [`numkernel`]: dense matrices, seeded random streams, symmetric eigensolver.
//! - [`combinatorics`]: Narayana numbers, leading-order Wishart moments and the
//!   moment functional `phi(i, j)` with `E[B^i (A^T A)^j] = phi(i, j) I`.
//! - [`theory`]: closed-form diversity and sharpness bounds for SAM trained on
//!   full data and on random subsets, plus analytic trade-off curves.
//! - [`quad_sim`]: Monte-Carlo teacher/student simulator checking the closed forms.
//! - [`metrics`]: diversity (variance, disagreement, DER, KL), EIR, adaptive
//!   sharpness and per-sample Fisher trace.
//! - [`nn_ensemble`]: a small MLP ensemble trained with SGD, SAM or SharpBalance.

pub mod combinatorics;
pub mod error;
pub mod metrics;
pub mod nn_ensemble;
pub mod numkernel;
pub mod quad_sim;
pub mod theory;

pub use error::{Error, Result};
