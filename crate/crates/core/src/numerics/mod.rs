//! Dense linear algebra and deterministic randomness.

mod ddouble;
mod eig;
mod matrix;
mod rng;

pub use ddouble::DoubleDouble;
pub use eig::{sym_eig, sym_eig_jacobi, SymEigen, DEFAULT_TOL, MAX_SWEEPS, SYMMETRY_TOL};
pub use matrix::{dot, Matrix};
pub use rng::{hash64, seeded_uniform, SeededRng};
