//! Minimal dense linear algebra: factorizations, truncated SVD,
//! orthogonal-matrix construction, and seeded randomness.
//!
//! Everything is pure and deterministic; accumulation is in `f64` throughout.

mod factor;
mod matrix;
mod orthogonal;
mod rng;
mod svd;

pub use factor::{cholesky, ldl_decompose, spd_inverse};
pub use matrix::Matrix;
pub use orthogonal::{cayley, hadamard, orthogonality_error, random_orthogonal, skew_from_params};
pub use rng::{Seed, SplitMix64};
pub use svd::{svd_topk, TruncatedSvd};

pub(crate) use factor::solve_general;
