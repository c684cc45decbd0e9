//! Desk-scale post-training quantization laboratory.
//!
//! The crate decomposes weight/activation quantization into two composable
//! stages: output-preserving pre-quantization transforms (shift, scale,
//! rotation) and quantization error mitigation (Hessian-feedback rounding,
//! low-rank branch compensation), over uniform INT and MXFP4 quantizers.
//! Everything operates on dense row-major `f64` matrices and is deterministic
//! given an explicit [`linalg::Seed`].
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature,
//! enabled by default, only adds `std::error::Error` impls.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub(crate) mod math;

pub mod linalg;
pub mod mitigation;
pub mod pipeline;
pub mod quantizers;
pub mod transforms;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
