//! Free semicircular matrix models and the deterministic algorithms that use
//! their moments as potential functions.
//!
//! The crate is `no_std` with `alloc`; the default `std` feature only turns on
//! runtime CPU detection in the matrix-multiply kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod num;

pub mod cauchy;
pub mod discrepancy;
pub mod expanders;
pub mod free;
pub mod matrix;
pub mod pairwise;
pub mod spectrum;
pub mod universality;

pub use error::{Error, Result};
pub use free::{CovTerm, FreeModel, MatrixParams, MomentTable};
pub use matrix::{Mat, Spectrum, SymMatrix};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
