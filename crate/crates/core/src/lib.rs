//! Numerical core for constrained entropy maximisation in one-dimensional
//! electro-energy-reaction-diffusion systems.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN is rejected as well
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod direct;
pub mod dual;
pub mod electrostatics;
pub mod entropy;
pub mod error;
pub mod evolution;
pub mod linalg;
pub mod math;
pub mod mesh;

pub use error::{Error, Result};
