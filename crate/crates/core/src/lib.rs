//! Deformable convolution v3 (DCNv3) and the InternImage backbone family.
//!
//! The crate is `no_std` with `alloc`: every kernel is a pure function over
//! [`Tensor4`] values, and every differentiable operation ships an explicit
//! pullback so forward/backward pairs can be checked against finite
//! differences with [`gradcheck`]. File formats, the CLI and benchmarking live
//! in the `internimage` companion crate.
//!
//! Layout is fixed to row-major `(n, c, h, w)` in `f64`.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod block;
pub mod dcn;
pub mod erf;
mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod numeric;
pub mod ops;
pub mod params;
pub mod scaling;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape4, Tensor4};
