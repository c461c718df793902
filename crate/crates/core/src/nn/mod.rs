//! Numerical building blocks: convolution, batch normalization, pointwise
//! ops and losses. Every kernel is generic over [`Scalar`](crate::Scalar)
//! and has an explicit backward pass; there is no tape-based autograd.

pub mod conv;
pub mod norm;
pub mod ops;

pub use conv::{conv2d_backward, conv2d_forward, ConvGeom, ConvGrads};
pub use ops::{mean_pool, nearest_upsample, nearest_upsample_backward};
