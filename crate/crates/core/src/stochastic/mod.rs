//! Numerical kernels and sampling primitives.

pub mod kernels;
pub mod quad;
pub mod rng;
pub mod special;

pub use kernels::{
    beta_kernel_interval, beta_kernel_logpdf, clamp_unit, gauss_cdf, gauss_logpdf, BetaKernel,
    GaussKernel, LN_2PI, UNIT_EPS,
};
pub use rng::{draw, Dist, SeededRng};
