//! Bayesian nonparametric modelling of seasonal marked Poisson processes.

// NaN must fail parameter checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ddp;
pub mod diagnostics;
pub mod error;
pub mod functionals;
pub mod gamma_chain;
pub mod ingest;
pub mod pbar;
pub mod sampler;
pub mod simulate;
pub mod stats;
pub mod stochastic;

pub use error::{Error, Result};
