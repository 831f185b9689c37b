//! Positively correlated Beta autoregressive (PBAR) process.
//!
//! `mu_k = v_k * u_k * mu_{k-1} + (1 - v_k)` with `v_k ~ Beta(b, a - rho)` and
//! `u_k ~ Beta(rho, a - rho)` has stationary Beta(a, b) marginals. The
//! transition density and the latent-variable conditionals used by the
//! sampler are specialized to `a = b = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::special::beta_logpdf;
use crate::stochastic::{clamp_unit, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PbarParams {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
}

impl PbarParams {
    pub fn new(a: f64, b: f64, rho: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::domain(format!("PBAR marginal shapes must be positive, got ({a}, {b})")));
        }
        if !(rho > 0.0 && rho < a) {
            return Err(Error::domain(format!("PBAR dependence {rho} must lie in (0, {a})")));
        }
        Ok(Self { a, b, rho })
    }

    /// Uniform marginals (`a = b = 1`).
    pub fn uniform(rho: f64) -> Result<Self> {
        Self::new(1.0, 1.0, rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PbarStep {
    pub v: f64,
    pub u: f64,
    pub mu_prev: f64,
    pub mu_next: f64,
}

/// One step of the recursion with the latents supplied.
pub fn pbar_step_with(mu_prev: f64, v: f64, u: f64) -> PbarStep {
    PbarStep {
        v,
        u,
        mu_prev,
        mu_next: v * u * mu_prev + (1.0 - v),
    }
}

pub fn pbar_step(mu_prev: f64, params: &PbarParams, rng: &mut SeededRng) -> Result<PbarStep> {
    if !(mu_prev > 0.0 && mu_prev < 1.0) {
        return Err(Error::domain(format!("PBAR state {mu_prev} outside (0, 1)")));
    }
    let v = rng.beta(params.b, params.a - params.rho)?;
    let u = rng.beta(params.rho, params.a - params.rho)?;
    let mut step = pbar_step_with(mu_prev, v, u);
    step.mu_next = clamp_unit(step.mu_next);
    Ok(step)
}

/// Support `(lo, hi)` of `mu_next` given `mu_prev` and `v`.
pub fn transition_support(mu_prev: f64, v: f64) -> (f64, f64) {
    (1.0 - v, (1.0 - v + v * mu_prev).min(1.0))
}

/// log p(mu_next | mu_prev, v, rho) for `a = b = 1`: a Beta(rho, 1 - rho)
/// density rescaled onto `(1 - v, 1 - v + v * mu_prev)`. Returns `-inf`
/// outside that support.
pub fn pbar_transition_logpdf(mu_next: f64, mu_prev: f64, v: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain(format!("PBAR dependence {rho} outside (0, 1)")));
    }
    Ok(transition_logpdf_unchecked(mu_next, clamp_unit(mu_prev), v, rho))
}

#[inline]
pub(crate) fn transition_logpdf_unchecked(mu_next: f64, mu_prev: f64, v: f64, rho: f64) -> f64 {
    let scale = v * mu_prev;
    let x = (mu_next + v - 1.0) / scale;
    if !(x > 0.0 && x < 1.0) {
        return f64::NEG_INFINITY;
    }
    beta_logpdf(x, rho, 1.0 - rho) - scale.ln()
}

/// Support of `v_k` given its neighbours: `(1 - mu_k, min{1, (1 - mu_k) / (1 - mu_{k-1})})`.
pub fn latent_v_support(mu_k: f64, mu_prev: f64) -> (f64, f64) {
    (1.0 - mu_k, ((1.0 - mu_k) / (1.0 - mu_prev)).min(1.0))
}

/// Unnormalized log full conditional of `v_k`: transition density times the
/// Beta(1, 1 - rho) prior.
pub fn latent_v_logpdf(v: f64, mu_k: f64, mu_prev: f64, rho: f64) -> f64 {
    transition_logpdf_unchecked(mu_k, mu_prev, v, rho) + beta_logpdf(v, 1.0, 1.0 - rho)
}

/// Autocorrelation at lag m: `{rho * b / (a * (a + b - rho))}^m`.
pub fn pbar_autocorr(params: &PbarParams, lag: u32) -> f64 {
    let r = params.rho * params.b / (params.a * (params.a + params.b - params.rho));
    r.powi(lag as i32)
}

/// Iterates [`pbar_step`] `len` times from `mu_0`, returning `(mu_k, v_k)`.
pub fn simulate_path(
    mu_0: f64,
    params: &PbarParams,
    len: usize,
    rng: &mut SeededRng,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(len);
    let mut mu = mu_0;
    for _ in 0..len {
        let step = pbar_step(mu, params, rng)?;
        out.push((step.mu_next, step.v));
        mu = step.mu_next;
    }
    Ok(out)
}
