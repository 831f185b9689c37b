//! Seeded random number generation with independent substreams.
//!
//! Every [`SeededRng`] is a ChaCha20 generator keyed by the root seed and
//! positioned on its own stream; `(seed, stream_id)` fully determines the draw
//! sequence, so chains run on separate streams are reproducible bit for bit.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::special::{norm_cdf, norm_quantile};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh generator on another stream of the same root seed.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(Error::domain("cannot draw an index from an empty range"));
        }
        Ok(self.inner.random_range(0..n))
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        let d = Normal::new(mean, sd)
            .map_err(|e| Error::domain(format!("normal({mean}, {sd}): {e}")))?;
        Ok(d.sample(&mut self.inner))
    }

    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        let d = Beta::new(a, b).map_err(|e| Error::domain(format!("beta({a}, {b}): {e}")))?;
        Ok(d.sample(&mut self.inner))
    }

    /// Gamma with shape / rate parameterization.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!("gamma rate {rate} must be positive")));
        }
        let d = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::domain(format!("gamma({shape}, {rate}): {e}")))?;
        Ok(d.sample(&mut self.inner))
    }

    /// Logarithm of a Gamma(shape, 1) variate. Small shapes go through
    /// G(a) = G(a + 1) U^{1/a}, which would underflow in linear scale.
    pub fn ln_gamma_variate(&mut self, shape: f64) -> Result<f64> {
        if shape >= 1.0 {
            return Ok(self.gamma(shape, 1.0)?.ln());
        }
        let g = self.gamma(shape + 1.0, 1.0)?;
        Ok(g.ln() + self.uniform().ln() / shape)
    }

    /// `(ln x, ln(1 − x))` for x ~ Beta(a, b), both accurate near the edges.
    pub fn ln_beta_pair(&mut self, a: f64, b: f64) -> Result<(f64, f64)> {
        let ga = self.ln_gamma_variate(a)?;
        let gb = self.ln_gamma_variate(b)?;
        let m = ga.max(gb);
        let total = m + ((ga - m).exp() + (gb - m).exp()).ln();
        Ok((ga - total, gb - total))
    }

    /// Inverse gamma with shape / rate (density ∝ x^{-shape-1} e^{-rate/x}).
    pub fn inv_gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        Ok(1.0 / self.gamma(shape, rate)?)
    }

    pub fn poisson(&mut self, lambda: f64) -> Result<u64> {
        if lambda == 0.0 {
            return Ok(0);
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("poisson rate {lambda} must be nonnegative")));
        }
        let d = Poisson::new(lambda).map_err(|e| Error::domain(format!("poisson({lambda}): {e}")))?;
        Ok(d.sample(&mut self.inner) as u64)
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> Result<usize> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::domain("categorical weights must be finite and nonnegative"));
        }
        if !(total > 0.0) {
            return Err(Error::numeric("categorical weights sum to zero"));
        }
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = i;
                if target < acc {
                    return Ok(i);
                }
            }
        }
        Ok(last_positive)
    }

    /// Categorical draw from unnormalized log-weights (max-shifted).
    pub fn categorical_log(&mut self, log_weights: &[f64], scratch: &mut Vec<f64>) -> Result<usize> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::numeric("all categorical log-weights are -inf or non-finite"));
        }
        scratch.clear();
        scratch.extend(log_weights.iter().map(|lw| (lw - max).exp()));
        self.categorical(scratch)
    }

    /// Normal restricted to `(lo, hi)`; rejection when the window holds enough
    /// mass, inverse CDF otherwise.
    pub fn truncated_normal(&mut self, mean: f64, sd: f64, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !(sd > 0.0) {
            return Err(Error::domain(format!(
                "truncated normal needs lo < hi and sd > 0, got ({lo}, {hi}), sd={sd}"
            )));
        }
        let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
        // Work on the side of the axis where the CDF keeps precision.
        let flip = a > 0.0;
        let (a, b) = if flip { (-b, -a) } else { (a, b) };
        let (pa, pb) = (norm_cdf(a), norm_cdf(b));
        let z = if pb - pa > 0.2 {
            loop {
                let z = self.std_normal();
                if z > a && z < b {
                    break z;
                }
            }
        } else {
            let p = pa + self.uniform() * (pb - pa);
            norm_quantile(p).clamp(a, b)
        };
        let z = if flip { -z } else { z };
        Ok((mean + sd * z).clamp(lo, hi))
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha20Rng {
        &mut self.inner
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// The distribution families the sampler draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dist {
    Beta { a: f64, b: f64 },
    Gamma { shape: f64, rate: f64 },
    Normal { mean: f64, sd: f64 },
    Poisson { lambda: f64 },
    Categorical { weights: Vec<f64> },
}

/// A single variate; integer-valued families return their value as `f64`.
pub fn draw(dist: &Dist, rng: &mut SeededRng) -> Result<f64> {
    match dist {
        Dist::Beta { a, b } => rng.beta(*a, *b),
        Dist::Gamma { shape, rate } => rng.gamma(*shape, *rate),
        Dist::Normal { mean, sd } => rng.normal(*mean, *sd),
        Dist::Poisson { lambda } => rng.poisson(*lambda).map(|n| n as f64),
        Dist::Categorical { weights } => rng.categorical(weights).map(|i| i as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    fn check(dist: Dist, mean: f64, var: f64, m4: f64) {
        let mut rng = SeededRng::new(99, 3);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| draw(&dist, &mut rng).unwrap()).collect();
        let (m, v) = moments(&xs);
        let se_mean = (var / n as f64).sqrt();
        // Var of the sample variance ≈ (μ4 − σ⁴)/n
        let se_var = ((m4 - var * var) / n as f64).sqrt();
        assert!((m - mean).abs() < 4.0 * se_mean, "{dist:?}: mean {m} vs {mean}");
        assert!((v - var).abs() < 4.0 * se_var, "{dist:?}: var {v} vs {var}");
    }

    #[test]
    fn samplers_match_moments() {
        // Beta(1,1): var 1/12, fourth central moment 1/80.
        check(Dist::Beta { a: 1.0, b: 1.0 }, 0.5, 1.0 / 12.0, 1.0 / 80.0);
        // Gamma(3, rate 2): var 3/4, μ4 = 3k(k+2)/rate⁴.
        check(Dist::Gamma { shape: 3.0, rate: 2.0 }, 1.5, 0.75, 3.0 * 3.0 * 5.0 / 16.0);
        check(Dist::Normal { mean: -1.0, sd: 2.0 }, -1.0, 4.0, 3.0 * 16.0);
        // Poisson(4): μ4 = λ(1 + 3λ).
        check(Dist::Poisson { lambda: 4.0 }, 4.0, 4.0, 4.0 * 13.0);
    }

    #[test]
    fn ln_beta_pair_tails() {
        // P(X < x) = x^a / (a B(a, b)) + O(x^{a+1}) for small x.
        let (a, b) = (0.02, 0.98);
        let mut rng = SeededRng::new(3, 0);
        let n = 200_000;
        let cut = -200.0f64;
        let mut below = 0;
        for _ in 0..n {
            let (lx, l1x) = rng.ln_beta_pair(a, b).unwrap();
            assert!(lx <= 0.0 && l1x <= 0.0);
            assert!((lx.exp() + l1x.exp() - 1.0).abs() < 1e-12);
            below += (lx < cut) as usize;
        }
        let p = (a * cut).exp() / (a * crate::stochastic::special::ln_beta(a, b).exp());
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(((below as f64 / n as f64) - p).abs() < 4.0 * se, "{below} vs {p}");
    }

    #[test]
    fn beta_uniform_mean() {
        let mut rng = SeededRng::new(1, 0);
        let n = 1_000_000;
        let m = (0..n).map(|_| rng.beta(1.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 0.002);
    }

    #[test]
    fn degenerate_cases() {
        let mut rng = SeededRng::new(5, 0);
        for _ in 0..1000 {
            assert_eq!(rng.categorical(&[1.0, 0.0, 0.0]).unwrap(), 0);
            assert_eq!(rng.poisson(0.0).unwrap(), 0);
        }
        assert!(rng.categorical(&[0.0, 0.0]).is_err());
        assert!(rng.categorical(&[-1.0, 2.0]).is_err());
        assert!(rng.beta(0.0, 1.0).is_err());
        assert!(rng.gamma(1.0, 0.0).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = SeededRng::new(7, 1);
        let mut b = SeededRng::new(7, 1);
        let mut c = SeededRng::new(7, 2);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn truncated_normal_stays_inside_and_matches_mean() {
        let mut rng = SeededRng::new(11, 0);
        let n = 200_000;
        // N(0,1) on (0.5, 3): mean = (φ(0.5) − φ(3)) / (Φ(3) − Φ(0.5))
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expected = (phi(0.5) - phi(3.0)) / (norm_cdf(3.0) - norm_cdf(0.5));
        let mut sum = 0.0;
        for _ in 0..n {
            let x = rng.truncated_normal(0.0, 1.0, 0.5, 3.0).unwrap();
            assert!(x > 0.5 && x < 3.0);
            sum += x;
        }
        assert!((sum / n as f64 - expected).abs() < 0.005);
        // Far tail window uses the inverse-CDF branch.
        for _ in 0..1000 {
            let x = rng.truncated_normal(10.0, 1.0, -1.0, 1.0).unwrap();
            assert!((-1.0..=1.0).contains(&x));
        }
    }
}
