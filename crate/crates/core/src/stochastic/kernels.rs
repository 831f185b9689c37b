use serde::{Deserialize, Serialize};

use super::special::{betainc, ln_beta, norm_cdf, norm_quantile};
use crate::error::{Error, Result};

/// Lower and upper clamp applied to values that must lie strictly inside (0, 1).
pub const UNIT_EPS: f64 = 1e-12;

pub fn clamp_unit(x: f64) -> f64 {
    x.clamp(UNIT_EPS, 1.0 - UNIT_EPS)
}

/// Beta density in mean / scale form: shapes `(mu * tau, (1 - mu) * tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaKernel {
    pub mu: f64,
    pub tau: f64,
}

impl BetaKernel {
    pub fn new(mu: f64, tau: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::domain(format!("beta kernel mean {mu} outside (0, 1)")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::domain(format!("beta kernel scale {tau} must be positive")));
        }
        Ok(Self { mu, tau })
    }

    pub fn shapes(&self) -> (f64, f64) {
        (self.mu * self.tau, (1.0 - self.mu) * self.tau)
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }

    pub fn variance(&self) -> f64 {
        self.mu * (1.0 - self.mu) / (self.tau + 1.0)
    }

    /// Normalizing constant `ln B(a, b)`; cached by callers that evaluate many points.
    pub fn ln_norm(&self) -> f64 {
        let (a, b) = self.shapes();
        ln_beta(a, b)
    }

    pub fn logpdf(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::domain(format!("beta kernel evaluated at {t}, outside (0, 1)")));
        }
        Ok(self.logpdf_with_norm(t.ln(), (-t).ln_1p(), self.ln_norm()))
    }

    /// Log-density from precomputed `ln t`, `ln(1 - t)` and `ln B(a, b)`.
    #[inline]
    pub fn logpdf_with_norm(&self, ln_t: f64, ln_1mt: f64, ln_norm: f64) -> f64 {
        let (a, b) = self.shapes();
        (a - 1.0) * ln_t + (b - 1.0) * ln_1mt - ln_norm
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        let (a, b) = self.shapes();
        betainc(t.clamp(0.0, 1.0), a, b)
    }

    /// Probability mass on `(t1, t2)`.
    pub fn interval(&self, t1: f64, t2: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t1) || !(0.0..=1.0).contains(&t2) {
            return Err(Error::domain(format!("interval ({t1}, {t2}) not inside [0, 1]")));
        }
        if t1 >= t2 {
            return Err(Error::domain(format!("interval requires t1 < t2, got ({t1}, {t2})")));
        }
        if t1 == 0.0 && t2 == 1.0 {
            return Ok(1.0);
        }
        let (a, b) = self.shapes();
        // Subtract on the tail where both CDF values are small.
        let mass = if t1 < self.mu {
            betainc(t2, a, b)? - betainc(t1, a, b)?
        } else {
            betainc(1.0 - t1, b, a)? - betainc(1.0 - t2, b, a)?
        };
        Ok(mass.clamp(0.0, 1.0))
    }
}

/// Free-function form of [`BetaKernel::logpdf`].
pub fn beta_kernel_logpdf(t: f64, kernel: &BetaKernel) -> Result<f64> {
    kernel.logpdf(t)
}

/// Free-function form of [`BetaKernel::interval`].
pub fn beta_kernel_interval(t1: f64, t2: f64, kernel: &BetaKernel) -> Result<f64> {
    kernel.interval(t1, t2)
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussKernel {
    pub mean: f64,
    pub variance: f64,
}

impl GaussKernel {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::domain(format!("gaussian variance {variance} must be positive")));
        }
        Ok(Self { mean, variance })
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    #[inline]
    pub fn logpdf(&self, x: f64) -> f64 {
        gauss_logpdf(x, self.mean, self.variance)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        norm_cdf((x - self.mean) / self.sd())
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mean + self.sd() * norm_quantile(p)
    }
}

#[inline]
pub fn gauss_logpdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}

pub fn gauss_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    norm_cdf((x - mean) / variance.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Composite Gauss-Legendre (10 points per panel) on [lo, hi].
    fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
        const X: [f64; 5] = [
            0.148_874_338_981_631_2,
            0.433_395_394_129_247_2,
            0.679_409_568_299_024_4,
            0.865_063_366_688_984_5,
            0.973_906_528_517_171_7,
        ];
        const W: [f64; 5] = [
            0.295_524_224_714_752_9,
            0.269_266_719_309_996_4,
            0.219_086_362_515_982_04,
            0.149_451_349_150_580_6,
            0.066_671_344_308_688_14,
        ];
        let h = (hi - lo) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let c = lo + (p as f64 + 0.5) * h;
            for i in 0..5 {
                let dx = 0.5 * h * X[i];
                total += 0.5 * h * W[i] * (f(c - dx) + f(c + dx));
            }
        }
        total
    }

    #[test]
    fn uniform_case_is_zero_log_density() {
        let k = BetaKernel::new(0.5, 2.0).unwrap();
        assert!(k.logpdf(0.3).unwrap().abs() < 1e-14);
    }

    #[test]
    fn calibrated_scale_gives_quarter_month_sd() {
        let k = BetaKernel::new(0.5, 575.0).unwrap();
        assert!((k.variance().sqrt() - 1.0 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn logpdf_reference_value() {
        // Beta(4, 6) at 0.7: 504 * 0.7^3 * 0.3^5, since 1/B(4,6) = 9!/(3! 5!) = 504.
        let k = BetaKernel::new(0.4, 10.0).unwrap();
        let expected = (504.0 * 0.7f64.powi(3) * 0.3f64.powi(5)).ln();
        assert!((k.logpdf(0.7).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn logpdf_rejects_boundary() {
        let k = BetaKernel::new(0.4, 10.0).unwrap();
        assert!(k.logpdf(0.0).is_err());
        assert!(k.logpdf(1.0).is_err());
        assert!(BetaKernel::new(1.0, 3.0).is_err());
        assert!(BetaKernel::new(0.5, 0.0).is_err());
    }

    #[test]
    fn interval_examples() {
        let k = BetaKernel::new(0.3, 20.0).unwrap();
        assert_eq!(k.interval(0.0, 1.0).unwrap(), 1.0);
        let sym = BetaKernel::new(0.5, 37.0).unwrap();
        assert!((sym.interval(0.0, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(k.interval(0.4, 0.2).is_err());

        let quad = integrate(|t| k.logpdf(t).unwrap().exp(), 0.2, 0.4, 200);
        assert!((k.interval(0.2, 0.4).unwrap() - quad).abs() < 1e-10);
    }

    #[test]
    fn density_integrates_to_one() {
        for &(mu, tau) in &[(0.5, 2.0), (0.3, 20.0), (0.2, 575.0), (0.9, 100.0)] {
            let k = BetaKernel::new(mu, tau).unwrap();
            let q = integrate(|t| k.logpdf(t).unwrap().exp(), 1e-9, 1.0 - 1e-9, 2000);
            assert!((q - 1.0).abs() < 1e-8, "mu={mu} tau={tau}: {q}");
        }
    }

    #[test]
    fn interval_from_zero_is_cdf_and_monotone() {
        let k = BetaKernel::new(0.6, 575.0).unwrap();
        let mut prev = 0.0;
        for i in 1..100 {
            let t = i as f64 / 100.0;
            let v = k.interval(0.0, t).unwrap();
            assert!((v - k.cdf(t).unwrap()).abs() < 1e-12);
            assert!(v + 1e-15 >= prev);
            prev = v;
        }
    }

    #[test]
    fn gaussian_examples() {
        let g = GaussKernel::new(1.5, 0.7).unwrap();
        assert!((g.logpdf(1.5) + 0.5 * (2.0 * std::f64::consts::PI * 0.7).ln()).abs() < 1e-14);
        assert!((g.cdf(1.5) - 0.5).abs() < 1e-15);
        // erf oracle: Φ(1.96) = ½(1 + erf(1.96/√2)), erf by its Maclaurin series.
        let x = 1.96 / std::f64::consts::SQRT_2;
        let mut term = x;
        let mut erf = x;
        for n in 1..60 {
            term *= -x * x / n as f64;
            erf += term / (2 * n + 1) as f64;
        }
        let erf = erf * 2.0 / std::f64::consts::PI.sqrt();
        let v = g.cdf(1.5 + 1.96 * g.sd());
        assert!((v - 0.5 * (1.0 + erf)).abs() < 1e-13);
        assert!((v - 0.975).abs() < 1e-4);
        assert!(GaussKernel::new(0.0, 0.0).is_err());
    }
}
