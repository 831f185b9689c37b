//! Special functions used by the kernels: log-gamma, log-beta, the regularized
//! incomplete beta function and the standard normal CDF / quantile.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// log Beta(x | a, b) density; `-inf` outside (0, 1).
pub fn beta_logpdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
}

const BETAINC_MAX_ITER: usize = 300;
const BETAINC_TOL: f64 = 1e-12;
const FPMIN: f64 = 1e-300;

/// Regularized incomplete beta function I_x(a, b).
///
/// Continued fraction (modified Lentz) on whichever tail converges faster.
/// Fails with [`Error::Numeric`] if the fraction has not converged to 1e-12
/// within 300 iterations.
pub fn betainc(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain(format!("betainc shapes must be positive, got ({a}, {b})")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("betainc argument {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok((ln_front.exp() * betacf(x, a, b)? / a).clamp(0.0, 1.0))
    } else {
        Ok((1.0 - ln_front.exp() * betacf(1.0 - x, b, a)? / b).clamp(0.0, 1.0))
    }
}

fn betacf(x: f64, a: f64, b: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    let mut last_delta = f64::INFINITY;
    for m in 1..=BETAINC_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        last_delta = (delta - 1.0).abs();
        if last_delta < f64::EPSILON {
            return Ok(h);
        }
    }
    if last_delta < BETAINC_TOL {
        Ok(h)
    } else {
        Err(Error::numeric(format!(
            "incomplete beta continued fraction did not converge (x={x}, a={a}, b={b}, |delta-1|={last_delta:e})"
        )))
    }
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile. Acklam's rational approximation polished with
/// one Halley step against `erfc`.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-p).ln_1p()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// log of n! via log-gamma.
pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// log(sum(exp(xs))) with max shift; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Log-gamma by the Stirling series after shifting the argument above 20,
    // independent of the Lanczos coefficients.
    fn ln_gamma_stirling(mut x: f64) -> f64 {
        let mut shift = 0.0;
        while x < 20.0 {
            shift -= x.ln();
            x += 1.0;
        }
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        let series = inv
            * (1.0 / 12.0
                - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
        shift + (x - 0.5) * x.ln() - x + LN_SQRT_2PI + series
    }

    #[test]
    fn ln_gamma_matches_stirling_series() {
        for &x in &[0.05, 0.3, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 57.5, 287.5, 574.0, 1000.0] {
            let a = ln_gamma(x);
            let b = ln_gamma_stirling(x);
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0f64;
        for n in 1..20u32 {
            fact *= n as f64;
            assert!((ln_gamma(n as f64 + 1.0) - fact.ln()).abs() < 1e-12);
        }
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn betainc_edges_and_symmetry() {
        assert_eq!(betainc(0.0, 2.0, 3.0).unwrap(), 0.0);
        assert_eq!(betainc(1.0, 2.0, 3.0).unwrap(), 1.0);
        assert!((betainc(0.5, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((betainc(0.5, 287.5, 287.5).unwrap() - 0.5).abs() < 1e-12);
        // I_x(1, b) = 1 − (1 − x)^b
        let v = betainc(0.3, 1.0, 2.5).unwrap();
        assert!((v - (1.0 - 0.7f64.powf(2.5))).abs() < 1e-14);
        assert!(betainc(-0.1, 1.0, 1.0).is_err());
        assert!(betainc(0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn betainc_large_shapes_converges() {
        for &mu in &[0.01, 0.1, 0.3, 0.5, 0.77, 0.99] {
            let (a, b) = (mu * 575.0, (1.0 - mu) * 575.0);
            for &x in &[1e-6, 0.05, 0.2, 0.5, 0.8, 0.999] {
                let v = betainc(x, a, b).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn normal_cdf_and_quantile() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        for &p in &[1e-10, 0.001, 0.025, 0.3, 0.5, 0.8, 0.975, 0.999_999] {
            let z = norm_quantile(p);
            assert!((norm_cdf(z) - p).abs() < 1e-14 * p.max(1e-3), "p={p}");
        }
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_shifts() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
