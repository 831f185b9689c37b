//! Small statistics helpers: Kolmogorov–Smirnov tests, quantiles and
//! summaries of posterior samples.

use serde::{Deserialize, Serialize};

/// Sample size up to which the KS p-value uses the exact finite-n distribution.
pub const KS_EXACT_MAX_N: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Two-sided one-sample KS test of `values` against the continuous CDF `cdf`.
pub fn ks_test(values: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let n = values.len();
    if n == 0 {
        return KsResult {
            n,
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    KsResult {
        n,
        statistic: d,
        p_value: ks_pvalue(n, d),
    }
}

pub fn ks_uniform(values: &[f64]) -> KsResult {
    ks_test(values, |x| x.clamp(0.0, 1.0))
}

/// P(D_n ≥ d) for the two-sided statistic.
pub fn ks_pvalue(n: usize, d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    if d >= 1.0 {
        return 0.0;
    }
    if n <= KS_EXACT_MAX_N {
        (1.0 - ks_cdf_exact(n, d)).clamp(0.0, 1.0)
    } else {
        let sn = (n as f64).sqrt();
        kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
    }
}

/// Complementary Kolmogorov distribution Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Exact P(D_n < d) (Marsaglia, Tsang & Wang matrix-power algorithm).
pub fn ks_cdf_exact(n: usize, d: f64) -> f64 {
    let nf = n as f64;
    let k = (nf * d).floor() as usize + 1;
    let m = 2 * k - 1;
    let h = k as f64 - nf * d;

    let mut hm = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if i + 1 >= j {
                hm[i * m + j] = 1.0;
            }
        }
    }
    for i in 0..m {
        hm[i * m] -= h.powi(i as i32 + 1);
        hm[(m - 1) * m + i] -= h.powi((m - i) as i32);
    }
    if 2.0 * h - 1.0 > 0.0 {
        hm[(m - 1) * m] += (2.0 * h - 1.0).powi(m as i32);
    }
    for i in 0..m {
        for j in 0..m {
            if i + 1 > j {
                for g in 1..=(i + 1 - j) {
                    hm[i * m + j] /= g as f64;
                }
            }
        }
    }

    let (q, mut exp) = matrix_power(&hm, m, n);
    let mut s = q[(k - 1) * m + (k - 1)];
    for i in 1..=n {
        s *= i as f64 / nf;
        if s < 1e-140 {
            s *= 1e140;
            exp -= 140;
        }
    }
    (s * 10f64.powi(exp)).clamp(0.0, 1.0)
}

fn matmul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for l in 0..m {
            let ail = a[i * m + l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i * m + j] += ail * b[l * m + j];
            }
        }
    }
    c
}

// Returns (matrix, decimal exponent) with entries rescaled to avoid overflow.
fn matrix_power(a: &[f64], m: usize, n: usize) -> (Vec<f64>, i32) {
    if n == 1 {
        return (a.to_vec(), 0);
    }
    let (half, e_half) = matrix_power(a, m, n / 2);
    let mut out = matmul(&half, &half, m);
    let mut exp = 2 * e_half;
    if n % 2 == 1 {
        out = matmul(a, &out, m);
    }
    if out[(m / 2) * m + m / 2] > 1e140 {
        for v in out.iter_mut() {
            *v *= 1e-140;
        }
        exp += 140;
    }
    (out, exp)
}

/// Linear-interpolation quantile (type 7) of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    let num: f64 = xs
        .iter()
        .zip(xs.iter().skip(lag))
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    num / denom
}

/// Mean, median and central 95% interval of a posterior sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            mean: mean(values),
            median: quantile_sorted(&sorted, 0.5),
            lo95: quantile_sorted(&sorted, 0.025),
            hi95: quantile_sorted(&sorted, 0.975),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_small_n_matches_closed_forms() {
        // n = 1: P(D_1 < d) = 2d − 1 for d ∈ [1/2, 1].
        assert!((ks_cdf_exact(1, 0.75) - 0.5).abs() < 1e-12);
        // For d ≥ 1/2 the one-sided events are disjoint, so the two-sided tail
        // is twice the Smirnov one-sided tail.
        let smirnov = |n: usize, d: f64| {
            let nf = n as f64;
            let mut acc = 0.0;
            let mut binom = 1.0;
            for j in 0..=((nf * (1.0 - d)).floor() as usize) {
                if j > 0 {
                    binom *= (n - j + 1) as f64 / j as f64;
                }
                let jf = j as f64;
                acc += binom * (d + jf / nf).powi(j as i32 - 1) * (1.0 - d - jf / nf).powi((n - j) as i32);
            }
            d * acc
        };
        for n in [2usize, 5, 10, 30] {
            for d in [0.55, 0.6, 0.8] {
                let p = 1.0 - ks_cdf_exact(n, d);
                let want = 2.0 * smirnov(n, d);
                assert!((p - want).abs() < 1e-12, "n={n} d={d}: {p} vs {want}");
            }
        }
    }

    #[test]
    fn exact_and_asymptotic_agree_for_moderate_n() {
        let n = 200;
        let d = 1.36 / (n as f64).sqrt();
        let exact = 1.0 - ks_cdf_exact(n, d);
        let sn = (n as f64).sqrt();
        let asym = kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
        assert!((exact - asym).abs() < 2e-3, "{exact} vs {asym}");
        assert!((exact - 0.05).abs() < 0.005);
    }

    #[test]
    fn ks_uniform_on_grid_accepts() {
        let u: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let r = ks_uniform(&u);
        assert!((r.statistic - 0.5 / 40.0).abs() < 1e-12);
        assert!(r.p_value > 0.99);
        let bad: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 80.0).collect();
        assert!(ks_uniform(&bad).rejects(0.01));
    }

    #[test]
    fn summary_and_quantiles() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let s = Summary::of(&xs).unwrap();
        assert_eq!(s.median, 50.0);
        assert!((s.lo95 - 2.5).abs() < 1e-12);
        assert!((s.hi95 - 97.5).abs() < 1e-12);
        assert!(Summary::of(&[]).is_none());
    }
}
