//! Discounted gamma state-space chain for the total intensities γ_k.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PeriodLayout;
use crate::stochastic::special::{ln_factorial, ln_gamma};
use crate::stochastic::SeededRng;

pub const DEFAULT_A0: f64 = 0.1;
pub const DEFAULT_B0: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaChainState {
    pub omega: f64,
    pub a0: f64,
    pub b0: f64,
    /// Filtered (a_k, b_k), one per year.
    pub filtered: Vec<(f64, f64)>,
    /// Sampled yearly γ.
    pub gammas: Vec<f64>,
}

fn check(omega: f64, a0: f64, b0: f64) -> Result<()> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::domain(format!("discount factor {omega} outside (0, 1]")));
    }
    if !(a0 > 0.0 && b0 > 0.0) {
        return Err(Error::domain(format!("initial gamma parameters must be positive, got ({a0}, {b0})")));
    }
    Ok(())
}

/// a_k = ω a_{k−1} + n_k, b_k = ω b_{k−1} + 1.
pub fn forward_filter(counts: &[u64], omega: f64, a0: f64, b0: f64) -> Result<Vec<(f64, f64)>> {
    check(omega, a0, b0)?;
    let mut out = Vec::with_capacity(counts.len());
    let (mut a, mut b) = (a0, b0);
    for &n in counts {
        a = omega * a + n as f64;
        b = omega * b + 1.0;
        out.push((a, b));
    }
    Ok(out)
}

/// γ_K ~ Gamma(a_K, b_K), then γ_k = ω γ_{k+1} + Gamma((1 − ω) a_k, b_k).
pub fn backward_sample(filtered: &[(f64, f64)], omega: f64, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::domain(format!("discount factor {omega} outside (0, 1]")));
    }
    let k = filtered.len();
    let mut gammas = vec![0.0; k];
    let Some(&(a_last, b_last)) = filtered.last() else {
        return Ok(gammas);
    };
    gammas[k - 1] = rng.gamma(a_last, b_last)?;
    for i in (0..k - 1).rev() {
        let (a, b) = filtered[i];
        let shape = (1.0 - omega) * a;
        let eps = if shape > 0.0 { rng.gamma(shape, b)? } else { 0.0 };
        gammas[i] = omega * gammas[i + 1] + eps;
    }
    Ok(gammas)
}

/// log NB(n; r, p) = log Γ(n + r) − log Γ(r) − log n! + r log p + n log(1 − p).
pub fn nb_logpmf(n: u64, r: f64, p: f64) -> f64 {
    let nf = n as f64;
    ln_gamma(nf + r) - ln_gamma(r) - ln_factorial(n) + r * p.ln() + nf * (-p).ln_1p()
}

/// Σ_k log p(n_k | n_{1:k−1}, ω) under the discounted Gamma priors.
pub fn predictive_loglik(counts: &[u64], omega: f64, a0: f64, b0: f64) -> Result<f64> {
    check(omega, a0, b0)?;
    let (mut a, mut b) = (a0, b0);
    let mut total = 0.0;
    for &n in counts {
        let r = omega * a;
        let s = omega * b;
        total += nb_logpmf(n, r, s / (s + 1.0));
        a = r + n as f64;
        b = s + 1.0;
    }
    Ok(total)
}

/// {0.01, 0.02, ..., 0.99}.
pub fn default_omega_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Grid argmax of [`predictive_loglik`]; ties go to the smallest ω.
pub fn estimate_omega(counts: &[u64], a0: f64, b0: f64, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::config("discount-factor grid is empty"));
    }
    if let Some(w) = grid.iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
        return Err(Error::config(format!("grid value {w} outside (0, 1)")));
    }
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for &w in grid {
        let ll = predictive_loglik(counts, w, a0, b0)?;
        if ll > best.0 || (ll == best.0 && w < best.1) {
            best = (ll, w);
        }
    }
    Ok(best.1)
}

/// γ_{K+1} ~ Gamma(ω a_K, ω b_K).
pub fn forecast_gamma(filtered: &[(f64, f64)], omega: f64, rng: &mut SeededRng) -> Result<f64> {
    let &(a, b) = filtered
        .last()
        .ok_or_else(|| Error::domain("cannot forecast from an empty filter"))?;
    rng.gamma(omega * a, omega * b)
}

/// Joint forecast of the next `horizon` years. The first year is
/// Gamma(ω a_K, ω b_K); later years apply the shock γ' = γ ξ / ω with
/// ξ ~ Beta(ω a, (1 − ω) a) and a ← ω a, so year h is marginally
/// Gamma(ω^h a_K, ω^h b_K).
pub fn forecast_path(filtered: &[(f64, f64)], omega: f64, horizon: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let &(a_k, _) = filtered
        .last()
        .ok_or_else(|| Error::domain("cannot forecast from an empty filter"))?;
    let mut out = Vec::with_capacity(horizon);
    if horizon == 0 {
        return Ok(out);
    }
    let mut g = forecast_gamma(filtered, omega, rng)?;
    let mut a = omega * a_k;
    out.push(g);
    for _ in 1..horizon {
        if omega < 1.0 {
            let xi = rng.beta(omega * a, (1.0 - omega) * a)?;
            g = g * xi / omega;
        }
        a *= omega;
        out.push(g);
    }
    Ok(out)
}

/// Sums yearly values into the periods of `layout`.
pub fn aggregate_by_period(yearly: &[f64], layout: &PeriodLayout) -> Result<Vec<f64>> {
    if yearly.len() != layout.total_years() {
        return Err(Error::domain(format!(
            "{} yearly values for a {}-year layout",
            yearly.len(),
            layout.total_years()
        )));
    }
    let mut out = vec![0.0; layout.n_periods()];
    for (i, g) in yearly.iter().enumerate() {
        let k = layout.period_of(layout.first_year + i as i32).expect("year within layout");
        out[k] += g;
    }
    Ok(out)
}

impl GammaChainState {
    /// Filters `counts` at a fixed discount factor; `gammas` starts empty.
    pub fn filter(counts: &[u64], omega: f64, a0: f64, b0: f64) -> Result<Self> {
        Ok(Self {
            omega,
            a0,
            b0,
            filtered: forward_filter(counts, omega, a0, b0)?,
            gammas: Vec::new(),
        })
    }

    /// Returns a copy holding a fresh backward-sampled path.
    pub fn sample(&self, rng: &mut SeededRng) -> Result<Self> {
        let mut out = self.clone();
        out.gammas = backward_sample(&self.filtered, self.omega, rng)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, variance};
    use crate::stochastic::quad::integrate;

    #[test]
    fn filter_hand_values() {
        let f = forward_filter(&[2, 3], 0.5, 1.0, 1.0).unwrap();
        assert_eq!(f, vec![(2.5, 1.5), (4.25, 1.75)]);
    }

    #[test]
    fn filter_without_discount_is_static_conjugacy() {
        let counts = [3, 0, 7, 2, 5];
        let f = forward_filter(&counts, 1.0, 0.3, 0.7).unwrap();
        let (a, b) = *f.last().unwrap();
        assert!((a - (0.3 + 17.0)).abs() < 1e-14);
        assert!((b - (0.7 + 5.0)).abs() < 1e-14);
        let g = forward_filter(&[5, 2, 0, 7, 3], 1.0, 0.3, 0.7).unwrap();
        assert_eq!(g.last(), f.last());
    }

    #[test]
    fn filter_all_zero_counts() {
        let f = forward_filter(&[0; 6], 0.8, 2.0, 1.0).unwrap();
        for (k, (a, _)) in f.iter().enumerate() {
            assert!((a - 0.8f64.powi(k as i32 + 1) * 2.0).abs() < 1e-14);
        }
        assert!(f.windows(2).all(|w| w[1].0 < w[0].0));
    }

    #[test]
    fn backward_edge_cases() {
        let mut rng = SeededRng::new(1, 0);
        let f = forward_filter(&[4, 1, 6], 1.0, 1.0, 1.0).unwrap();
        let g = backward_sample(&f, 1.0, &mut rng).unwrap();
        assert!(g.iter().all(|x| *x == g[0]));
        assert_eq!(backward_sample(&f[..1], 0.6, &mut SeededRng::new(2, 0)).unwrap(), vec![
            SeededRng::new(2, 0).gamma(f[0].0, f[0].1).unwrap()
        ]);
        assert!(backward_sample(&[], 0.5, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn backward_support_and_last_marginal() {
        let counts = [3, 8, 2, 5, 9, 4];
        let omega = 0.6;
        let f = forward_filter(&counts, omega, 0.1, 0.1).unwrap();
        let mut rng = SeededRng::new(3, 0);
        let mut last = Vec::new();
        for _ in 0..100_000 {
            let g = backward_sample(&f, omega, &mut rng).unwrap();
            assert!(g.windows(2).all(|w| w[0] > omega * w[1]));
            last.push(*g.last().unwrap());
        }
        let (a, b) = *f.last().unwrap();
        let se = (a / (b * b) / 1e5).sqrt();
        assert!((mean(&last) - a / b).abs() < 4.0 * se);
        assert!((variance(&last) / (a / (b * b)) - 1.0).abs() < 0.03);
    }

    #[test]
    fn geometric_predictive() {
        for n in 0..10u64 {
            let ll = predictive_loglik(&[n], 1.0, 1.0, 1.0).unwrap();
            assert!((ll - (-((n + 1) as f64) * 2f64.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn predictive_term_matches_quadrature() {
        for &(n, r, s) in &[(0u64, 1.5, 0.4), (4, 2.0, 1.0), (12, 7.3, 0.6), (1, 0.8, 2.5)] {
            let q = gamma_poisson_quadrature(n, r, s);
            let direct = nb_logpmf(n, r, s / (s + 1.0)).exp();
            assert!((q - direct).abs() < 1e-10, "{n} {r} {s}: {q} vs {direct}");
        }
    }

    // ∫ Poisson(n | γ) Gamma(γ | r, s) dγ. On [0, 1] the substitution
    // γ = u^(1/r) absorbs the γ^(r−1) singularity; the tail is integrated
    // directly up to well past the posterior mass.
    fn gamma_poisson_quadrature(n: u64, r: f64, s: f64) -> f64 {
        let ln_norm = r * s.ln() - ln_gamma(r) - ln_factorial(n);
        let nf = n as f64;
        let head = integrate(
            |u: f64| {
                let g = u.powf(1.0 / r);
                let lg = if n == 0 { 0.0 } else { nf * g.ln() };
                (ln_norm - (s + 1.0) * g + lg).exp() / r
            },
            0.0,
            1.0,
            1e-14,
        )
        .unwrap();
        let upper = 1.0 + (nf + r + 60.0 * (nf + r).sqrt() + 60.0) / (s + 1.0);
        let tail = integrate(
            |g: f64| (ln_norm + (r - 1.0) * g.ln() - (s + 1.0) * g + nf * g.ln()).exp(),
            1.0,
            upper,
            1e-14,
        )
        .unwrap();
        head + tail
    }

    #[test]
    fn outlier_lowers_likelihood() {
        let base = predictive_loglik(&[3, 4, 3, 5], 0.7, 0.1, 0.1).unwrap();
        let worse = predictive_loglik(&[3, 4, 3, 50], 0.7, 0.1, 0.1).unwrap();
        let worst = predictive_loglik(&[3, 4, 3, 500], 0.7, 0.1, 0.1).unwrap();
        assert!(worse < base && worst < worse);
    }

    #[test]
    fn omega_on_constant_and_shifting_counts() {
        let grid = default_omega_grid();
        let flat = vec![5u64; 100];
        assert_eq!(estimate_omega(&flat, 0.1, 0.1, &grid).unwrap(), 0.99);

        let mut rng = SeededRng::new(8, 0);
        let levels = [2.0, 25.0, 4.0, 30.0, 1.0, 18.0];
        let shifting: Vec<u64> = (0..60)
            .map(|i| rng.poisson(levels[(i / 10) % levels.len()]).unwrap())
            .collect();
        let w = estimate_omega(&shifting, 0.1, 0.1, &grid).unwrap();
        assert!(w > 0.01 && w < 0.99, "{w}");
        assert!(estimate_omega(&flat, 0.1, 0.1, &[]).is_err());
    }

    #[test]
    fn omega_ties_pick_smallest() {
        // With no counts at all the likelihood is identically zero.
        assert_eq!(estimate_omega(&[], 0.1, 0.1, &[0.7, 0.3, 0.5]).unwrap(), 0.3);
    }

    #[test]
    fn single_period_likelihood_uses_discounted_prior() {
        let w = 0.4;
        let direct = nb_logpmf(3, w * 2.0, w * 1.5 / (w * 1.5 + 1.0));
        assert!((predictive_loglik(&[3], w, 2.0, 1.5).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn smoothed_mean_matches_two_dimensional_integration() {
        let counts = [4, 6, 5];
        let omega = 0.7;
        let f = forward_filter(&counts, omega, 1.0, 1.0).unwrap();
        let (a2, b2) = f[1];
        let (a3, b3) = f[2];
        let gamma_pdf = |x: f64, a: f64, b: f64| {
            if x <= 0.0 {
                0.0
            } else {
                (a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x).exp()
            }
        };
        let sh = (1.0 - omega) * a2;
        // E(γ_2) = ∫∫ γ_2 p(γ_2 | γ_3) p(γ_3) dγ_2 dγ_3 with γ_2 = ωγ_3 + ε.
        let oracle = integrate(
            |g3| {
                let inner = integrate(|e| (omega * g3 + e) * gamma_pdf(e, sh, b2), 0.0, 40.0, 1e-12).unwrap();
                inner * gamma_pdf(g3, a3, b3)
            },
            0.0,
            40.0,
            1e-10,
        )
        .unwrap();
        let mut rng = SeededRng::new(11, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| backward_sample(&f, omega, &mut rng).unwrap()[1])
            .collect();
        let se = (variance(&draws) / draws.len() as f64).sqrt();
        assert!((mean(&draws) - oracle).abs() < 3.0 * se, "{} vs {oracle}", mean(&draws));
    }

    #[test]
    fn forecast_moments() {
        let f = forward_filter(&[4, 9, 3, 7], 0.6, 0.1, 0.1).unwrap();
        let (a, b) = *f.last().unwrap();
        let mut rng = SeededRng::new(4, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| forecast_gamma(&f, 0.6, &mut rng).unwrap()).collect();
        let var = a / (0.6 * b * b);
        assert!((mean(&draws) - a / b).abs() < 4.0 * (var / n as f64).sqrt());
        assert!((variance(&draws) / var - 1.0).abs() < 0.03);
        assert!(var > a / (b * b));
        let mut r1 = SeededRng::new(5, 0);
        let mut r2 = SeededRng::new(5, 0);
        assert_eq!(forecast_gamma(&f, 1.0, &mut r1).unwrap(), r2.gamma(a, b).unwrap());
    }

    #[test]
    fn forecast_path_marginals() {
        let f = forward_filter(&[4, 9, 3, 7], 0.8, 0.1, 0.1).unwrap();
        let (a, b) = *f.last().unwrap();
        let mut rng = SeededRng::new(6, 0);
        let n = 100_000;
        let mut third = Vec::with_capacity(n);
        for _ in 0..n {
            third.push(forecast_path(&f, 0.8, 3, &mut rng).unwrap()[2]);
        }
        let (sa, sb) = (0.8f64.powi(3) * a, 0.8f64.powi(3) * b);
        assert!((mean(&third) - sa / sb).abs() < 4.0 * (sa / (sb * sb) / n as f64).sqrt());
        assert!((variance(&third) / (sa / (sb * sb)) - 1.0).abs() < 0.04);
    }

    #[test]
    fn aggregation_sums_within_periods() {
        let layout = PeriodLayout::new(1900, 1910, 5).unwrap();
        let yearly: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let agg = aggregate_by_period(&yearly, &layout).unwrap();
        assert_eq!(agg, vec![(0..=5).sum::<i32>() as f64, (6..=10).sum::<i32>() as f64]);
    }
}
