//! Truncated stick-breaking dependent Dirichlet process state.
//!
//! Weights are shared across periods; time atoms evolve by PBAR and the two
//! mark atoms by AR(1) processes with stationary initial laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pbar::{pbar_step, PbarParams};
use crate::stochastic::quad::integrate_to_infinity;
use crate::stochastic::special::{ln_beta, log_sum_exp};
use crate::stochastic::{clamp_unit, gauss_logpdf, BetaKernel, SeededRng};

pub const DEFAULT_TRUNCATION: usize = 50;
pub const DEFAULT_TAU: f64 = 575.0;

/// Which marks enter the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "time")]
    TimeOnly,
    #[serde(rename = "time+wind")]
    TimeWind,
    #[serde(rename = "time+wind+damage")]
    TimeWindDamage,
}

impl ModelKind {
    pub fn has_wind(self) -> bool {
        !matches!(self, ModelKind::TimeOnly)
    }

    pub fn has_damage(self) -> bool {
        matches!(self, ModelKind::TimeWindDamage)
    }
}

/// Inverse-gamma prior, shape / rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaPrior {
    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }

    /// Shape 3 and rate chosen so the prior mean is `0.5 (range / 4)^2`.
    pub fn from_range(range: f64) -> Self {
        let mean = 0.5 * (range / 4.0).powi(2);
        Self {
            shape: 3.0,
            rate: 2.0 * mean,
        }
    }
}

/// Fully specified hyperpriors for one model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    pub truncation: usize,
    pub tau: f64,
    /// Gamma(shape, rate) prior on the DP precision.
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub sigma2: InvGammaPrior,
    pub zeta2: InvGammaPrior,
    pub sigma1_2: InvGammaPrior,
    pub sigma2_2: InvGammaPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            truncation: DEFAULT_TRUNCATION,
            tau: DEFAULT_TAU,
            alpha_shape: 2.0,
            alpha_rate: 1.0,
            sigma2: InvGammaPrior { shape: 3.0, rate: 2.0 },
            zeta2: InvGammaPrior { shape: 3.0, rate: 10.0 },
            sigma1_2: InvGammaPrior { shape: 3.0, rate: 2.0 },
            sigma2_2: InvGammaPrior { shape: 3.0, rate: 10.0 },
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 1 {
            return Err(Error::config("truncation level must be at least 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if !(self.alpha_shape > 0.0 && self.alpha_rate > 0.0) {
            return Err(Error::config("alpha prior parameters must be positive"));
        }
        for (name, p) in [
            ("sigma2", self.sigma2),
            ("zeta2", self.zeta2),
            ("sigma1_2", self.sigma1_2),
            ("sigma2_2", self.sigma2_2),
        ] {
            if !(p.shape > 0.0 && p.rate > 0.0) {
                return Err(Error::config(format!("{name} prior parameters must be positive")));
            }
        }
        Ok(())
    }
}

/// One state of the truncated DDP. Matrices are indexed `[component][period]`
/// and allocations `[period][event]` with 0-based component labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpState {
    pub n_components: usize,
    pub n_periods: usize,
    /// Stick variables z_1..z_{N-1}.
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    /// PBAR latents; column 0 is an auxiliary draw from its prior and never
    /// enters the likelihood.
    pub v: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub alpha: f64,
    pub rho: f64,
    pub tau: f64,
    pub sigma2: f64,
    pub zeta2: f64,
    pub beta_ar: f64,
    pub phi_ar: f64,
    pub sigma1_2: f64,
    pub sigma2_2: f64,
    pub allocations: Vec<Vec<usize>>,
    /// Current imputations, `Some` exactly where the damage mark is missing.
    pub imputed_z: Vec<Vec<Option<f64>>>,
}

/// Weights from stick variables, closing the last weight so they sum to one.
pub fn stick_break(sticks: &[f64]) -> Result<Vec<f64>> {
    if let Some(z) = sticks.iter().find(|z| !(**z > 0.0 && **z <= 1.0)) {
        return Err(Error::domain(format!("stick variable {z} outside (0, 1)")));
    }
    let mut weights = Vec::with_capacity(sticks.len() + 1);
    let mut remaining = 1.0;
    for &z in sticks {
        let w = z * remaining;
        weights.push(w);
        remaining *= 1.0 - z;
    }
    let closed: f64 = weights.iter().sum();
    weights.push((1.0 - closed).max(0.0));
    Ok(weights)
}

/// E(Σ_{j≤N} w_j | α) = 1 − (α / (α + 1))^N.
pub fn truncation_mass(alpha: f64, n: usize) -> Result<f64> {
    if !(alpha > 0.0) || n < 1 {
        return Err(Error::domain(format!("truncation mass needs alpha > 0 and N ≥ 1, got ({alpha}, {n})")));
    }
    Ok(1.0 - (alpha / (alpha + 1.0)).powi(n as i32))
}

/// Truncation mass averaged over a Gamma(shape, rate) prior on α.
pub fn expected_truncation_mass(n: usize, alpha_shape: f64, alpha_rate: f64) -> Result<f64> {
    if !(alpha_shape > 0.0 && alpha_rate > 0.0) {
        return Err(Error::domain("gamma prior parameters must be positive"));
    }
    let ln_norm = alpha_shape * alpha_rate.ln() - crate::stochastic::special::ln_gamma(alpha_shape);
    let density = |a: f64| {
        if a <= 0.0 {
            return 0.0;
        }
        (ln_norm + (alpha_shape - 1.0) * a.ln() - alpha_rate * a).exp()
    };
    // Integrate the tail deficit (α/(α+1))^N, which is small, and subtract.
    let deficit = integrate_to_infinity(
        |a| density(a) * (a / (a + 1.0)).powi(n as i32),
        0.0,
        1e-13,
    )?;
    Ok(1.0 - deficit)
}

impl DdpState {
    pub fn kernel(&self, j: usize, k: usize) -> BetaKernel {
        BetaKernel {
            mu: self.mu[j][k],
            tau: self.tau,
        }
    }

    /// Checks dimensions and the weight simplex.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_components;
        let k = self.n_periods;
        if self.weights.len() != n || self.sticks.len() + 1 != n {
            return Err(Error::numeric("weight/stick length does not match truncation"));
        }
        for (name, m) in [("mu", &self.mu), ("v", &self.v), ("nu", &self.nu), ("eta", &self.eta)] {
            if m.len() != n || m.iter().any(|row| row.len() != k) {
                return Err(Error::numeric(format!("{name} matrix is not {n}x{k}")));
            }
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::numeric(format!("weights are not a simplex (sum {total})")));
        }
        if self.mu.iter().flatten().any(|m| !(*m > 0.0 && *m < 1.0)) {
            return Err(Error::numeric("time atom outside (0, 1)"));
        }
        Ok(())
    }

    /// log f_k(point) under the mixture; marks present in `point` add their
    /// Gaussian factors.
    pub fn mixture_logdensity(&self, point: &MarkPoint, k: usize) -> Result<f64> {
        if k >= self.n_periods {
            return Err(Error::domain(format!("period {k} out of range")));
        }
        if !(point.t > 0.0 && point.t < 1.0) {
            return Err(Error::domain(format!("time {} outside (0, 1)", point.t)));
        }
        let (lt, l1t) = (point.t.ln(), (-point.t).ln_1p());
        let terms: Vec<f64> = (0..self.n_components)
            .map(|j| {
                let kern = self.kernel(j, k);
                let (a, b) = kern.shapes();
                let mut lp = self.weights[j].ln() + kern.logpdf_with_norm(lt, l1t, ln_beta(a, b));
                if let Some(y) = point.y {
                    lp += gauss_logpdf(y, self.nu[j][k], self.sigma2);
                }
                if let Some(z) = point.z {
                    lp += gauss_logpdf(z, self.eta[j][k], self.zeta2);
                }
                lp
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// E(θ_k | G_k) = Σ_j w_j μ_{j,k}.
    pub fn atom_mean(&self, k: usize) -> f64 {
        (0..self.n_components).map(|j| self.weights[j] * self.mu[j][k]).sum()
    }

    /// Cov(θ_k, θ_{k+1} | G_k, G_{k+1}).
    pub fn atom_lag_covariance(&self, k: usize) -> f64 {
        let cross: f64 = (0..self.n_components)
            .map(|j| self.weights[j] * self.mu[j][k] * self.mu[j][k + 1])
            .sum();
        cross - self.atom_mean(k) * self.atom_mean(k + 1)
    }

    /// Number of observations allocated to each component.
    pub fn component_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_components];
        for &l in self.allocations.iter().flatten() {
            counts[l] += 1;
        }
        counts
    }

    /// Reorders component labels: new component `j` is old component `perm[j]`.
    pub fn permute_components(&self, perm: &[usize]) -> DdpState {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let pick = |m: &Vec<Vec<f64>>| perm.iter().map(|&o| m[o].clone()).collect::<Vec<_>>();
        let mut out = self.clone();
        out.weights = perm.iter().map(|&o| self.weights[o]).collect();
        out.mu = pick(&self.mu);
        out.v = pick(&self.v);
        out.nu = pick(&self.nu);
        out.eta = pick(&self.eta);
        out.allocations = self
            .allocations
            .iter()
            .map(|row| row.iter().map(|&l| inverse[l]).collect())
            .collect();
        out
    }
}

/// A time with optional centered log marks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkPoint {
    pub t: f64,
    pub y: Option<f64>,
    pub z: Option<f64>,
}

impl MarkPoint {
    pub fn time(t: f64) -> Self {
        Self { t, y: None, z: None }
    }
}

/// Draws every DDP quantity from its prior for `n_periods` periods. The
/// returned state carries no allocations.
pub fn sample_prior_state(n_periods: usize, priors: &Priors, rng: &mut SeededRng) -> Result<DdpState> {
    if n_periods < 1 {
        return Err(Error::domain("at least one period is required"));
    }
    priors.validate()?;
    let n = priors.truncation;
    let alpha = rng.gamma(priors.alpha_shape, priors.alpha_rate)?;
    let sticks: Vec<f64> = (0..n - 1)
        .map(|_| rng.beta(1.0, alpha).map(|z| z.max(f64::MIN_POSITIVE)))
        .collect::<Result<_>>()?;
    let weights = stick_break(&sticks)?;
    let rho = clamp_unit(rng.uniform());
    let pbar = PbarParams::uniform(rho)?;

    let sigma2 = rng.inv_gamma(priors.sigma2.shape, priors.sigma2.rate)?;
    let zeta2 = rng.inv_gamma(priors.zeta2.shape, priors.zeta2.rate)?;
    let sigma1_2 = rng.inv_gamma(priors.sigma1_2.shape, priors.sigma1_2.rate)?;
    let sigma2_2 = rng.inv_gamma(priors.sigma2_2.shape, priors.sigma2_2.rate)?;
    let beta_ar = 2.0 * rng.uniform() - 1.0;
    let phi_ar = 2.0 * rng.uniform() - 1.0;

    let mut mu = vec![vec![0.0; n_periods]; n];
    let mut v = vec![vec![0.0; n_periods]; n];
    let mut nu = vec![vec![0.0; n_periods]; n];
    let mut eta = vec![vec![0.0; n_periods]; n];
    for j in 0..n {
        mu[j][0] = clamp_unit(rng.uniform());
        v[j][0] = clamp_unit(rng.beta(1.0, 1.0 - rho)?);
        for k in 1..n_periods {
            let step = pbar_step(mu[j][k - 1], &pbar, rng)?;
            mu[j][k] = step.mu_next;
            v[j][k] = clamp_unit(step.v);
        }
        nu[j] = ar1_path(n_periods, beta_ar, sigma1_2, rng)?;
        eta[j] = ar1_path(n_periods, phi_ar, sigma2_2, rng)?;
    }

    Ok(DdpState {
        n_components: n,
        n_periods,
        sticks,
        weights,
        mu,
        v,
        nu,
        eta,
        alpha,
        rho,
        tau: priors.tau,
        sigma2,
        zeta2,
        beta_ar,
        phi_ar,
        sigma1_2,
        sigma2_2,
        allocations: Vec::new(),
        imputed_z: Vec::new(),
    })
}

/// Stationary AR(1) path: x_1 ~ N(0, s²/(1 − c²)), x_k ~ N(c x_{k−1}, s²).
pub fn ar1_path(len: usize, coef: f64, innovation_var: f64, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let sd = innovation_var.sqrt();
    let mut out = Vec::with_capacity(len);
    let mut x = rng.normal(0.0, sd / (1.0 - coef * coef).sqrt())?;
    out.push(x);
    for _ in 1..len {
        x = rng.normal(coef * x, sd)?;
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_uniform;
    use crate::stochastic::quad::integrate;

    #[test]
    fn stick_break_examples() {
        let w = stick_break(&[0.5, 0.5]).unwrap();
        assert_eq!(w, vec![0.5, 0.25, 0.25]);
        let w = stick_break(&[1.0 - 1e-12, 0.3, 0.4]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-11 && w[1..].iter().all(|x| *x < 1e-11));
        assert!(stick_break(&[0.0]).is_err());
        assert!(stick_break(&[1.2]).is_err());
        assert_eq!(stick_break(&[]).unwrap(), vec![1.0]);
    }

    #[test]
    fn truncation_mass_examples() {
        assert!((truncation_mass(1.0, 50).unwrap() - (1.0 - 0.5f64.powi(50))).abs() < 1e-16);
        for &a in &[0.1, 1.0, 7.0] {
            let v = truncation_mass(a, 1).unwrap();
            assert!((v - (1.0 - a / (a + 1.0))).abs() < 1e-15);
            assert!((v - 1.0 / (a + 1.0)).abs() < 1e-15);
        }
        assert!(truncation_mass(0.0, 3).is_err());
    }

    #[test]
    fn expected_truncation_mass_under_gamma_2_1() {
        let v = expected_truncation_mass(50, 2.0, 1.0).unwrap();
        assert!((v - 0.999_957_8).abs() < 1e-6, "{v}");
    }

    fn small_state(n: usize, k: usize, seed: u64) -> DdpState {
        let priors = Priors {
            truncation: n,
            tau: 20.0,
            ..Priors::default()
        };
        sample_prior_state(k, &priors, &mut SeededRng::new(seed, 0)).unwrap()
    }

    #[test]
    fn single_component_reduces_to_kernel_product() {
        let s = small_state(1, 2, 3);
        assert_eq!(s.weights, vec![1.0]);
        let p = MarkPoint { t: 0.4, y: Some(0.2), z: Some(-0.1) };
        let direct = s.kernel(0, 1).logpdf(0.4).unwrap()
            + gauss_logpdf(0.2, s.nu[0][1], s.sigma2)
            + gauss_logpdf(-0.1, s.eta[0][1], s.zeta2);
        assert!((s.mixture_logdensity(&p, 1).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn time_density_integrates_to_one() {
        let mut s = small_state(3, 2, 8);
        s.mu = vec![vec![0.2, 0.3], vec![0.5, 0.6], vec![0.8, 0.7]];
        for k in 0..2 {
            let total = integrate(
                |t| s.mixture_logdensity(&MarkPoint::time(t), k).unwrap().exp(),
                1e-12,
                1.0 - 1e-12,
                1e-11,
            )
            .unwrap();
            assert!((total - 1.0).abs() < 1e-8, "{total}");
        }
    }

    #[test]
    fn joint_density_integrates_to_one() {
        let mut s = small_state(3, 1, 8);
        s.mu = vec![vec![0.25], vec![0.5], vec![0.7]];
        s.sigma2 = 0.3;
        s.zeta2 = 0.5;
        // Uniform-grid rules are spectrally accurate for Gaussians once the
        // spacing is below one standard deviation.
        let grid = |centers: Vec<f64>, var: f64| {
            let sd = var.sqrt();
            let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * sd;
            let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * sd;
            let h = 0.5 * sd;
            let n = ((hi - lo) / h).ceil() as usize;
            ((0..=n).map(|i| lo + i as f64 * h).collect::<Vec<_>>(), h)
        };
        let (ys, hy) = grid(s.nu.iter().map(|r| r[0]).collect(), s.sigma2);
        let (zs, hz) = grid(s.eta.iter().map(|r| r[0]).collect(), s.zeta2);
        let total = integrate(
            |t| {
                let mut acc = 0.0;
                for &y in &ys {
                    for &z in &zs {
                        let p = MarkPoint { t, y: Some(y), z: Some(z) };
                        acc += s.mixture_logdensity(&p, 0).unwrap().exp();
                    }
                }
                acc * hy * hz
            },
            0.0,
            1.0,
            1e-6,
        )
        .unwrap();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn prior_wind_mark_moments_given_beta() {
        // y = ν_{L,k} + ε with ν from the stationary AR(1) and ε ~ N(0, σ²).
        let priors = Priors { truncation: 5, ..Priors::default() };
        let beta = 0.6;
        let mut rng = SeededRng::new(5, 0);
        let n = 200_000;
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let st = sample_prior_state(3, &priors, &mut rng).unwrap();
            let nu = ar1_path(3, beta, st.sigma1_2, &mut rng).unwrap();
            let _ = rng.categorical(&st.weights).unwrap();
            ys.push(rng.normal(nu[2], st.sigma2.sqrt()).unwrap());
        }
        let m = crate::stats::mean(&ys);
        let var = crate::stats::variance(&ys);
        let want = priors.sigma2.mean() + priors.sigma1_2.mean() / (1.0 - beta * beta);
        // IG(3, ·) draws have infinite fourth moments, so the tolerance is loose.
        assert!(m.abs() < 0.02, "{m}");
        assert!((var - want).abs() < 0.05 * want, "{var} vs {want}");
    }

    #[test]
    fn time_marginal_matches_mark_integral() {
        let s = small_state(4, 2, 21);
        // ∫ N(y|ν,σ²) dy = 1 per component, so the time-only density equals
        // the y-marginal of the joint: check via midpoint rule over y.
        let t = 0.37;
        let only = s.mixture_logdensity(&MarkPoint::time(t), 1).unwrap().exp();
        let sd = s.sigma2.sqrt();
        let lo = s.nu.iter().map(|r| r[1]).fold(f64::INFINITY, f64::min) - 12.0 * sd;
        let hi = s.nu.iter().map(|r| r[1]).fold(f64::NEG_INFINITY, f64::max) + 12.0 * sd;
        let joint = integrate(
            |y| s.mixture_logdensity(&MarkPoint { t, y: Some(y), z: None }, 1).unwrap().exp(),
            lo,
            hi,
            1e-12,
        )
        .unwrap();
        assert!((only - joint).abs() < 1e-9 * only.max(1.0));
    }

    #[test]
    fn permutation_invariance() {
        let s = small_state(5, 3, 2);
        let perm = [3, 0, 4, 1, 2];
        let p = s.permute_components(&perm);
        let pt = MarkPoint { t: 0.61, y: Some(0.1), z: Some(0.4) };
        for k in 0..3 {
            let a = s.mixture_logdensity(&pt, k).unwrap();
            let b = p.mixture_logdensity(&pt, k).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_by_exhaustive_summation() {
        let s = small_state(4, 2, 17);
        // θ_k takes value μ_{j,k} with probability w_j jointly across k.
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        let mut e01 = 0.0;
        for j in 0..4 {
            e0 += s.weights[j] * s.mu[j][0];
            e1 += s.weights[j] * s.mu[j][1];
            e01 += s.weights[j] * s.mu[j][0] * s.mu[j][1];
        }
        assert!((s.atom_mean(0) - e0).abs() < 1e-15);
        assert!((s.atom_lag_covariance(0) - (e01 - e0 * e1)).abs() < 1e-15);
    }

    #[test]
    fn prior_time_atoms_are_uniform_at_fixed_period() {
        let priors = Priors { truncation: 2, ..Priors::default() };
        let mut rng = SeededRng::new(77, 0);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| sample_prior_state(4, &priors, &mut rng).unwrap().mu[0][3])
            .collect();
        assert!(ks_uniform(&draws).p_value > 0.01);
    }

    #[test]
    fn prior_state_weights_are_simplex() {
        for seed in 0..20 {
            let s = small_state(10, 3, seed);
            s.validate().unwrap();
        }
    }
}
