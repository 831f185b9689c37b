//! Posterior and predictive functionals of a fitted model.
//!
//! Every function works on a single draw; summaries over draws are built
//! with [`FunctionalEstimate`]. Marks are on the centered log scale unless a
//! function says otherwise.

use serde::{Deserialize, Serialize};

use crate::ddp::DdpState;
use crate::error::{Error, Result};
use crate::gamma_chain::{forecast_path, GammaChainState};
use crate::ingest::{Category, Centering, SeasonWindow};
use crate::sampler::{PosteriorDraws, Snapshot};
use crate::stats::{mean, quantile_sorted};
use crate::stochastic::special::{ln_beta, ln_factorial, norm_cdf};
use crate::stochastic::{clamp_unit, gauss_logpdf, SeededRng};

/// One posterior draw: DDP state and the total intensity of each period.
#[derive(Debug, Clone, Copy)]
pub struct DrawView<'a> {
    pub state: &'a DdpState,
    pub gammas: &'a [f64],
}

impl<'a> From<&'a Snapshot> for DrawView<'a> {
    fn from(s: &'a Snapshot) -> Self {
        Self {
            state: &s.state,
            gammas: &s.period_gammas,
        }
    }
}

impl DrawView<'_> {
    fn check_period(&self, k: usize) -> Result<()> {
        if k >= self.state.n_periods || k >= self.gammas.len() {
            return Err(Error::domain(format!("period {k} out of range")));
        }
        Ok(())
    }
}

fn check_interval(t1: f64, t2: f64) -> Result<()> {
    if !(0.0 <= t1 && t1 < t2 && t2 <= 1.0) {
        return Err(Error::domain(format!("interval ({t1}, {t2}) must satisfy 0 <= t1 < t2 <= 1")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::domain(format!("time {t} outside (0, 1)")));
    }
    Ok(())
}

/// f_k(t), the normalized time density of period `k`.
pub fn time_density(state: &DdpState, k: usize, t: f64) -> Result<f64> {
    check_time(t)?;
    let (lt, l1t) = (t.ln(), (-t).ln_1p());
    let mut f = 0.0;
    for j in 0..state.n_components {
        let kern = state.kernel(j, k);
        f += state.weights[j] * kern.logpdf_with_norm(lt, l1t, kern.ln_norm()).exp();
    }
    Ok(f)
}

/// f_k on every point of `ts`, sharing the per-component normalizers.
pub fn time_density_grid(state: &DdpState, k: usize, ts: &[f64]) -> Result<Vec<f64>> {
    let terms: Vec<(f64, f64, f64)> = (0..state.n_components)
        .filter(|j| state.weights[*j] > 0.0)
        .map(|j| {
            let kern = state.kernel(j, k);
            let (a, b) = kern.shapes();
            (state.weights[j].ln() - kern.ln_norm(), a - 1.0, b - 1.0)
        })
        .collect();
    ts.iter()
        .map(|&t| {
            check_time(t)?;
            let (lt, l1t) = (t.ln(), (-t).ln_1p());
            Ok(terms.iter().map(|(c, a1, b1)| (c + a1 * lt + b1 * l1t).exp()).sum())
        })
        .collect()
}

/// λ_k(t) = γ_k f_k(t).
pub fn intensity(draw: DrawView<'_>, k: usize, t: f64) -> Result<f64> {
    draw.check_period(k)?;
    Ok(draw.gammas[k] * time_density(draw.state, k, t)?)
}

/// Mass of f_k on (t1, t2).
pub fn time_mass(state: &DdpState, k: usize, t1: f64, t2: f64) -> Result<f64> {
    check_interval(t1, t2)?;
    let mut m = 0.0;
    for j in 0..state.n_components {
        m += state.weights[j] * state.kernel(j, k).interval(t1, t2)?;
    }
    Ok(m.clamp(0.0, 1.0))
}

/// Λ_k(t1, t2) = γ_k Σ_j w_j ∫_{t1}^{t2} Beta(t | μ_{j,k} τ, (1 − μ_{j,k}) τ) dt.
pub fn cumulative_intensity(draw: DrawView<'_>, k: usize, t1: f64, t2: f64) -> Result<f64> {
    draw.check_period(k)?;
    Ok(draw.gammas[k] * time_mass(draw.state, k, t1, t2)?)
}

pub fn poisson_pmf(lambda: f64, x: u64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("poisson mean {lambda} must be finite and nonnegative")));
    }
    if lambda == 0.0 {
        return Ok(if x == 0 { 1.0 } else { 0.0 });
    }
    Ok((x as f64 * lambda.ln() - lambda - ln_factorial(x)).exp())
}

/// P(N(t1, t2) = x) in period `k`.
pub fn prob_count(draw: DrawView<'_>, k: usize, t1: f64, t2: f64, x: u64) -> Result<f64> {
    poisson_pmf(cumulative_intensity(draw, k, t1, t2)?, x)
}

/// P(N(t1, t2) ≥ 1) = 1 − exp(−Λ_k(t1, t2)).
pub fn prob_at_least_one(draw: DrawView<'_>, k: usize, t1: f64, t2: f64) -> Result<f64> {
    Ok(-(-cumulative_intensity(draw, k, t1, t2)?).exp_m1())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkTarget {
    Wind,
    Damage,
}

impl MarkTarget {
    pub fn label(self) -> &'static str {
        match self {
            MarkTarget::Wind => "wind",
            MarkTarget::Damage => "damage",
        }
    }

    fn other(self) -> MarkTarget {
        match self {
            MarkTarget::Wind => MarkTarget::Damage,
            MarkTarget::Damage => MarkTarget::Wind,
        }
    }

    fn atoms(self, state: &DdpState, k: usize) -> Vec<f64> {
        let m = match self {
            MarkTarget::Wind => &state.nu,
            MarkTarget::Damage => &state.eta,
        };
        m.iter().map(|row| row[k]).collect()
    }

    fn variance(self, state: &DdpState) -> f64 {
        match self {
            MarkTarget::Wind => state.sigma2,
            MarkTarget::Damage => state.zeta2,
        }
    }

    /// Centered log mark to natural units (mph, or standardized damage).
    pub fn to_natural(self, x: f64, centering: &Centering) -> f64 {
        match self {
            MarkTarget::Wind => centering.wind_to_natural(x),
            MarkTarget::Damage => centering.damage_to_natural(x),
        }
    }

    pub fn to_mark(self, natural: f64, centering: &Centering) -> f64 {
        match self {
            MarkTarget::Wind => centering.wind_to_mark(natural),
            MarkTarget::Damage => centering.damage_to_mark(natural),
        }
    }
}

/// Conditioning of one mark on an interval of the other, on the centered
/// log scale. Infinite endpoints are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkCondition {
    pub on: MarkTarget,
    pub lo: f64,
    pub hi: f64,
}

impl MarkCondition {
    /// Wind inside the band of `category`.
    pub fn category(category: Category, centering: &Centering) -> Self {
        let (lo, hi) = category.wind_band();
        let to = |mph: f64| {
            if mph <= 0.0 {
                f64::NEG_INFINITY
            } else if mph.is_infinite() {
                f64::INFINITY
            } else {
                centering.wind_to_mark(mph)
            }
        };
        Self {
            on: MarkTarget::Wind,
            lo: to(lo),
            hi: to(hi),
        }
    }
}

/// Time conditioning: a single instant (weights w*) or an interval (h*).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeWindow {
    At(f64),
    Between(f64, f64),
}

impl TimeWindow {
    pub fn season() -> Self {
        TimeWindow::Between(0.0, 1.0)
    }
}

fn normalize_log(lw: &[f64]) -> Result<Vec<f64>> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numeric("degenerate time marginal: every component has zero weight"));
    }
    let mut w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= s;
    }
    Ok(w)
}

/// w*_{j,k}(t) ∝ w_j Beta(t | μ_{j,k} τ, (1 − μ_{j,k}) τ).
pub fn time_weights(state: &DdpState, k: usize, t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    let (lt, l1t) = (t.ln(), (-t).ln_1p());
    let lw: Vec<f64> = (0..state.n_components)
        .map(|j| {
            let kern = state.kernel(j, k);
            let (a, b) = kern.shapes();
            state.weights[j].ln() + kern.logpdf_with_norm(lt, l1t, ln_beta(a, b))
        })
        .collect();
    normalize_log(&lw)
}

/// h*_{j,k} ∝ w_j ∫_{t1}^{t2} Beta(t | μ_{j,k} τ, (1 − μ_{j,k}) τ) dt.
pub fn interval_weights(state: &DdpState, k: usize, t1: f64, t2: f64) -> Result<Vec<f64>> {
    check_interval(t1, t2)?;
    let raw: Vec<f64> = (0..state.n_components)
        .map(|j| Ok(state.weights[j] * state.kernel(j, k).interval(t1, t2)?))
        .collect::<Result<_>>()?;
    let s: f64 = raw.iter().sum();
    if !(s > 0.0) {
        // Mass below double precision; fall back to the log kernel at the midpoint.
        return time_weights(state, k, clamp_unit(0.5 * (t1 + t2)));
    }
    Ok(raw.into_iter().map(|w| w / s).collect())
}

pub fn window_weights(state: &DdpState, k: usize, window: TimeWindow) -> Result<Vec<f64>> {
    if k >= state.n_periods {
        return Err(Error::domain(format!("period {k} out of range")));
    }
    match window {
        TimeWindow::At(t) => time_weights(state, k, t),
        TimeWindow::Between(t1, t2) => interval_weights(state, k, t1, t2),
    }
}

/// Gaussian location mixture with a common variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variance: f64,
}

impl MarkMixture {
    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * gauss_logpdf(x, *m, self.variance).exp())
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let sd = self.variance.sqrt();
        let c: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * norm_cdf((x - m) / sd))
            .sum();
        c.clamp(0.0, 1.0)
    }

    /// Bisection on the CDF until |F(x) − q| < 1e-10 (or the bracket
    /// collapses to adjacent doubles).
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::domain(format!("quantile level {q} outside (0, 1)")));
        }
        let sd = self.variance.sqrt();
        let (mut lo, mut hi) = self.means.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
            (lo.min(m), hi.max(m))
        });
        lo -= 40.0 * sd;
        hi += 40.0 * sd;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            let f = self.cdf(mid);
            if (f - q).abs() < 1e-10 || mid <= lo || mid >= hi {
                return Ok(mid);
            }
            if f < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::numeric(format!("mixture quantile at {q} did not converge")))
    }
}

/// Mixture of `target` in period `k` given a time window and, optionally,
/// an interval of the other mark.
pub fn mark_mixture(
    state: &DdpState,
    k: usize,
    window: TimeWindow,
    target: MarkTarget,
    condition: Option<MarkCondition>,
) -> Result<MarkMixture> {
    let mut weights = window_weights(state, k, window)?;
    if let Some(c) = condition {
        if c.on == target {
            return Err(Error::domain("a mark cannot be conditioned on its own interval"));
        }
        if !(c.lo < c.hi) {
            return Err(Error::domain(format!("condition interval ({}, {}) is empty", c.lo, c.hi)));
        }
        let other = target.other();
        let sd = other.variance(state).sqrt();
        for (w, m) in weights.iter_mut().zip(other.atoms(state, k)) {
            *w *= norm_cdf((c.hi - m) / sd) - norm_cdf((c.lo - m) / sd);
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::numeric("conditioning interval has zero probability"));
        }
        for w in weights.iter_mut() {
            *w /= s;
        }
    }
    Ok(MarkMixture {
        weights,
        means: target.atoms(state, k),
        variance: target.variance(state),
    })
}

/// f_k(x | t) on `grid`, with optional cross-mark conditioning.
pub fn conditional_mark_density(
    state: &DdpState,
    k: usize,
    t: f64,
    target: MarkTarget,
    condition: Option<MarkCondition>,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let mix = mark_mixture(state, k, TimeWindow::At(t), target, condition)?;
    Ok(grid.iter().map(|&x| mix.pdf(x)).collect())
}

/// f_k(x | t ∈ (t1, t2)) on `grid`.
pub fn conditional_mark_density_interval(
    state: &DdpState,
    k: usize,
    t1: f64,
    t2: f64,
    target: MarkTarget,
    condition: Option<MarkCondition>,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let mix = mark_mixture(state, k, TimeWindow::Between(t1, t2), target, condition)?;
    Ok(grid.iter().map(|&x| mix.pdf(x)).collect())
}

/// Joint density of (wind, damage) given the time window, on a
/// `wind_grid × damage_grid` lattice (rows follow `wind_grid`).
pub fn joint_mark_density(
    state: &DdpState,
    k: usize,
    window: TimeWindow,
    wind_grid: &[f64],
    damage_grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let w = window_weights(state, k, window)?;
    let nu = MarkTarget::Wind.atoms(state, k);
    let eta = MarkTarget::Damage.atoms(state, k);
    Ok(wind_grid
        .iter()
        .map(|&y| {
            damage_grid
                .iter()
                .map(|&z| {
                    (0..state.n_components)
                        .map(|j| {
                            w[j] * (gauss_logpdf(y, nu[j], state.sigma2) + gauss_logpdf(z, eta[j], state.zeta2)).exp()
                        })
                        .sum()
                })
                .collect()
        })
        .collect())
}

/// Quantile `q` of the conditional mark distribution in natural units.
pub fn conditional_mark_quantile(
    state: &DdpState,
    k: usize,
    window: TimeWindow,
    target: MarkTarget,
    condition: Option<MarkCondition>,
    q: f64,
    centering: &Centering,
) -> Result<f64> {
    let x = mark_mixture(state, k, window, target, condition)?.quantile(q)?;
    Ok(target.to_natural(x, centering))
}

/// One-step-ahead predictive replicate of a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveState {
    /// Single-period state holding μ̃, ν̃, η̃ for the next period.
    pub state: DdpState,
    pub gamma: f64,
}

impl PredictiveState {
    pub fn view(&self) -> DrawView<'_> {
        DrawView {
            state: &self.state,
            gammas: std::slice::from_ref(&self.gamma),
        }
    }
}

/// Draws the next-period atoms of `state` (fresh v and u for the time
/// atoms, AR(1) steps for the marks) and pairs them with `gamma`.
pub fn forecast_atoms(state: &DdpState, gamma: f64, rng: &mut SeededRng) -> Result<PredictiveState> {
    let last = state
        .n_periods
        .checked_sub(1)
        .ok_or_else(|| Error::domain("cannot forecast a state with no periods"))?;
    let n = state.n_components;
    let mut next = state.clone();
    next.n_periods = 1;
    next.allocations = Vec::new();
    next.imputed_z = Vec::new();
    let (s1, s2) = (state.sigma1_2.sqrt(), state.sigma2_2.sqrt());
    let mut mu = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut nu = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    for j in 0..n {
        let vj = rng.beta(1.0, 1.0 - state.rho)?;
        let u = rng.beta(state.rho, 1.0 - state.rho)?;
        mu.push(vec![clamp_unit(vj * u * state.mu[j][last] + 1.0 - vj)]);
        v.push(vec![vj]);
        nu.push(vec![state.beta_ar * state.nu[j][last] + s1 * rng.std_normal()]);
        eta.push(vec![state.phi_ar * state.eta[j][last] + s2 * rng.std_normal()]);
    }
    next.mu = mu;
    next.v = v;
    next.nu = nu;
    next.eta = eta;
    Ok(PredictiveState { state: next, gamma })
}

/// Predictive replicate for the period after the last one: atoms via
/// [`forecast_atoms`], γ summed over `years_per_period` forecast years.
pub fn forecast_next_period(
    state: &DdpState,
    gamma_chain: &GammaChainState,
    years_per_period: usize,
    rng: &mut SeededRng,
) -> Result<PredictiveState> {
    let years = forecast_path(&gamma_chain.filtered, gamma_chain.omega, years_per_period.max(1), rng)?;
    forecast_atoms(state, years.iter().sum(), rng)
}

/// One predictive replicate per posterior draw. Replicate `i` uses stream
/// `stream_base + i` of `seed`, so results do not depend on scheduling.
pub fn forecast_draws(draws: &PosteriorDraws, seed: u64, stream_base: u64) -> Result<Vec<PredictiveState>> {
    use rayon::prelude::*;
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let ypp = draws.layout.years_per_period as usize;
    draws
        .snapshots
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = SeededRng::new(seed, stream_base + i as u64);
            forecast_next_period(&s.state, &draws.gamma_chain, ypp, &mut rng)
        })
        .collect()
}

/// Per-draw values of a scalar functional with their posterior summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl FunctionalEstimate {
    pub fn from_values(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDraws);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("functional produced a non-finite value"));
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            name: name.into(),
            mean: mean(&values),
            median: quantile_sorted(&sorted, 0.5),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
            values,
        })
    }
}

pub const MONTH_NAMES: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

/// Unit-season windows of the calendar months that intersect the season.
pub fn month_windows(season: &SeasonWindow) -> Vec<(u32, f64, f64)> {
    (1..=12)
        .filter_map(|m| season.month_window(m).ok().map(|(a, b)| (m, a, b)))
        .collect()
}

/// Evenly spaced grid of `n` points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("grid needs n >= 2 and finite lo < hi, got n={n}, ({lo}, {hi})")));
    }
    let h = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| if i + 1 == n { hi } else { lo + h * i as f64 }).collect())
}

/// Default density grid: data range widened by four posterior-mean kernel
/// standard deviations on each side.
pub fn default_mark_grid(draws: &PosteriorDraws, data: &[f64], target: MarkTarget, n: usize) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let var: Vec<f64> = draws.snapshots.iter().map(|s| target.variance(&s.state)).collect();
    let sd = mean(&var).sqrt();
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
    linear_grid(lo - 4.0 * sd, hi + 4.0 * sd, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::quad::integrate;

    pub(crate) fn toy_state(n: usize, k: usize) -> DdpState {
        let mut rng = SeededRng::new(11, 0);
        let mut s = crate::ddp::sample_prior_state(k, &crate::ddp::Priors { truncation: n, ..Default::default() }, &mut rng)
            .unwrap();
        for j in 0..n {
            for kk in 0..k {
                s.mu[j][kk] = 0.15 + 0.7 * ((j * 7 + kk * 3) % 10) as f64 / 10.0;
            }
        }
        s
    }

    #[test]
    fn intensity_integrates_to_gamma() {
        let s = toy_state(3, 2);
        let g = [4.0, 7.5];
        let d = DrawView { state: &s, gammas: &g };
        let total = integrate(|t| intensity(d, 1, t).unwrap(), 1e-9, 1.0 - 1e-9, 1e-10).unwrap();
        assert!((total - 7.5).abs() < 1e-6, "{total}");
        assert_eq!(cumulative_intensity(d, 1, 0.0, 1.0).unwrap(), 7.5);
        let z = [0.0, 0.0];
        let d0 = DrawView { state: &s, gammas: &z };
        assert_eq!(intensity(d0, 0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn density_grid_matches_pointwise() {
        let mut s = toy_state(5, 2);
        s.weights[2] = 0.0;
        let ts = [0.01, 0.3, 0.5, 0.77, 0.999];
        let grid = time_density_grid(&s, 1, &ts).unwrap();
        for (t, g) in ts.iter().zip(&grid) {
            let f = time_density(&s, 1, *t).unwrap();
            assert!((f - g).abs() <= 1e-12 * f.max(1.0), "{f} vs {g}");
        }
        assert!(time_density_grid(&s, 0, &[0.0]).is_err());
    }

    #[test]
    fn additivity_of_cumulative_intensity() {
        let s = toy_state(4, 1);
        let g = [9.0];
        let d = DrawView { state: &s, gammas: &g };
        for (a, b, c) in [(0.0, 0.3, 0.8), (0.1, 0.5, 1.0), (0.45, 0.5, 0.55)] {
            let lhs = cumulative_intensity(d, 0, a, b).unwrap() + cumulative_intensity(d, 0, b, c).unwrap();
            let rhs = cumulative_intensity(d, 0, a, c).unwrap();
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn poisson_probabilities() {
        assert_eq!(-(-0.0f64).exp_m1(), 0.0);
        assert!((-(-(2.0f64).ln()).exp_m1() - 0.5).abs() < 1e-15);
        let total: f64 = (0..200).map(|x| poisson_pmf(12.3, x).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_component_mark_density_ignores_time() {
        let mut s = toy_state(1, 1);
        s.nu[0][0] = 0.3;
        s.sigma2 = 0.04;
        let grid = [-0.1, 0.3, 0.5];
        for t in [0.1, 0.5, 0.9] {
            let f = conditional_mark_density(&s, 0, t, MarkTarget::Wind, None, &grid).unwrap();
            for (x, fx) in grid.iter().zip(f) {
                assert!((fx - gauss_logpdf(*x, 0.3, 0.04).exp()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quantile_inversion() {
        let mix = MarkMixture {
            weights: vec![0.5, 0.5],
            means: vec![-0.7, 0.7],
            variance: 0.09,
        };
        assert!(mix.quantile(0.5).unwrap().abs() < 1e-9);
        for q in [1e-6, 0.01, 0.3, 0.77, 0.999] {
            let x = mix.quantile(q).unwrap();
            assert!((mix.cdf(x) - q).abs() < 1e-10);
        }
        let single = MarkMixture {
            weights: vec![1.0],
            means: vec![0.2],
            variance: 0.25,
        };
        let x = single.quantile(0.9).unwrap();
        assert!((x - (0.2 + 0.5 * crate::stochastic::special::norm_quantile(0.9))).abs() < 1e-9);
    }

    #[test]
    fn forecast_persistence_and_ar_null() {
        let mut s = toy_state(3, 2);
        s.rho = 1.0 - 1e-12;
        s.beta_ar = 0.0;
        s.sigma1_2 = 0.5;
        let mut rng = SeededRng::new(4, 0);
        let mut draws = Vec::new();
        for _ in 0..20_000 {
            let p = forecast_atoms(&s, 1.0, &mut rng).unwrap();
            for j in 0..3 {
                // Beta(1, 1e-12) puts v at 1 up to rounding, so μ̃ ≈ μ_K u with u ≈ 1.
                assert!((p.state.mu[j][0] - s.mu[j][1]).abs() < 1e-6);
            }
            draws.push(p.state.nu[0][0]);
        }
        let m = mean(&draws);
        let v = crate::stats::variance(&draws);
        assert!(m.abs() < 4.0 * (0.5f64 / 20_000.0).sqrt());
        assert!((v - 0.5).abs() < 0.03);
    }
}
