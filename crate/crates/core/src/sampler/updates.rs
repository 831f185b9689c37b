//! Individual Gibbs and Metropolis–Hastings updates of the blocked sampler.

use crate::ddp::{ar1_path, DdpState, ModelKind, Priors};
use crate::error::{Error, Result};
use crate::stochastic::special::ln_beta;
use crate::stochastic::{clamp_unit, gauss_logpdf, SeededRng, LN_2PI, UNIT_EPS};

/// One observation with its log-time terms precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obs {
    pub t: f64,
    pub ln_t: f64,
    pub ln_1mt: f64,
    pub y: f64,
    pub z: Option<f64>,
}

/// Sampler view of a corpus: observations per period.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerData {
    pub periods: Vec<Vec<Obs>>,
    pub model: ModelKind,
}

impl SamplerData {
    pub fn from_corpus(corpus: &crate::ingest::Corpus, model: ModelKind) -> Result<Self> {
        let periods = corpus
            .patterns
            .iter()
            .map(|p| {
                if p.times.len() != p.wind_marks.len() || p.times.len() != p.damage_marks.len() {
                    return Err(Error::domain(format!("period {} has mismatched mark lengths", p.period_index)));
                }
                p.times
                    .iter()
                    .zip(&p.wind_marks)
                    .zip(&p.damage_marks)
                    .map(|((&t, &y), &z)| {
                        if !(t > 0.0 && t < 1.0) {
                            return Err(Error::domain(format!("time {t} outside (0, 1)")));
                        }
                        Ok(Obs {
                            t,
                            ln_t: t.ln(),
                            ln_1mt: (-t).ln_1p(),
                            y,
                            z,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { periods, model })
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }
}

/// Accepted / proposed counts of one MH family.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Acceptance {
    pub proposed: u64,
    pub accepted: u64,
}

impl Acceptance {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AcceptanceLedger {
    pub time_atoms: Acceptance,
    /// Joint (v, μ) moves of active components.
    #[serde(default)]
    pub time_blocks: Acceptance,
    /// Period-wise atom swaps between components.
    #[serde(default)]
    pub period_swaps: Acceptance,
    pub latent_v: Acceptance,
    pub rho: Acceptance,
    pub beta_ar: Acceptance,
    pub phi_ar: Acceptance,
}

fn accept(log_ratio: f64, rng: &mut SeededRng) -> bool {
    log_ratio >= 0.0 || rng.uniform().ln() < log_ratio
}

/// Effective damage mark of observation `i` in period `k`: observed or imputed.
fn damage_of(state: &DdpState, obs: &Obs, k: usize, i: usize) -> f64 {
    match obs.z {
        Some(z) => z,
        None => state
            .imputed_z
            .get(k)
            .and_then(|row| row.get(i).copied().flatten())
            .unwrap_or(0.0),
    }
}

/// Unnormalized log allocation probabilities of observation `i` in period `k`.
pub fn allocation_logweights(state: &DdpState, data: &SamplerData, k: usize, i: usize, ln_norms: &[f64], out: &mut Vec<f64>) {
    let obs = &data.periods[k][i];
    let z = damage_of(state, obs, k, i);
    out.clear();
    for j in 0..state.n_components {
        let w = state.weights[j];
        if w <= 0.0 {
            out.push(f64::NEG_INFINITY);
            continue;
        }
        let kern = state.kernel(j, k);
        let mut lp = w.ln() + kern.logpdf_with_norm(obs.ln_t, obs.ln_1mt, ln_norms[j]);
        if data.model.has_wind() {
            lp += gauss_logpdf(obs.y, state.nu[j][k], state.sigma2);
        }
        if data.model.has_damage() {
            lp += gauss_logpdf(z, state.eta[j][k], state.zeta2);
        }
        out.push(lp);
    }
}

/// Per-component terms of [`allocation_logweights`] that do not depend on
/// the observation.
struct PeriodTerms {
    constant: Vec<f64>,
    a1: Vec<f64>,
    b1: Vec<f64>,
    nu: Vec<f64>,
    eta: Vec<f64>,
    /// 1 / (2σ²) and 1 / (2ζ²), zero for marks outside the model.
    h_y: f64,
    h_z: f64,
}

impl PeriodTerms {
    fn new(state: &DdpState, data: &SamplerData, k: usize) -> Self {
        let n = state.n_components;
        let mut t = Self {
            h_y: if data.model.has_wind() { 0.5 / state.sigma2 } else { 0.0 },
            h_z: if data.model.has_damage() { 0.5 / state.zeta2 } else { 0.0 },
            constant: Vec::with_capacity(n),
            a1: Vec::with_capacity(n),
            b1: Vec::with_capacity(n),
            nu: Vec::with_capacity(n),
            eta: Vec::with_capacity(n),
        };
        let mut shared = 0.0;
        if data.model.has_wind() {
            shared -= 0.5 * (LN_2PI + state.sigma2.ln());
        }
        if data.model.has_damage() {
            shared -= 0.5 * (LN_2PI + state.zeta2.ln());
        }
        for j in 0..n {
            let (a, b) = state.kernel(j, k).shapes();
            let w = state.weights[j];
            t.constant.push(if w > 0.0 { w.ln() - ln_beta(a, b) + shared } else { f64::NEG_INFINITY });
            t.a1.push(a - 1.0);
            t.b1.push(b - 1.0);
            t.nu.push(state.nu[j][k]);
            t.eta.push(state.eta[j][k]);
        }
        t
    }

    fn logweights(&self, obs: &Obs, z: f64, out: &mut Vec<f64>) {
        out.clear();
        for j in 0..self.constant.len() {
            out.push(
                self.constant[j] + self.a1[j] * obs.ln_t + self.b1[j] * obs.ln_1mt
                    - self.h_y * (obs.y - self.nu[j]).powi(2)
                    - self.h_z * (z - self.eta[j]).powi(2),
            );
        }
    }
}

pub fn update_allocations(state: &mut DdpState, data: &SamplerData, rng: &mut SeededRng) -> Result<()> {
    let mut lw = Vec::with_capacity(state.n_components);
    let mut scratch = Vec::with_capacity(state.n_components);
    state.allocations.resize(data.n_periods(), Vec::new());
    for k in 0..data.n_periods() {
        let t = PeriodTerms::new(state, data, k);
        let n = data.periods[k].len();
        state.allocations[k].resize(n, 0);
        for i in 0..n {
            t.logweights(&data.periods[k][i], damage_of(state, &data.periods[k][i], k, i), &mut lw);
            state.allocations[k][i] = rng.categorical_log(&lw, &mut scratch)?;
        }
    }
    Ok(())
}

/// (shape, rate) of the Gamma full conditional of α given stick complements.
pub fn alpha_posterior(priors: &Priors, ln_complements: &[f64]) -> (f64, f64) {
    (
        priors.alpha_shape + ln_complements.len() as f64,
        priors.alpha_rate - ln_complements.iter().sum::<f64>(),
    )
}

/// z_j ~ Beta(1 + M_j, α + Σ_{r>j} M_r), then α from its Gamma conditional.
pub fn update_weights_and_alpha(state: &mut DdpState, priors: &Priors, rng: &mut SeededRng) -> Result<()> {
    let counts = state.component_counts();
    let n = state.n_components;
    let mut tail: u64 = counts.iter().map(|&c| c as u64).sum();
    let mut ln_c = Vec::with_capacity(n.saturating_sub(1));
    let mut remaining_ln = 0.0f64;
    for j in 0..n - 1 {
        tail -= counts[j] as u64;
        // Draw 1 − z_j directly so that log(1 − z_j) keeps full precision.
        let c = rng
            .beta(state.alpha + tail as f64, 1.0 + counts[j] as f64)?
            .max(f64::MIN_POSITIVE);
        let z = (1.0 - c).max(f64::MIN_POSITIVE);
        state.sticks[j] = z;
        state.weights[j] = z * remaining_ln.exp();
        remaining_ln += c.ln();
        ln_c.push(c.ln());
    }
    state.weights[n - 1] = remaining_ln.exp();
    let total: f64 = state.weights.iter().sum();
    for w in state.weights.iter_mut() {
        *w /= total;
    }
    let (shape, rate) = alpha_posterior(priors, &ln_c);
    state.alpha = rng.gamma(shape, rate)?;
    Ok(())
}

/// Log density of the stick-breaking weights (w_1, ..., w_{N−1}) given α, up
/// to a constant: (α − 1) ln w_N − Σ_{j=2}^{N−1} ln R_j with R_j = Σ_{l≥j} w_l.
pub fn weights_log_prior(weights: &[f64], alpha: f64) -> f64 {
    let n = weights.len();
    if n < 2 {
        return 0.0;
    }
    let mut lp = (alpha - 1.0) * weights[n - 1].ln();
    let mut tail = weights[n - 1];
    for j in (1..n - 1).rev() {
        tail += weights[j];
        lp -= tail.ln();
    }
    lp
}

/// Sticks z_j = w_j / R_j matching `weights`, computed from tail sums.
fn sticks_from_weights(weights: &[f64]) -> Vec<f64> {
    let n = weights.len();
    let mut tails = vec![0.0; n];
    let mut t = 0.0;
    for j in (0..n).rev() {
        t += weights[j];
        tails[j] = t;
    }
    (0..n - 1)
        .map(|j| if tails[j] > 0.0 { (weights[j] / tails[j]).clamp(f64::MIN_POSITIVE, 1.0) } else { 1.0 })
        .collect()
}

fn swap_components(state: &mut DdpState, lat: &mut PbarLatents, a: usize, b: usize) {
    state.weights.swap(a, b);
    state.mu.swap(a, b);
    state.v.swap(a, b);
    state.nu.swap(a, b);
    state.eta.swap(a, b);
    lat.mu_c.swap(a, b);
    lat.ln_vc.swap(a, b);
    lat.ln_u.swap(a, b);
    lat.ln_uc.swap(a, b);
    for l in state.allocations.iter_mut().flatten() {
        if *l == a {
            *l = b;
        } else if *l == b {
            *l = a;
        }
    }
}

/// Label-swap moves: `n_components` times, pick an occupied component and a
/// uniform partner and propose exchanging their labels together with their
/// weights. The likelihood and atom priors are label-invariant, so the MH
/// ratio is the ratio of [`weights_log_prior`] values.
pub fn update_labels(state: &mut DdpState, lat: &mut PbarLatents, rng: &mut SeededRng) -> Result<()> {
    let n = state.n_components;
    if n < 2 {
        return Ok(());
    }
    let mut counts = state.component_counts();
    let mut occupied: Vec<usize> = (0..n).filter(|j| counts[*j] > 0).collect();
    if occupied.is_empty() {
        return Ok(());
    }
    let mut current = weights_log_prior(&state.weights, state.alpha);
    for _ in 0..n {
        let a = occupied[rng.index(occupied.len())?];
        let mut b = rng.index(n - 1)?;
        if b >= a {
            b += 1;
        }
        state.weights.swap(a, b);
        let proposed = weights_log_prior(&state.weights, state.alpha);
        state.weights.swap(a, b);
        if !(current.is_finite() && proposed.is_finite()) || !accept(proposed - current, rng) {
            continue;
        }
        swap_components(state, lat, a, b);
        counts.swap(a, b);
        current = proposed;
        occupied = (0..n).filter(|j| counts[*j] > 0).collect();
    }
    state.sticks = sticks_from_weights(&state.weights);
    Ok(())
}

/// Per-(j, k) Beta-kernel sufficient statistics: (Σ ln t, Σ ln(1 − t), count).
pub fn time_suff_stats(state: &DdpState, data: &SamplerData) -> Vec<Vec<(f64, f64, usize)>> {
    let mut s = vec![vec![(0.0, 0.0, 0usize); data.n_periods()]; state.n_components];
    for (k, obs) in data.periods.iter().enumerate() {
        for (i, o) in obs.iter().enumerate() {
            let e = &mut s[state.allocations[k][i]][k];
            e.0 += o.ln_t;
            e.1 += o.ln_1mt;
            e.2 += 1;
        }
    }
    s
}

fn kernel_loglik(mu: f64, mu_c: f64, tau: f64, stats: (f64, f64, usize)) -> f64 {
    if stats.2 == 0 {
        return 0.0;
    }
    let (a, b) = (mu.max(UNIT_EPS) * tau, mu_c.max(UNIT_EPS) * tau);
    (a - 1.0) * stats.0 + (b - 1.0) * stats.1 - stats.2 as f64 * ln_beta(a, b)
}

/// PBAR latents kept in a form that stays accurate at the support edges.
///
/// `u` is the Beta(ρ, 1 − ρ) innovation behind μ_{j,k} = v u μ_{j,k−1} + 1 − v.
/// Recovering it from (μ, v) cancels catastrophically when u or 1 − u is tiny,
/// which is exactly where its law puts mass for ρ near 0 or 1, so the sampler
/// carries ln u, ln(1 − u), ln(1 − v) and 1 − μ explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct PbarLatents {
    pub mu_c: Vec<Vec<f64>>,
    pub ln_vc: Vec<Vec<f64>>,
    /// Slot `[j][0]` is unused.
    pub ln_u: Vec<Vec<f64>>,
    pub ln_uc: Vec<Vec<f64>>,
}

/// `(ln u, ln(1 − u))` implied by μ_k given μ_{k−1} and v, or `None` when μ_k
/// falls outside the transition support.
pub fn implied_innovation(mu: f64, mu_c: f64, prev: f64, prev_c: f64, v: f64, vc: f64) -> Option<(f64, f64)> {
    let den = v * prev;
    let lo = mu - vc;
    let hi = mu_c - v * prev_c;
    if !(lo > 0.0 && hi > 0.0 && den > 0.0) {
        return None;
    }
    Some(((lo / den).ln(), (hi / den).ln()))
}

/// Log transition density of μ_k written through its innovation.
pub fn innovation_logpdf(ln_u: f64, ln_uc: f64, v: f64, prev: f64, rho: f64) -> f64 {
    (rho - 1.0) * ln_u - rho * ln_uc - ln_beta(rho, 1.0 - rho) - (v * prev).ln()
}

/// Log Beta(1, 1 − ρ) density of v through ln(1 − v).
pub fn latent_v_prior_logpdf(ln_vc: f64, rho: f64) -> f64 {
    (1.0 - rho).ln() - rho * ln_vc
}

impl PbarLatents {
    /// Derives the latents from a state. Accuracy is limited to what (μ, v)
    /// resolve; the sampler refreshes them exactly as it goes.
    pub fn from_state(state: &DdpState) -> Result<Self> {
        let (n, kk) = (state.n_components, state.n_periods);
        let mu_c: Vec<Vec<f64>> = state.mu.iter().map(|r| r.iter().map(|m| 1.0 - m).collect()).collect();
        let ln_vc: Vec<Vec<f64>> = state.v.iter().map(|r| r.iter().map(|v| (-v).ln_1p()).collect()).collect();
        let mut ln_u = vec![vec![0.0; kk]; n];
        let mut ln_uc = vec![vec![0.0; kk]; n];
        for j in 0..n {
            for k in 1..kk {
                let (v, vc) = (state.v[j][k], ln_vc[j][k].exp());
                let (a, b) = implied_innovation(state.mu[j][k], mu_c[j][k], state.mu[j][k - 1], mu_c[j][k - 1], v, vc)
                    .ok_or_else(|| {
                        Error::domain(format!("time atom ({j}, {k}) lies outside its transition support"))
                    })?;
                ln_u[j][k] = a;
                ln_uc[j][k] = b;
            }
        }
        Ok(Self { mu_c, ln_vc, ln_u, ln_uc })
    }

    fn transition(&self, state: &DdpState, j: usize, k: usize, rho: f64) -> f64 {
        innovation_logpdf(self.ln_u[j][k], self.ln_uc[j][k], state.v[j][k], state.mu[j][k - 1], rho)
    }
}

/// A candidate value of μ_{j,k} with its complement and, for k ≥ 1, its
/// innovation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomCandidate {
    pub mu: f64,
    pub mu_c: f64,
    pub ln_u: f64,
    pub ln_uc: f64,
}

/// Draws μ_{j,k} from its prior: uniform at k = 0, the PBAR transition after.
pub fn draw_atom_candidate(state: &DdpState, lat: &PbarLatents, j: usize, k: usize, rng: &mut SeededRng) -> Result<AtomCandidate> {
    if k == 0 {
        let m = rng.uniform();
        return Ok(AtomCandidate { mu: m, mu_c: 1.0 - m, ln_u: 0.0, ln_uc: 0.0 });
    }
    let rho = state.rho;
    let (ln_u, ln_uc) = rng.ln_beta_pair(rho, 1.0 - rho)?;
    let (u, uc) = (ln_u.exp(), ln_uc.exp());
    let (v, vc) = (state.v[j][k], lat.ln_vc[j][k].exp());
    let (prev, prev_c) = (state.mu[j][k - 1], lat.mu_c[j][k - 1]);
    Ok(AtomCandidate {
        mu: vc + v * u * prev,
        mu_c: v * (uc + u * prev_c),
        ln_u,
        ln_uc,
    })
}

fn outgoing(state: &DdpState, lat: &PbarLatents, j: usize, k: usize, mu: f64, mu_c: f64) -> Option<(f64, f64)> {
    implied_innovation(
        state.mu[j][k + 1],
        lat.mu_c[j][k + 1],
        mu,
        mu_c,
        state.v[j][k + 1],
        lat.ln_vc[j][k + 1].exp(),
    )
}

/// Log full-conditional target of μ_{j,k} up to a constant: allocated-data
/// likelihood plus the PBAR transitions into and out of period `k`.
pub fn time_atom_log_target(
    state: &DdpState,
    lat: &PbarLatents,
    stats: &[Vec<(f64, f64, usize)>],
    j: usize,
    k: usize,
    mu: f64,
    mu_c: f64,
) -> f64 {
    let rho = state.rho;
    let mut lp = kernel_loglik(mu, mu_c, state.tau, stats[j][k]);
    if k > 0 {
        let v = state.v[j][k];
        let (prev, prev_c) = (state.mu[j][k - 1], lat.mu_c[j][k - 1]);
        match implied_innovation(mu, mu_c, prev, prev_c, v, lat.ln_vc[j][k].exp()) {
            Some((a, b)) => lp += innovation_logpdf(a, b, v, prev, rho),
            None => return f64::NEG_INFINITY,
        }
    }
    if k + 1 < state.n_periods {
        match outgoing(state, lat, j, k, mu, mu_c) {
            Some((a, b)) => lp += innovation_logpdf(a, b, state.v[j][k + 1], mu, rho),
            None => return f64::NEG_INFINITY,
        }
    }
    lp
}

/// MH log ratio for moving μ_{j,k} to a candidate drawn from the prior
/// transition: likelihood ratio times the forward-transition ratio.
pub fn time_atom_log_ratio(
    state: &DdpState,
    lat: &PbarLatents,
    stats: &[Vec<(f64, f64, usize)>],
    j: usize,
    k: usize,
    cand: &AtomCandidate,
) -> f64 {
    let s = stats[j][k];
    let mut r = kernel_loglik(cand.mu, cand.mu_c, state.tau, s) - kernel_loglik(state.mu[j][k], lat.mu_c[j][k], state.tau, s);
    if k + 1 < state.n_periods {
        match outgoing(state, lat, j, k, cand.mu, cand.mu_c) {
            Some((a, b)) => {
                r += innovation_logpdf(a, b, state.v[j][k + 1], cand.mu, state.rho) - lat.transition(state, j, k + 1, state.rho)
            }
            None => return f64::NEG_INFINITY,
        }
    }
    r
}

fn set_atom(state: &mut DdpState, lat: &mut PbarLatents, j: usize, k: usize, cand: &AtomCandidate, refresh_next: bool) {
    state.mu[j][k] = clamp_unit(cand.mu);
    lat.mu_c[j][k] = cand.mu_c;
    lat.ln_u[j][k] = cand.ln_u;
    lat.ln_uc[j][k] = cand.ln_uc;
    if refresh_next && k + 1 < state.n_periods {
        if let Some((a, b)) = outgoing(state, lat, j, k, cand.mu, cand.mu_c) {
            lat.ln_u[j][k + 1] = a;
            lat.ln_uc[j][k + 1] = b;
        }
    }
}

pub fn update_time_atoms(
    state: &mut DdpState,
    lat: &mut PbarLatents,
    data: &SamplerData,
    rng: &mut SeededRng,
    ledger: &mut AcceptanceLedger,
) -> Result<()> {
    let stats = time_suff_stats(state, data);
    for j in 0..state.n_components {
        let active = stats[j].iter().any(|s| s.2 > 0);
        for k in 0..state.n_periods {
            if !active {
                // No data: the whole (v, μ) path has its prior as full
                // conditional, so draw it forward exactly.
                let (v, ln_vc) = draw_latent_v(state.rho, rng)?;
                state.v[j][k] = v;
                lat.ln_vc[j][k] = ln_vc;
                let cand = draw_atom_candidate(state, lat, j, k, rng)?;
                set_atom(state, lat, j, k, &cand, false);
                continue;
            }
            let cand = draw_atom_candidate(state, lat, j, k, rng)?;
            let ok = accept(time_atom_log_ratio(state, lat, &stats, j, k, &cand), rng);
            ledger.time_atoms.record(ok);
            if ok {
                set_atom(state, lat, j, k, &cand, true);
            }
            if k == 0 {
                continue;
            }
            // The support of μ_{j,k} is pinned by v_{j,k}; redrawing both from
            // the prior transition lets the atom reach the whole interval.
            // The ratio does not involve v_{j,k}, so it is the same as above.
            let (v_old, ln_vc_old) = (state.v[j][k], lat.ln_vc[j][k]);
            let (v, ln_vc) = draw_latent_v(state.rho, rng)?;
            state.v[j][k] = v;
            lat.ln_vc[j][k] = ln_vc;
            let cand = draw_atom_candidate(state, lat, j, k, rng)?;
            let ok = accept(time_atom_log_ratio(state, lat, &stats, j, k, &cand), rng);
            ledger.time_blocks.record(ok);
            if ok {
                set_atom(state, lat, j, k, &cand, true);
            } else {
                state.v[j][k] = v_old;
                lat.ln_vc[j][k] = ln_vc_old;
            }
        }
    }
    Ok(())
}

/// Log PBAR density of one component's path: Uniform(0, 1) start, then the
/// transition and Beta(1, 1 − ρ) terms. `None` when a step leaves its support.
fn pbar_path_logpdf(mu: &[f64], mu_c: &[f64], v: &[f64], ln_vc: &[f64], rho: f64) -> Option<f64> {
    let mut lp = 0.0;
    for k in 1..mu.len() {
        let (a, b) = implied_innovation(mu[k], mu_c[k], mu[k - 1], mu_c[k - 1], v[k], ln_vc[k].exp())?;
        lp += innovation_logpdf(a, b, v[k], mu[k - 1], rho) + latent_v_prior_logpdf(ln_vc[k], rho);
    }
    Some(lp)
}

/// Log density of a stationary AR(1) path.
fn ar_path_logpdf(path: &[f64], coef: f64, innovation_var: f64) -> f64 {
    let mut lp = gauss_logpdf(path[0], 0.0, innovation_var / (1.0 - coef * coef));
    for k in 1..path.len() {
        lp += gauss_logpdf(path[k], coef * path[k - 1], innovation_var);
    }
    lp
}

/// v proposed through its innovation: u ~ Beta(ρ, 1 − ρ) and
/// v = (1 − μ_k) / (1 − u μ_{k−1}). Returns (v, ln(1 − v)), or `None` when
/// v would reach 1.
fn draw_v_via_innovation(mu_c: f64, prev_c: f64, rho: f64, rng: &mut SeededRng) -> Result<Option<(f64, f64)>> {
    let (ln_u, ln_uc) = rng.ln_beta_pair(rho, 1.0 - rho)?;
    let (u, uc) = (ln_u.exp(), ln_uc.exp());
    // 1 − u μ_{k−1} = (1 − u) + u (1 − μ_{k−1})
    let d = uc + u * prev_c;
    let vc = (d - mu_c) / d;
    if !(vc > 0.0) {
        return Ok(None);
    }
    Ok(Some((mu_c / d, vc.ln())))
}

/// Log density of [`draw_v_via_innovation`] at v: Beta(u; ρ, 1 − ρ) times
/// du/dv = (1 − μ_k) / (v² μ_{k−1}).
fn v_innovation_log_q(mu: f64, mu_c: f64, prev: f64, prev_c: f64, v: f64, ln_vc: f64, rho: f64) -> Option<f64> {
    let (ln_u, ln_uc) = implied_innovation(mu, mu_c, prev, prev_c, v, ln_vc.exp())?;
    Some((rho - 1.0) * ln_u - rho * ln_uc - ln_beta(rho, 1.0 - rho) + mu_c.ln() - 2.0 * v.ln() - prev.ln())
}

struct PathRows {
    mu: Vec<f64>,
    mu_c: Vec<f64>,
    v: Vec<f64>,
    ln_vc: Vec<f64>,
    nu: Vec<f64>,
    eta: Vec<f64>,
}

impl PathRows {
    fn of(state: &DdpState, lat: &PbarLatents, j: usize) -> Self {
        Self {
            mu: state.mu[j].clone(),
            mu_c: lat.mu_c[j].clone(),
            v: state.v[j].clone(),
            ln_vc: lat.ln_vc[j].clone(),
            nu: state.nu[j].clone(),
            eta: state.eta[j].clone(),
        }
    }

    fn log_prior(&self, state: &DdpState) -> Option<f64> {
        Some(
            pbar_path_logpdf(&self.mu, &self.mu_c, &self.v, &self.ln_vc, state.rho)?
                + ar_path_logpdf(&self.nu, state.beta_ar, state.sigma1_2)
                + ar_path_logpdf(&self.eta, state.phi_ar, state.sigma2_2),
        )
    }

    /// Redraws v at `k` (k ≥ 1) and `k + 1` through their innovations,
    /// returning the log proposal density of the new values (`None` when a
    /// draw falls outside the support).
    fn redraw_v(&mut self, k: usize, rho: f64, rng: &mut SeededRng) -> Result<Option<f64>> {
        for i in [k, k + 1] {
            if i >= 1 && i < self.mu.len() {
                let Some((v, ln_vc)) = draw_v_via_innovation(self.mu_c[i], self.mu_c[i - 1], rho, rng)? else {
                    return Ok(None);
                };
                self.v[i] = v;
                self.ln_vc[i] = ln_vc;
            }
        }
        Ok(self.v_log_q(k, rho))
    }

    /// Log proposal density of the current v at `k` and `k + 1`.
    fn v_log_q(&self, k: usize, rho: f64) -> Option<f64> {
        let mut lq = 0.0;
        for i in [k, k + 1] {
            if i >= 1 && i < self.mu.len() {
                lq += v_innovation_log_q(self.mu[i], self.mu_c[i], self.mu[i - 1], self.mu_c[i - 1], self.v[i], self.ln_vc[i], rho)?;
            }
        }
        Some(lq)
    }

    fn store(self, state: &mut DdpState, lat: &mut PbarLatents, j: usize) {
        for k in 1..self.mu.len() {
            if let Some((a, b)) =
                implied_innovation(self.mu[k], self.mu_c[k], self.mu[k - 1], self.mu_c[k - 1], self.v[k], self.ln_vc[k].exp())
            {
                lat.ln_u[j][k] = a;
                lat.ln_uc[j][k] = b;
            }
        }
        state.mu[j] = self.mu;
        lat.mu_c[j] = self.mu_c;
        state.v[j] = self.v;
        lat.ln_vc[j] = self.ln_vc;
        state.nu[j] = self.nu;
        state.eta[j] = self.eta;
    }
}

/// Period-wise swaps: for each period, propose exchanging the period-k
/// atoms (μ, ν, η) of a component holding data there with those of a
/// uniform partner, moving the period's allocations along. The v at k and
/// k + 1 are redrawn through their innovations. Kernel
/// likelihoods cancel; the ratio carries the path priors, the allocation
/// weights and the proposal densities of v.
pub fn update_period_swaps(
    state: &mut DdpState,
    lat: &mut PbarLatents,
    rng: &mut SeededRng,
    ledger: &mut AcceptanceLedger,
) -> Result<()> {
    let n = state.n_components;
    if n < 2 {
        return Ok(());
    }
    for k in 0..state.n_periods {
        let mut counts = vec![0usize; n];
        for &l in &state.allocations[k] {
            counts[l] += 1;
        }
        let tries = counts.iter().filter(|c| **c > 0).count();
        for _ in 0..tries {
            let holding: Vec<usize> = (0..n).filter(|j| counts[*j] > 0).collect();
            let a = holding[rng.index(holding.len())?];
            let mut b = rng.index(n - 1)?;
            if b >= a {
                b += 1;
            }
            let (old_a, old_b) = (PathRows::of(state, lat, a), PathRows::of(state, lat, b));
            let (mut new_a, mut new_b) = (PathRows::of(state, lat, a), PathRows::of(state, lat, b));
            std::mem::swap(&mut new_a.mu[k], &mut new_b.mu[k]);
            std::mem::swap(&mut new_a.mu_c[k], &mut new_b.mu_c[k]);
            std::mem::swap(&mut new_a.nu[k], &mut new_b.nu[k]);
            std::mem::swap(&mut new_a.eta[k], &mut new_b.eta[k]);
            let rho = state.rho;
            let (Some(qn_a), Some(qn_b)) = (new_a.redraw_v(k, rho, rng)?, new_b.redraw_v(k, rho, rng)?) else {
                ledger.period_swaps.record(false);
                continue;
            };
            let (Some(pa), Some(pb), Some(qa), Some(qb), Some(qo_a), Some(qo_b)) = (
                new_a.log_prior(state),
                new_b.log_prior(state),
                old_a.log_prior(state),
                old_b.log_prior(state),
                old_a.v_log_q(k, rho),
                old_b.v_log_q(k, rho),
            ) else {
                ledger.period_swaps.record(false);
                continue;
            };
            let (lq_new, lq_old) = (qn_a + qn_b, qo_a + qo_b);
            let (na, nb) = (counts[a] as f64, counts[b] as f64);
            let alloc = (nb - na) * state.weights[a].ln() + (na - nb) * state.weights[b].ln();
            let r = pa + pb - qa - qb + alloc + lq_old - lq_new;
            let ok = r.is_finite() && accept(r, rng);
            ledger.period_swaps.record(ok);
            if !ok {
                continue;
            }
            new_a.store(state, lat, a);
            new_b.store(state, lat, b);
            for l in state.allocations[k].iter_mut() {
                if *l == a {
                    *l = b;
                } else if *l == b {
                    *l = a;
                }
            }
            counts.swap(a, b);
        }
    }
    Ok(())
}

/// Redraws every (v, μ) path of `state` from its prior given ρ and returns
/// the matching latents.
pub fn draw_pbar_paths(state: &mut DdpState, rng: &mut SeededRng) -> Result<PbarLatents> {
    let (n, kk) = (state.n_components, state.n_periods);
    let mut lat = PbarLatents {
        mu_c: vec![vec![0.5; kk]; n],
        ln_vc: vec![vec![0.0; kk]; n],
        ln_u: vec![vec![0.0; kk]; n],
        ln_uc: vec![vec![0.0; kk]; n],
    };
    for j in 0..n {
        for k in 0..kk {
            let (v, ln_vc) = draw_latent_v(state.rho, rng)?;
            state.v[j][k] = v;
            lat.ln_vc[j][k] = ln_vc;
            let cand = draw_atom_candidate(state, &lat, j, k, rng)?;
            set_atom(state, &mut lat, j, k, &cand, false);
        }
    }
    Ok(lat)
}

/// Log full-conditional target of v_{j,k} (k ≥ 1) up to a constant, given
/// through (v, ln(1 − v)).
pub fn latent_v_log_target(state: &DdpState, lat: &PbarLatents, j: usize, k: usize, v: f64, ln_vc: f64) -> f64 {
    let (prev, prev_c) = (state.mu[j][k - 1], lat.mu_c[j][k - 1]);
    match implied_innovation(state.mu[j][k], lat.mu_c[j][k], prev, prev_c, v, ln_vc.exp()) {
        Some((a, b)) => innovation_logpdf(a, b, v, prev, state.rho) + latent_v_prior_logpdf(ln_vc, state.rho),
        None => f64::NEG_INFINITY,
    }
}

fn draw_latent_v(rho: f64, rng: &mut SeededRng) -> Result<(f64, f64)> {
    let (ln_v, ln_vc) = rng.ln_beta_pair(1.0, 1.0 - rho)?;
    Ok((ln_v.exp(), ln_vc))
}

/// Independence MH with a Beta(1, 1 − ρ) proposal for every v_{j,k}, k ≥ 1.
/// The unused v_{j,0} is redrawn from its prior.
pub fn update_latents_v(state: &mut DdpState, lat: &mut PbarLatents, rng: &mut SeededRng, ledger: &mut AcceptanceLedger) -> Result<()> {
    let rho = state.rho;
    for j in 0..state.n_components {
        let (v0, l0) = draw_latent_v(rho, rng)?;
        state.v[j][0] = v0;
        lat.ln_vc[j][0] = l0;
        for k in 1..state.n_periods {
            let (v, ln_vc) = draw_latent_v(rho, rng)?;
            let (prev, prev_c) = (state.mu[j][k - 1], lat.mu_c[j][k - 1]);
            let Some((a, b)) = implied_innovation(state.mu[j][k], lat.mu_c[j][k], prev, prev_c, v, ln_vc.exp()) else {
                ledger.latent_v.record(false);
                continue;
            };
            let r = innovation_logpdf(a, b, v, prev, rho) - lat.transition(state, j, k, rho);
            let ok = accept(r, rng);
            ledger.latent_v.record(ok);
            if ok {
                state.v[j][k] = v;
                lat.ln_vc[j][k] = ln_vc;
                lat.ln_u[j][k] = a;
                lat.ln_uc[j][k] = b;
            }
        }
    }
    Ok(())
}

/// log target of ρ (Uniform prior) from the k ≥ 1 transition and latent terms.
pub fn rho_log_target(state: &DdpState, lat: &PbarLatents, rho: f64) -> f64 {
    rho_log_target_over(state, lat, rho, &vec![true; state.n_components])
}

/// [`rho_log_target`] restricted to the components flagged in `include`.
pub fn rho_log_target_over(state: &DdpState, lat: &PbarLatents, rho: f64, include: &[bool]) -> f64 {
    if !(rho > 0.0 && rho < 1.0) {
        return f64::NEG_INFINITY;
    }
    let mut lp = 0.0;
    for j in (0..state.n_components).filter(|j| include[*j]) {
        for k in 1..state.n_periods {
            lp += lat.transition(state, j, k, rho) + latent_v_prior_logpdf(lat.ln_vc[j][k], rho);
        }
    }
    lp
}

/// Random-walk MH on logit(ρ) with step `step`; returns whether it moved.
///
/// Components without allocated data move with ρ: their (v, μ) paths are
/// redrawn from the prior under the proposal, so only the data-carrying
/// paths enter the acceptance ratio.
pub fn update_rho(
    state: &mut DdpState,
    lat: &mut PbarLatents,
    step: f64,
    rng: &mut SeededRng,
    ledger: &mut AcceptanceLedger,
) -> Result<bool> {
    let active: Vec<bool> = state.component_counts().iter().map(|c| *c > 0).collect();
    let cur = state.rho;
    let logit = (cur / (1.0 - cur)).ln() + step * rng.std_normal();
    let prop = 1.0 / (1.0 + (-logit).exp());
    let jac = |r: f64| r.ln() + (1.0 - r).ln();
    let r = rho_log_target_over(state, lat, prop, &active) + jac(prop) - rho_log_target_over(state, lat, cur, &active) - jac(cur);
    let ok = accept(r, rng);
    ledger.rho.record(ok);
    if ok {
        state.rho = prop;
        for j in (0..state.n_components).filter(|j| !active[*j]) {
            for k in 0..state.n_periods {
                let (v, ln_vc) = draw_latent_v(prop, rng)?;
                state.v[j][k] = v;
                lat.ln_vc[j][k] = ln_vc;
                let cand = draw_atom_candidate(state, lat, j, k, rng)?;
                set_atom(state, lat, j, k, &cand, false);
            }
        }
    }
    for j in 0..state.n_components {
        let (v0, l0) = draw_latent_v(state.rho, rng)?;
        state.v[j][0] = v0;
        lat.ln_vc[j][0] = l0;
    }
    Ok(ok)
}

/// Normal full conditional (mean, variance) of an AR(1) atom at period `k`
/// given its neighbours and the allocated data summary (Σx, n) under
/// observation variance `obs_var`.
pub fn ar_atom_conditional(
    path: &[f64],
    k: usize,
    coef: f64,
    innovation_var: f64,
    data_sum: f64,
    data_n: usize,
    obs_var: f64,
) -> (f64, f64) {
    let len = path.len();
    let mut prec = if k == 0 { (1.0 - coef * coef) / innovation_var } else { 1.0 / innovation_var };
    let mut num = if k == 0 { 0.0 } else { coef * path[k - 1] / innovation_var };
    if k + 1 < len {
        prec += coef * coef / innovation_var;
        num += coef * path[k + 1] / innovation_var;
    }
    prec += data_n as f64 / obs_var;
    num += data_sum / obs_var;
    (num / prec, 1.0 / prec)
}

/// Inverse-gamma conditional (shape, rate) for AR innovations: stationary
/// first term plus k ≥ 2 innovations.
pub fn ar_innovation_posterior(paths: &[Vec<f64>], coef: f64, prior_shape: f64, prior_rate: f64) -> (f64, f64) {
    let mut ss = 0.0;
    let mut n = 0usize;
    for p in paths {
        ss += (1.0 - coef * coef) * p[0] * p[0];
        for k in 1..p.len() {
            ss += (p[k] - coef * p[k - 1]).powi(2);
        }
        n += p.len();
    }
    (prior_shape + 0.5 * n as f64, prior_rate + 0.5 * ss)
}

/// Log target of the AR coefficient (Uniform(−1, 1) prior).
pub fn ar_coef_log_target(paths: &[Vec<f64>], coef: f64, innovation_var: f64) -> f64 {
    if !(coef > -1.0 && coef < 1.0) {
        return f64::NEG_INFINITY;
    }
    let mut lp = 0.0;
    for p in paths {
        lp += 0.5 * (1.0 - coef * coef).ln() - 0.5 * (1.0 - coef * coef) * p[0] * p[0] / innovation_var;
        for k in 1..p.len() {
            lp -= 0.5 * (p[k] - coef * p[k - 1]).powi(2) / innovation_var;
        }
    }
    lp
}

/// Gaussian part of the AR coefficient target from the k ≥ 2 terms:
/// (mean, variance), or `None` when there are no such terms.
pub fn ar_coef_proposal(paths: &[Vec<f64>], innovation_var: f64) -> Option<(f64, f64)> {
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for p in paths {
        for k in 1..p.len() {
            sxx += p[k - 1] * p[k - 1];
            sxy += p[k] * p[k - 1];
        }
    }
    if sxx > 0.0 {
        Some((sxy / sxx, innovation_var / sxx))
    } else {
        None
    }
}

/// Draws a truncated-normal proposal from the k ≥ 2 terms and corrects for the
/// stationary first-period factor with an MH step.
fn update_ar_coef(paths: &[Vec<f64>], coef: &mut f64, innovation_var: f64, rng: &mut SeededRng, acc: &mut Acceptance) -> Result<()> {
    const EDGE: f64 = 1.0 - 1e-12;
    let (prop, log_q) = match ar_coef_proposal(paths, innovation_var) {
        Some((m, v)) => {
            let sd = v.sqrt();
            let prop = rng.truncated_normal(m, sd, -EDGE, EDGE)?;
            (prop, Some((m, v)))
        }
        None => (rng.uniform() * 2.0 * EDGE - EDGE, None),
    };
    let ln_q = |c: f64| match log_q {
        Some((m, v)) => gauss_logpdf(c, m, v),
        None => 0.0,
    };
    let r = ar_coef_log_target(paths, prop, innovation_var) - ln_q(prop) - ar_coef_log_target(paths, *coef, innovation_var) + ln_q(*coef);
    let ok = accept(r, rng);
    acc.record(ok);
    if ok {
        *coef = prop;
    }
    Ok(())
}

/// Mark atoms, kernel variances, AR innovation variances and AR coefficients.
/// Marks outside the model arity are refreshed from their priors.
pub fn update_mark_atoms_and_hypers(
    state: &mut DdpState,
    data: &SamplerData,
    priors: &Priors,
    rng: &mut SeededRng,
    ledger: &mut AcceptanceLedger,
) -> Result<()> {
    let (n, kp) = (state.n_components, state.n_periods);
    let mut ysum = vec![vec![0.0; kp]; n];
    let mut zsum = vec![vec![0.0; kp]; n];
    let mut cnt = vec![vec![0usize; kp]; n];
    for (k, obs) in data.periods.iter().enumerate() {
        for (i, o) in obs.iter().enumerate() {
            let j = state.allocations[k][i];
            ysum[j][k] += o.y;
            zsum[j][k] += damage_of(state, o, k, i);
            cnt[j][k] += 1;
        }
    }
    let use_y = data.model.has_wind();
    let use_z = data.model.has_damage();

    // Paths without data are integrated out of the AR hyperparameter updates
    // and redrawn from their prior at the end.
    let has_data: Vec<bool> = cnt.iter().map(|c| c.iter().any(|n| *n > 0)).collect();
    let active_y: Vec<bool> = has_data.iter().map(|a| *a && use_y).collect();
    let active_z: Vec<bool> = has_data.iter().map(|a| *a && use_z).collect();
    for j in 0..n {
        for k in 0..kp {
            if active_y[j] {
                let (m, v) = ar_atom_conditional(&state.nu[j], k, state.beta_ar, state.sigma1_2, ysum[j][k], cnt[j][k], state.sigma2);
                state.nu[j][k] = rng.normal(m, v.sqrt())?;
            }
            if active_z[j] {
                let (m, v) = ar_atom_conditional(&state.eta[j], k, state.phi_ar, state.sigma2_2, zsum[j][k], cnt[j][k], state.zeta2);
                state.eta[j][k] = rng.normal(m, v.sqrt())?;
            }
        }
    }

    let (mut ss_y, mut ss_z, mut n_obs) = (0.0, 0.0, 0usize);
    for (k, obs) in data.periods.iter().enumerate() {
        for (i, o) in obs.iter().enumerate() {
            let j = state.allocations[k][i];
            ss_y += (o.y - state.nu[j][k]).powi(2);
            ss_z += (damage_of(state, o, k, i) - state.eta[j][k]).powi(2);
            n_obs += 1;
        }
    }
    let (sh, rt) = kernel_variance_posterior(priors.sigma2.shape, priors.sigma2.rate, if use_y { ss_y } else { 0.0 }, if use_y { n_obs } else { 0 });
    state.sigma2 = rng.inv_gamma(sh, rt)?;
    let (sh, rt) = kernel_variance_posterior(priors.zeta2.shape, priors.zeta2.rate, if use_z { ss_z } else { 0.0 }, if use_z { n_obs } else { 0 });
    state.zeta2 = rng.inv_gamma(sh, rt)?;

    let pick = |paths: &[Vec<f64>], keep: &[bool]| -> Vec<Vec<f64>> {
        paths.iter().zip(keep).filter(|(_, k)| **k).map(|(p, _)| p.clone()).collect()
    };
    let nu = pick(&state.nu, &active_y);
    let (sh, rt) = ar_innovation_posterior(&nu, state.beta_ar, priors.sigma1_2.shape, priors.sigma1_2.rate);
    state.sigma1_2 = rng.inv_gamma(sh, rt)?;
    update_ar_coef(&nu, &mut state.beta_ar, state.sigma1_2, rng, &mut ledger.beta_ar)?;
    let eta = pick(&state.eta, &active_z);
    let (sh, rt) = ar_innovation_posterior(&eta, state.phi_ar, priors.sigma2_2.shape, priors.sigma2_2.rate);
    state.sigma2_2 = rng.inv_gamma(sh, rt)?;
    update_ar_coef(&eta, &mut state.phi_ar, state.sigma2_2, rng, &mut ledger.phi_ar)?;

    for j in 0..n {
        if !active_y[j] {
            state.nu[j] = ar1_path(kp, state.beta_ar, state.sigma1_2, rng)?;
        }
        if !active_z[j] {
            state.eta[j] = ar1_path(kp, state.phi_ar, state.sigma2_2, rng)?;
        }
    }
    Ok(())
}

/// IG(shape + n/2, rate + ss/2).
pub fn kernel_variance_posterior(shape: f64, rate: f64, ss: f64, n: usize) -> (f64, f64) {
    (shape + 0.5 * n as f64, rate + 0.5 * ss)
}

/// Draws every missing damage mark from its allocated kernel.
pub fn impute_missing_marks(state: &mut DdpState, data: &SamplerData, rng: &mut SeededRng) -> Result<()> {
    if !data.model.has_damage() {
        return Ok(());
    }
    let sd = state.zeta2.sqrt();
    for (k, obs) in data.periods.iter().enumerate() {
        for (i, o) in obs.iter().enumerate() {
            if o.z.is_none() {
                let j = state.allocations[k][i];
                state.imputed_z[k][i] = Some(rng.normal(state.eta[j][k], sd)?);
            }
        }
    }
    Ok(())
}
