//! Blocked Gibbs / Metropolis–Hastings sampler.
//!
//! One sweep runs allocations, sticks and α, time atoms, PBAR latents, ρ,
//! mark atoms with their hyperparameters, and missing-damage imputation. The
//! total intensities factor out of the likelihood, so γ is drawn by forward
//! filtering / backward sampling once per stored snapshot.

pub mod updates;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddp::{sample_prior_state, DdpState, InvGammaPrior, ModelKind, Priors};
use crate::error::{Error, Result};
use crate::gamma_chain::{
    aggregate_by_period, backward_sample, default_omega_grid, estimate_omega, GammaChainState, DEFAULT_A0,
    DEFAULT_B0,
};
use crate::ingest::{Centering, Corpus, PeriodLayout, SeasonWindow};
use crate::stochastic::SeededRng;

pub use updates::{
    draw_pbar_paths, impute_missing_marks, update_allocations, update_labels, update_period_swaps, update_latents_v, update_mark_atoms_and_hypers,
    update_rho, update_time_atoms, update_weights_and_alpha, Acceptance, AcceptanceLedger, Obs, PbarLatents,
    SamplerData,
};

pub const DRAWS_SCHEMA_VERSION: u32 = 1;

/// Settings of the total-intensity chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaConfig {
    pub a0: f64,
    pub b0: f64,
    /// Fixed discount factor; estimated on the annual counts when absent.
    pub omega: Option<f64>,
    pub omega_grid: Vec<f64>,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            a0: DEFAULT_A0,
            b0: DEFAULT_B0,
            omega: None,
            omega_grid: default_omega_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub model: ModelKind,
    pub priors: Priors,
    /// Derive the inverse-gamma rates of the mark variances from the data
    /// ranges (prior mean 0.5 (R/4)^2) instead of using `priors` as given.
    pub range_rule: bool,
    pub gamma: GammaConfig,
    /// Initial random-walk step of logit(ρ), adapted during burn-in.
    pub rho_step: f64,
    pub adapt_every: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 20_000,
            burn_in: 10_000,
            thin: 10,
            seed: 1,
            chains: 1,
            model: ModelKind::TimeWindDamage,
            priors: Priors::default(),
            range_rule: true,
            gamma: GammaConfig::default(),
            rho_step: 0.5,
            adapt_every: 50,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::config(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin < 1 {
            return Err(Error::config("thin must be at least 1"));
        }
        if self.chains < 1 {
            return Err(Error::config("at least one chain is required"));
        }
        if !(self.rho_step > 0.0) || self.adapt_every < 1 {
            return Err(Error::config("rho_step must be positive and adapt_every at least 1"));
        }
        if !(self.gamma.a0 > 0.0 && self.gamma.b0 > 0.0) {
            return Err(Error::config("gamma a0 and b0 must be positive"));
        }
        if let Some(w) = self.gamma.omega {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::config(format!("omega {w} outside (0, 1]")));
            }
        }
        self.priors.validate()
    }

    pub fn snapshots_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    /// Hyperpriors after applying the range rule to `corpus`.
    pub fn resolved_priors(&self, corpus: &Corpus) -> Priors {
        let mut p = self.priors.clone();
        if self.range_rule {
            let (ry, rz) = corpus.mark_ranges();
            if ry > 0.0 {
                p.sigma2 = InvGammaPrior::from_range(ry);
                p.sigma1_2 = InvGammaPrior::from_range(ry);
            }
            if rz > 0.0 {
                p.zeta2 = InvGammaPrior::from_range(rz);
                p.sigma2_2 = InvGammaPrior::from_range(rz);
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub chain: usize,
    pub iteration: usize,
    pub state: DdpState,
    /// Yearly γ path.
    pub gammas: Vec<f64>,
    /// γ summed within each analysis period.
    pub period_gammas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub schema_version: u32,
    pub config: McmcConfig,
    pub priors: Priors,
    /// Filter at the fixed discount factor; `gammas` is left empty.
    pub gamma_chain: GammaChainState,
    pub layout: PeriodLayout,
    pub season: SeasonWindow,
    pub centering: Centering,
    pub snapshots: Vec<Snapshot>,
    pub acceptance: Vec<AcceptanceLedger>,
    pub rho_steps: Vec<f64>,
}

impl PosteriorDraws {
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn n_periods(&self) -> usize {
        self.layout.n_periods()
    }

    /// Full gamma-chain state of snapshot `i`.
    pub fn gamma_state(&self, i: usize) -> GammaChainState {
        let mut g = self.gamma_chain.clone();
        g.gammas = self.snapshots[i].gammas.clone();
        g
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: PosteriorDraws = serde_json::from_str(s)?;
        if d.schema_version != DRAWS_SCHEMA_VERSION {
            return Err(Error::config(format!("unsupported draws schema version {}", d.schema_version)));
        }
        Ok(d)
    }
}

/// Output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub snapshots: Vec<Snapshot>,
    pub acceptance: AcceptanceLedger,
    pub rho_step: f64,
}

/// Discount factor from the config or estimated on the annual counts.
pub fn resolve_omega(corpus: &Corpus, gamma: &GammaConfig) -> Result<f64> {
    match gamma.omega {
        Some(w) => Ok(w),
        None => estimate_omega(&corpus.annual_counts, gamma.a0, gamma.b0, &gamma.omega_grid),
    }
}

/// Prior draw of the DDP state with allocation and imputation slots sized
/// to `data`, together with its PBAR latents.
pub fn initial_state(data: &SamplerData, priors: &Priors, rng: &mut SeededRng) -> Result<(DdpState, PbarLatents)> {
    let mut state = sample_prior_state(data.n_periods(), priors, rng)?;
    let lat = draw_pbar_paths(&mut state, rng)?;
    state.allocations = data.periods.iter().map(|p| vec![0; p.len()]).collect();
    let impute = data.model.has_damage();
    state.imputed_z = data
        .periods
        .iter()
        .map(|p| p.iter().map(|o| if impute && o.z.is_none() { Some(0.0) } else { None }).collect())
        .collect();
    Ok((state, lat))
}

fn tag(iteration: usize, update: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Sampler {
        iteration,
        update,
        source: Box::new(e),
    }
}

/// One full sweep in the fixed update order.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    state: &mut DdpState,
    lat: &mut PbarLatents,
    data: &SamplerData,
    priors: &Priors,
    rho_step: f64,
    rng: &mut SeededRng,
    ledger: &mut AcceptanceLedger,
    iteration: usize,
) -> Result<()> {
    update_allocations(state, data, rng).map_err(tag(iteration, "allocations"))?;
    update_weights_and_alpha(state, priors, rng).map_err(tag(iteration, "weights_and_alpha"))?;
    update_labels(state, lat, rng).map_err(tag(iteration, "labels"))?;
    update_time_atoms(state, lat, data, rng, ledger).map_err(tag(iteration, "time_atoms"))?;
    update_period_swaps(state, lat, rng, ledger).map_err(tag(iteration, "period_swaps"))?;
    update_latents_v(state, lat, rng, ledger).map_err(tag(iteration, "latents_v"))?;
    update_rho(state, lat, rho_step, rng, ledger).map_err(tag(iteration, "rho"))?;
    update_mark_atoms_and_hypers(state, data, priors, rng, ledger).map_err(tag(iteration, "mark_atoms"))?;
    impute_missing_marks(state, data, rng).map_err(tag(iteration, "imputation"))?;
    Ok(())
}

/// Runs chain `chain` with streams `2 chain` (DDP block) and `2 chain + 1` (γ).
pub fn run_single_chain(
    data: &SamplerData,
    priors: &Priors,
    config: &McmcConfig,
    gamma: &GammaChainState,
    layout: &PeriodLayout,
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = SeededRng::new(config.seed, 2 * chain as u64);
    let mut grng = SeededRng::new(config.seed, 2 * chain as u64 + 1);
    let (mut state, mut lat) = initial_state(data, priors, &mut rng).map_err(tag(0, "initialization"))?;
    let mut ledger = AcceptanceLedger::default();
    let mut step = config.rho_step;
    let mut window = Acceptance::default();
    let mut snapshots = Vec::with_capacity(config.snapshots_per_chain());

    for it in 1..=config.n_iter {
        let before = ledger.rho;
        sweep(&mut state, &mut lat, data, priors, step, &mut rng, &mut ledger, it)?;
        if it <= config.burn_in {
            window.proposed += ledger.rho.proposed - before.proposed;
            window.accepted += ledger.rho.accepted - before.accepted;
            if it % config.adapt_every == 0 {
                let rate = window.rate();
                if rate < 0.2 {
                    step *= 0.7;
                } else if rate > 0.4 {
                    step *= 1.4;
                }
                window = Acceptance::default();
            }
            continue;
        }
        if (it - config.burn_in) % config.thin == 0 {
            let gammas = backward_sample(&gamma.filtered, gamma.omega, &mut grng).map_err(tag(it, "gamma_ffbs"))?;
            let period_gammas = aggregate_by_period(&gammas, layout).map_err(tag(it, "gamma_ffbs"))?;
            snapshots.push(Snapshot {
                chain,
                iteration: it,
                state: state.clone(),
                gammas,
                period_gammas,
            });
        }
    }
    Ok(ChainOutput {
        snapshots,
        acceptance: ledger,
        rho_step: step,
    })
}

/// Runs `config.chains` independent chains (in parallel) on `corpus`.
pub fn run_chain(corpus: &Corpus, config: &McmcConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let data = SamplerData::from_corpus(corpus, config.model)?;
    let priors = config.resolved_priors(corpus);
    priors.validate()?;
    let omega = resolve_omega(corpus, &config.gamma)?;
    let gamma = GammaChainState::filter(&corpus.annual_counts, omega, config.gamma.a0, config.gamma.b0)?;
    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_single_chain(&data, &priors, config, &gamma, &corpus.layout, c))
        .collect::<Result<_>>()?;

    let mut snapshots = Vec::with_capacity(outputs.iter().map(|o| o.snapshots.len()).sum());
    let mut acceptance = Vec::with_capacity(outputs.len());
    let mut rho_steps = Vec::with_capacity(outputs.len());
    for o in outputs {
        snapshots.extend(o.snapshots);
        acceptance.push(o.acceptance);
        rho_steps.push(o.rho_step);
    }
    Ok(PosteriorDraws {
        schema_version: DRAWS_SCHEMA_VERSION,
        config: config.clone(),
        priors,
        gamma_chain: gamma,
        layout: corpus.layout,
        season: corpus.season,
        centering: corpus.centering,
        snapshots,
        acceptance,
        rho_steps,
    })
}
