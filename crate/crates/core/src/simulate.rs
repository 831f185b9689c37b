//! Exact simulation of the marked seasonal process from a known truth.

use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::ddp::DdpState;
use crate::error::{Error, Result};
use crate::ingest::{Category, Centering, Corpus, PeriodLayout, SeasonPattern, SeasonWindow, CORPUS_SCHEMA_VERSION};
use crate::stochastic::{BetaKernel, SeededRng};

fn default_first_year() -> i32 {
    1
}

fn default_ypp() -> i32 {
    1
}

fn default_centering() -> Centering {
    Centering {
        wind_log_mean: 4.5,
        damage_log_mean: 0.0,
    }
}

/// Ground-truth mixture and total intensities. Matrices are `[component][period]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub weights: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    #[serde(default)]
    pub eta: Option<Vec<Vec<f64>>>,
    pub tau: f64,
    pub sigma2: f64,
    #[serde(default)]
    pub zeta2: Option<f64>,
    /// Expected number of events in each period.
    pub gammas: Vec<f64>,
    #[serde(default = "default_first_year")]
    pub first_year: i32,
    #[serde(default = "default_ypp")]
    pub years_per_period: i32,
    #[serde(default)]
    pub season: SeasonWindow,
    /// Log-scale centers used to write natural-unit marks.
    #[serde(default = "default_centering")]
    pub centering: Centering,
}

impl TruthConfig {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn n_periods(&self) -> usize {
        self.gammas.len()
    }

    pub fn layout(&self) -> Result<PeriodLayout> {
        let k = self.n_periods() as i32;
        PeriodLayout::new(
            self.first_year,
            self.first_year + k * self.years_per_period - 1,
            self.years_per_period,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n_components(), self.n_periods());
        if n == 0 || k == 0 {
            return Err(Error::config("truth needs at least one component and one period"));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("truth weights must be a probability vector (sum {total})")));
        }
        let shape_ok = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == k);
        if !shape_ok(&self.mu) || !shape_ok(&self.nu) || self.eta.as_ref().is_some_and(|e| !shape_ok(e)) {
            return Err(Error::config(format!("truth atom matrices must be {n} x {k}")));
        }
        if self.eta.is_some() != self.zeta2.is_some() {
            return Err(Error::config("eta and zeta2 must be given together"));
        }
        if self.mu.iter().flatten().any(|m| !(*m > 0.0 && *m < 1.0)) {
            return Err(Error::config("truth time atoms must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.sigma2 > 0.0 && self.zeta2.is_none_or(|z| z > 0.0)) {
            return Err(Error::config("tau and kernel variances must be positive"));
        }
        if self.gammas.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::config("total intensities must be finite and nonnegative"));
        }
        if self.years_per_period < 1 {
            return Err(Error::config("years_per_period must be at least 1"));
        }
        self.season.validate()
    }

    /// The truth as a DDP state (latent fields that the likelihood does not
    /// use are filled with neutral values).
    pub fn to_state(&self) -> Result<DdpState> {
        self.validate()?;
        let (n, k) = (self.n_components(), self.n_periods());
        let mut sticks = Vec::with_capacity(n.saturating_sub(1));
        let mut remaining = 1.0;
        for &w in &self.weights[..n - 1] {
            sticks.push(if remaining > 0.0 { (w / remaining).clamp(1e-300, 1.0) } else { 1.0 });
            remaining -= w;
        }
        Ok(DdpState {
            n_components: n,
            n_periods: k,
            sticks,
            weights: self.weights.clone(),
            mu: self.mu.clone(),
            v: vec![vec![0.5; k]; n],
            nu: self.nu.clone(),
            eta: self.eta.clone().unwrap_or_else(|| vec![vec![0.0; k]; n]),
            alpha: 1.0,
            rho: 0.5,
            tau: self.tau,
            sigma2: self.sigma2,
            zeta2: self.zeta2.unwrap_or(1.0),
            beta_ar: 0.0,
            phi_ar: 0.0,
            sigma1_2: 1.0,
            sigma2_2: 1.0,
            allocations: vec![Vec::new(); k],
            imputed_z: vec![Vec::new(); k],
        })
    }
}

/// One simulated event on the unit season axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub period: usize,
    pub year: i32,
    pub t: f64,
    pub component: usize,
    pub wind_mark: f64,
    pub damage_mark: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub events: Vec<SimEvent>,
    /// Corpus with the exact (continuous) times and centered marks of the truth.
    pub corpus: Corpus,
}

/// Draws n_k ~ Poisson(γ_k) events per period, then for each a component
/// from the weights, a time from its Beta kernel and marks from its
/// Gaussian kernels. Years are spread uniformly over the period.
pub fn simulate(truth: &TruthConfig, rng: &mut SeededRng) -> Result<Simulation> {
    let state = truth.to_state()?;
    let layout = truth.layout()?;
    let with_damage = truth.eta.is_some();
    let mut events = Vec::new();
    let mut patterns = Vec::with_capacity(truth.n_periods());
    let mut annual_counts = vec![0u64; layout.total_years()];
    for k in 0..truth.n_periods() {
        let n = rng.poisson(truth.gammas[k])? as usize;
        let (y0, y1) = layout.years_of(k);
        let mut period: Vec<SimEvent> = Vec::with_capacity(n);
        for _ in 0..n {
            let j = rng.categorical(&state.weights)?;
            let (a, b) = BetaKernel::new(state.mu[j][k], state.tau)?.shapes();
            let t = rng.beta(a, b)?.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            let wind_mark = rng.normal(state.nu[j][k], state.sigma2.sqrt())?;
            let damage_mark = if with_damage {
                Some(rng.normal(state.eta[j][k], state.zeta2.sqrt())?)
            } else {
                None
            };
            let year = y0 + (rng.uniform() * (y1 - y0 + 1) as f64).floor().min((y1 - y0) as f64) as i32;
            annual_counts[(year - layout.first_year) as usize] += 1;
            period.push(SimEvent {
                period: k,
                year,
                t,
                component: j,
                wind_mark,
                damage_mark,
            });
        }
        period.sort_by(|a, b| a.t.total_cmp(&b.t));
        patterns.push(SeasonPattern {
            period_index: k + 1,
            first_year: y0,
            last_year: y1,
            times: period.iter().map(|e| e.t).collect(),
            wind_marks: period.iter().map(|e| e.wind_mark).collect(),
            damage_marks: period.iter().map(|e| e.damage_mark).collect(),
            count: period.len(),
        });
        events.extend(period);
    }
    Ok(Simulation {
        events,
        corpus: Corpus {
            schema_version: CORPUS_SCHEMA_VERSION,
            patterns,
            layout,
            season: truth.season,
            centering: truth.centering,
            annual_counts,
        },
    })
}

/// Calendar date of unit time `t` in `year`: the season day containing it.
pub fn date_of(season: &SeasonWindow, year: i32, t: f64) -> Result<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(year, season.start_month, season.start_day)
        .ok_or_else(|| Error::config("invalid season start"))?;
    let len = season.length(year)? as i64;
    let day = ((t * len as f64).floor() as i64).clamp(0, len - 1);
    Ok(start + Duration::days(day))
}

/// Writes the events in the default ingest schema. Damage is written as a
/// standardized value with unit normalization factors.
pub fn write_event_file(sim: &Simulation, truth: &TruthConfig, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "date",
        "max_wind_mph",
        "base_damage",
        "inflation",
        "wealth_per_capita",
        "population",
        "category",
    ])?;
    let mut rows: Vec<(NaiveDate, &SimEvent)> = sim
        .events
        .iter()
        .map(|e| Ok((date_of(&truth.season, e.year, e.t)?, e)))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|(d, _)| (d.year(), d.ordinal()));
    for (date, e) in rows {
        let mph = truth.centering.wind_to_natural(e.wind_mark);
        let category = Category::from_wind(mph)?;
        let (damage, one) = match e.damage_mark {
            Some(z) => (format!("{}", truth.centering.damage_to_natural(z)), "1".to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            date.format("%Y-%m-%d").to_string(),
            format!("{mph}"),
            damage,
            one.clone(),
            one.clone(),
            one,
            category.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar written next to a simulated event file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub truth: TruthConfig,
    pub seed: u64,
    pub period_counts: Vec<usize>,
    pub events: Vec<SimEvent>,
}
