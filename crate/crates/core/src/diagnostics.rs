//! Goodness-of-fit checks: time rescaling, mark PIT, Q–Q summaries and
//! holdout predictive checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddp::DdpState;
use crate::error::{Error, Result};
use crate::functionals::{
    cumulative_intensity, forecast_draws, linear_grid, mark_mixture, time_mass, DrawView, MarkTarget, PredictiveState,
    TimeWindow,
};
use crate::ingest::{Corpus, SeasonPattern};
use crate::sampler::{run_chain, McmcConfig, PosteriorDraws};
use crate::stats::{ks_uniform, mean, quantile_sorted, KsResult};

/// Stream offset of the forecast replicates drawn by the holdout harness.
pub const HOLDOUT_STREAM_BASE: u64 = 1 << 32;

fn check_sorted(p: &SeasonPattern) -> Result<()> {
    if p.times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain(format!("period {} pattern is not sorted by time", p.period_index)));
    }
    Ok(())
}

/// u_i = 1 − exp(−Λ_k(t_{i−1}, t_i)) with t_0 = 0. A tied time gives u = 0.
pub fn time_rescaling_uniforms(draw: DrawView<'_>, pattern: &SeasonPattern, k: usize) -> Result<Vec<f64>> {
    check_sorted(pattern)?;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(pattern.times.len());
    for &t in &pattern.times {
        let u = if t > prev {
            -(-cumulative_intensity(draw, k, prev, t)?).exp_m1()
        } else {
            0.0
        };
        out.push(u);
        prev = t;
    }
    Ok(out)
}

/// KS test of rescaled values against Uniform(0, 1) with tied (u = 0)
/// values removed; returns the test (if any values remain) and the number
/// of ties.
pub fn ks_excluding_ties(u: &[f64]) -> (Option<KsResult>, usize) {
    let kept: Vec<f64> = u.iter().copied().filter(|x| *x > 0.0).collect();
    let ties = u.len() - kept.len();
    ((!kept.is_empty()).then(|| ks_uniform(&kept)), ties)
}

/// F_k(mark_i | t_i) for every event whose `target` mark is observed.
pub fn mark_pit(state: &DdpState, pattern: &SeasonPattern, k: usize, target: MarkTarget) -> Result<Vec<f64>> {
    let marks: Vec<Option<f64>> = match target {
        MarkTarget::Wind => pattern.wind_marks.iter().map(|y| Some(*y)).collect(),
        MarkTarget::Damage => pattern.damage_marks.clone(),
    };
    pattern
        .times
        .iter()
        .zip(marks)
        .filter_map(|(&t, m)| m.map(|x| (t, x)))
        .map(|(t, x)| Ok(mark_mixture(state, k, TimeWindow::At(t), target, None)?.cdf(x)))
        .collect()
}

/// Posterior Q–Q summary against Uniform(0, 1): empirical quantiles of each
/// draw's values on a fixed grid, with pointwise mean and 95% band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqSummary {
    pub grid: Vec<f64>,
    pub per_draw: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Plotting positions (i − 0.5) / m, i = 1..m.
pub fn qq_grid(m: usize) -> Vec<f64> {
    (1..=m).map(|i| (i as f64 - 0.5) / m as f64).collect()
}

/// Empirical quantile at level `p` with sorted value i placed at (i − 0.5)/n
/// and linear interpolation in between (constant beyond the ends).
pub fn plotting_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let mut h = p * n as f64 - 0.5;
    // Snap rounding noise so the plotting positions themselves hit the nodes.
    if (h - h.round()).abs() < 1e-9 {
        h = h.round();
    }
    if h <= 0.0 {
        return sorted[0];
    }
    if h >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let i = h.floor() as usize;
    let frac = h - i as f64;
    if frac == 0.0 {
        sorted[i]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

pub fn qq_summary(collections: &[Vec<f64>], grid_points: usize) -> Result<QqSummary> {
    if collections.is_empty() {
        return Err(Error::EmptyDraws);
    }
    if grid_points == 0 {
        return Err(Error::domain("Q-Q grid needs at least one point"));
    }
    let grid = qq_grid(grid_points);
    let per_draw: Vec<Vec<f64>> = collections
        .iter()
        .map(|c| {
            if c.is_empty() {
                return Err(Error::domain("cannot summarize an empty collection"));
            }
            let mut s = c.clone();
            s.sort_by(f64::total_cmp);
            Ok(grid.iter().map(|&p| plotting_quantile(&s, p)).collect())
        })
        .collect::<Result<_>>()?;
    let mut mean_v = Vec::with_capacity(grid_points);
    let mut lower = Vec::with_capacity(grid_points);
    let mut upper = Vec::with_capacity(grid_points);
    for i in 0..grid_points {
        let mut col: Vec<f64> = per_draw.iter().map(|d| d[i]).collect();
        col.sort_by(f64::total_cmp);
        let m = mean(&col).clamp(col[0], col[col.len() - 1]);
        mean_v.push(m);
        lower.push(quantile_sorted(&col, 0.025).min(m));
        upper.push(quantile_sorted(&col, 0.975).max(m));
    }
    Ok(QqSummary {
        grid,
        per_draw,
        mean: mean_v,
        lower,
        upper,
    })
}

/// Predictive checks for one held-out period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    /// 1-based index of the held-out period.
    pub period: usize,
    pub time_grid: Vec<f64>,
    /// Posterior predictive time density f̃(t) (mean over replicates) and band.
    pub time_density: Vec<f64>,
    pub time_lower: Vec<f64>,
    pub time_upper: Vec<f64>,
    pub wind_grid: Vec<f64>,
    /// Season-wide predictive density of the wind mark.
    pub wind_density: Vec<f64>,
    pub wind_lower: Vec<f64>,
    pub wind_upper: Vec<f64>,
    /// Predictive mean of the held-out period's event count.
    pub expected_count: f64,
    pub observed: SeasonPattern,
    /// Predictive CDF F̃(t_i) of each held-out time.
    pub time_pit: Vec<f64>,
    /// Predictive conditional CDF F̃(y_i | t_i) of each held-out wind mark.
    pub wind_pit: Vec<f64>,
}

fn pointwise(curves: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = curves[0].len();
    let mut m = Vec::with_capacity(n);
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for i in 0..n {
        let mut col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        m.push(mean(&col));
        col.sort_by(f64::total_cmp);
        lo.push(quantile_sorted(&col, 0.025));
        hi.push(quantile_sorted(&col, 0.975));
    }
    (m, lo, hi)
}

/// Predictive checks of `observed` against one-step-ahead replicates.
pub fn predictive_check(
    replicates: &[PredictiveState],
    observed: &SeasonPattern,
    period: usize,
    grid_points: usize,
) -> Result<HoldoutResult> {
    if replicates.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let time_grid = linear_grid(0.5 / grid_points as f64, 1.0 - 0.5 / grid_points as f64, grid_points)?;
    let sd = mean(&replicates.iter().map(|r| r.state.sigma2).collect::<Vec<_>>()).sqrt();
    let (lo, hi) = replicates
        .iter()
        .flat_map(|r| r.state.nu.iter().map(|row| row[0]))
        .chain(observed.wind_marks.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let wind_grid = linear_grid(lo - 6.0 * sd, hi + 6.0 * sd, grid_points)?;

    let per_rep: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = replicates
        .par_iter()
        .map(|r| {
            let s = &r.state;
            let tcurve = crate::functionals::time_density_grid(s, 0, &time_grid)?;
            let season = mark_mixture(s, 0, TimeWindow::season(), MarkTarget::Wind, None)?;
            let wcurve = wind_grid.iter().map(|&y| season.pdf(y)).collect();
            let tpit = observed
                .times
                .iter()
                .map(|&t| time_mass(s, 0, 0.0, t))
                .collect::<Result<Vec<_>>>()?;
            let wpit = mark_pit(s, observed, 0, MarkTarget::Wind)?;
            let tdens = crate::functionals::time_density_grid(s, 0, &observed.times)?;
            Ok((tcurve, wcurve, tpit, wpit, tdens))
        })
        .collect::<Result<_>>()?;

    let tcurves: Vec<Vec<f64>> = per_rep.iter().map(|r| r.0.clone()).collect();
    let wcurves: Vec<Vec<f64>> = per_rep.iter().map(|r| r.1.clone()).collect();
    let (time_density, time_lower, time_upper) = pointwise(&tcurves);
    let (wind_density, wind_lower, wind_upper) = pointwise(&wcurves);
    let time_pit = (0..observed.times.len())
        .map(|i| per_rep.iter().map(|r| r.2[i]).sum::<f64>() / per_rep.len() as f64)
        .collect();
    // The predictive law of y given t weights each replicate by its density at t.
    let wind_pit = (0..observed.times.len())
        .map(|i| {
            let (num, den) = per_rep
                .iter()
                .fold((0.0, 0.0), |(n, d), r| (n + r.4[i] * r.3[i], d + r.4[i]));
            if den > 0.0 {
                num / den
            } else {
                per_rep.iter().map(|r| r.3[i]).sum::<f64>() / per_rep.len() as f64
            }
        })
        .collect();
    Ok(HoldoutResult {
        period,
        time_grid,
        time_density,
        time_lower,
        time_upper,
        wind_grid,
        wind_density,
        wind_lower,
        wind_upper,
        expected_count: mean(&replicates.iter().map(|r| r.gamma).collect::<Vec<_>>()),
        observed: observed.clone(),
        time_pit,
        wind_pit,
    })
}

/// Fits periods `1..split` (1-based, exclusive) of `corpus` and checks the
/// held-out period `split` against the one-step-ahead forecast.
pub fn holdout_predictive(
    corpus: &Corpus,
    split: usize,
    config: &McmcConfig,
    grid_points: usize,
) -> Result<(HoldoutResult, PosteriorDraws)> {
    if split < 2 || split > corpus.n_periods() {
        return Err(Error::domain(format!(
            "holdout split {split} must lie in 2..={}",
            corpus.n_periods()
        )));
    }
    let train = corpus.leading_periods(split - 1)?;
    let draws = run_chain(&train, config)?;
    let reps = forecast_draws(&draws, config.seed, HOLDOUT_STREAM_BASE)?;
    let result = predictive_check(&reps, &corpus.patterns[split - 1], split, grid_points)?;
    Ok((result, draws))
}
