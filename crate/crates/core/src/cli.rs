//! Command-line pipeline: configuration, subcommands and output tables.
//!
//! Every subcommand reads one TOML [`RunConfig`], writes plot-ready tables
//! into the output directory and finishes with a manifest listing each
//! output file and its SHA-256. Errors are tagged with the pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{holdout_predictive, ks_excluding_ties, mark_pit, qq_summary, time_rescaling_uniforms, HoldoutResult};
use crate::error::{Error, Result};
use crate::functionals::{
    conditional_mark_quantile, cumulative_intensity, default_mark_grid, forecast_draws, intensity, linear_grid,
    mark_mixture, poisson_pmf, DrawView, FunctionalEstimate, MarkCondition, MarkTarget, PredictiveState, TimeWindow,
    MONTH_NAMES,
};
use crate::ingest::{build_corpus, parse_events, Aggregation, Category, ColumnSchema, Corpus, SeasonWindow};
use crate::sampler::{run_chain, McmcConfig, PosteriorDraws};
use crate::simulate::{simulate, write_event_file, TruthConfig, TruthSidecar};
use crate::stochastic::SeededRng;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DRAWS_FILE: &str = "draws.json";
pub const CORPUS_FILE: &str = "corpus.json";
/// Stream offset of the forecast replicates used by `summarize` and `forecast`.
pub const FORECAST_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Parser)]
#[command(name = "seasonal-mpp", version, about = "Seasonal marked Poisson process modelling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an event file from the truth in the config.
    Simulate(CommonArgs),
    /// Ingest events and run the sampler.
    Fit(CommonArgs),
    /// Evaluate the requested functionals on stored draws.
    Summarize(CommonArgs),
    /// One-step-ahead forecast of the period after the last one.
    Forecast(CommonArgs),
    /// Time-rescaling, PIT and holdout diagnostics.
    Diagnose(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Event file, relative to the config file.
    pub events: Option<PathBuf>,
    pub schema: ColumnSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, relative to the config file.
    pub dir: PathBuf,
    /// Points of density grids.
    pub grid_points: usize,
    /// Points of Q–Q grids.
    pub qq_points: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            grid_points: 512,
            qq_points: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// 1-based held-out period for the holdout check.
    pub holdout_split: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub truth: TruthConfig,
    /// Name of the event file written into the output directory.
    #[serde(default = "default_event_file")]
    pub events_file: String,
}

fn default_event_file() -> String {
    "events.csv".into()
}

fn default_aggregation() -> Aggregation {
    Aggregation::new(10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub season: SeasonWindow,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub functionals: Vec<FunctionalRequest>,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported config schema version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.season.validate()?;
        if self.aggregation.years_per_period < 1 {
            return Err(Error::config("years_per_period must be at least 1"));
        }
        self.mcmc.validate()?;
        if self.output.grid_points < 2 || self.output.qq_points < 1 {
            return Err(Error::config("grid_points must be >= 2 and qq_points >= 1"));
        }
        for r in &self.functionals {
            r.validate()?;
        }
        if let Some(s) = &self.simulate {
            s.truth.validate()?;
        }
        Ok(())
    }
}

/// Which period a functional refers to: a 1-based index, or one of
/// `all`, `last`, `next`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PeriodSpec {
    Index(usize),
    Keyword(String),
}

impl Default for PeriodSpec {
    fn default() -> Self {
        PeriodSpec::Keyword("all".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeriodSel {
    Fitted(usize),
    Next,
}

impl PeriodSpec {
    pub fn resolve(&self, n_periods: usize) -> Result<Vec<PeriodSel>> {
        match self {
            PeriodSpec::Index(i) if *i >= 1 && *i <= n_periods => Ok(vec![PeriodSel::Fitted(i - 1)]),
            PeriodSpec::Index(i) => Err(Error::config(format!("period {i} outside 1..={n_periods}"))),
            PeriodSpec::Keyword(k) => match k.as_str() {
                "all" => Ok((0..n_periods).map(PeriodSel::Fitted).collect()),
                "last" => Ok(vec![PeriodSel::Fitted(n_periods - 1)]),
                "next" => Ok(vec![PeriodSel::Next]),
                other => Err(Error::config(format!("unknown period `{other}`"))),
            },
        }
    }
}

/// Time window: `season`, a month name, `mjj`, `aso`, `{ t1, t2 }` on the
/// unit axis, or `{ months = [first, last] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSpec {
    Named(String),
    Range { t1: f64, t2: f64 },
    Months { months: [u32; 2] },
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::Named("season".into())
    }
}

impl WindowSpec {
    pub fn label(&self) -> String {
        match self {
            WindowSpec::Named(n) => n.to_lowercase(),
            WindowSpec::Range { t1, t2 } => format!("{t1}-{t2}"),
            WindowSpec::Months { months } => format!("months-{}-{}", months[0], months[1]),
        }
    }

    pub fn resolve(&self, season: &SeasonWindow) -> Result<(f64, f64)> {
        let months = |a: u32, b: u32| -> Result<(f64, f64)> {
            if !(1..=12).contains(&a) || !(1..=12).contains(&b) || b < a {
                return Err(Error::config(format!("invalid month range {a}..{b}")));
            }
            Ok((season.month_window(a)?.0, season.month_window(b)?.1))
        };
        match self {
            WindowSpec::Range { t1, t2 } => {
                if !(0.0 <= *t1 && t1 < t2 && *t2 <= 1.0) {
                    return Err(Error::config(format!("window ({t1}, {t2}) must satisfy 0 <= t1 < t2 <= 1")));
                }
                Ok((*t1, *t2))
            }
            WindowSpec::Months { months: [a, b] } => months(*a, *b),
            WindowSpec::Named(n) => {
                let n = n.to_lowercase();
                match n.as_str() {
                    "season" => Ok((0.0, 1.0)),
                    "mjj" => months(5, 7),
                    "aso" => months(8, 10),
                    _ => {
                        let m = MONTH_NAMES
                            .iter()
                            .position(|full| *full == n || (n.len() == 3 && full.starts_with(&n)))
                            .ok_or_else(|| Error::config(format!("unknown window `{n}`")))?;
                        months(m as u32 + 1, m as u32 + 1)
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    /// Λ_k over the window.
    CumulativeIntensity,
    /// 1 − exp(−Λ_k).
    ProbAtLeastOne,
    /// Poisson probability of `count` events in the window.
    ProbCount,
    /// λ_k(t) on a grid over the window.
    Intensity,
    /// Conditional mark density on a grid.
    MarkDensity,
    /// Conditional mark quantiles in natural units.
    MarkQuantile,
}

/// Cross-mark condition in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub category: Option<Category>,
    pub wind: Option<[f64; 2]>,
    pub damage: Option<[f64; 2]>,
}

impl ConditionSpec {
    fn resolve(&self, corpus: &Corpus) -> Result<MarkCondition> {
        let c = &corpus.centering;
        let to = |t: MarkTarget, v: f64| if v <= 0.0 { f64::NEG_INFINITY } else { t.to_mark(v, c) };
        match (self.category, self.wind, self.damage) {
            (Some(cat), None, None) => Ok(MarkCondition::category(cat, c)),
            (None, Some([lo, hi]), None) => Ok(MarkCondition {
                on: MarkTarget::Wind,
                lo: to(MarkTarget::Wind, lo),
                hi: to(MarkTarget::Wind, hi),
            }),
            (None, None, Some([lo, hi])) => Ok(MarkCondition {
                on: MarkTarget::Damage,
                lo: to(MarkTarget::Damage, lo),
                hi: to(MarkTarget::Damage, hi),
            }),
            _ => Err(Error::config("a condition needs exactly one of category, wind, damage")),
        }
    }

    fn label(&self) -> String {
        match (self.category, self.wind, self.damage) {
            (Some(c), _, _) => c.label().to_string(),
            (_, Some([a, b]), _) => format!("wind {a}-{b}"),
            (_, _, Some([a, b])) => format!("damage {a}-{b}"),
            _ => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalRequest {
    #[serde(rename = "type")]
    pub kind: FunctionalKind,
    #[serde(default)]
    pub period: PeriodSpec,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub target: Option<MarkTarget>,
    #[serde(default)]
    pub quantiles: Vec<f64>,
    #[serde(default)]
    pub count: Option<u64>,
    #[serde(default)]
    pub condition: Option<ConditionSpec>,
}

impl FunctionalRequest {
    pub fn validate(&self) -> Result<()> {
        let needs_target = matches!(self.kind, FunctionalKind::MarkDensity | FunctionalKind::MarkQuantile);
        if needs_target && self.target.is_none() {
            return Err(Error::config(format!("{:?} needs a target", self.kind)));
        }
        if self.kind == FunctionalKind::ProbCount && self.count.is_none() {
            return Err(Error::config("prob_count needs a count"));
        }
        if self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::config("quantiles must lie in (0, 1)"));
        }
        if self.condition.is_some() && !needs_target {
            return Err(Error::config("conditions apply to mark functionals only"));
        }
        Ok(())
    }
}

/// One row of a functional table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRow {
    pub functional: String,
    pub period: String,
    pub window: String,
    pub target: String,
    pub condition: String,
    /// Grid point, quantile level or count; empty for scalars.
    pub x: Option<f64>,
    /// `x` in natural units for mark grids.
    pub x_natural: Option<f64>,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl FunctionalRow {
    fn new(labels: &RowLabels, x: Option<f64>, x_natural: Option<f64>, est: &FunctionalEstimate) -> Self {
        Self {
            functional: labels.functional.clone(),
            period: labels.period.clone(),
            window: labels.window.clone(),
            target: labels.target.clone(),
            condition: labels.condition.clone(),
            x,
            x_natural,
            mean: est.mean,
            median: est.median,
            lower: est.lower,
            upper: est.upper,
        }
    }
}

struct RowLabels {
    functional: String,
    period: String,
    window: String,
    target: String,
    condition: String,
}

/// Draws of one period: fitted snapshots, or forecast replicates.
enum PeriodDraws<'a> {
    Fitted(&'a PosteriorDraws, usize),
    Next(&'a [PredictiveState]),
}

impl PeriodDraws<'_> {
    fn views(&self) -> (Vec<DrawView<'_>>, usize) {
        match self {
            PeriodDraws::Fitted(d, k) => (d.snapshots.iter().map(DrawView::from).collect(), *k),
            PeriodDraws::Next(r) => (r.iter().map(|p| p.view()).collect(), 0),
        }
    }
}

fn per_draw<F>(views: &[DrawView<'_>], f: F) -> Result<Vec<f64>>
where
    F: Fn(DrawView<'_>) -> Result<f64> + Sync,
{
    views.par_iter().map(|v| f(*v)).collect()
}

fn per_draw_curve<F>(views: &[DrawView<'_>], f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(DrawView<'_>) -> Result<Vec<f64>> + Sync,
{
    views.par_iter().map(|v| f(*v)).collect()
}

fn column(curves: &[Vec<f64>], i: usize) -> Vec<f64> {
    curves.iter().map(|c| c[i]).collect()
}

/// Evaluates one request into table rows.
pub fn evaluate_request(
    req: &FunctionalRequest,
    draws: &PosteriorDraws,
    corpus: &Corpus,
    replicates: &[PredictiveState],
    grid_points: usize,
) -> Result<Vec<FunctionalRow>> {
    req.validate()?;
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let (t1, t2) = req.window.resolve(&corpus.season)?;
    let condition = req.condition.as_ref().map(|c| c.resolve(corpus)).transpose()?;
    let mut rows = Vec::new();
    for sel in req.period.resolve(draws.n_periods())? {
        let (pd, period_label) = match sel {
            PeriodSel::Fitted(k) => (PeriodDraws::Fitted(draws, k), (k + 1).to_string()),
            PeriodSel::Next => (PeriodDraws::Next(replicates), "next".to_string()),
        };
        let (views, k) = pd.views();
        let labels = RowLabels {
            functional: serde_json::to_value(req.kind)?.as_str().unwrap_or_default().to_string(),
            period: period_label,
            window: req.window.label(),
            target: req.target.map(|t| t.label().to_string()).unwrap_or_default(),
            condition: req.condition.as_ref().map(|c| c.label()).unwrap_or_default(),
        };
        let window = if t1 == 0.0 && t2 == 1.0 {
            TimeWindow::season()
        } else {
            TimeWindow::Between(t1, t2)
        };
        match req.kind {
            FunctionalKind::CumulativeIntensity => {
                let v = per_draw(&views, |d| cumulative_intensity(d, k, t1, t2))?;
                rows.push(FunctionalRow::new(&labels, None, None, &FunctionalEstimate::from_values("", v)?));
            }
            FunctionalKind::ProbAtLeastOne => {
                let v = per_draw(&views, |d| Ok(-(-cumulative_intensity(d, k, t1, t2)?).exp_m1()))?;
                rows.push(FunctionalRow::new(&labels, None, None, &FunctionalEstimate::from_values("", v)?));
            }
            FunctionalKind::ProbCount => {
                let x = req.count.expect("validated");
                let v = per_draw(&views, |d| poisson_pmf(cumulative_intensity(d, k, t1, t2)?, x))?;
                rows.push(FunctionalRow::new(
                    &labels,
                    Some(x as f64),
                    None,
                    &FunctionalEstimate::from_values("", v)?,
                ));
            }
            FunctionalKind::Intensity => {
                let h = 0.5 * (t2 - t1) / grid_points as f64;
                let grid = linear_grid(t1 + h, t2 - h, grid_points)?;
                let curves = per_draw_curve(&views, |d| grid.iter().map(|&t| intensity(d, k, t)).collect())?;
                for (i, &t) in grid.iter().enumerate() {
                    let est = FunctionalEstimate::from_values("", column(&curves, i))?;
                    rows.push(FunctionalRow::new(&labels, Some(t), None, &est));
                }
            }
            FunctionalKind::MarkDensity => {
                let target = req.target.expect("validated");
                let data = observed_marks(corpus, target);
                let grid = default_mark_grid(draws, &data, target, grid_points)?;
                let curves = per_draw_curve(&views, |d| {
                    let mix = mark_mixture(d.state, k, window, target, condition)?;
                    Ok(grid.iter().map(|&x| mix.pdf(x)).collect())
                })?;
                for (i, &x) in grid.iter().enumerate() {
                    let est = FunctionalEstimate::from_values("", column(&curves, i))?;
                    let nat = target.to_natural(x, &corpus.centering);
                    rows.push(FunctionalRow::new(&labels, Some(x), Some(nat), &est));
                }
            }
            FunctionalKind::MarkQuantile => {
                let target = req.target.expect("validated");
                let qs = if req.quantiles.is_empty() { vec![0.5] } else { req.quantiles.clone() };
                for q in qs {
                    let v = per_draw(&views, |d| {
                        conditional_mark_quantile(d.state, k, window, target, condition, q, &corpus.centering)
                    })?;
                    rows.push(FunctionalRow::new(&labels, Some(q), None, &FunctionalEstimate::from_values("", v)?));
                }
            }
        }
    }
    Ok(rows)
}

fn observed_marks(corpus: &Corpus, target: MarkTarget) -> Vec<f64> {
    match target {
        MarkTarget::Wind => corpus.patterns.iter().flat_map(|p| p.wind_marks.iter().copied()).collect(),
        MarkTarget::Damage => corpus
            .patterns
            .iter()
            .flat_map(|p| p.damage_marks.iter().flatten().copied())
            .collect(),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn functional_table_csv(rows: &[FunctionalRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "functional",
        "period",
        "window",
        "target",
        "condition",
        "x",
        "x_natural",
        "mean",
        "median",
        "lower",
        "upper",
    ])?;
    for r in rows {
        w.write_record([
            r.functional.clone(),
            r.period.clone(),
            r.window.clone(),
            r.target.clone(),
            r.condition.clone(),
            fmt_opt(r.x),
            fmt_opt(r.x_natural),
            r.mean.to_string(),
            r.median.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Requests used when the config lists none: season and monthly totals,
/// event probabilities and median wind speeds for every period.
pub fn default_requests(period: PeriodSpec, model_has_damage: bool) -> Vec<FunctionalRequest> {
    let base = |kind, window: &str, target| FunctionalRequest {
        kind,
        period: period.clone(),
        window: WindowSpec::Named(window.into()),
        target,
        quantiles: Vec::new(),
        count: None,
        condition: None,
    };
    let mut out = vec![
        base(FunctionalKind::CumulativeIntensity, "season", None),
        base(FunctionalKind::CumulativeIntensity, "mjj", None),
        base(FunctionalKind::CumulativeIntensity, "aso", None),
        base(FunctionalKind::ProbAtLeastOne, "june", None),
        base(FunctionalKind::ProbAtLeastOne, "september", None),
        base(FunctionalKind::MarkQuantile, "june", Some(MarkTarget::Wind)),
        base(FunctionalKind::MarkQuantile, "september", Some(MarkTarget::Wind)),
    ];
    if model_has_damage {
        out.push(base(FunctionalKind::MarkQuantile, "season", Some(MarkTarget::Damage)));
    }
    out
}

/// Output file entry of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command's run; contains no timestamps so identical runs
/// give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub chains: usize,
    pub config_sha256: String,
    pub outputs: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Output {
    dir: PathBuf,
    written: Vec<ManifestEntry>,
}

impl Output {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.written.push(ManifestEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn finish(self, command: &str, ctx: &Context) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: ctx.config.mcmc.seed,
            chains: ctx.config.mcmc.chains,
            config_sha256: ctx.config_sha256.clone(),
            outputs: self.written,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.dir.join(format!("manifest-{command}.json")), text)?;
        Ok(manifest)
    }
}

/// Resolved config of one invocation.
pub struct Context {
    pub config: RunConfig,
    pub config_sha256: String,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn load(args: &CommonArgs) -> Result<Self> {
        let text = fs::read_to_string(&args.config)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", args.config.display())))?;
        let mut config = RunConfig::from_toml(&text)?;
        if let Some(s) = args.seed {
            config.mcmc.seed = s;
        }
        if let Some(c) = args.chains {
            config.mcmc.chains = c;
        }
        config.validate()?;
        let base_dir = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
        let out_dir = match &args.out {
            Some(o) => o.clone(),
            None => base_dir.join(&config.output.dir),
        };
        Ok(Self {
            config,
            config_sha256: sha256_hex(text.as_bytes()),
            base_dir,
            out_dir,
        })
    }

    fn events_path(&self) -> Result<PathBuf> {
        self.config
            .input
            .events
            .as_ref()
            .map(|p| self.base_dir.join(p))
            .ok_or_else(|| Error::config("input.events is not set"))
    }

    fn read_draws(&self) -> Result<(PosteriorDraws, Corpus)> {
        let draws = PosteriorDraws::from_json(&fs::read_to_string(self.out_dir.join(DRAWS_FILE))?)?;
        let corpus = Corpus::from_json(&fs::read_to_string(self.out_dir.join(CORPUS_FILE))?)?;
        Ok((draws, corpus))
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(name))
}

/// Ingests the configured event file into a corpus.
pub fn ingest(ctx: &Context) -> Result<Corpus> {
    let path = ctx.events_path()?;
    let file = fs::File::open(&path).map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let events = parse_events(file, &ctx.config.input.schema, &ctx.config.season)?;
    build_corpus(&events, &ctx.config.aggregation, &ctx.config.season)
}

pub fn cmd_simulate(ctx: &Context) -> Result<Manifest> {
    let sim_cfg = stage("config", ctx.config.simulate.clone().ok_or_else(|| Error::config("no [simulate] block")))?;
    let mut rng = SeededRng::new(ctx.config.mcmc.seed, 0);
    let sim = stage("simulate", simulate(&sim_cfg.truth, &mut rng))?;
    let mut out = stage("output", Output::new(ctx.out_dir.clone()))?;
    let mut buf = Vec::new();
    stage("simulate", write_event_file(&sim, &sim_cfg.truth, &mut buf))?;
    stage("output", out.write(&sim_cfg.events_file, &buf))?;
    let sidecar = TruthSidecar {
        truth: sim_cfg.truth.clone(),
        seed: ctx.config.mcmc.seed,
        period_counts: sim.corpus.patterns.iter().map(|p| p.count).collect(),
        events: sim.events.clone(),
    };
    stage("output", out.write("truth.json", serde_json::to_string_pretty(&sidecar)?.as_bytes()))?;
    stage("output", out.finish("simulate", ctx))
}

/// Posterior summary of the scalar parameters.
pub fn parameter_table(draws: &PosteriorDraws) -> Result<Vec<u8>> {
    type Getter = fn(&crate::ddp::DdpState) -> f64;
    let params: [(&str, Getter); 9] = [
        ("alpha", |s| s.alpha),
        ("rho", |s| s.rho),
        ("sigma2", |s| s.sigma2),
        ("zeta2", |s| s.zeta2),
        ("beta", |s| s.beta_ar),
        ("phi", |s| s.phi_ar),
        ("sigma1_2", |s| s.sigma1_2),
        ("sigma2_2", |s| s.sigma2_2),
        ("active_components", |s| s.component_counts().iter().filter(|c| **c > 0).count() as f64),
    ];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["parameter", "mean", "median", "lower", "upper"])?;
    for (name, get) in params {
        let v: Vec<f64> = draws.snapshots.iter().map(|s| get(&s.state)).collect();
        let e = FunctionalEstimate::from_values(name, v)?;
        w.write_record([name.to_string(), e.mean.to_string(), e.median.to_string(), e.lower.to_string(), e.upper.to_string()])?;
    }
    for k in 0..draws.n_periods() {
        let v: Vec<f64> = draws.snapshots.iter().map(|s| s.period_gammas[k]).collect();
        let e = FunctionalEstimate::from_values("", v)?;
        w.write_record([
            format!("gamma_{}", k + 1),
            e.mean.to_string(),
            e.median.to_string(),
            e.lower.to_string(),
            e.upper.to_string(),
        ])?;
    }
    w.write_record(["omega".to_string(), draws.gamma_chain.omega.to_string(), String::new(), String::new(), String::new()])?;
    for (c, a) in draws.acceptance.iter().enumerate() {
        for (name, acc) in [
            ("time_atoms", a.time_atoms),
            ("time_blocks", a.time_blocks),
            ("period_swaps", a.period_swaps),
            ("latent_v", a.latent_v),
            ("rho", a.rho),
            ("beta", a.beta_ar),
            ("phi", a.phi_ar),
        ] {
            w.write_record([
                format!("acceptance_{name}_chain{}", c + 1),
                acc.rate().to_string(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn cmd_fit(ctx: &Context) -> Result<Manifest> {
    let corpus = stage("ingest", ingest(ctx))?;
    let draws = stage("fit", run_chain(&corpus, &ctx.config.mcmc))?;
    let mut out = stage("output", Output::new(ctx.out_dir.clone()))?;
    stage("output", out.write(CORPUS_FILE, corpus.to_json()?.as_bytes()))?;
    stage("output", out.write(DRAWS_FILE, draws.to_json()?.as_bytes()))?;
    let params = stage("fit", parameter_table(&draws))?;
    stage("output", out.write("parameters.csv", &params))?;
    stage("output", out.finish("fit", ctx))
}

fn requests_or_default(ctx: &Context, period: PeriodSpec) -> Vec<FunctionalRequest> {
    if ctx.config.functionals.is_empty() {
        default_requests(period, ctx.config.mcmc.model.has_damage())
    } else {
        ctx.config.functionals.clone()
    }
}

fn evaluate_all(ctx: &Context, requests: &[FunctionalRequest], draws: &PosteriorDraws, corpus: &Corpus) -> Result<Vec<FunctionalRow>> {
    let needs_next = requests
        .iter()
        .any(|r| matches!(&r.period, PeriodSpec::Keyword(k) if k == "next"));
    let replicates = if needs_next {
        forecast_draws(draws, ctx.config.mcmc.seed, FORECAST_STREAM_BASE)?
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for r in requests {
        rows.extend(evaluate_request(r, draws, corpus, &replicates, ctx.config.output.grid_points)?);
    }
    Ok(rows)
}

pub fn cmd_summarize(ctx: &Context) -> Result<Manifest> {
    let (draws, corpus) = stage("summarize", ctx.read_draws())?;
    if draws.is_empty() {
        return Err(Error::EmptyDraws.at_stage("summarize"));
    }
    let requests = requests_or_default(ctx, PeriodSpec::default());
    let rows = stage("summarize", evaluate_all(ctx, &requests, &draws, &corpus))?;
    let mut out = stage("output", Output::new(ctx.out_dir.clone()))?;
    stage("output", out.write("functionals.csv", &functional_table_csv(&rows)?))?;
    stage("output", out.write("functionals.json", serde_json::to_string_pretty(&rows)?.as_bytes()))?;
    stage("output", out.finish("summarize", ctx))
}

pub fn cmd_forecast(ctx: &Context) -> Result<Manifest> {
    let (draws, corpus) = stage("forecast", ctx.read_draws())?;
    if draws.is_empty() {
        return Err(Error::EmptyDraws.at_stage("forecast"));
    }
    let mut requests = requests_or_default(ctx, PeriodSpec::Keyword("next".into()));
    for r in requests.iter_mut() {
        r.period = PeriodSpec::Keyword("next".into());
    }
    let rows = stage("forecast", evaluate_all(ctx, &requests, &draws, &corpus))?;
    let mut out = stage("output", Output::new(ctx.out_dir.clone()))?;
    stage("output", out.write("forecast.csv", &functional_table_csv(&rows)?))?;
    stage("output", out.finish("forecast", ctx))
}

/// Per-period, per-draw diagnostic values: time-rescaling u's and wind PITs.
pub struct PeriodDiagnostics {
    pub rescaled: Vec<Vec<f64>>,
    pub wind_pit: Vec<Vec<f64>>,
}

pub fn period_diagnostics(draws: &PosteriorDraws, corpus: &Corpus, k: usize) -> Result<PeriodDiagnostics> {
    let pattern = &corpus.patterns[k];
    let per: Vec<(Vec<f64>, Vec<f64>)> = draws
        .snapshots
        .par_iter()
        .map(|s| {
            let u = time_rescaling_uniforms(DrawView::from(s), pattern, k)?;
            let p = mark_pit(&s.state, pattern, k, MarkTarget::Wind)?;
            Ok((u, p))
        })
        .collect::<Result<_>>()?;
    let (rescaled, wind_pit) = per.into_iter().unzip();
    Ok(PeriodDiagnostics { rescaled, wind_pit })
}

fn holdout_csv(h: &HoldoutResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["curve", "x", "mean", "lower", "upper"])?;
    for i in 0..h.time_grid.len() {
        w.write_record([
            "time_density".to_string(),
            h.time_grid[i].to_string(),
            h.time_density[i].to_string(),
            h.time_lower[i].to_string(),
            h.time_upper[i].to_string(),
        ])?;
    }
    for i in 0..h.wind_grid.len() {
        w.write_record([
            "wind_density".to_string(),
            h.wind_grid[i].to_string(),
            h.wind_density[i].to_string(),
            h.wind_lower[i].to_string(),
            h.wind_upper[i].to_string(),
        ])?;
    }
    for (i, t) in h.observed.times.iter().enumerate() {
        w.write_record([
            "observed".to_string(),
            t.to_string(),
            h.observed.wind_marks[i].to_string(),
            h.time_pit[i].to_string(),
            h.wind_pit[i].to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn cmd_diagnose(ctx: &Context) -> Result<Manifest> {
    let (draws, corpus) = stage("diagnose", ctx.read_draws())?;
    if draws.is_empty() {
        return Err(Error::EmptyDraws.at_stage("diagnose"));
    }
    let q = ctx.config.output.qq_points;
    let mut out = stage("output", Output::new(ctx.out_dir.clone()))?;
    let mut stats = csv::Writer::from_writer(Vec::new());
    stats.write_record(["period", "draw", "statistic", "value"])?;
    for k in 0..corpus.n_periods() {
        let d = stage("diagnose", period_diagnostics(&draws, &corpus, k))?;
        for (i, (u, p)) in d.rescaled.iter().zip(&d.wind_pit).enumerate() {
            let (ks, ties) = ks_excluding_ties(u);
            let pit = (!p.is_empty()).then(|| crate::stats::ks_uniform(p));
            let rows = [
                ("rescaling_ks_statistic", ks.map(|r| r.statistic)),
                ("rescaling_ks_pvalue", ks.map(|r| r.p_value)),
                ("rescaling_ties", Some(ties as f64)),
                ("wind_pit_ks_statistic", pit.map(|r| r.statistic)),
                ("wind_pit_ks_pvalue", pit.map(|r| r.p_value)),
            ];
            for (name, v) in rows {
                stats.write_record([(k + 1).to_string(), (i + 1).to_string(), name.to_string(), fmt_opt(v)])?;
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "p",
            "rescaling_mean",
            "rescaling_lower",
            "rescaling_upper",
            "wind_pit_mean",
            "wind_pit_lower",
            "wind_pit_upper",
        ])?;
        let empty = corpus.patterns[k].times.is_empty();
        let rq = (!empty).then(|| qq_summary(&d.rescaled, q)).transpose();
        let pq = (!empty).then(|| qq_summary(&d.wind_pit, q)).transpose();
        let (rq, pq) = (stage("diagnose", rq)?, stage("diagnose", pq)?);
        for (i, p) in crate::diagnostics::qq_grid(q).iter().enumerate() {
            let cell = |s: &Option<crate::diagnostics::QqSummary>, f: fn(&crate::diagnostics::QqSummary) -> &Vec<f64>| {
                s.as_ref().map(|s| f(s)[i].to_string()).unwrap_or_default()
            };
            w.write_record([
                p.to_string(),
                cell(&rq, |s| &s.mean),
                cell(&rq, |s| &s.lower),
                cell(&rq, |s| &s.upper),
                cell(&pq, |s| &s.mean),
                cell(&pq, |s| &s.lower),
                cell(&pq, |s| &s.upper),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        stage("output", out.write(&format!("qq_period_{:02}.csv", k + 1), &bytes))?;
    }
    let bytes = stats.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    stage("output", out.write("diagnostics.csv", &bytes))?;
    if let Some(split) = ctx.config.diagnose.holdout_split {
        let (h, _) = stage(
            "diagnose",
            holdout_predictive(&corpus, split, &ctx.config.mcmc, ctx.config.output.grid_points),
        )?;
        stage("output", out.write("holdout.csv", &holdout_csv(&h)?))?;
    }
    stage("output", out.finish("diagnose", ctx))
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<Manifest> {
    let (name, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Fit(a) => ("fit", a),
        Command::Summarize(a) => ("summarize", a),
        Command::Forecast(a) => ("forecast", a),
        Command::Diagnose(a) => ("diagnose", a),
    };
    let ctx = stage("config", Context::load(args))?;
    match name {
        "simulate" => cmd_simulate(&ctx),
        "fit" => cmd_fit(&ctx),
        "summarize" => cmd_summarize(&ctx),
        "forecast" => cmd_forecast(&ctx),
        _ => cmd_diagnose(&ctx),
    }
}
