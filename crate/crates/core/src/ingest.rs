//! Event records, damage standardization, season rescaling and period
//! aggregation.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

/// Saffir–Simpson category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    TD,
    TS,
    HC1,
    HC2,
    HC3,
    HC4,
    HC5,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::TD,
        Category::TS,
        Category::HC1,
        Category::HC2,
        Category::HC3,
        Category::HC4,
        Category::HC5,
    ];

    /// Band for a maximum wind speed in mph. Upper band limits are inclusive,
    /// so 73 is TS, 73.5 and 95 are HC1, and only speeds above 155 are HC5.
    pub fn from_wind(mph: f64) -> Result<Category> {
        if !(mph > 0.0) || !mph.is_finite() {
            return Err(Error::domain(format!("maximum wind {mph} must be positive")));
        }
        Ok(match mph {
            w if w < 39.0 => Category::TD,
            w if w <= 73.0 => Category::TS,
            w if w <= 95.0 => Category::HC1,
            w if w <= 110.0 => Category::HC2,
            w if w <= 130.0 => Category::HC3,
            w if w <= 155.0 => Category::HC4,
            _ => Category::HC5,
        })
    }

    /// Wind band `(lo, hi)` in mph; `lo` is exclusive except for TD and TS.
    pub fn wind_band(self) -> (f64, f64) {
        match self {
            Category::TD => (0.0, 39.0),
            Category::TS => (39.0, 73.0),
            Category::HC1 => (73.0, 95.0),
            Category::HC2 => (95.0, 110.0),
            Category::HC3 => (110.0, 130.0),
            Category::HC4 => (130.0, 155.0),
            Category::HC5 => (155.0, f64::INFINITY),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::TD => "TD",
            Category::TS => "TS",
            Category::HC1 => "HC1",
            Category::HC2 => "HC2",
            Category::HC3 => "HC3",
            Category::HC4 => "HC4",
            Category::HC5 => "HC5",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_uppercase();
        Category::ALL
            .into_iter()
            .find(|c| c.label() == norm)
            .ok_or_else(|| Error::domain(format!("unknown category `{s}`")))
    }
}

/// Inflation, wealth per capita and population of the landfall year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub inflation: f64,
    pub wealth_per_capita: f64,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub date: NaiveDate,
    pub year: i32,
    pub max_wind: f64,
    pub base_damage: Option<f64>,
    pub factors: Option<Factors>,
    pub category: Category,
}

impl EventRecord {
    /// Standardized damage when both the base damage and the factors are known.
    pub fn standardized_damage(&self) -> Option<Result<f64>> {
        match (self.base_damage, self.factors) {
            (Some(d), Some(f)) => Some(standardize_damage(d, f.inflation, f.wealth_per_capita, f.population)),
            _ => None,
        }
    }
}

/// Calendar window of the season, inclusive at both ends and within one year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonWindow {
    pub start_month: u32,
    pub start_day: u32,
    pub end_month: u32,
    pub end_day: u32,
}

impl Default for SeasonWindow {
    fn default() -> Self {
        Self {
            start_month: 5,
            start_day: 1,
            end_month: 11,
            end_day: 30,
        }
    }
}

impl SeasonWindow {
    fn bounds(&self, year: i32) -> Result<(NaiveDate, NaiveDate)> {
        let start = NaiveDate::from_ymd_opt(year, self.start_month, self.start_day)
            .ok_or_else(|| Error::config(format!("invalid season start {}-{}", self.start_month, self.start_day)))?;
        let end = NaiveDate::from_ymd_opt(year, self.end_month, self.end_day)
            .ok_or_else(|| Error::config(format!("invalid season end {}-{}", self.end_month, self.end_day)))?;
        if end < start {
            return Err(Error::config("season window must not wrap around the new year"));
        }
        Ok((start, end))
    }

    pub fn validate(&self) -> Result<()> {
        // A leap year accepts every valid month/day pair.
        self.bounds(2000).map(|_| ())
    }

    pub fn contains(&self, date: NaiveDate) -> Result<bool> {
        let (start, end) = self.bounds(date.year())?;
        Ok(date >= start && date <= end)
    }

    /// Season length D in days for `year`.
    pub fn length(&self, year: i32) -> Result<u32> {
        let (start, end) = self.bounds(year)?;
        Ok((end - start).num_days() as u32 + 1)
    }

    /// 0-based day within the season.
    pub fn day_index(&self, date: NaiveDate) -> Result<u32> {
        let (start, _) = self.bounds(date.year())?;
        Ok((date - start).num_days() as u32)
    }

    /// Unit-season time of the midpoint of `date`: (d + 0.5) / D.
    pub fn unit_time(&self, date: NaiveDate) -> Result<f64> {
        if !self.contains(date)? {
            return Err(Error::domain(format!("{date} is outside the season window")));
        }
        Ok((self.day_index(date)? as f64 + 0.5) / self.length(date.year())? as f64)
    }

    /// Unit-season interval `[t1, t2]` covering whole calendar days
    /// `from..=to` (month, day) clipped to the season, for `year`.
    pub fn window_between(&self, year: i32, from: (u32, u32), to: (u32, u32)) -> Result<(f64, f64)> {
        let (start, end) = self.bounds(year)?;
        let d = self.length(year)? as f64;
        let a = NaiveDate::from_ymd_opt(year, from.0, from.1)
            .ok_or_else(|| Error::config(format!("invalid date {}-{}", from.0, from.1)))?;
        let b = NaiveDate::from_ymd_opt(year, to.0, to.1)
            .ok_or_else(|| Error::config(format!("invalid date {}-{}", to.0, to.1)))?;
        let a = a.max(start);
        let b = b.min(end);
        if b < a {
            return Err(Error::domain("window does not intersect the season"));
        }
        let t1 = (a - start).num_days() as f64 / d;
        let t2 = ((b - start).num_days() + 1) as f64 / d;
        Ok((t1, t2))
    }

    /// Unit-season window of a calendar month (1-12); leap years do not
    /// matter unless the season contains February.
    pub fn month_window(&self, month: u32) -> Result<(f64, f64)> {
        const REF_YEAR: i32 = 2001;
        let last = (28..=31)
            .rev()
            .find(|&day| NaiveDate::from_ymd_opt(REF_YEAR, month, day).is_some())
            .ok_or_else(|| Error::domain(format!("invalid month {month}")))?;
        self.window_between(REF_YEAR, (month, 1), (month, last))
    }
}

/// Column names of the event file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    pub date: String,
    pub max_wind: String,
    pub base_damage: String,
    pub inflation: String,
    pub wealth_per_capita: String,
    pub population: String,
    pub category: String,
    pub delimiter: char,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            max_wind: "max_wind_mph".into(),
            base_damage: "base_damage".into(),
            inflation: "inflation".into(),
            wealth_per_capita: "wealth_per_capita".into(),
            population: "population".into(),
            category: "category".into(),
            delimiter: ',',
        }
    }
}

/// Parses delimited event rows. Rows are numbered from 1 at the header line.
/// All out-of-season dates are collected into a single error.
pub fn parse_events(source: impl Read, schema: &ColumnSchema, season: &SeasonWindow) -> Result<Vec<EventRecord>> {
    season.validate()?;
    if !schema.delimiter.is_ascii() {
        return Err(Error::config("delimiter must be an ASCII character"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let required = |name: &str| {
        index.get(name).copied().ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "missing column in header".into(),
        })
    };
    let date_col = required(&schema.date)?;
    let wind_col = required(&schema.max_wind)?;
    let optional = |name: &str| index.get(name).copied();
    let damage_col = optional(&schema.base_damage);
    let factor_cols = [
        optional(&schema.inflation),
        optional(&schema.wealth_per_capita),
        optional(&schema.population),
    ];
    let category_col = optional(&schema.category);

    let mut events = Vec::new();
    let mut outside = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let field = |col: Option<usize>| col.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
        let parse_err = |column: &str, message: String| Error::Parse {
            row,
            column: column.to_string(),
            message,
        };
        let number = |col: Option<usize>, name: &str| -> Result<Option<f64>> {
            field(col)
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| parse_err(name, format!("`{s}` is not a number")))
                })
                .transpose()
        };

        let raw_date = field(Some(date_col)).ok_or_else(|| parse_err(&schema.date, "empty date".into()))?;
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|e| parse_err(&schema.date, format!("`{raw_date}`: {e}")))?;
        let max_wind = number(Some(wind_col), &schema.max_wind)?
            .ok_or_else(|| parse_err(&schema.max_wind, "empty maximum wind".into()))?;
        if !(max_wind > 0.0) {
            return Err(parse_err(&schema.max_wind, format!("maximum wind {max_wind} must be positive")));
        }
        let base_damage = number(damage_col, &schema.base_damage)?;
        if let Some(d) = base_damage {
            if d < 0.0 {
                return Err(parse_err(&schema.base_damage, format!("negative damage {d}")));
            }
        }
        let names = [&schema.inflation, &schema.wealth_per_capita, &schema.population];
        let mut vals = [None; 3];
        for (slot, (col, name)) in vals.iter_mut().zip(factor_cols.iter().zip(names)) {
            *slot = number(*col, name)?;
            if let Some(x) = *slot {
                if x <= 0.0 {
                    return Err(parse_err(name, format!("factor {x} must be positive")));
                }
            }
        }
        let factors = match vals {
            [Some(inflation), Some(wealth_per_capita), Some(population)] => Some(Factors {
                inflation,
                wealth_per_capita,
                population,
            }),
            [None, None, None] => None,
            _ => {
                let missing = names
                    .iter()
                    .zip(vals)
                    .find(|(_, v)| v.is_none())
                    .map(|(n, _)| n.as_str())
                    .unwrap_or_default();
                return Err(parse_err(missing, "normalization factors must be all present or all absent".into()));
            }
        };
        let category = match field(category_col) {
            Some(s) => s
                .parse::<Category>()
                .map_err(|e| parse_err(&schema.category, e.to_string()))?,
            None => Category::from_wind(max_wind)?,
        };
        if !season.contains(date)? {
            outside.push(date.to_string());
        }
        events.push(EventRecord {
            date,
            year: date.year(),
            max_wind,
            base_damage,
            factors,
            category,
        });
    }
    if !outside.is_empty() {
        return Err(Error::OutsideSeason { dates: outside });
    }
    Ok(events)
}

/// base_damage / (I · W · P).
pub fn standardize_damage(base_damage: f64, inflation: f64, wealth_per_capita: f64, population: f64) -> Result<f64> {
    if !(inflation > 0.0 && wealth_per_capita > 0.0 && population > 0.0) {
        return Err(Error::domain(format!(
            "normalization factors must be positive, got ({inflation}, {wealth_per_capita}, {population})"
        )));
    }
    if !(base_damage >= 0.0) {
        return Err(Error::domain(format!("base damage {base_damage} must be nonnegative")));
    }
    Ok(base_damage / (inflation * wealth_per_capita * population))
}

/// Damage of a year-`t` event expressed under year-`s` conditions.
pub fn normalize_damage(base_damage: f64, at: Factors, to: Factors) -> Result<f64> {
    let _ = standardize_damage(base_damage, at.inflation, at.wealth_per_capita, at.population)?;
    let _ = standardize_damage(1.0, to.inflation, to.wealth_per_capita, to.population)?;
    Ok(base_damage
        * (to.inflation / at.inflation)
        * (to.wealth_per_capita / at.wealth_per_capita)
        * (to.population / at.population))
}

/// How seasons are grouped into periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregation {
    pub years_per_period: i32,
    /// First and last years covered; default to the event years.
    #[serde(default)]
    pub first_year: Option<i32>,
    #[serde(default)]
    pub last_year: Option<i32>,
}

impl Aggregation {
    pub fn new(years_per_period: i32) -> Self {
        Self {
            years_per_period,
            first_year: None,
            last_year: None,
        }
    }
}

/// Period layout: blocks of `years_per_period` years ending at `last_year`;
/// leftover leading years join the first period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodLayout {
    pub first_year: i32,
    pub last_year: i32,
    pub years_per_period: i32,
}

impl PeriodLayout {
    pub fn new(first_year: i32, last_year: i32, years_per_period: i32) -> Result<Self> {
        if years_per_period <= 0 {
            return Err(Error::config(format!("years_per_period must be positive, got {years_per_period}")));
        }
        if last_year < first_year {
            return Err(Error::config(format!("last year {last_year} precedes first year {first_year}")));
        }
        Ok(Self {
            first_year,
            last_year,
            years_per_period,
        })
    }

    pub fn total_years(&self) -> usize {
        (self.last_year - self.first_year + 1) as usize
    }

    /// K = max(1, ⌊years / years_per_period⌋).
    pub fn n_periods(&self) -> usize {
        (self.total_years() / self.years_per_period as usize).max(1)
    }

    /// 0-based period of `year`.
    pub fn period_of(&self, year: i32) -> Option<usize> {
        if year < self.first_year || year > self.last_year {
            return None;
        }
        let k = self.n_periods();
        let back = ((self.last_year - year) / self.years_per_period) as usize;
        Some(k - 1 - back.min(k - 1))
    }

    /// Inclusive year range of 0-based period `k`.
    pub fn years_of(&self, k: usize) -> (i32, i32) {
        let n = self.n_periods();
        let end = self.last_year - (n - 1 - k) as i32 * self.years_per_period;
        let start = if k == 0 { self.first_year } else { end - self.years_per_period + 1 };
        (start, end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonPattern {
    /// 1-based period index.
    pub period_index: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub times: Vec<f64>,
    pub wind_marks: Vec<f64>,
    pub damage_marks: Vec<Option<f64>>,
    pub count: usize,
}

impl SeasonPattern {
    pub fn empty(period_index: usize, first_year: i32, last_year: i32) -> Self {
        Self {
            period_index,
            first_year,
            last_year,
            times: Vec::new(),
            wind_marks: Vec::new(),
            damage_marks: Vec::new(),
            count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    /// Mean of log maximum wind.
    pub wind_log_mean: f64,
    /// Mean of log standardized damage over observed positive values.
    pub damage_log_mean: f64,
}

impl Centering {
    pub fn wind_to_natural(&self, y: f64) -> f64 {
        (y + self.wind_log_mean).exp()
    }

    pub fn damage_to_natural(&self, z: f64) -> f64 {
        (z + self.damage_log_mean).exp()
    }

    pub fn wind_to_mark(&self, mph: f64) -> f64 {
        mph.ln() - self.wind_log_mean
    }

    pub fn damage_to_mark(&self, d: f64) -> f64 {
        d.ln() - self.damage_log_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub schema_version: u32,
    pub patterns: Vec<SeasonPattern>,
    pub layout: PeriodLayout,
    pub season: SeasonWindow,
    pub centering: Centering,
    /// Event counts for each year from `layout.first_year` to `layout.last_year`.
    pub annual_counts: Vec<u64>,
}

impl Corpus {
    pub fn n_periods(&self) -> usize {
        self.patterns.len()
    }

    pub fn total_events(&self) -> usize {
        self.patterns.iter().map(|p| p.count).sum()
    }

    /// Observed ranges of the wind and damage marks (0 when absent).
    pub fn mark_ranges(&self) -> (f64, f64) {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if hi >= lo {
                hi - lo
            } else {
                0.0
            }
        };
        let y = range(&mut self.patterns.iter().flat_map(|p| p.wind_marks.iter().copied()));
        let z = range(&mut self.patterns.iter().flat_map(|p| p.damage_marks.iter().flatten().copied()));
        (y, z)
    }

    /// Corpus with no events over `n_periods` single-year periods.
    pub fn empty(n_periods: usize) -> Self {
        let layout = PeriodLayout {
            first_year: 1,
            last_year: n_periods.max(1) as i32,
            years_per_period: 1,
        };
        Self {
            schema_version: CORPUS_SCHEMA_VERSION,
            patterns: (0..n_periods.max(1))
                .map(|k| SeasonPattern::empty(k + 1, k as i32 + 1, k as i32 + 1))
                .collect(),
            layout,
            season: SeasonWindow::default(),
            centering: Centering {
                wind_log_mean: 0.0,
                damage_log_mean: 0.0,
            },
            annual_counts: vec![0; n_periods.max(1)],
        }
    }

    /// Builds a corpus directly from unit-season patterns that are already
    /// centered, one year per period.
    pub fn from_patterns(patterns: Vec<SeasonPattern>, centering: Centering) -> Self {
        let k = patterns.len();
        let annual_counts = patterns.iter().map(|p| p.count as u64).collect();
        Self {
            schema_version: CORPUS_SCHEMA_VERSION,
            layout: PeriodLayout {
                first_year: 1,
                last_year: k.max(1) as i32,
                years_per_period: 1,
            },
            patterns,
            season: SeasonWindow::default(),
            centering,
            annual_counts,
        }
    }

    /// The first `n` periods, with the layout and annual counts cut to match.
    pub fn leading_periods(&self, n: usize) -> Result<Corpus> {
        if n == 0 || n > self.n_periods() {
            return Err(Error::domain(format!("cannot keep {n} of {} periods", self.n_periods())));
        }
        let last_year = self.layout.years_of(n - 1).1;
        let layout = PeriodLayout::new(self.layout.first_year, last_year, self.layout.years_per_period)?;
        Ok(Corpus {
            schema_version: self.schema_version,
            patterns: self.patterns[..n].to_vec(),
            layout,
            season: self.season,
            centering: self.centering,
            annual_counts: self.annual_counts[..layout.total_years()].to_vec(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Corpus = serde_json::from_str(s)?;
        if c.schema_version != CORPUS_SCHEMA_VERSION {
            return Err(Error::config(format!("unsupported corpus schema version {}", c.schema_version)));
        }
        Ok(c)
    }
}

/// Rescales, centers and aggregates events into periods. Events with zero or
/// unknown standardized damage get a missing damage mark.
pub fn build_corpus(events: &[EventRecord], aggregation: &Aggregation, season: &SeasonWindow) -> Result<Corpus> {
    if aggregation.years_per_period <= 0 {
        return Err(Error::config(format!(
            "years_per_period must be positive, got {}",
            aggregation.years_per_period
        )));
    }
    if events.is_empty() {
        return Err(Error::domain("cannot build a corpus from no events"));
    }
    season.validate()?;
    let first = aggregation
        .first_year
        .unwrap_or_else(|| events.iter().map(|e| e.year).min().unwrap_or_default());
    let last = aggregation
        .last_year
        .unwrap_or_else(|| events.iter().map(|e| e.year).max().unwrap_or_default());
    let layout = PeriodLayout::new(first, last, aggregation.years_per_period)?;

    let mut wind_logs = Vec::with_capacity(events.len());
    let mut damage_logs = Vec::with_capacity(events.len());
    for e in events {
        if e.year < first || e.year > last {
            return Err(Error::domain(format!("event year {} outside {first}..={last}", e.year)));
        }
        if !season.contains(e.date)? {
            return Err(Error::OutsideSeason {
                dates: vec![e.date.to_string()],
            });
        }
        wind_logs.push(e.max_wind.ln());
        let d = e.standardized_damage().transpose()?.filter(|d| *d > 0.0);
        damage_logs.push(d.map(f64::ln));
    }
    let wind_log_mean = wind_logs.iter().sum::<f64>() / wind_logs.len() as f64;
    let observed: Vec<f64> = damage_logs.iter().flatten().copied().collect();
    let damage_log_mean = if observed.is_empty() {
        0.0
    } else {
        observed.iter().sum::<f64>() / observed.len() as f64
    };

    let n_periods = layout.n_periods();
    let mut rows: Vec<Vec<(f64, f64, Option<f64>)>> = vec![Vec::new(); n_periods];
    let mut annual_counts = vec![0u64; layout.total_years()];
    for (i, e) in events.iter().enumerate() {
        let k = layout.period_of(e.year).expect("year checked above");
        let t = season.unit_time(e.date)?;
        rows[k].push((t, wind_logs[i] - wind_log_mean, damage_logs[i].map(|z| z - damage_log_mean)));
        annual_counts[(e.year - first) as usize] += 1;
    }
    let patterns = rows
        .into_iter()
        .enumerate()
        .map(|(k, mut r)| {
            r.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (y0, y1) = layout.years_of(k);
            SeasonPattern {
                period_index: k + 1,
                first_year: y0,
                last_year: y1,
                count: r.len(),
                times: r.iter().map(|x| x.0).collect(),
                wind_marks: r.iter().map(|x| x.1).collect(),
                damage_marks: r.iter().map(|x| x.2).collect(),
            }
        })
        .collect();

    Ok(Corpus {
        schema_version: CORPUS_SCHEMA_VERSION,
        patterns,
        layout,
        season: *season,
        centering: Centering {
            wind_log_mean,
            damage_log_mean,
        },
        annual_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "date,max_wind_mph,base_damage,inflation,wealth_per_capita,population\n";

    fn parse(body: &str) -> Result<Vec<EventRecord>> {
        parse_events(
            format!("{HEADER}{body}").as_bytes(),
            &ColumnSchema::default(),
            &SeasonWindow::default(),
        )
    }

    #[test]
    fn category_bands() {
        assert_eq!(Category::from_wind(85.0).unwrap(), Category::HC1);
        assert_eq!(Category::from_wind(38.0).unwrap(), Category::TD);
        assert_eq!(Category::from_wind(39.0).unwrap(), Category::TS);
        assert_eq!(Category::from_wind(73.0).unwrap(), Category::TS);
        assert_eq!(Category::from_wind(73.5).unwrap(), Category::HC1);
        assert_eq!(Category::from_wind(74.0).unwrap(), Category::HC1);
        assert_eq!(Category::from_wind(95.0).unwrap(), Category::HC1);
        assert_eq!(Category::from_wind(96.0).unwrap(), Category::HC2);
        assert_eq!(Category::from_wind(110.0).unwrap(), Category::HC2);
        assert_eq!(Category::from_wind(130.0).unwrap(), Category::HC3);
        assert_eq!(Category::from_wind(155.0).unwrap(), Category::HC4);
        assert_eq!(Category::from_wind(155.1).unwrap(), Category::HC5);
        assert!(Category::from_wind(0.0).is_err());
        assert_eq!("hc 3".parse::<Category>().unwrap(), Category::HC3);
    }

    #[test]
    fn parse_rows_and_derive_category() {
        let ev = parse("1950-09-01,85,100,1,2,3\n1951-06-10,38,,,,\n").unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].category, Category::HC1);
        assert_eq!(ev[1].category, Category::TD);
        assert_eq!(ev[1].base_damage, None);
        assert_eq!(ev[1].factors, None);
        assert_eq!(ev[0].year, 1950);
    }

    #[test]
    fn empty_data_section() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn malformed_row_names_row_and_column() {
        let err = parse("1950-09-01,85,,,,\n1950-09-02,fast,,,,\n").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "max_wind_mph");
            }
            e => panic!("unexpected {e}"),
        }
        let err = parse("1950-13-01,85,,,,\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, ref column, .. } if column == "date"));
        let err = parse("1950-09-01,85,10,1,,3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref column, .. } if column == "wealth_per_capita"));
    }

    #[test]
    fn out_of_season_lists_all_dates() {
        let err = parse("1950-01-03,85,,,,\n1950-09-01,85,,,,\n1951-12-25,40,,,,\n").unwrap_err();
        match err {
            Error::OutsideSeason { dates } => assert_eq!(dates, vec!["1950-01-03", "1951-12-25"]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize_damage(100.0, 1.0, 1.0, 1.0).unwrap(), 100.0);
        assert!((standardize_damage(100.0, 2.0, 5.0, 10.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(standardize_damage(0.0, 2.0, 5.0, 10.0).unwrap(), 0.0);
        assert!(standardize_damage(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(standardize_damage(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn standardized_times_target_factors_is_normalized_damage() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let mut f = || Factors {
                inflation: rng.random_range(0.1..10.0),
                wealth_per_capita: rng.random_range(0.1..10.0),
                population: rng.random_range(0.1..10.0),
            };
            let (at, to) = (f(), f());
            let d = 1e6 * at.inflation;
            let lhs = standardize_damage(d, at.inflation, at.wealth_per_capita, at.population).unwrap()
                * to.inflation
                * to.wealth_per_capita
                * to.population;
            let rhs = normalize_damage(d, at, to).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * rhs);
        }
    }

    #[test]
    fn standardize_monotonicity() {
        let base = standardize_damage(10.0, 2.0, 3.0, 4.0).unwrap();
        assert!(standardize_damage(10.0, 2.5, 3.0, 4.0).unwrap() < base);
        assert!(standardize_damage(10.0, 2.0, 3.5, 4.0).unwrap() < base);
        assert!(standardize_damage(10.0, 2.0, 3.0, 4.5).unwrap() < base);
        assert!((standardize_damage(30.0, 2.0, 3.0, 4.0).unwrap() - 3.0 * base).abs() < 1e-15);
    }

    fn synthetic_events(first: i32, last: i32, per_year: usize) -> Vec<EventRecord> {
        let mut out = Vec::new();
        for year in first..=last {
            for i in 0..per_year {
                let date = NaiveDate::from_ymd_opt(year, 6 + (i as u32 % 5), 1 + (i as u32 * 7) % 28).unwrap();
                out.push(EventRecord {
                    date,
                    year,
                    max_wind: 40.0 + (year - first) as f64 + 10.0 * i as f64,
                    base_damage: if i % 3 == 0 { None } else { Some(1000.0 * (i + 1) as f64) },
                    factors: Some(Factors {
                        inflation: 1.0,
                        wealth_per_capita: 2.0,
                        population: 3.0,
                    }),
                    category: Category::TS,
                });
            }
        }
        out
    }

    #[test]
    fn period_counts_for_1900_2010() {
        let ev = synthetic_events(1900, 2010, 2);
        let season = SeasonWindow::default();
        let dec = build_corpus(&ev, &Aggregation::new(10), &season).unwrap();
        assert_eq!(dec.n_periods(), 11);
        assert_eq!(dec.patterns[0].first_year, 1900);
        assert_eq!(dec.patterns[0].last_year, 1910);
        assert_eq!(dec.patterns[10].first_year, 2001);
        assert_eq!(dec.patterns[7].first_year, 1971);
        let five = build_corpus(&ev, &Aggregation::new(5), &season).unwrap();
        assert_eq!(five.n_periods(), 22);
        assert_eq!(five.patterns[4].first_year, 1921);
        assert_eq!(five.patterns[4].last_year, 1925);
        assert_eq!(dec.total_events(), five.total_events());
        assert_eq!(dec.total_events(), ev.len());
        assert_eq!(dec.annual_counts.len(), 111);
        assert!(build_corpus(&ev, &Aggregation::new(0), &season).is_err());
    }

    #[test]
    fn first_day_maps_to_half_day() {
        let ev = vec![EventRecord {
            date: NaiveDate::from_ymd_opt(1950, 5, 1).unwrap(),
            year: 1950,
            max_wind: 80.0,
            base_damage: None,
            factors: None,
            category: Category::HC1,
        }];
        let c = build_corpus(&ev, &Aggregation::new(1), &SeasonWindow::default()).unwrap();
        assert_eq!(SeasonWindow::default().length(1950).unwrap(), 214);
        assert_eq!(c.patterns[0].times, vec![0.5 / 214.0]);
        assert_eq!(c.patterns[0].wind_marks, vec![0.0]);
        assert_eq!(c.patterns[0].damage_marks, vec![None]);
    }

    #[test]
    fn centering_round_trip_and_missing_damage() {
        let ev = synthetic_events(1990, 1999, 4);
        let c = build_corpus(&ev, &Aggregation::new(5), &SeasonWindow::default()).unwrap();
        let mut winds: Vec<f64> = c
            .patterns
            .iter()
            .flat_map(|p| p.wind_marks.iter().map(|y| c.centering.wind_to_natural(*y)))
            .collect();
        let mut truth: Vec<f64> = ev.iter().map(|e| e.max_wind).collect();
        winds.sort_by(f64::total_cmp);
        truth.sort_by(f64::total_cmp);
        for (a, b) in winds.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-12 * b);
        }
        let missing = c.patterns.iter().flat_map(|p| &p.damage_marks).filter(|z| z.is_none()).count();
        assert_eq!(missing, ev.iter().filter(|e| e.base_damage.is_none()).count());
        let observed: Vec<f64> = c.patterns.iter().flat_map(|p| p.damage_marks.iter().flatten().copied()).collect();
        assert!(observed.iter().sum::<f64>().abs() < 1e-9);
        for p in &c.patterns {
            assert!(p.times.windows(2).all(|w| w[0] <= w[1]));
            assert!(p.times.iter().all(|t| *t > 0.0 && *t < 1.0));
        }
    }

    #[test]
    fn corpus_json_round_trip() {
        let ev = synthetic_events(2000, 2003, 3);
        let c = build_corpus(&ev, &Aggregation::new(2), &SeasonWindow::default()).unwrap();
        let back = Corpus::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn month_windows() {
        let s = SeasonWindow::default();
        let (a, b) = s.month_window(5).unwrap();
        assert_eq!(a, 0.0);
        assert!((b - 31.0 / 214.0).abs() < 1e-15);
        let (a, b) = s.month_window(11).unwrap();
        assert!((a - 184.0 / 214.0).abs() < 1e-15);
        assert_eq!(b, 1.0);
        assert!(s.month_window(1).is_err());
    }
}
