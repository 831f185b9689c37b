//! Python bindings: corpus loading, fitting and posterior functionals.

use std::fs::File;

use clap::Parser;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use seasonal_mpp::cli::{run, Cli};
use seasonal_mpp::ddp::{expected_truncation_mass as truncation_mass, DdpState, ModelKind};
use seasonal_mpp::functionals::{cumulative_intensity, prob_at_least_one, time_density_grid, DrawView};
use seasonal_mpp::ingest::{build_corpus, parse_events, Aggregation, ColumnSchema, SeasonWindow};
use seasonal_mpp::sampler::{run_chain, McmcConfig, PosteriorDraws};

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_model(model: &str) -> PyResult<ModelKind> {
    match model {
        "time" => Ok(ModelKind::TimeOnly),
        "time+wind" => Ok(ModelKind::TimeWind),
        "time+wind+damage" => Ok(ModelKind::TimeWindDamage),
        other => Err(PyValueError::new_err(format!(
            "unknown model {other:?}; expected time, time+wind or time+wind+damage"
        ))),
    }
}

/// Events aggregated into periods.
#[pyclass(frozen)]
pub struct Corpus {
    inner: seasonal_mpp::ingest::Corpus,
}

#[pymethods]
impl Corpus {
    /// Reads an event file with the default column names and season.
    #[staticmethod]
    #[pyo3(signature = (path, years_per_period=10, first_year=None, last_year=None))]
    fn from_csv(path: &str, years_per_period: i32, first_year: Option<i32>, last_year: Option<i32>) -> PyResult<Self> {
        let season = SeasonWindow::default();
        let events = parse_events(File::open(path).map_err(py_err)?, &ColumnSchema::default(), &season).map_err(py_err)?;
        let aggregation = Aggregation {
            years_per_period,
            first_year,
            last_year,
        };
        let inner = build_corpus(&events, &aggregation, &season).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// A corpus of `n_periods` periods without events.
    #[staticmethod]
    fn empty(n_periods: usize) -> Self {
        Self {
            inner: seasonal_mpp::ingest::Corpus::empty(n_periods),
        }
    }

    #[getter]
    fn n_periods(&self) -> usize {
        self.inner.n_periods()
    }

    #[getter]
    fn total_events(&self) -> usize {
        self.inner.total_events()
    }

    /// Event count of each period.
    fn counts(&self) -> Vec<usize> {
        self.inner.patterns.iter().map(|p| p.count).collect()
    }

    /// Rescaled event times of period `k` (0-based).
    fn times(&self, k: usize) -> PyResult<Vec<f64>> {
        self.inner
            .patterns
            .get(k)
            .map(|p| p.times.clone())
            .ok_or_else(|| py_err(format!("period {k} out of range")))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }
}

/// Posterior draws from `fit`.
#[pyclass(frozen)]
pub struct Draws {
    inner: PosteriorDraws,
}

impl Draws {
    fn views(&self) -> impl Iterator<Item = DrawView<'_>> {
        self.inner.snapshots.iter().map(DrawView::from)
    }
}

#[pymethods]
impl Draws {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PosteriorDraws::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.snapshots.len()
    }

    #[getter]
    fn n_periods(&self) -> usize {
        self.inner.n_periods()
    }

    /// Per-draw values of a scalar parameter: alpha, rho, sigma2, zeta2,
    /// beta, phi, sigma1_2, sigma2_2 or active_components.
    fn parameter(&self, name: &str) -> PyResult<Vec<f64>> {
        let get: fn(&DdpState) -> f64 = match name {
            "alpha" => |s| s.alpha,
            "rho" => |s| s.rho,
            "sigma2" => |s| s.sigma2,
            "zeta2" => |s| s.zeta2,
            "beta" => |s| s.beta_ar,
            "phi" => |s| s.phi_ar,
            "sigma1_2" => |s| s.sigma1_2,
            "sigma2_2" => |s| s.sigma2_2,
            "active_components" => |s| s.component_counts().iter().filter(|c| **c > 0).count() as f64,
            other => return Err(py_err(format!("unknown parameter {other:?}"))),
        };
        Ok(self.inner.snapshots.iter().map(|s| get(&s.state)).collect())
    }

    /// Per-draw total intensity of period `k`.
    fn gamma(&self, k: usize) -> PyResult<Vec<f64>> {
        self.inner
            .snapshots
            .iter()
            .map(|s| s.period_gammas.get(k).copied().ok_or_else(|| py_err(format!("period {k} out of range"))))
            .collect()
    }

    /// Posterior mean of the time density of period `k` at each of `ts`.
    fn time_density(&self, k: usize, ts: Vec<f64>) -> PyResult<Vec<f64>> {
        let mut acc = vec![0.0; ts.len()];
        for s in &self.inner.snapshots {
            let f = time_density_grid(&s.state, k, &ts).map_err(py_err)?;
            for (a, b) in acc.iter_mut().zip(f) {
                *a += b;
            }
        }
        let n = self.inner.snapshots.len().max(1) as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    /// Per-draw expected number of events in (t1, t2) of period `k`.
    fn cumulative_intensity(&self, k: usize, t1: f64, t2: f64) -> PyResult<Vec<f64>> {
        self.views().map(|v| cumulative_intensity(v, k, t1, t2).map_err(py_err)).collect()
    }

    /// Per-draw probability of at least one event in (t1, t2) of period `k`.
    fn prob_at_least_one(&self, k: usize, t1: f64, t2: f64) -> PyResult<Vec<f64>> {
        self.views().map(|v| prob_at_least_one(v, k, t1, t2).map_err(py_err)).collect()
    }
}

/// Runs the sampler. The GIL is released while the chains run.
#[pyfunction]
#[pyo3(signature = (corpus, n_iter=20000, burn_in=10000, thin=10, seed=1, chains=1, model="time+wind+damage"))]
fn fit(
    py: Python<'_>,
    corpus: &Corpus,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    chains: usize,
    model: &str,
) -> PyResult<Draws> {
    let config = McmcConfig {
        n_iter,
        burn_in,
        thin,
        seed,
        chains,
        model: parse_model(model)?,
        ..McmcConfig::default()
    };
    let data = corpus.inner.clone();
    let inner = py.detach(move || run_chain(&data, &config)).map_err(py_err)?;
    Ok(Draws { inner })
}

/// E[1 − (α/(α+1))^n] under α ~ Gamma(shape, rate).
#[pyfunction]
#[pyo3(signature = (n=50, shape=2.0, rate=1.0))]
fn expected_truncation_mass(n: usize, shape: f64, rate: f64) -> PyResult<f64> {
    truncation_mass(n, shape, rate).map_err(py_err)
}

/// Runs a command-line invocation, e.g. `["fit", "--config", "c.toml"]`,
/// and returns its manifest as JSON.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<String> {
    let argv = std::iter::once("seasonal-mpp".to_string()).chain(args);
    let cli = Cli::try_parse_from(argv).map_err(py_err)?;
    let manifest = py.detach(move || run(cli)).map_err(py_err)?;
    serde_json::to_string_pretty(&manifest).map_err(py_err)
}

#[pymodule]
pub fn seasonal_mpp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Draws>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(expected_truncation_mass, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
