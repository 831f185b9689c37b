use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use seasonal_mpp::cli::{run, sha256_hex, Cli, Manifest, RunConfig};
use seasonal_mpp::sampler::PosteriorDraws;
use seasonal_mpp::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn invoke(args: &[&str]) -> seasonal_mpp::Result<Manifest> {
    let mut argv = vec!["seasonal-mpp"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).expect("valid command line"))
}

fn fit_and_summarize(out: &Path) {
    let config = fixtures().join("fixture.toml");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    invoke(&["fit", "--config", c, "--out", o]).unwrap();
    invoke(&["summarize", "--config", c, "--out", o]).unwrap();
}

#[test]
fn fit_and_summarize_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    fit_and_summarize(dir.path());
    for name in [
        "functionals.csv",
        "functionals.json",
        "parameters.csv",
        "manifest-fit.json",
        "manifest-summarize.json",
    ] {
        let golden = fs::read(fixtures().join("golden").join(name)).unwrap();
        let got = fs::read(dir.path().join(name)).unwrap();
        assert!(golden == got, "{name} differs from the golden copy");
    }
}

#[test]
fn manifest_lists_every_output_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    fit_and_summarize(dir.path());
    let mut listed = Vec::new();
    for cmd in ["fit", "summarize"] {
        let text = fs::read_to_string(dir.path().join(format!("manifest-{cmd}.json"))).unwrap();
        let m: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m.seed, 2010);
        for e in m.outputs {
            let bytes = fs::read(dir.path().join(&e.file)).unwrap();
            assert_eq!(sha256_hex(&bytes), e.sha256, "{}", e.file);
            listed.push(e.file);
        }
    }
    for entry in fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if !name.starts_with("manifest-") {
            assert!(listed.contains(&name), "{name} missing from manifests");
        }
    }
}

#[test]
fn diagnose_writes_one_qq_table_per_period() {
    let dir = tempfile::tempdir().unwrap();
    fit_and_summarize(dir.path());
    let c = fixtures().join("fixture.toml");
    let m = invoke(&["diagnose", "--config", c.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).unwrap();
    let qq: Vec<_> = m.outputs.iter().filter(|e| e.file.starts_with("qq_period_")).collect();
    assert_eq!(qq.len(), 11);
    let table = fs::read_to_string(dir.path().join("qq_period_11.csv")).unwrap();
    // header plus one row per Q–Q point
    assert_eq!(table.lines().count(), 51);
}

#[test]
fn forecast_without_draws_reports_empty_draws() {
    let dir = tempfile::tempdir().unwrap();
    fit_and_summarize(dir.path());
    let path = dir.path().join("draws.json");
    let mut draws = PosteriorDraws::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    draws.snapshots.clear();
    fs::write(&path, draws.to_json().unwrap()).unwrap();
    let c = fixtures().join("fixture.toml");
    let err = invoke(&["forecast", "--config", c.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).unwrap_err();
    match err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "forecast");
            assert!(matches!(*source, Error::EmptyDraws));
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(!dir.path().join("forecast.csv").exists());
}

#[test]
fn seed_flag_overrides_the_config() {
    let a = tempfile::tempdir().unwrap();
    let c = fixtures().join("fixture.toml");
    let m = invoke(&["fit", "--config", c.to_str().unwrap(), "--out", a.path().to_str().unwrap(), "--seed", "7", "--chains", "1"]).unwrap();
    assert_eq!((m.seed, m.chains), (7, 1));
    let golden: Manifest = serde_json::from_slice(&fs::read(fixtures().join("golden/manifest-fit.json")).unwrap()).unwrap();
    assert_ne!(m.outputs[1].sha256, golden.outputs[1].sha256);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let base = fs::read_to_string(fixtures().join("fixture.toml")).unwrap();
    assert!(RunConfig::from_toml(&base).is_ok());
    let bad = base.replace("thin = 10", "thin = 10\nthinning = 3");
    assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
    let bad = base.replacen("schema_version = 1", "schema_version = 9", 1);
    assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
    let bad = base.replace("window = \"june\"", "window = \"juneteenth\"");
    let cfg = RunConfig::from_toml(&bad).unwrap();
    assert!(cfg.functionals[1].window.resolve(&cfg.season).is_err());
}

#[test]
fn config_errors_carry_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "schema_version = 1\n[mcmc]\nburn_in = 5\nn_iter = 5\n").unwrap();
    let err = invoke(&["fit", "--config", cfg.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().starts_with("[config]"), "{err}");
    fs::write(&cfg, "schema_version = 1\n").unwrap();
    let err = invoke(&["fit", "--config", cfg.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().starts_with("[ingest]"), "{err}");
}

#[test]
fn simulate_with_zero_intensity_writes_an_empty_event_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(
        &cfg,
        r#"schema_version = 1
[simulate.truth]
weights = [1.0]
mu = [[0.5, 0.5, 0.5]]
nu = [[0.0, 0.0, 0.0]]
tau = 575.0
sigma2 = 0.05
gammas = [0.0, 0.0, 0.0]
"#,
    )
    .unwrap();
    let m = invoke(&["simulate", "--config", cfg.to_str().unwrap()]).unwrap();
    assert_eq!(m.outputs.len(), 2);
    let events = fs::read_to_string(dir.path().join("out/events.csv")).unwrap();
    assert_eq!(events.lines().count(), 1);
}

#[test]
fn simulated_file_feeds_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(
        &cfg,
        r#"schema_version = 1
[input]
events = "out/events.csv"
[aggregation]
years_per_period = 1
[mcmc]
n_iter = 60
burn_in = 30
thin = 3
seed = 4
model = "time+wind"
[simulate.truth]
weights = [0.4, 0.6]
mu = [[0.3, 0.35, 0.4], [0.7, 0.65, 0.6]]
nu = [[-0.3, -0.3, -0.3], [0.3, 0.3, 0.3]]
tau = 575.0
sigma2 = 0.02
gammas = [30.0, 30.0, 30.0]
first_year = 1990
"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    invoke(&["simulate", "--config", c]).unwrap();
    let m = invoke(&["fit", "--config", c]).unwrap();
    assert_eq!(m.outputs.len(), 3);
    let draws = PosteriorDraws::from_json(&fs::read_to_string(dir.path().join("out/draws.json")).unwrap()).unwrap();
    assert_eq!(draws.snapshots.len(), 10);
    assert_eq!(draws.n_periods(), 3);
}
