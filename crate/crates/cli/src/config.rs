//! TOML config file, layered under command-line flags and over defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use trendcast::fitness::WindowGamma;
use trendcast::pipeline::{ExperimentConfig, Method};

pub const DATA_DIR_ENV: &str = "TRENDCAST_DATA_DIR";

pub const DEFAULT_URL: &str = "https://query1.finance.yahoo.com/v7/finance/download/{ticker}?period1={period1}&period2={period2}&interval=1d&events=history";

const DEFAULT_TICKERS: [(&str, &str); 5] = [
    ("NIFTY", "^NSEI"),
    ("DJI", "^DJI"),
    ("DAX", "^GDAXI"),
    ("N225", "^N225"),
    ("SSE", "000001.SS"),
];

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub symbols: Option<Vec<String>>,
    pub years: Option<Vec<i32>>,
    pub method: Option<MethodChoice>,
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub gamma_divisor: Option<f64>,
    pub threads: Option<usize>,
    pub include_timings: Option<bool>,
    pub window_gamma: Option<WindowGammaChoice>,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub rolling: RollingSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub fetch: FetchSection,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GaSection {
    pub population_size: Option<usize>,
    pub generations: Option<usize>,
    pub tournament_size: Option<usize>,
    pub crossover_rate: Option<f64>,
    pub mutation_rate: Option<f64>,
    pub mutation_sigma: Option<f64>,
    pub elitism: Option<usize>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RollingSection {
    pub window: Option<usize>,
    pub validation: Option<usize>,
    pub step: Option<usize>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FetchSection {
    pub url: Option<String>,
    pub start: Option<chrono::NaiveDate>,
    pub end: Option<chrono::NaiveDate>,
    pub parallel: Option<bool>,
    #[serde(default)]
    pub tickers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Iga,
    Oga,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Iga => vec![Method::Iga],
            MethodChoice::Oga => vec![Method::Oga],
            MethodChoice::Both => vec![Method::Iga, Method::Oga],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowGammaChoice {
    Fixed,
    ScaleOfWindow,
}

fn pick<T: Clone>(cli: &Option<T>, file: &Option<T>) -> Option<T> {
    cli.clone().or_else(|| file.clone())
}

pub fn read_file_config(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {}", path.display(), e.message()))
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub symbols: Option<Vec<String>>,
    pub years: Option<Vec<i32>>,
    pub method: Option<MethodChoice>,
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub gamma_divisor: Option<f64>,
    pub threads: Option<usize>,
    pub include_timings: bool,
}

/// Flags beat the data-directory environment variable, which beats the
/// file, which beats the defaults.
pub fn experiment_config(
    file: &FileConfig,
    cli: &Overrides,
    env_data_dir: Option<PathBuf>,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = pick(&cli.symbols, &file.symbols) {
        cfg.symbols = v;
    }
    if let Some(v) = pick(&cli.years, &file.years) {
        cfg.test_years = v;
    }
    if let Some(v) = cli.method.or(file.method) {
        cfg.methods = v.methods();
    }
    if let Some(v) = cli.seed.or(file.seed) {
        cfg.seed = v;
    }
    if let Some(v) = cli
        .data_dir
        .clone()
        .or(env_data_dir)
        .or(file.data_dir.clone())
    {
        cfg.data_dir = v;
    }
    if let Some(v) = pick(&cli.out_dir, &file.out_dir) {
        cfg.out_dir = v;
    }
    if let Some(v) = cli.gamma_divisor.or(file.gamma_divisor) {
        cfg.gamma_divisor = v;
    }
    if let Some(v) = cli.threads.or(file.threads) {
        cfg.threads = v;
    }
    cfg.include_timings = cli.include_timings || file.include_timings.unwrap_or(false);
    if let Some(v) = file.window_gamma {
        cfg.window_gamma = match v {
            WindowGammaChoice::Fixed => WindowGamma::Fixed,
            WindowGammaChoice::ScaleOfWindow => WindowGamma::ScaleOfWindow,
        };
    }

    let ga = &file.ga;
    let g = &mut cfg.ga;
    g.population_size = ga.population_size.unwrap_or(g.population_size);
    g.generations = ga.generations.unwrap_or(g.generations);
    g.tournament_size = ga.tournament_size.unwrap_or(g.tournament_size);
    g.crossover_rate = ga.crossover_rate.unwrap_or(g.crossover_rate);
    g.mutation_rate = ga.mutation_rate.unwrap_or(g.mutation_rate);
    g.mutation_sigma = ga.mutation_sigma.unwrap_or(g.mutation_sigma);
    g.elitism = ga.elitism.unwrap_or(g.elitism);

    let r = &mut cfg.rolling;
    r.window = file.rolling.window.unwrap_or(r.window);
    r.validation = file.rolling.validation.unwrap_or(r.validation);
    r.step = file.rolling.step.unwrap_or(r.step);

    cfg.solver.tol = file.solver.tol.unwrap_or(cfg.solver.tol);
    if file.solver.max_iter.is_some() {
        cfg.solver.max_iter = file.solver.max_iter;
    }
    cfg
}

/// Remote ticker for a local symbol: the file's mapping, then the built-in
/// one, then the symbol itself.
pub fn ticker(fetch: &FetchSection, symbol: &str) -> String {
    fetch
        .tickers
        .get(symbol)
        .cloned()
        .or_else(|| {
            DEFAULT_TICKERS
                .iter()
                .find(|(s, _)| *s == symbol)
                .map(|(_, t)| t.to_string())
        })
        .unwrap_or_else(|| symbol.to_string())
}
