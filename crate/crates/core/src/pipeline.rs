//! Per index and test year: split, scale, search, refit, forecast, score;
//! then consolidate and write the report files.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::hash::Hasher;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{Datelike, Duration, NaiveDate};
use fnv::FnvHasher;
use rayon::prelude::*;
use thiserror::Error;

use crate::fitness::{
    dual_horizon_fitness, mape, recent_start_row, rolling_forward_fitness, FitnessContext,
    FitnessError, RollingScheme, RowBlock, Score, WindowGamma,
};
use crate::ga::{run_ga, Chromosome, GaConfig, GaError, GaOutcome, GeneBounds};
use crate::series::{
    align_series, fit_minmax, is_weekday, load_series, split_by_test_year, weekdays, AlignedSeries,
    SeriesError,
};
use crate::svr::{gamma_scale, train_svr, SolverSettings, SvrError, SvrHyperParams};

pub const DEFAULT_SYMBOLS: [&str; 5] = ["NIFTY", "DJI", "DAX", "N225", "SSE"];
pub const DEFAULT_YEARS: [i32; 4] = [2021, 2022, 2023, 2024];

/// A quote this close to Dec 31 counts as covering the year end.
const YEAR_END_SLACK_DAYS: i64 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Dual-horizon fitness over the full and recent training data.
    Iga,
    /// Rolling-forward validation fitness.
    Oga,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Iga, Method::Oga];

    pub fn name(self) -> &'static str {
        match self {
            Method::Iga => "IGA",
            Method::Oga => "OGA",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iga" => Ok(Method::Iga),
            "oga" => Ok(Method::Oga),
            _ => Err(PipelineError::Config(format!(
                "unknown method {s:?} (expected iga or oga)"
            ))),
        }
    }
}

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Svr(#[from] SvrError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Ga(#[from] GaError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing fixture for {symbol}: {}", .path.display())]
    MissingFixture { symbol: String, path: PathBuf },
    #[error("{symbol}: {source}")]
    Data {
        symbol: String,
        #[source]
        source: SeriesError,
    },
    #[error("{symbol} {year} {method}: {source}")]
    Cell {
        symbol: String,
        year: i32,
        method: Method,
        #[source]
        source: CellError,
    },
    #[error("report shape: {0}")]
    Shape(String),
    #[error("writing {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub symbols: Vec<String>,
    pub test_years: Vec<i32>,
    pub methods: Vec<Method>,
    pub ga: GaConfig,
    pub rolling: RollingScheme,
    pub window_gamma: WindowGamma,
    pub gamma_divisor: f64,
    pub solver: SolverSettings,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Adds wall-clock seconds to the report files, which then differ
    /// between runs.
    pub include_timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            symbols: DEFAULT_SYMBOLS.iter().map(|s| s.to_string()).collect(),
            test_years: DEFAULT_YEARS.to_vec(),
            methods: vec![Method::Iga],
            ga: GaConfig::default(),
            rolling: RollingScheme::default(),
            window_gamma: WindowGamma::Fixed,
            gamma_divisor: 10.0,
            solver: SolverSettings::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            threads: 0,
            include_timings: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.symbols.is_empty() {
            return bad("no symbols");
        }
        if self
            .symbols
            .iter()
            .any(|s| s.is_empty() || s.contains(['/', '\\']))
        {
            return bad("symbols must be non-empty file-name-safe identifiers");
        }
        if self.test_years.is_empty() {
            return bad("no test years");
        }
        if self.methods.is_empty() {
            return bad("no methods");
        }
        if !(self.gamma_divisor > 0.0 && self.gamma_divisor.is_finite()) {
            return Err(PipelineError::Config(format!(
                "gamma divisor must be > 0, got {}",
                self.gamma_divisor
            )));
        }
        if !(self.solver.tol > 0.0) {
            return bad("solver tolerance must be > 0");
        }
        self.ga
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.rolling.window == 0 || self.rolling.validation == 0 || self.rolling.step == 0 {
            return bad("rolling window, validation and step must be positive");
        }
        Ok(())
    }

    /// Symbols sorted and deduplicated.
    pub fn symbol_order(&self) -> Vec<String> {
        let mut s = self.symbols.clone();
        s.sort();
        s.dedup();
        s
    }

    pub fn year_order(&self) -> Vec<i32> {
        let mut y = self.test_years.clone();
        y.sort_unstable();
        y.dedup();
        y
    }

    pub fn method_order(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }
}

/// One (symbol, year, method) forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub symbol: String,
    pub test_year: i32,
    pub method: Method,
    pub params: SvrHyperParams,
    pub mape: f64,
    /// GA search, final fit and prediction.
    pub seconds: f64,
    pub dates: Vec<NaiveDate>,
    pub predictions: Vec<f64>,
    pub actuals: Vec<f64>,
    /// Best fitness reached by the search.
    pub fitness: f64,
    pub ga: GaOutcome,
    /// SVR fits that stopped on the iteration budget.
    pub unconverged_fits: usize,
}

/// Row access inside a cell, reported to a [`CellObserver`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellEvent {
    TrainRead(Range<usize>),
    Predicted,
    TestRead(Range<usize>),
}

pub trait CellObserver: Sync {
    fn record(&self, symbol: &str, year: i32, method: Method, event: CellEvent);
}

struct Silent;

impl CellObserver for Silent {
    fn record(&self, _: &str, _: i32, _: Method, _: CellEvent) {}
}

/// Per-cell random stream: the run seed mixed with an FNV-1a hash of the
/// cell key, stable across platforms and releases.
pub fn cell_seed(seed: u64, symbol: &str, year: i32, method: Method) -> u64 {
    let mut h = FnvHasher::default();
    h.write(symbol.as_bytes());
    h.write(&[0x1f]);
    h.write(&year.to_le_bytes());
    h.write(&[0x1f]);
    h.write(method.name().as_bytes());
    seed ^ h.finish()
}

pub fn run_year_cell(
    series: &AlignedSeries,
    test_year: i32,
    method: Method,
    cfg: &ExperimentConfig,
) -> Result<ForecastResult, PipelineError> {
    run_year_cell_observed(series, test_year, method, cfg, &Silent)
}

pub fn run_year_cell_observed(
    series: &AlignedSeries,
    test_year: i32,
    method: Method,
    cfg: &ExperimentConfig,
    observer: &dyn CellObserver,
) -> Result<ForecastResult, PipelineError> {
    cell(series, test_year, method, cfg, observer).map_err(|source| PipelineError::Cell {
        symbol: series.symbol().to_string(),
        year: test_year,
        method,
        source,
    })
}

fn cell(
    series: &AlignedSeries,
    year: i32,
    method: Method,
    cfg: &ExperimentConfig,
    observer: &dyn CellObserver,
) -> Result<ForecastResult, CellError> {
    let symbol = series.symbol();
    let note = |e| observer.record(symbol, year, method, e);
    let split = split_by_test_year(series, year)?;

    note(CellEvent::TrainRead(split.train.clone()));
    let train = &series.rows()[split.train.clone()];
    let dates: Vec<NaiveDate> = train.iter().map(|r| r.date).collect();
    let ordinals: Vec<f64> = train.iter().map(|r| r.ordinal as f64).collect();
    let closes: Vec<f64> = train.iter().map(|r| r.close).collect();
    let x_scaler = fit_minmax(&ordinals)?;
    let y_scaler = fit_minmax(&closes)?;
    let x: Vec<f64> = ordinals.iter().map(|&o| x_scaler.transform(o)).collect();
    let y: Vec<f64> = closes.iter().map(|&c| y_scaler.transform(c)).collect();
    let gs = gamma_scale(&x)?;

    let ga_cfg = GaConfig {
        seed: cell_seed(cfg.seed, symbol, year, method),
        ..cfg.ga
    };
    let unconverged = AtomicUsize::new(0);
    let first_error: Mutex<Option<FitnessError>> = Mutex::new(None);
    let score = |r: Result<Score, FitnessError>| match r {
        Ok(s) => {
            if !s.converged {
                unconverged.fetch_add(1, Ordering::Relaxed);
            }
            s.value
        }
        Err(e) => {
            first_error.lock().unwrap().get_or_insert(e);
            f64::NAN
        }
    };

    let started = Instant::now();
    let rows = RowBlock {
        x: x.clone(),
        y: y.clone(),
        close: closes,
    };
    let outcome = match method {
        Method::Iga => {
            let bounds = GeneBounds::improved(gs, cfg.gamma_divisor)?;
            let ctx = FitnessContext::new(rows, y_scaler, recent_start_row(&dates), cfg.solver)?;
            run_ga(&bounds, &ga_cfg, |c: &Chromosome| {
                score(dual_horizon_fitness(&ctx, c.params()))
            })
        }
        Method::Oga => {
            let bounds = GeneBounds::baseline(gs)?;
            let ctx = FitnessContext::new(rows, y_scaler, 0, cfg.solver)?;
            cfg.rolling.validate(x.len())?;
            run_ga(&bounds, &ga_cfg, |c: &Chromosome| {
                score(rolling_forward_fitness(
                    &ctx,
                    &cfg.rolling,
                    c.params(),
                    cfg.window_gamma,
                    &cfg.solver,
                ))
            })
        }
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            return Err(match first_error.into_inner().unwrap() {
                Some(fe) => fe.into(),
                None => e.into(),
            })
        }
    };

    let params = outcome.best.params();
    let (model, report) = train_svr(&x, &y, params, &cfg.solver)?;
    if !report.converged {
        unconverged.fetch_add(1, Ordering::Relaxed);
    }

    // The test inputs come from the calendar alone.
    let (jan1, dec31) = year_span(year);
    let test_dates: Vec<NaiveDate> = weekdays(jan1, dec31).collect();
    let next = split.train.end;
    let test_x: Vec<f64> = (0..test_dates.len())
        .map(|k| x_scaler.transform((next + k) as f64))
        .collect();
    let step = x_scaler.transform(1.0) - x_scaler.transform(0.0);
    let predictions: Vec<f64> = model
        .predict_on_lattice(&test_x, step)
        .unwrap_or_else(|| model.predict_many(&test_x))
        .into_iter()
        .map(|s| y_scaler.inverse_transform(s))
        .collect();
    let seconds = started.elapsed().as_secs_f64();
    note(CellEvent::Predicted);

    note(CellEvent::TestRead(split.test.clone()));
    let actuals: Vec<f64> = series.rows()[split.test.clone()]
        .iter()
        .map(|r| r.close)
        .collect();
    let err = mape(&actuals, &predictions)?;

    Ok(ForecastResult {
        symbol: symbol.to_string(),
        test_year: year,
        method,
        params,
        mape: err,
        seconds,
        dates: test_dates,
        predictions,
        actuals,
        fitness: outcome.best.fitness.unwrap_or(f64::NAN),
        ga: outcome,
        unconverged_fits: unconverged.into_inner(),
    })
}

fn year_span(year: i32) -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
        NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
    )
}

pub fn fixture_path(data_dir: &Path, symbol: &str) -> PathBuf {
    data_dir.join(format!("{symbol}.csv"))
}

/// Loads `<data_dir>/<symbol>.csv` and aligns it from its first quote up to
/// Dec 31 of `last_year`. If the quotes stop well before that date the
/// series ends at the last quote, so a partly covered year is reported as
/// missing coverage rather than filled forward.
pub fn load_fixture(
    data_dir: &Path,
    symbol: &str,
    last_year: i32,
) -> Result<AlignedSeries, PipelineError> {
    let path = fixture_path(data_dir, symbol);
    if !path.is_file() {
        return Err(PipelineError::MissingFixture {
            symbol: symbol.to_string(),
            path,
        });
    }
    let data_err = |source| PipelineError::Data {
        symbol: symbol.to_string(),
        source,
    };
    let raw = load_series(&path, symbol).map_err(data_err)?;
    let obs = raw.observations();
    let first = obs[0].date;
    let start = (0..7)
        .map(|d| first + Duration::days(d))
        .find(|d| is_weekday(*d))
        .expect("a weekday within any 7 days");
    let (_, dec31) = year_span(last_year);
    let last = obs[obs.len() - 1].date;
    let end = if last >= dec31 - Duration::days(YEAR_END_SLACK_DAYS) {
        dec31
    } else {
        last
    };
    if end < start {
        return Err(data_err(SeriesError::EmptyRange { start, end }));
    }
    align_series(&raw, start, end).map_err(data_err)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ConsolidatedReport, PipelineError> {
    run_experiment_observed(cfg, &Silent)
}

/// Every (symbol, year, method) cell. All fixtures are loaded before the
/// first cell starts; cells may run concurrently but results are assembled
/// in (symbol, year, method) order.
pub fn run_experiment_observed(
    cfg: &ExperimentConfig,
    observer: &dyn CellObserver,
) -> Result<ConsolidatedReport, PipelineError> {
    cfg.validate()?;
    let symbols = cfg.symbol_order();
    let years = cfg.year_order();
    let methods = cfg.method_order();
    let last_year = *years.last().expect("validated non-empty");

    let series: Vec<AlignedSeries> = symbols
        .iter()
        .map(|s| load_fixture(&cfg.data_dir, s, last_year))
        .collect::<Result<_, _>>()?;

    let mut jobs: Vec<(usize, i32, Method)> = Vec::new();
    for s in 0..symbols.len() {
        for &y in &years {
            for &m in &methods {
                jobs.push((s, y, m));
            }
        }
    }
    let work = || {
        jobs.par_iter()
            .map(|&(s, y, m)| run_year_cell_observed(&series[s], y, m, cfg, observer))
            .collect::<Result<Vec<_>, _>>()
    };
    let cells = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?
            .install(work)?
    } else {
        work()?
    };
    consolidate(cells)
}

/// Cell key and error, the input to [`aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CellScore {
    pub symbol: String,
    pub year: i32,
    pub method: Method,
    pub mape: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reduction {
    pub method: Method,
    pub baseline: Method,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub symbols: Vec<String>,
    pub years: Vec<i32>,
    pub methods: Vec<Method>,
    pub per_year: BTreeMap<(Method, i32), f64>,
    pub per_symbol: BTreeMap<(Method, String), f64>,
    pub overall: BTreeMap<Method, f64>,
    pub reductions: Vec<Reduction>,
}

/// `100 * (baseline - mape) / baseline`.
pub fn reduction_percent(mape: f64, baseline: f64) -> f64 {
    100.0 * (baseline - mape) / baseline
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Means per year, per symbol and overall for each method, plus the
/// reduction of each method against every later one.
pub fn aggregate(scores: &[CellScore]) -> Result<Aggregates, PipelineError> {
    if scores.is_empty() {
        return Err(PipelineError::Shape("no cells".into()));
    }
    let mut symbols: Vec<String> = scores.iter().map(|c| c.symbol.clone()).collect();
    let mut years: Vec<i32> = scores.iter().map(|c| c.year).collect();
    let mut methods: Vec<Method> = scores.iter().map(|c| c.method).collect();
    symbols.sort();
    symbols.dedup();
    years.sort_unstable();
    years.dedup();
    methods.sort();
    methods.dedup();

    let mut grid: BTreeMap<(Method, &str, i32), f64> = BTreeMap::new();
    for c in scores {
        if grid.insert((c.method, &c.symbol, c.year), c.mape).is_some() {
            return Err(PipelineError::Shape(format!(
                "duplicate cell {} {} {}",
                c.symbol, c.year, c.method
            )));
        }
    }
    let expected = symbols.len() * years.len() * methods.len();
    if grid.len() != expected {
        return Err(PipelineError::Shape(format!(
            "{} cells do not cover {} symbols x {} years x {} methods",
            grid.len(),
            symbols.len(),
            years.len(),
            methods.len()
        )));
    }

    let mut per_year = BTreeMap::new();
    let mut per_symbol = BTreeMap::new();
    let mut overall = BTreeMap::new();
    for &m in &methods {
        for &y in &years {
            let v: Vec<f64> = symbols.iter().map(|s| grid[&(m, s.as_str(), y)]).collect();
            per_year.insert((m, y), mean(&v));
        }
        for s in &symbols {
            let v: Vec<f64> = years.iter().map(|&y| grid[&(m, s.as_str(), y)]).collect();
            per_symbol.insert((m, s.clone()), mean(&v));
        }
        let all: Vec<f64> = grid
            .iter()
            .filter(|((mm, _, _), _)| *mm == m)
            .map(|(_, v)| *v)
            .collect();
        overall.insert(m, mean(&all));
    }
    let mut reductions = Vec::new();
    for (i, &a) in methods.iter().enumerate() {
        for &b in &methods[i + 1..] {
            reductions.push(Reduction {
                method: a,
                baseline: b,
                percent: reduction_percent(overall[&a], overall[&b]),
            });
        }
    }
    Ok(Aggregates {
        symbols,
        years,
        methods,
        per_year,
        per_symbol,
        overall,
        reductions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidatedReport {
    /// Sorted by (symbol, year, method).
    pub cells: Vec<ForecastResult>,
    pub aggregates: Aggregates,
}

impl ConsolidatedReport {
    pub fn cell(&self, symbol: &str, year: i32, method: Method) -> Option<&ForecastResult> {
        self.cells
            .iter()
            .find(|c| c.symbol == symbol && c.test_year == year && c.method == method)
    }
}

pub fn consolidate(mut cells: Vec<ForecastResult>) -> Result<ConsolidatedReport, PipelineError> {
    cells.sort_by(|a, b| {
        (&a.symbol, a.test_year, a.method).cmp(&(&b.symbol, b.test_year, b.method))
    });
    let scores: Vec<CellScore> = cells
        .iter()
        .map(|c| CellScore {
            symbol: c.symbol.clone(),
            year: c.test_year,
            method: c.method,
            mape: c.mape,
        })
        .collect();
    let aggregates = aggregate(&scores)?;
    Ok(ConsolidatedReport { cells, aggregates })
}

/// Six significant digits, plain decimal notation, trailing zeros trimmed.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if exp >= 0 {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(&digits);
            out.push_str(&"0".repeat(int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.push_str(&"0".repeat((-exp - 1) as usize));
        out.push_str(&digits);
    }
    if out.contains('.') {
        let trimmed = out.trim_end_matches('0').trim_end_matches('.');
        out = trimmed.to_string();
    }
    if negative {
        out.insert(0, '-');
    }
    out
}

fn write_file(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    fs::write(&path, text).map_err(|source| PipelineError::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(())
}

pub fn forecast_file_name(c: &ForecastResult) -> String {
    format!("{}_{}_{}.csv", c.symbol, c.test_year, c.method)
}

pub fn forecast_csv(c: &ForecastResult) -> String {
    let mut out = String::from("date,actual,predicted\n");
    for ((d, a), p) in c.dates.iter().zip(&c.actuals).zip(&c.predictions) {
        let _ = writeln!(out, "{d},{},{}", fmt_sig(*a), fmt_sig(*p));
    }
    out
}

pub fn report_csv(r: &ConsolidatedReport, include_timings: bool) -> String {
    let mut out = String::from("record,symbol,year,method,c,epsilon,gamma,mape");
    if include_timings {
        out.push_str(",seconds");
    }
    out.push('\n');
    for c in &r.cells {
        let p = c.params;
        let _ = write!(
            out,
            "cell,{},{},{},{},{},{},{}",
            c.symbol,
            c.test_year,
            c.method,
            fmt_sig(p.c),
            fmt_sig(p.epsilon),
            fmt_sig(p.gamma),
            fmt_sig(c.mape)
        );
        if include_timings {
            let _ = write!(out, ",{}", fmt_sig(c.seconds));
        }
        out.push('\n');
    }
    let a = &r.aggregates;
    let blank = if include_timings { "," } else { "" };
    for ((m, y), v) in &a.per_year {
        let _ = writeln!(out, "year_mean,,{y},{m},,,,{}{blank}", fmt_sig(*v));
    }
    for ((m, s), v) in &a.per_symbol {
        let _ = writeln!(out, "symbol_mean,{s},,{m},,,,{}{blank}", fmt_sig(*v));
    }
    for (m, v) in &a.overall {
        let _ = writeln!(out, "overall,,,{m},,,,{}{blank}", fmt_sig(*v));
    }
    for red in &a.reductions {
        let _ = writeln!(
            out,
            "reduction,,,{}_vs_{},,,,{}{blank}",
            red.method,
            red.baseline,
            fmt_sig(red.percent)
        );
    }
    out
}

fn fixed2(v: f64) -> String {
    format!("{v:.2}")
}

/// The per-cell fields shown in the reports.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub symbol: String,
    pub test_year: i32,
    pub method: Method,
    pub params: SvrHyperParams,
    pub mape: f64,
    pub seconds: f64,
}

impl From<&ForecastResult> for CellRow {
    fn from(c: &ForecastResult) -> Self {
        Self {
            symbol: c.symbol.clone(),
            test_year: c.test_year,
            method: c.method,
            params: c.params,
            mape: c.mape,
            seconds: c.seconds,
        }
    }
}

/// Reads the `cell` records of a `report.csv`; aggregate rows are skipped.
pub fn parse_report_csv(text: &str) -> Result<Vec<CellRow>, PipelineError> {
    let bad =
        |line: usize, what: &str| PipelineError::Shape(format!("report.csv line {line}: {what}"));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| bad(1, &e.to_string()))?
        .clone();
    let expected = [
        "record", "symbol", "year", "method", "c", "epsilon", "gamma", "mape",
    ];
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, &e.to_string()))?;
        if &rec[0] != "cell" {
            continue;
        }
        let num = |k: usize| -> Result<f64, PipelineError> {
            rec.get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| bad(line, &format!("bad {}", &header[k])))
        };
        let params = SvrHyperParams::new(num(4)?, num(5)?, num(6)?)
            .map_err(|e| bad(line, &e.to_string()))?;
        rows.push(CellRow {
            symbol: rec[1].to_string(),
            test_year: rec[2].parse().map_err(|_| bad(line, "bad year"))?,
            method: rec[3]
                .parse()
                .map_err(|e: PipelineError| bad(line, &e.to_string()))?,
            params,
            mape: num(7)?,
            seconds: if header.len() > 8 { num(8)? } else { 0.0 },
        });
    }
    Ok(rows)
}

pub fn report_markdown(r: &ConsolidatedReport, include_timings: bool) -> String {
    let rows: Vec<CellRow> = r.cells.iter().map(CellRow::from).collect();
    let mut out = markdown_tables(&rows, &r.aggregates, include_timings);
    let unconverged: usize = r.cells.iter().map(|c| c.unconverged_fits).sum();
    if unconverged > 0 {
        let _ = writeln!(
            out,
            "\n{unconverged} SVR fits stopped on the iteration budget and were scored as they stood."
        );
    }
    out
}

/// Per-symbol tables, yearly means and reductions as markdown.
pub fn markdown_tables(rows: &[CellRow], a: &Aggregates, include_timings: bool) -> String {
    let mut out = String::from("# Forecast report\n");
    for s in &a.symbols {
        let _ = write!(
            out,
            "\n## {s}\n\n| Year | Method | C | epsilon | gamma | MAPE % |{}\n|---|---|---|---|---|---|{}\n",
            if include_timings { " Time (s) |" } else { "" },
            if include_timings { "---|" } else { "" }
        );
        for c in rows.iter().filter(|c| &c.symbol == s) {
            let gamma = match c.method {
                Method::Oga => format!("scale ({})", fmt_sig(c.params.gamma)),
                Method::Iga => fmt_sig(c.params.gamma),
            };
            let _ = write!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                c.test_year,
                c.method,
                fmt_sig(c.params.c),
                fmt_sig(c.params.epsilon),
                gamma,
                fixed2(c.mape)
            );
            if include_timings {
                let _ = write!(out, " {:.1} |", c.seconds);
            }
            out.push('\n');
        }
        for &m in &a.methods {
            let _ = write!(
                out,
                "| Average | {m} | | | | {} |",
                fixed2(a.per_symbol[&(m, s.clone())])
            );
            if include_timings {
                out.push_str(" |");
            }
            out.push('\n');
        }
    }

    out.push_str("\n## Average MAPE % by year\n\n| Year |");
    for m in &a.methods {
        let _ = write!(out, " {m} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(a.methods.len()));
    out.push('\n');
    for &y in &a.years {
        let _ = write!(out, "| {y} |");
        for &m in &a.methods {
            let _ = write!(out, " {} |", fixed2(a.per_year[&(m, y)]));
        }
        out.push('\n');
    }
    out.push_str("| Overall |");
    for m in &a.methods {
        let _ = write!(out, " {} |", fixed2(a.overall[m]));
    }
    out.push('\n');

    if !a.reductions.is_empty() {
        out.push_str("\n## MAPE reduction\n\n");
        for red in &a.reductions {
            let _ = writeln!(
                out,
                "- {} vs {}: {} %",
                red.method,
                red.baseline,
                fixed2(red.percent)
            );
        }
    }
    out
}

/// Writes one forecast file per cell plus `report.csv` and `report.md`.
pub fn emit_outputs(
    r: &ConsolidatedReport,
    out_dir: &Path,
    include_timings: bool,
) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for c in &r.cells {
        write_file(
            out_dir.join(forecast_file_name(c)),
            &forecast_csv(c),
            &mut written,
        )?;
    }
    write_file(
        out_dir.join("report.csv"),
        &report_csv(r, include_timings),
        &mut written,
    )?;
    write_file(
        out_dir.join("report.md"),
        &report_markdown(r, include_timings),
        &mut written,
    )?;
    Ok(written)
}

/// Years for which the weekday calendar is complete in `series`.
pub fn covered_years(series: &AlignedSeries) -> Vec<i32> {
    let (first, last) = (series.start().year(), series.end().year());
    (first..=last)
        .filter(|&y| split_by_test_year(series, y).is_ok())
        .collect()
}
