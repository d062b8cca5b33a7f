//! `trendcast` command line: fetch price history, run experiments, render
//! reports and summarize fixtures.

mod config;
mod fetch;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{Datelike, NaiveDate};
use clap::{Args, Parser, Subcommand};
use config::{FileConfig, MethodChoice, Overrides, DATA_DIR_ENV, DEFAULT_URL};
use trendcast::pipeline::{
    aggregate, emit_outputs, markdown_tables, parse_report_csv, run_experiment, CellScore,
    ExperimentConfig, PipelineError,
};
use trendcast::series::closings_summary;

#[derive(Parser)]
#[command(
    name = "trendcast",
    version,
    about = "SVR index forecasting with GA-tuned hyperparameters"
)]
struct Cli {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download daily price history, or check existing fixtures with --offline.
    Fetch(FetchArgs),
    /// Run the forecasting experiment and write the reports.
    Run(RunArgs),
    /// Print the markdown report for an existing report.csv.
    Report(ReportArgs),
    /// Print the share of up, down and unchanged closes per fixture.
    Summary(SummaryArgs),
}

#[derive(Args)]
struct Selection {
    /// Comma-separated symbols.
    #[arg(long, value_delimiter = ',')]
    symbols: Option<Vec<String>>,
    /// Fixture directory (also settable through TRENDCAST_DATA_DIR).
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FetchArgs {
    #[command(flatten)]
    sel: Selection,
    /// Validate existing fixtures instead of downloading.
    #[arg(long)]
    offline: bool,
    /// URL template with {symbol}, {ticker}, {start}, {end}, {period1}, {period2}.
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
    /// Download all symbols concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sel: Selection,
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    /// Comma-separated test years.
    #[arg(long, value_delimiter = ',')]
    years: Option<Vec<i32>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Upper bound of the gamma gene is gamma_scale / this value.
    #[arg(long)]
    gamma_divisor: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Add wall-clock seconds to the reports.
    #[arg(long)]
    timings: bool,
    /// Accepted for symmetry with fetch; run never uses the network.
    #[arg(long)]
    offline: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding report.csv.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummaryArgs {
    #[command(flatten)]
    sel: Selection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Config,
    Data,
    Run,
    Io,
    Network,
}

impl Kind {
    fn label(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Run => "run",
            Kind::Io => "io",
            Kind::Network => "network",
        }
    }

    fn code(self) -> u8 {
        match self {
            Kind::Config => 3,
            Kind::Data => 4,
            Kind::Run => 5,
            Kind::Io => 6,
            Kind::Network => 7,
        }
    }
}

struct Failure {
    kind: Kind,
    message: String,
}

fn fail(kind: Kind, message: impl Into<String>) -> Failure {
    Failure {
        kind,
        message: message.into(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let kind = match e {
            PipelineError::Config(_) => Kind::Config,
            PipelineError::MissingFixture { .. } | PipelineError::Data { .. } => Kind::Data,
            PipelineError::Cell { .. } | PipelineError::Shape(_) => Kind::Run,
            PipelineError::Io { .. } => Kind::Io,
        };
        fail(kind, error_chain(&e))
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        let part = s.to_string();
        if !msg.contains(&part) {
            msg.push_str(": ");
            msg.push_str(&part);
        }
        src = s.source();
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let one_line = f.message.replace(['\n', '\r'], " ");
            eprintln!("trendcast: error[{}]: {one_line}", f.kind.label());
            ExitCode::from(f.kind.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => config::read_file_config(p).map_err(|m| fail(Kind::Config, m))?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Fetch(a) => cmd_fetch(&file, a),
        Command::Run(a) => cmd_run(&file, a),
        Command::Report(a) => cmd_report(&file, a),
        Command::Summary(a) => cmd_summary(&file, a),
    }
}

fn env_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn selection_config(file: &FileConfig, sel: &Selection) -> ExperimentConfig {
    let o = Overrides {
        symbols: sel.symbols.clone(),
        data_dir: sel.data_dir.clone(),
        ..Overrides::default()
    };
    config::experiment_config(file, &o, env_data_dir())
}

fn cmd_fetch(file: &FileConfig, a: FetchArgs) -> Result<(), Failure> {
    let cfg = selection_config(file, &a.sel);
    if a.offline {
        let checks = fetch::validate_fixtures(&cfg.data_dir, &cfg.symbols);
        let mut bad = Vec::new();
        for (symbol, path, r) in &checks {
            match r {
                Ok(s) => {
                    let obs = s.observations();
                    println!(
                        "{symbol}\tok\t{} rows\t{}..{}",
                        obs.len(),
                        obs[0].date,
                        obs[obs.len() - 1].date
                    );
                }
                Err(e) => {
                    eprintln!("{symbol}\tfailed\t{}: {e}", path.display());
                    bad.push(symbol.as_str());
                }
            }
        }
        return if bad.is_empty() {
            Ok(())
        } else {
            Err(fail(
                Kind::Data,
                format!("invalid fixtures: {}", bad.join(",")),
            ))
        };
    }

    let start = a
        .start
        .or(file.fetch.start)
        .unwrap_or(NaiveDate::from_ymd_opt(2008, 1, 1).unwrap());
    let end = a.end.or(file.fetch.end).unwrap_or_else(|| {
        let last = cfg.test_years.iter().copied().max().unwrap_or(2024);
        NaiveDate::from_ymd_opt(last, 12, 31).unwrap()
    });
    if end < start {
        return Err(fail(
            Kind::Config,
            format!("fetch range {start}..{end} is empty"),
        ));
    }
    let template = a
        .url
        .or(file.fetch.url.clone())
        .unwrap_or(DEFAULT_URL.to_string());
    let jobs: Vec<fetch::FetchJob> = cfg
        .symbols
        .iter()
        .map(|s| fetch::FetchJob {
            symbol: s.clone(),
            url: fetch::expand_url(&template, s, &config::ticker(&file.fetch, s), start, end),
        })
        .collect();
    let parallel = a.parallel || file.fetch.parallel.unwrap_or(false);
    let results = fetch::fetch_all(&jobs, &cfg.data_dir, parallel);
    let mut bad = Vec::new();
    for (job, r) in jobs.iter().zip(&results) {
        match r {
            Ok(s) => println!("{}\tok\t{} rows", job.symbol, s.len()),
            Err(e) => {
                eprintln!("{}\tfailed\t{e}", job.symbol);
                bad.push(job.symbol.as_str());
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(fail(
            Kind::Network,
            format!("fetch failed for {}", bad.join(",")),
        ))
    }
}

fn cmd_run(file: &FileConfig, a: RunArgs) -> Result<(), Failure> {
    let o = Overrides {
        symbols: a.sel.symbols,
        years: a.years,
        method: a.method,
        seed: a.seed,
        data_dir: a.sel.data_dir,
        out_dir: a.out,
        gamma_divisor: a.gamma_divisor,
        threads: a.threads,
        include_timings: a.timings,
    };
    let cfg = config::experiment_config(file, &o, env_data_dir());
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    let written = emit_outputs(&report, &cfg.out_dir, cfg.include_timings)?;
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    let unconverged: usize = report.cells.iter().map(|c| c.unconverged_fits).sum();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} SVR fits stopped on the iteration budget");
    }
    let a = &report.aggregates;
    let mut line = String::from("overall average MAPE:");
    for (m, v) in &a.overall {
        line.push_str(&format!(" {m} {v:.2}%"));
    }
    for r in &a.reductions {
        line.push_str(&format!(
            "; {} reduction vs {} {:.2}%",
            r.method, r.baseline, r.percent
        ));
    }
    println!("{line}");
    Ok(())
}

fn cmd_report(file: &FileConfig, a: ReportArgs) -> Result<(), Failure> {
    let dir = a
        .out
        .or(file.out_dir.clone())
        .unwrap_or_else(|| ExperimentConfig::default().out_dir);
    let path = dir.join("report.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| fail(Kind::Data, format!("{}: {e}", path.display())))?;
    let rows = parse_report_csv(&text)?;
    let timings = text.lines().next().is_some_and(|h| h.ends_with(",seconds"));
    let scores: Vec<CellScore> = rows
        .iter()
        .map(|r| CellScore {
            symbol: r.symbol.clone(),
            year: r.test_year,
            method: r.method,
            mape: r.mape,
        })
        .collect();
    let agg = aggregate(&scores)?;
    print!("{}", markdown_tables(&rows, &agg, timings));
    Ok(())
}

fn cmd_summary(file: &FileConfig, a: SummaryArgs) -> Result<(), Failure> {
    let cfg = selection_config(file, &a.sel);
    let mut bad = Vec::new();
    println!("| Index | Period | Positive % | Negative % | Unchanged % | Moves |");
    println!("|---|---|---|---|---|---|");
    for (symbol, path, r) in fetch::validate_fixtures(&cfg.data_dir, &cfg.symbols) {
        let summary = r.and_then(|s| {
            let closes: Vec<f64> = s.observations().iter().map(|o| o.close).collect();
            let obs = s.observations();
            let period = format!("{}-{}", obs[0].date.year(), obs[obs.len() - 1].date.year());
            closings_summary(&closes)
                .map(|c| (period, c))
                .map_err(|e| e.to_string())
        });
        match summary {
            Ok((period, c)) => println!(
                "| {symbol} | {period} | {:.1} | {:.1} | {:.1} | {} |",
                100.0 * c.positive,
                100.0 * c.negative,
                100.0 * c.unchanged,
                c.moves
            ),
            Err(e) => {
                eprintln!("{symbol}\tfailed\t{}: {e}", path.display());
                bad.push(symbol);
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(fail(
            Kind::Data,
            format!("unreadable fixtures: {}", bad.join(",")),
        ))
    }
}
