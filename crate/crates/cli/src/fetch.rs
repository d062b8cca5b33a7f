//! Download of daily price history as CSV over HTTP, one file per symbol.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use trendcast::pipeline::fixture_path;
use trendcast::series::{load_series, parse_series, RawSeries};

const RESPONSE_LIMIT: u64 = 64 << 20;

/// Fills `{symbol}`, `{ticker}`, `{start}`, `{end}` (ISO dates) and
/// `{period1}`, `{period2}` (Unix seconds, end exclusive) in `template`.
pub fn expand_url(
    template: &str,
    symbol: &str,
    ticker: &str,
    start: NaiveDate,
    end: NaiveDate,
) -> String {
    let unix = |d: NaiveDate| {
        d.and_hms_opt(0, 0, 0)
            .unwrap()
            .and_utc()
            .timestamp()
            .to_string()
    };
    template
        .replace("{symbol}", symbol)
        .replace("{ticker}", &encode(ticker))
        .replace("{start}", &start.to_string())
        .replace("{end}", &end.to_string())
        .replace("{period1}", &unix(start))
        .replace("{period2}", &unix(end + chrono::Duration::days(1)))
}

fn encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                (b as char).to_string()
            }
            _ => format!("%{b:02X}"),
        })
        .collect()
}

pub fn agent() -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout_connect(Duration::from_secs(10))
        .timeout(Duration::from_secs(60))
        .build()
}

/// Downloads one symbol and replaces its fixture only if the whole body
/// arrived and parses as a price series.
pub fn fetch_symbol(
    agent: &ureq::Agent,
    url: &str,
    symbol: &str,
    out_dir: &Path,
) -> Result<RawSeries, String> {
    let response = agent.get(url).call().map_err(|e| match e {
        ureq::Error::Status(code, _) => format!("HTTP {code}"),
        ureq::Error::Transport(t) => t.to_string(),
    })?;
    let mut body = Vec::new();
    response
        .into_reader()
        .take(RESPONSE_LIMIT)
        .read_to_end(&mut body)
        .map_err(|e| format!("incomplete response: {e}"))?;
    let series =
        parse_series(body.as_slice(), symbol).map_err(|e| format!("unusable response: {e}"))?;
    write_atomic(&fixture_path(out_dir, symbol), &body).map_err(|e| e.to_string())?;
    Ok(series)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub struct FetchJob {
    pub symbol: String,
    pub url: String,
}

/// Runs every job, sequentially unless `parallel`; results keep job order.
pub fn fetch_all(
    jobs: &[FetchJob],
    out_dir: &Path,
    parallel: bool,
) -> Vec<Result<RawSeries, String>> {
    let agent = agent();
    if !parallel {
        return jobs
            .iter()
            .map(|j| fetch_symbol(&agent, &j.url, &j.symbol, out_dir))
            .collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|j| {
                let agent = agent.clone();
                s.spawn(move || fetch_symbol(&agent, &j.url, &j.symbol, out_dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err("download thread panicked".into()))
            })
            .collect()
    })
}

/// Parses each existing fixture without touching the network.
pub fn validate_fixtures(
    data_dir: &Path,
    symbols: &[String],
) -> Vec<(String, PathBuf, Result<RawSeries, String>)> {
    symbols
        .iter()
        .map(|s| {
            let path = fixture_path(data_dir, s);
            let result = if path.is_file() {
                load_series(&path, s).map_err(|e| e.to_string())
            } else {
                Err("missing".to_string())
            };
            (s.clone(), path, result)
        })
        .collect()
}
