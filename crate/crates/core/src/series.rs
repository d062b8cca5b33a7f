//! Daily close-price series: ingestion, weekday alignment, min-max scaling
//! and year-based train/test splitting.

use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("format error: {0}")]
    Format(String),
    #[error("no usable rows in input for {0}")]
    EmptyInput(String),
    #[error("data error: duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("data error: non-positive close {close} on {date}")]
    NonPositiveClose { date: NaiveDate, close: f64 },
    #[error(
        "cannot backfill: first weekday {first_weekday} precedes earliest observation {earliest}"
    )]
    CannotBackfill {
        first_weekday: NaiveDate,
        earliest: NaiveDate,
    },
    #[error("date range {start}..={end} contains no weekdays")]
    EmptyRange { start: NaiveDate, end: NaiveDate },
    #[error("degenerate scaler: all values equal {0}")]
    DegenerateScaler(f64),
    #[error("scaler input must be finite")]
    NonFinite,
    #[error("test year {year} not fully covered by series {start}..={end}")]
    Coverage {
        year: i32,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("no training rows before test year {0}")]
    InsufficientHistory(i32),
    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub date: NaiveDate,
    pub close: f64,
}

/// Close prices as delivered by the data source, sorted by date.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    symbol: String,
    observations: Vec<Observation>,
}

impl RawSeries {
    /// Builds a series from unordered observations, enforcing the
    /// strictly-increasing, positive-close invariants.
    pub fn new(
        symbol: impl Into<String>,
        mut observations: Vec<Observation>,
    ) -> Result<Self, SeriesError> {
        let symbol = symbol.into();
        if observations.is_empty() {
            return Err(SeriesError::EmptyInput(symbol));
        }
        observations.sort_by_key(|o| o.date);
        for pair in observations.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(SeriesError::DuplicateDate(pair[0].date));
            }
        }
        if let Some(bad) = observations
            .iter()
            .find(|o| !(o.close > 0.0) || !o.close.is_finite())
        {
            return Err(SeriesError::NonPositiveClose {
                date: bad.date,
                close: bad.close,
            });
        }
        Ok(Self {
            symbol,
            observations,
        })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Parses a comma-delimited price table with `Date` and `Close` columns.
///
/// Header matching is case-insensitive; other columns are ignored. Rows whose
/// close is empty or not a number (vendors write `null`) are dropped.
pub fn parse_series<R: Read>(reader: R, symbol: &str) -> Result<RawSeries, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| SeriesError::Format(format!("{symbol}: unreadable header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
    };
    let (date_col, close_col) = match (find("date"), find("close")) {
        (Some(d), Some(c)) => (d, c),
        _ => {
            return Err(SeriesError::Format(format!(
                "{symbol}: header must name Date and Close columns, got [{}]",
                headers.iter().collect::<Vec<_>>().join(",")
            )))
        }
    };

    let mut observations = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record =
            record.map_err(|e| SeriesError::Format(format!("{symbol}: row {}: {e}", line + 2)))?;
        let Some(raw_date) = record.get(date_col) else {
            continue;
        };
        if raw_date.is_empty() {
            continue;
        }
        let close = match record.get(close_col).map(str::parse::<f64>) {
            Some(Ok(v)) if v.is_finite() => v,
            _ => continue,
        };
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| {
            SeriesError::Format(format!(
                "{symbol}: row {}: bad date {raw_date:?}: {e}",
                line + 2
            ))
        })?;
        observations.push(Observation { date, close });
    }
    RawSeries::new(symbol, observations)
}

pub fn load_series(path: &Path, symbol: &str) -> Result<RawSeries, SeriesError> {
    let file = std::fs::File::open(path).map_err(|source| SeriesError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_series(file, symbol)
}

pub fn is_weekday(date: NaiveDate) -> bool {
    !matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Every Monday–Friday date in `[start, end]`.
pub fn weekdays(start: NaiveDate, end: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    start
        .iter_days()
        .take_while(move |d| *d <= end)
        .filter(|d| is_weekday(*d))
}

pub fn weekday_count(start: NaiveDate, end: NaiveDate) -> usize {
    weekdays(start, end).count()
}

/// Number of weekdays in a calendar year.
pub fn weekdays_in_year(year: i32) -> usize {
    let (start, end) = year_bounds(year);
    weekday_count(start, end)
}

fn year_bounds(year: i32) -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
        NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedRow {
    pub date: NaiveDate,
    pub ordinal: usize,
    pub close: f64,
}

/// A close series on the Monday–Friday calendar with no gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries {
    symbol: String,
    start: NaiveDate,
    end: NaiveDate,
    rows: Vec<AlignedRow>,
}

impl AlignedSeries {
    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    pub fn rows(&self) -> &[AlignedRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn closes(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.close)
    }
}

/// Puts `raw` on the weekday calendar of `[start, end]`, carrying the last
/// known close forward over missing days. Never fills backwards.
pub fn align_series(
    raw: &RawSeries,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<AlignedSeries, SeriesError> {
    let mut days = weekdays(start, end).peekable();
    let first = *days.peek().ok_or(SeriesError::EmptyRange { start, end })?;
    let obs = raw.observations();
    let earliest = obs[0].date;
    if earliest > first {
        return Err(SeriesError::CannotBackfill {
            first_weekday: first,
            earliest,
        });
    }

    let mut cursor = 0;
    let mut last_close = obs[0].close;
    let mut rows = Vec::new();
    for (ordinal, date) in days.enumerate() {
        while cursor < obs.len() && obs[cursor].date <= date {
            last_close = obs[cursor].close;
            cursor += 1;
        }
        rows.push(AlignedRow {
            date,
            ordinal,
            close: last_close,
        });
    }
    Ok(AlignedSeries {
        symbol: raw.symbol().to_string(),
        start,
        end,
        rows,
    })
}

/// Min/max pair for one channel of min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalerParams {
    min: f64,
    max: f64,
}

impl ScalerParams {
    pub fn new(min: f64, max: f64) -> Result<Self, SeriesError> {
        if !min.is_finite() || !max.is_finite() {
            return Err(SeriesError::NonFinite);
        }
        if max <= min {
            return Err(SeriesError::DegenerateScaler(min));
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// `(x - min) / (max - min)`; values outside the fitted range extrapolate.
    pub fn transform(&self, x: f64) -> f64 {
        (x - self.min) / self.range()
    }

    pub fn inverse_transform(&self, s: f64) -> f64 {
        s * self.range() + self.min
    }
}

pub fn fit_minmax(values: &[f64]) -> Result<ScalerParams, SeriesError> {
    if values.is_empty() {
        return Err(SeriesError::EmptyInput("scaler".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SeriesError::NonFinite);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ScalerParams::new(min, max)
}

/// Row ranges of a year-based holdout split over an [`AlignedSeries`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub test_year: i32,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Train on everything before Jan 1 of `test_year`, test on that year's
/// weekdays. Scalers must be fit on the train rows only.
pub fn split_by_test_year(
    series: &AlignedSeries,
    test_year: i32,
) -> Result<SplitSpec, SeriesError> {
    let (jan1, dec31) = year_bounds(test_year);
    let train_len = series.rows.partition_point(|r| r.date < jan1);
    if train_len == 0 {
        return Err(SeriesError::InsufficientHistory(test_year));
    }
    let first_wd = weekdays(jan1, dec31)
        .next()
        .expect("every year has weekdays");
    let last_wd = weekdays(jan1, dec31)
        .last()
        .expect("every year has weekdays");
    if series.start > first_wd || series.end < last_wd {
        return Err(SeriesError::Coverage {
            year: test_year,
            start: series.start,
            end: series.end,
        });
    }
    let test_end = series.rows.partition_point(|r| r.date <= dec31);
    Ok(SplitSpec {
        test_year,
        train: 0..train_len,
        test: train_len..test_end,
    })
}

/// Share of day-over-day moves that closed up, down or unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosingsSummary {
    pub positive: f64,
    pub negative: f64,
    pub unchanged: f64,
    pub moves: usize,
}

pub fn closings_summary(closes: &[f64]) -> Result<ClosingsSummary, SeriesError> {
    if closes.len() < 2 {
        return Err(SeriesError::InsufficientData {
            needed: 2,
            got: closes.len(),
        });
    }
    let (mut up, mut down, mut flat) = (0usize, 0usize, 0usize);
    for w in closes.windows(2) {
        let d = w[1] - w[0];
        if d > 0.0 {
            up += 1;
        } else if d < 0.0 {
            down += 1;
        } else {
            flat += 1;
        }
    }
    let moves = closes.len() - 1;
    let n = moves as f64;
    Ok(ClosingsSummary {
        positive: up as f64 / n,
        negative: down as f64 / n,
        unchanged: flat as f64 / n,
        moves,
    })
}

/// The date `years` calendar years before `date`, clamping Feb 29.
pub fn years_before(date: NaiveDate, years: i32) -> NaiveDate {
    let year = date.year() - years;
    NaiveDate::from_ymd_opt(year, date.month(), date.day())
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(year, date.month(), 28).unwrap())
}
