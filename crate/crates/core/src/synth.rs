//! Seeded synthetic daily price series: a geometric random walk with drift,
//! an optional regime change, and randomly dropped weekdays.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::series::{weekdays, Observation, RawSeries, SeriesError};

const TRADING_DAYS: f64 = 261.0;

/// Drift and volatility are annualized, in log terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub initial: f64,
    pub drift: f64,
    pub volatility: f64,
    /// From this date on, drift and volatility switch to the given values.
    pub shift: Option<(NaiveDate, f64, f64)>,
    /// Probability that a weekday has no quote (holiday).
    pub missing_rate: f64,
    pub seed: u64,
}

pub fn generate(symbol: &str, spec: &SynthSpec) -> Result<RawSeries, SeriesError> {
    if !(spec.initial > 0.0)
        || !(spec.volatility >= 0.0)
        || !(0.0..1.0).contains(&spec.missing_rate)
    {
        return Err(SeriesError::Format(format!(
            "invalid synthetic spec {spec:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut log_price = spec.initial.ln();
    let mut obs = Vec::new();
    for (k, date) in weekdays(spec.start, spec.end).enumerate() {
        let (mu, sigma) = match spec.shift {
            Some((from, mu, sigma)) if date >= from => (mu, sigma),
            _ => (spec.drift, spec.volatility),
        };
        if k > 0 {
            let daily_sd = sigma / TRADING_DAYS.sqrt();
            log_price += mu / TRADING_DAYS - 0.5 * daily_sd * daily_sd
                + daily_sd * std_normal.sample(&mut rng);
        }
        // The first weekday is always quoted so the series can be aligned from it.
        let missing = rng.random_bool(spec.missing_rate);
        if k == 0 || !missing {
            obs.push(Observation {
                date,
                close: (log_price.exp() * 100.0).round() / 100.0,
            });
        }
    }
    RawSeries::new(symbol, obs)
}

/// Writes `Date,Open,High,Low,Close,Adj Close,Volume` rows with only the
/// date and close populated meaningfully.
pub fn to_csv(series: &RawSeries) -> String {
    let mut out = String::from("Date,Open,High,Low,Close,Adj Close,Volume\n");
    for o in series.observations() {
        let c = format!("{:.2}", o.close);
        out.push_str(&format!("{},{c},{c},{c},{c},{c},0\n", o.date));
    }
    out
}
