//! Regenerates the bundled synthetic fixtures in `data/`.
//!
//! Usage: cargo run -p trendcast-core --example make_fixtures -- [OUT_DIR]

use std::path::PathBuf;

use chrono::NaiveDate;
use trendcast::synth::{generate, to_csv, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    std::fs::create_dir_all(&out)?;
    let start = NaiveDate::from_ymd_opt(2008, 4, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2024, 12, 31).unwrap();
    // symbol, first close, annual drift, annual volatility
    let specs = [
        ("DAX", 6500.0, 0.07, 0.21),
        ("DJI", 12300.0, 0.08, 0.17),
        ("N225", 12500.0, 0.06, 0.22),
        ("NIFTY", 4700.0, 0.11, 0.18),
        ("SSE", 3400.0, 0.01, 0.24),
    ];
    for (k, (symbol, initial, drift, volatility)) in specs.into_iter().enumerate() {
        let spec = SynthSpec {
            start,
            end,
            initial,
            drift,
            volatility,
            shift: None,
            missing_rate: 0.04,
            seed: 1 + k as u64,
        };
        let series = generate(symbol, &spec)?;
        let path = out.join(format!("{symbol}.csv"));
        std::fs::write(&path, to_csv(&series))?;
        println!("{}\t{} rows", path.display(), series.len());
    }
    Ok(())
}
