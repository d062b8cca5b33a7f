//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod support;

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::qp_oracle;
use trendcast::fitness::mape;
use trendcast::ga::{
    blend_crossover, init_population, mutate, run_ga, tournament_select, Chromosome, GaConfig,
    GeneBounds,
};
use trendcast::pipeline::{
    aggregate, emit_outputs, load_fixture, reduction_percent, run_experiment,
    run_experiment_observed, run_year_cell, CellEvent, CellObserver, CellScore, ExperimentConfig,
    Method,
};
use trendcast::series::{align_series, fit_minmax, split_by_test_year, RawSeries};
use trendcast::svr::{gamma_scale, train_svr, SolverSettings, SvrHyperParams};
use trendcast::synth::{generate, SynthSpec};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn svr_oracle_equivalence() -> Outcome {
    let settings = SolverSettings {
        tol: 1e-8,
        max_iter: Some(1_000_000),
    };
    let started = Instant::now();
    let (mut worst_rel, mut worst_pred) = (0.0f64, 0.0f64);
    let mut active = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(5..=25);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        x.sort_by(f64::total_cmp);
        let raw: Vec<f64> = x
            .iter()
            .map(|v| (6.0 * v).sin() + 0.3 * (rng.random::<f64>() - 0.5))
            .collect();
        let s = fit_minmax(&raw).unwrap();
        let y: Vec<f64> = raw.iter().map(|v| s.transform(*v)).collect();
        let p = SvrHyperParams::new(
            rng.random_range(0.01..=1.0),
            rng.random_range(0.1..=1.0),
            rng.random_range(0.0..=gamma_scale(&x).unwrap() / 10.0),
        )
        .unwrap();
        let (model, report) = train_svr(&x, &y, p, &settings).unwrap();
        let oracle = qp_oracle::solve(&x, &y, p.c, p.epsilon, p.gamma);
        if oracle.beta.iter().any(|b| *b != 0.0) {
            active += 1;
        }
        let diff = (report.dual_objective - oracle.objective).abs();
        let rel = if diff < 1e-12 {
            0.0
        } else {
            diff / oracle.objective.abs().max(1e-12)
        };
        worst_rel = worst_rel.max(rel);
        for k in 0..=40 {
            let at = k as f64 / 40.0;
            let want = qp_oracle::predict(&x, &oracle.beta, oracle.bias, p.gamma, at);
            worst_pred = worst_pred.max((model.predict(at) - want).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: worst_rel <= 1e-6 && worst_pred <= 1e-5 && secs < 2.0,
        detail: format!(
            "50 instances ({active} with support vectors), worst objective rel diff {worst_rel:.2e} (<= 1e-6), worst prediction diff {worst_pred:.2e} (<= 1e-5), {secs:.2}s (< 2s)"
        ),
    }
}

fn ga_optimum_recovery() -> Outcome {
    let started = Instant::now();
    let b = GeneBounds::improved(12.0, 10.0).unwrap();
    let mid = b.midpoint();
    let f = |c: &Chromosome| (0..3).map(|i| (c.genes[i] - mid[i]).powi(2)).sum::<f64>();
    // Grid oracle: cell centres of a 50^3 grid; the minimizer is the cell
    // holding the midpoint.
    let mut grid_best = ([0.0; 3], f64::INFINITY);
    for i in 0..50 {
        for j in 0..50 {
            for k in 0..50 {
                let g: [f64; 3] = std::array::from_fn(|d| {
                    let (lo, hi) = b.range(d);
                    let idx = [i, j, k][d] as f64;
                    lo + (hi - lo) * (idx + 0.5) / 50.0
                });
                let v = f(&Chromosome::new(g));
                if v < grid_best.1 {
                    grid_best = (g, v);
                }
            }
        }
    }
    let grid_ok = (0..3).all(|d| (grid_best.0[d] - mid[d]).abs() / b.width(d) <= 0.01 + 1e-12);
    let hits = (0..100u64)
        .filter(|&seed| {
            let cfg = GaConfig {
                seed,
                ..GaConfig::default()
            };
            let best = run_ga(&b, &cfg, f).unwrap().best;
            (0..3).all(|d| (best.genes[d] - mid[d]).abs() / b.width(d) <= 1e-2)
        })
        .count();
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: grid_ok && hits >= 95 && secs < 5.0,
        detail: format!(
            "{hits}/100 runs within 1e-2 of the midpoint (>= 95), grid oracle agrees: {grid_ok}, {secs:.2}s (< 5s)"
        ),
    }
}

fn aggregate_arithmetic() -> Outcome {
    let yearly: Vec<CellScore> = [11.55, 9.61, 6.38, 8.11]
        .iter()
        .zip(2021..)
        .map(|(&m, year)| CellScore {
            symbol: "ALL".into(),
            year,
            method: Method::Iga,
            mape: m,
        })
        .collect();
    let overall = aggregate(&yearly).unwrap().overall[&Method::Iga];
    let nifty: Vec<CellScore> = [23.91, 3.99, 2.97, 3.93]
        .iter()
        .zip(2021..)
        .map(|(&m, year)| CellScore {
            symbol: "NIFTY".into(),
            year,
            method: Method::Iga,
            mape: m,
        })
        .collect();
    let nifty_avg = aggregate(&nifty).unwrap().per_symbol[&(Method::Iga, "NIFTY".to_string())];
    let r1 = reduction_percent(8.91, 11.12);
    let r2 = reduction_percent(8.91, 17.83);
    let pass = (overall - 8.91).abs() <= 0.005
        && (nifty_avg - 8.70).abs() <= 0.005
        && (r1 - 19.87).abs() <= 0.01
        && (r2 - 50.03).abs() <= 0.01;
    Outcome {
        pass,
        detail: format!(
            "overall {overall:.4} (8.91 +- 0.005), NIFTY {nifty_avg:.4} (8.70 +- 0.005), reductions {r1:.3}% (19.87 +- 0.01), {r2:.3}% (50.03 +- 0.01)"
        ),
    }
}

/// Twenty seeded trending random walks, 2013-2020, with a milder, noisier
/// regime from mid 2019.
fn synthetic_series(k: u64) -> trendcast::series::AlignedSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
    let drift = rng.random_range(0.08..0.16);
    let volatility = rng.random_range(0.12..0.20);
    let spec = SynthSpec {
        start: date(2013, 1, 1),
        end: date(2020, 12, 31),
        initial: rng.random_range(1000.0..20000.0),
        drift,
        volatility,
        shift: Some((date(2019, 7, 1), 0.6 * drift, 1.2 * volatility)),
        missing_rate: 0.03,
        seed: 1000 + k,
    };
    let raw = generate(&format!("SYN{k:02}"), &spec).unwrap();
    align_series(&raw, spec.start, spec.end).unwrap()
}

fn method_comparison() -> Outcome {
    let started = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    for k in 0..20u64 {
        let series = synthetic_series(k);
        let cfg = ExperimentConfig {
            seed: k,
            ..ExperimentConfig::default()
        };
        let iga = run_year_cell(&series, 2020, Method::Iga, &cfg).unwrap();
        let oga = run_year_cell(&series, 2020, Method::Oga, &cfg).unwrap();
        if iga.mape < oga.mape {
            wins += 1;
        }
        lines.push(format!("{:.2}/{:.2}", iga.mape, oga.mape));
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: wins >= 14 && secs < 180.0,
        detail: format!(
            "IGA below OGA in {wins}/20 cells (>= 14), {secs:.0}s (< 180s); IGA/OGA MAPE per series: {}",
            lines.join(" ")
        ),
    }
}

fn bundled_fixture_band() -> Outcome {
    let started = Instant::now();
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        methods: vec![Method::Iga, Method::Oga],
        data_dir: data_dir(),
        out_dir: out.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("experiment failed: {e}"),
            }
        }
    };
    emit_outputs(&report, out.path(), false).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let iga = report.aggregates.overall[&Method::Iga];
    let oga = report.aggregates.overall[&Method::Oga];
    Outcome {
        pass: iga < oga && (4.0..=20.0).contains(&iga) && secs < 600.0,
        detail: format!(
            "synthetic stand-in fixtures, 5 symbols x 2021-2024: IGA overall {iga:.2}% vs OGA {oga:.2}% (IGA lower, IGA in [4, 20]), {secs:.0}s (< 600s)"
        ),
    }
}

#[derive(Default)]
struct Log(Mutex<Vec<(String, i32, Method, CellEvent)>>);

impl CellObserver for Log {
    fn record(&self, symbol: &str, year: i32, method: Method, event: CellEvent) {
        self.0
            .lock()
            .unwrap()
            .push((symbol.to_string(), year, method, event));
    }
}

fn small_config(out: &Path, threads: usize) -> ExperimentConfig {
    ExperimentConfig {
        symbols: vec!["NIFTY".into(), "DJI".into()],
        test_years: vec![2022, 2023],
        methods: vec![Method::Iga, Method::Oga],
        ga: GaConfig {
            population_size: 12,
            generations: 4,
            ..GaConfig::default()
        },
        data_dir: data_dir(),
        out_dir: out.to_path_buf(),
        seed: 7,
        threads,
        ..ExperimentConfig::default()
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism_and_leakage() -> Outcome {
    let mut failures = Vec::new();

    // Byte-identical reports across parallelism levels.
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let log = Log::default();
    let ra = run_experiment_observed(&small_config(a.path(), 1), &log).unwrap();
    let rb = run_experiment(&small_config(b.path(), 4)).unwrap();
    emit_outputs(&ra, a.path(), false).unwrap();
    emit_outputs(&rb, b.path(), false).unwrap();
    let (fa, fb) = (read_dir_bytes(a.path()), read_dir_bytes(b.path()));
    if fa != fb || fa.len() != 2 * 2 * 2 + 2 {
        failures.push("report bytes differ between 1 and 4 threads".to_string());
    }

    // Instrumented access: training rows only before prediction, test rows after.
    let events = log.0.into_inner().unwrap();
    let series = load_fixture(&data_dir(), "DJI", 2023).unwrap();
    let nifty = load_fixture(&data_dir(), "NIFTY", 2023).unwrap();
    let mut cells = 0;
    for symbol in ["DJI", "NIFTY"] {
        let s = if symbol == "DJI" { &series } else { &nifty };
        for year in [2022, 2023] {
            let split = split_by_test_year(s, year).unwrap();
            for method in Method::ALL {
                cells += 1;
                let ev: Vec<&CellEvent> = events
                    .iter()
                    .filter(|e| e.0 == symbol && e.1 == year && e.2 == method)
                    .map(|e| &e.3)
                    .collect();
                let predicted = ev.iter().position(|e| **e == CellEvent::Predicted);
                let ok = match predicted {
                    None => false,
                    Some(p) => ev.iter().enumerate().all(|(i, e)| match e {
                        CellEvent::TrainRead(r) => i < p && r.end <= split.test.start,
                        CellEvent::Predicted => i == p,
                        CellEvent::TestRead(r) => i > p && *r == split.test,
                    }),
                };
                if !ok {
                    failures.push(format!(
                        "access order violated in {symbol} {year} {method}: {ev:?}"
                    ));
                }
            }
        }
    }

    // Poisoning the test year must not change the forecast.
    let raw = trendcast::series::load_series(&data_dir().join("DJI.csv"), "DJI").unwrap();
    let poisoned: Vec<_> = raw
        .observations()
        .iter()
        .map(|o| {
            let mut o = *o;
            if o.date >= date(2023, 1, 1) {
                o.close *= 3.0;
            }
            o
        })
        .collect();
    let poisoned = RawSeries::new("DJI", poisoned).unwrap();
    let clean_s = align_series(&raw, series.start(), series.end()).unwrap();
    let bad_s = align_series(&poisoned, series.start(), series.end()).unwrap();
    let cfg = small_config(a.path(), 1);
    for method in Method::ALL {
        let c = run_year_cell(&clean_s, 2023, method, &cfg).unwrap();
        let p = run_year_cell(&bad_s, 2023, method, &cfg).unwrap();
        if c.predictions != p.predictions || c.params != p.params {
            failures.push(format!("{method} forecast depends on test-year prices"));
        }
    }

    // Invariant suites in miniature.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let bounds = GeneBounds::improved(12.0, 10.0).unwrap();
    let gcfg = GaConfig {
        mutation_rate: 0.7,
        mutation_sigma: 2.0,
        ..GaConfig::default()
    };
    let mut pop = init_population(&bounds, &gcfg, &mut rng);
    for step in 0..500 {
        for (i, c) in pop.iter_mut().enumerate() {
            c.fitness = Some(((i + step) % 7) as f64);
        }
        let x = tournament_select(&pop, 3, &mut rng).unwrap();
        let y = pop[step % pop.len()];
        let child = mutate(
            &blend_crossover(&x, &y, &bounds, &mut rng),
            &bounds,
            &gcfg,
            &mut rng,
        );
        if !bounds.contains(&child.genes) {
            failures.push("bound closure".into());
            break;
        }
        let n = pop.len();
        pop[step % n] = child;
    }
    for seed in 0..10 {
        let r = run_ga(
            &bounds,
            &GaConfig {
                seed,
                generations: 10,
                ..GaConfig::default()
            },
            |c: &Chromosome| (c.genes[0] * 7.0).sin().abs() + c.genes[1] * c.genes[2],
        )
        .unwrap();
        if !r.history().windows(2).all(|w| w[1] <= w[0]) {
            failures.push("elitist monotonicity".into());
        }
    }
    for seed in 0..30u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = r.random_range(10..200);
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v + 0.2 * r.random::<f64>()).collect();
        let p = SvrHyperParams::new(
            r.random_range(0.01..5.0),
            r.random_range(0.0..0.2),
            r.random_range(0.0..20.0),
        )
        .unwrap();
        let settings = SolverSettings::default();
        let (m, rep) = train_svr(&x, &y, p, &settings).unwrap();
        let sum: f64 = m.beta().iter().sum();
        if sum.abs() > 1e-9 * p.c * n as f64
            || m.beta().iter().any(|b| b.abs() > p.c + 1e-12)
            || !rep.converged
            || rep.kkt_violation > settings.tol
        {
            failures.push(format!("KKT feasibility, seed {seed}"));
        }
    }
    for _ in 0..200 {
        let v: Vec<f64> = (0..20).map(|_| rng.random_range(-1e4..1e4)).collect();
        let s = fit_minmax(&v).unwrap();
        if v.iter()
            .any(|&a| (s.inverse_transform(s.transform(a)) - a).abs() > 1e-9 * a.abs().max(1.0))
        {
            failures.push("scaler round trip".into());
            break;
        }
        let a: Vec<f64> = v.iter().map(|x| x.abs() + 1.0).collect();
        let k = rng.random_range(0.01..100.0);
        let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
        let kv: Vec<f64> = v.iter().map(|x| x * k).collect();
        let (m0, m1) = (mape(&a, &v).unwrap(), mape(&ka, &kv).unwrap());
        if mape(&a, &a).unwrap() != 0.0 || (m0 - m1).abs() > 1e-9 * m0.max(1.0) || m0 < 0.0 {
            failures.push("MAPE properties".into());
            break;
        }
    }

    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "report bytes identical at 1 and 4 threads ({} files), {cells} cells read test rows only after predicting, poisoned test year leaves forecasts unchanged, invariant suites hold",
                fa.len()
            )
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 6] = [
        ("1 SVR oracle equivalence", svr_oracle_equivalence),
        ("2 GA optimum recovery", ga_optimum_recovery),
        ("3 aggregate and reduction arithmetic", aggregate_arithmetic),
        ("4 method comparison on synthetic series", method_comparison),
        ("5 bundled fixture band check", bundled_fixture_band),
        ("6 determinism and leakage", determinism_and_leakage),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let o = run();
        let took = started.elapsed();
        println!(
            "criterion {name}: {} ({}) [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
