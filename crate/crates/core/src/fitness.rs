//! Scores minimized by the GA, and the MAPE metric.

use std::ops::Range;

use chrono::NaiveDate;
use thiserror::Error;

use crate::series::{years_before, ScalerParams};
use crate::svr::{gamma_scale, train_svr, SolverSettings, SvrError, SvrHyperParams, SvrModel};

/// Length of the recent horizon in calendar years.
pub const RECENT_YEARS: i32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum FitnessError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("actual value at position {0} is zero")]
    ZeroActual(usize),
    #[error("invalid rolling scheme: {0}")]
    Config(String),
    #[error(transparent)]
    Svr(#[from] SvrError),
}

/// `100 * mean(|a - p| / |a|)`.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64, FitnessError> {
    if actual.len() != predicted.len() {
        return Err(FitnessError::Shape(format!(
            "{} actual vs {} predicted values",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(FitnessError::Shape("no values to score".into()));
    }
    let mut total = 0.0;
    for (i, (a, p)) in actual.iter().zip(predicted).enumerate() {
        if *a == 0.0 {
            return Err(FitnessError::ZeroActual(i));
        }
        total += ((a - p) / a).abs();
    }
    Ok(100.0 * total / actual.len() as f64)
}

/// Contiguous rows handed to a fitness function.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowBlock {
    /// Scaled inputs.
    pub x: Vec<f64>,
    /// Scaled targets.
    pub y: Vec<f64>,
    /// Original prices.
    pub close: Vec<f64>,
}

/// Read access to training rows; every fitness function goes through this
/// so tests can record exactly which rows were touched.
pub trait TrainingRows: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fetch(&self, range: Range<usize>) -> RowBlock;

    /// Maps scaled targets back to prices.
    fn price_scaler(&self) -> ScalerParams;
}

/// Training data of one cell plus the start of the recent horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessContext {
    rows: RowBlock,
    scaler: ScalerParams,
    recent_start_row: usize,
    settings: SolverSettings,
}

impl FitnessContext {
    pub fn new(
        rows: RowBlock,
        scaler: ScalerParams,
        recent_start_row: usize,
        settings: SolverSettings,
    ) -> Result<Self, FitnessError> {
        let n = rows.x.len();
        if rows.y.len() != n || rows.close.len() != n {
            return Err(FitnessError::Shape(format!(
                "{} inputs, {} targets, {} prices",
                n,
                rows.y.len(),
                rows.close.len()
            )));
        }
        if n == 0 {
            return Err(FitnessError::Shape("empty training set".into()));
        }
        if recent_start_row >= n {
            return Err(FitnessError::Shape(format!(
                "recent horizon starts at row {recent_start_row} of {n}"
            )));
        }
        if rows.x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FitnessError::Shape(
                "inputs must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            rows,
            scaler,
            recent_start_row,
            settings,
        })
    }

    pub fn rows(&self) -> &RowBlock {
        &self.rows
    }

    pub fn recent_start_row(&self) -> usize {
        self.recent_start_row
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }
}

impl TrainingRows for FitnessContext {
    fn len(&self) -> usize {
        self.rows.x.len()
    }

    fn fetch(&self, range: Range<usize>) -> RowBlock {
        RowBlock {
            x: self.rows.x[range.clone()].to_vec(),
            y: self.rows.y[range.clone()].to_vec(),
            close: self.rows.close[range].to_vec(),
        }
    }

    fn price_scaler(&self) -> ScalerParams {
        self.scaler
    }
}

/// First row dated on or after `RECENT_YEARS` calendar years before the
/// last date.
pub fn recent_start_row(dates: &[NaiveDate]) -> usize {
    let Some(&last) = dates.last() else {
        return 0;
    };
    let cutoff = years_before(last, RECENT_YEARS);
    dates.partition_point(|d| *d < cutoff)
}

/// A fitness value with the pieces it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub value: f64,
    /// Per-horizon (dual) or per-position (rolling) MAPEs.
    pub parts: Vec<f64>,
    /// False if any SVR fit stopped on its iteration budget.
    pub converged: bool,
}

/// Predictions for `xs`, using the lattice fast path when the inputs are
/// evenly spaced.
fn predict_block(model: &SvrModel, xs: &[f64], step: Option<f64>) -> Vec<f64> {
    step.and_then(|h| model.predict_on_lattice(xs, h))
        .unwrap_or_else(|| model.predict_many(xs))
}

fn mean_step(x: &[f64]) -> Option<f64> {
    (x.len() >= 2).then(|| (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64)
}

/// Trains once on every training row and averages the in-sample MAPE over
/// all rows and over the recent horizon, both on the price scale.
pub fn dual_horizon_fitness(
    ctx: &FitnessContext,
    params: SvrHyperParams,
) -> Result<Score, FitnessError> {
    let rows = &ctx.rows;
    let (_, report) = train_svr(&rows.x, &rows.y, params, &ctx.settings)?;
    let prices: Vec<f64> = report
        .fitted
        .iter()
        .map(|&s| ctx.scaler.inverse_transform(s))
        .collect();
    let full = mape(&rows.close, &prices)?;
    let r = ctx.recent_start_row;
    let recent = mape(&rows.close[r..], &prices[r..])?;
    Ok(Score {
        value: 0.5 * (full + recent),
        parts: vec![full, recent],
        converged: report.converged,
    })
}

/// Fixed-length rolling validation, in rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollingScheme {
    pub window: usize,
    pub validation: usize,
    pub step: usize,
}

impl Default for RollingScheme {
    /// Two years of weekdays to train, one to validate, advancing one year.
    fn default() -> Self {
        Self {
            window: 522,
            validation: 261,
            step: 261,
        }
    }
}

impl RollingScheme {
    pub fn validate(&self, train_len: usize) -> Result<(), FitnessError> {
        if self.window == 0 || self.validation == 0 || self.step == 0 {
            return Err(FitnessError::Config(format!(
                "window, validation and step must be positive, got {self:?}"
            )));
        }
        if self.window + self.validation > train_len {
            return Err(FitnessError::Config(format!(
                "window {} + validation {} exceeds {} training rows",
                self.window, self.validation, train_len
            )));
        }
        Ok(())
    }

    /// Start rows of each window. The last validation segment ends on the
    /// last training row; earlier positions step back from there.
    pub fn positions(&self, train_len: usize) -> Result<Vec<usize>, FitnessError> {
        self.validate(train_len)?;
        let slack = train_len - self.window - self.validation;
        let first = slack % self.step;
        Ok((first..=slack).step_by(self.step).collect())
    }
}

/// How the RBF width is chosen for each rolling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowGamma {
    /// Use the `gamma` in the hyperparameters as given.
    #[default]
    Fixed,
    /// Recompute `gamma_scale` from each window's inputs.
    ScaleOfWindow,
}

/// Mean out-of-sample MAPE over rolling positions. Each position trains on
/// its window and scores the rows right after it; no row past a position's
/// validation segment is read.
pub fn rolling_forward_fitness<R: TrainingRows + ?Sized>(
    rows: &R,
    scheme: &RollingScheme,
    params: SvrHyperParams,
    gamma: WindowGamma,
    settings: &SolverSettings,
) -> Result<Score, FitnessError> {
    let scaler = rows.price_scaler();
    let mut parts = Vec::new();
    let mut converged = true;
    for start in scheme.positions(rows.len())? {
        let fit = rows.fetch(start..start + scheme.window);
        let params = match gamma {
            WindowGamma::Fixed => params,
            WindowGamma::ScaleOfWindow => SvrHyperParams {
                gamma: gamma_scale(&fit.x)?,
                ..params
            },
        };
        let (model, report) = train_svr(&fit.x, &fit.y, params, settings)?;
        converged &= report.converged;
        let step = mean_step(&fit.x);
        drop(fit);
        let val_start = start + scheme.window;
        let val = rows.fetch(val_start..val_start + scheme.validation);
        let prices: Vec<f64> = predict_block(&model, &val.x, step)
            .into_iter()
            .map(|s| scaler.inverse_transform(s))
            .collect();
        parts.push(mape(&val.close, &prices)?);
    }
    Ok(Score {
        value: parts.iter().sum::<f64>() / parts.len() as f64,
        parts,
        converged,
    })
}
