//! Long-horizon daily index forecasting with a genetic algorithm tuning an
//! epsilon-SVR whose only input is the scaled trading-day index.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fitness;
pub mod ga;
pub mod pipeline;
pub mod series;
pub mod svr;
pub mod synth;
