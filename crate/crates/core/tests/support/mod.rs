//! Shared test oracles. Nothing in here calls into the crate's solver or
//! optimiser code paths.

#![allow(dead_code)]

pub mod qp_oracle;
