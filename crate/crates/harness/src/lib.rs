//! Datasets, training, evaluation and audits for the equiformer crate.

pub mod audit;
pub mod cli;
pub mod config;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod toy;
pub mod train;
