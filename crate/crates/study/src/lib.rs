//! Strict online day-ahead forecasting study.
//!
//! Ingests hourly market data (or generates a synthetic market), builds the
//! per-parameter designs, runs the model zoo through a day-by-day online
//! protocol with audited data access, and writes score tables, per-day score
//! series, Diebold–Mariano matrices, timing tables, plots and snapshots.

pub mod audit;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod frame;
pub mod report;
pub mod runner;
pub mod synth;
pub mod zoo;

pub use error::{Result, StudyError};
