//! File formats, metrics, reports and the command-line driver for `mrcae-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data_file;
mod error;
mod framing;
pub mod metrics;
pub mod report;

pub use error::{Error, Result};
