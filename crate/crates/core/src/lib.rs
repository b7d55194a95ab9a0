//! LSTM encoder-decoder anomaly detection for multivariate time series.

pub mod cli;
pub mod config;
pub mod data;
pub mod detection;
pub mod error;
pub mod lstm;
pub mod numerics;
pub mod pipeline;
pub mod plot;
pub mod scoring;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
