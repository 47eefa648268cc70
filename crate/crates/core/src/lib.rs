//! Forecasting toolkit for EV charging demand.
//!
//! The pipeline runs from raw 15-minute charging-station measurements to a
//! validated forecast:
//!
//! - [`ingest`]: CSV parsing, gap interpolation and anomaly filtering.
//! - [`features`]: daily aggregates, normalized channels, correlation,
//!   derivative and ratio signals, rolling averages.
//! - [`spectral`]: Hanning-windowed DFT of the correlation signal and
//!   dominant-period extraction.
//! - [`lstm`]: stacked LSTM with a fully connected multi-step head.
//! - [`train`]: noise augmentation, windowing, chronological splits,
//!   backpropagation through time, Adam and early stopping.
//! - [`eval`]: R², MSE, RMSE and MAE reports.
//! - [`gridval`]: Newton–Raphson AC power flow on a radial feeder and
//!   voltage-deviation reports for actual vs. predicted load.
//! - [`synth`]: seeded synthetic charging data used by tests and demos.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod features;
pub mod gridval;
pub mod ingest;
pub mod lstm;
pub mod spectral;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use eval::MetricReport;
pub use features::{FeatureKind, FeatureMatrix, NormalizationMaxima};
pub use gridval::{DeviationReport, GridCase, VoltageSolution};
pub use ingest::{RawRecord, StationSeries};
pub use lstm::{Dims, ModelParams};
pub use spectral::SpectrumReport;
pub use train::{Checkpoint, TrainConfig};

/// Seed used whenever a caller does not supply one.
pub const DEFAULT_SEED: u64 = 20_240_101;
