//! Unsupervised cardiac-anomaly detection in PPG waveforms.
//!
//! An LSTM sequence-to-sequence autoencoder is trained on clean, regular
//! pulse segments; at inference time, half-second windows where the input
//! and its reconstruction stop correlating are flagged as anomalous.
//!
//! Modules follow the pipeline order: [`synthppg`] generates labeled
//! records, [`dsp`] conditions and segments them, [`screen`] selects clean
//! training segments, [`nnet`] holds the autoencoder, [`detector`] flags
//! regions and [`evalharness`] scores them against per-minute PVC counts.

pub mod config;
pub mod detector;
pub mod dsp;
pub mod error;
pub mod evalharness;
pub mod nnet;
pub mod par;
pub mod screen;
pub mod synthppg;

pub use error::{Error, Result};
