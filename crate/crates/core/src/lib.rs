//! Sparsity-invariant, multitask convolutional forecasting of gridded PM2.5.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] holds dense tensors, sparsity masks, a small reverse-mode
//!   tape over the handful of operations the network needs, the `WFT1`
//!   binary tensor format and a finite-difference gradient checker.
//! * [`network`] builds the three-headed architecture (a shared backbone
//!   feeding `fw`, `bscan` and `pm25` branches), its masked multitask L1
//!   loss, the Adam optimizer, training loop and checkpoints.
//! * [`grid`] maps timestamped point observations onto the forecast grid
//!   and composes 24-hour-ahead training samples.
//! * [`synth`] is a 2-D advection-diffusion world producing dense ground
//!   truth, derived input channels and sparse station labels.
//! * [`eval`] scores predictions at stations and densely, buckets them by
//!   fire season and writes heatmaps.
//! * [`config`] is the flat `key = value` run configuration shared by the CLI.

pub mod config;
pub mod error;
pub mod eval;
pub mod grid;
pub mod network;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
