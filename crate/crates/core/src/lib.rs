//! Multi-resolution 1D convolutional ECG interpreter with parameter-isolation
//! continual learning.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autograd`]: a small deterministic array type and a
//!   tape-based reverse-mode differentiation engine with every operator the
//!   network needs.
//! - [`encoder`], [`decoders`], [`network`]: the four-stage multi-resolution
//!   backbone and its segmentation / classification heads.
//! - [`cl`]: weight ownership, magnitude pruning, pick masks and the
//!   train → prune → retrain task loop.
//! - [`data`]: synthetic ECG generation, band-pass filtering, windowing,
//!   CSV I/O and patient-stratified splits.
//! - [`train`]: optimizers, learning-rate schedule, loss and metrics.
//! - [`checkpoint`], [`config`], [`commands`]: persistence and the
//!   command-line workflows.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod cl;
pub mod commands;
pub mod data;
pub mod decoders;
pub mod encoder;
pub mod error;
pub mod network;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Real, Tensor};
