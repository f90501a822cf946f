//! Multi-periodic time-series forecasting primitives.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! pipeline: preprocessing of frames, wavelet period analysis, 2D folding of
//! sequences, the period-folding convolutional network with exact gradients,
//! training and recursive forecasting, error metrics, and a tree-structured
//! Parzen estimator for hyperparameter search. File formats and the command
//! line live in the companion `wcn` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod frame;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod period;
pub mod tensorize;
pub mod tpe;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use frame::{TimeOrigin, TimeSeriesFrame};
pub use matrix::Matrix;
