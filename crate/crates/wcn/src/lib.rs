//! File formats, the training and tuning pipeline, and the `wcn` command line
//! on top of `wcn-core`.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod tuning;
