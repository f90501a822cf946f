use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Time of the first row of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TimeOrigin {
    /// Rows are labelled by integer sample index starting here.
    SampleIndex(i64),
    /// Rows are wall-clock instants; seconds since the Unix epoch.
    UnixSeconds(f64),
}

impl TimeOrigin {
    /// Origin of the row `offset` samples later at `freq` Hz.
    pub fn advanced(self, offset: usize, freq: f64) -> Self {
        match self {
            TimeOrigin::SampleIndex(i) => TimeOrigin::SampleIndex(i + offset as i64),
            TimeOrigin::UnixSeconds(s) => TimeOrigin::UnixSeconds(s + offset as f64 / freq),
        }
    }
}

/// A T×N block of samples with an observation mask.
///
/// `mask[t * N + n]` is true when the cell was observed. Missing cells hold
/// `NaN` in `values` until imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    values: Matrix,
    mask: Vec<bool>,
    sample_freq: f64,
    channel_names: Vec<String>,
    start_time: TimeOrigin,
}

impl TimeSeriesFrame {
    pub fn new(
        values: Matrix,
        mask: Vec<bool>,
        sample_freq: f64,
        channel_names: Vec<String>,
        start_time: TimeOrigin,
    ) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame must be at least 1x1, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if mask.len() != values.rows() * values.cols() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries for a {}x{} frame",
                mask.len(),
                values.rows(),
                values.cols()
            )));
        }
        if channel_names.len() != values.cols() {
            return Err(Error::ShapeMismatch(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                values.cols()
            )));
        }
        if !(sample_freq > 0.0 && sample_freq.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample_freq must be positive, got {sample_freq}"
            )));
        }
        Ok(Self {
            values,
            mask,
            sample_freq,
            channel_names,
            start_time,
        })
    }

    /// Fully observed frame with default channel names `ch0..`, sample-index origin 0.
    pub fn from_values(values: Matrix, sample_freq: f64) -> Result<Self> {
        let mask = vec![true; values.rows() * values.cols()];
        let names = (0..values.cols()).map(|n| format!("ch{n}")).collect();
        Self::new(values, mask, sample_freq, names, TimeOrigin::SampleIndex(0))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn observed(&self, t: usize, n: usize) -> bool {
        self.mask[t * self.channels() + n]
    }

    pub fn sample_freq(&self) -> f64 {
        self.sample_freq
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn start_time(&self) -> TimeOrigin {
        self.start_time
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Same metadata, new fully observed values.
    pub fn with_values(&self, values: Matrix) -> Result<Self> {
        if values.cols() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "{} columns for a {}-channel frame",
                values.cols(),
                self.channels()
            )));
        }
        let mask = vec![true; values.rows() * values.cols()];
        Self::new(
            values,
            mask,
            self.sample_freq,
            self.channel_names.clone(),
            self.start_time,
        )
    }

    /// Contiguous rows `[start, end)` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{end} invalid for length {}",
                self.len()
            )));
        }
        let n = self.channels();
        Self::new(
            self.values.slice_rows(start, end),
            self.mask[start * n..end * n].to_vec(),
            self.sample_freq,
            self.channel_names.clone(),
            self.start_time.advanced(start, self.sample_freq),
        )
    }

    /// Rows of `self` followed by rows of `next`.
    pub fn concat(&self, next: &TimeSeriesFrame) -> Result<Self> {
        let mut values = self.values.clone();
        values.append_rows(&next.values)?;
        let mut mask = self.mask.clone();
        mask.extend_from_slice(&next.mask);
        Self::new(
            values,
            mask,
            self.sample_freq,
            self.channel_names.clone(),
            self.start_time,
        )
    }
}
