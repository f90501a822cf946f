//! Frame preprocessing, chronological splitting and synthetic corpora.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::{TimeOrigin, TimeSeriesFrame};
use crate::matrix::Matrix;

/// Value written into every point of a run of two or more missing samples.
pub const CONTINUOUS_GAP_FILL: f64 = 0.01;

/// Fills missing cells channel by channel.
///
/// * an isolated gap with both neighbours observed takes their mean;
/// * a run of two or more consecutive gaps is filled with [`CONTINUOUS_GAP_FILL`];
/// * a single gap at either end copies its only observed neighbour.
pub fn impute_missing(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    let t_len = frame.len();
    let mut values = frame.values().clone();
    for n in 0..frame.channels() {
        if (0..t_len).all(|t| !frame.observed(t, n)) {
            return Err(Error::ChannelUnrecoverable(n));
        }
        let mut t = 0;
        while t < t_len {
            if frame.observed(t, n) {
                t += 1;
                continue;
            }
            let start = t;
            while t < t_len && !frame.observed(t, n) {
                t += 1;
            }
            let run = t - start;
            if run >= 2 {
                for i in start..t {
                    values.set(i, n, CONTINUOUS_GAP_FILL);
                }
                continue;
            }
            let prev = start.checked_sub(1).map(|i| values.get(i, n));
            let next = (t < t_len).then(|| frame.values().get(t, n));
            let fill = match (prev, next) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                // a lone cell in a length-1 channel is caught by the all-missing check
                (None, None) => unreachable!(),
            };
            values.set(start, n, fill);
        }
    }
    frame.with_values(values)
}

/// Default NLMS predictor order.
pub const DEFAULT_TAPS: usize = 8;
/// Default NLMS normalized step size.
pub const DEFAULT_STEP: f64 = 0.5;

/// Normalized LMS one-step predictor used as an adaptive low-pass.
///
/// Each channel is replaced by the prediction of `x(t)` from
/// `[x(t-1), ..., x(t-taps)]`; the weights adapt on the prediction error.
/// The first `taps` samples pass through unchanged. White noise is not
/// predictable from the past, so it is largely absent from the output.
pub fn denoise_adaptive(
    frame: &TimeSeriesFrame,
    taps: usize,
    step: f64,
) -> Result<TimeSeriesFrame> {
    if taps == 0 {
        return Err(Error::InvalidArgument("taps must be >= 1".into()));
    }
    if !(step > 0.0 && step < 2.0) {
        return Err(Error::InvalidArgument(format!(
            "step must lie in (0, 2), got {step}"
        )));
    }
    let input = frame.values();
    for t in 0..frame.len() {
        for n in 0..frame.channels() {
            if !frame.observed(t, n) || !input.get(t, n).is_finite() {
                return Err(Error::PreprocessOrder { row: t, channel: n });
            }
        }
    }
    let mut out = input.clone();
    for n in 0..frame.channels() {
        let x = input.col(n);
        let y = nlms_predict(&x, taps, step);
        for (t, v) in y.into_iter().enumerate() {
            out.set(t, n, v);
        }
    }
    frame.with_values(out)
}

fn nlms_predict(x: &[f64], taps: usize, step: f64) -> Vec<f64> {
    const REGULARIZER: f64 = 1e-8;
    let mut w = vec![0.0; taps];
    let mut y = x.to_vec();
    for t in taps..x.len() {
        // u[i] = x(t - 1 - i)
        let mut pred = 0.0;
        let mut energy = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let u = x[t - 1 - i];
            pred += wi * u;
            energy += u * u;
        }
        let err = x[t] - pred;
        let gain = step * err / (REGULARIZER + energy);
        for (i, wi) in w.iter_mut().enumerate() {
            *wi += gain * x[t - 1 - i];
        }
        y[t] = pred;
    }
    y
}

/// Train/test/validation proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            test: 0.2,
            val: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, test: f64, val: f64) -> Result<Self> {
        let r = Self { train, test, val };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train", self.train),
            ("test", self.test),
            ("val", self.val),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} ratio {v} not in (0, 1)"
                )));
            }
        }
        let sum = self.train + self.test + self.val;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Segment lengths (train, test, val) for a series of length `t`.
    pub fn lengths(&self, t: usize) -> (usize, usize, usize) {
        // the epsilon keeps e.g. 100 * 0.7 from flooring to 69
        let seg = |r: f64| libm::floor(t as f64 * r + 1e-9) as usize;
        let test = seg(self.test);
        let val = seg(self.val);
        (t - test - val, test, val)
    }
}

/// Chronological split into train, test and validation segments, in that order.
pub fn split(
    frame: &TimeSeriesFrame,
    ratios: SplitRatios,
) -> Result<(TimeSeriesFrame, TimeSeriesFrame, TimeSeriesFrame)> {
    ratios.validate()?;
    let t = frame.len();
    if t < 10 {
        return Err(Error::TooShort(format!(
            "split needs at least 10 rows, got {t}"
        )));
    }
    let (train, test, val) = ratios.lengths(t);
    if train == 0 {
        return Err(Error::EmptySegment("train"));
    }
    if test == 0 {
        return Err(Error::EmptySegment("test"));
    }
    if val == 0 {
        return Err(Error::EmptySegment("val"));
    }
    Ok((
        frame.slice(0, train)?,
        frame.slice(train, train + test)?,
        frame.slice(train + test, t)?,
    ))
}

/// Recipe for a synthetic sum-of-sinusoids corpus.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthSpec {
    pub length: usize,
    /// Period lengths in samples.
    pub periods: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub noise_std: f64,
    pub channels: usize,
    pub seed: u64,
    pub sample_freq: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one period is required".into(),
            ));
        }
        if self.periods.len() != self.amplitudes.len() {
            return Err(Error::InvalidArgument(format!(
                "length mismatch: {} periods but {} amplitudes",
                self.periods.len(),
                self.amplitudes.len()
            )));
        }
        if let Some(p) = self.periods.iter().find(|&&p| !(p >= 2.0)) {
            return Err(Error::InvalidArgument(format!(
                "period {p} is below 2 samples"
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_std {} must be >= 0",
                self.noise_std
            )));
        }
        if self.length == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument(
                "length and channels must be >= 1".into(),
            ));
        }
        if !(self.sample_freq > 0.0) {
            return Err(Error::InvalidArgument(
                "sample_freq must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `value(t, n) = sum_m amp[m] * sin(2 pi t / period[m] + phase[n]) + noise`.
///
/// Channel 0 has phase 0; every other channel draws a phase uniformly from
/// `[0, 2 pi)`. Phases are drawn first, then noise row by row.
pub fn synth_multiperiod(spec: &SynthSpec) -> Result<TimeSeriesFrame> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = (0..spec.channels)
        .map(|n| {
            if n == 0 {
                0.0
            } else {
                rng.random::<f64>() * 2.0 * PI
            }
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let mut values = Matrix::zeros(spec.length, spec.channels);
    for t in 0..spec.length {
        for (n, phase) in phases.iter().enumerate() {
            let clean: f64 = spec
                .periods
                .iter()
                .zip(&spec.amplitudes)
                .map(|(p, a)| a * libm::sin(2.0 * PI * t as f64 / p + phase))
                .sum();
            let eps = if spec.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            values.set(t, n, clean + eps);
        }
    }
    let names = (0..spec.channels).map(|n| format!("ch{n}")).collect();
    TimeSeriesFrame::new(
        values,
        vec![true; spec.length * spec.channels],
        spec.sample_freq,
        names,
        TimeOrigin::SampleIndex(0),
    )
}

/// Adds a Gaussian-windowed sinusoid centred at `center` to every channel.
pub fn inject_local_periodicity(
    frame: &TimeSeriesFrame,
    center: usize,
    width: f64,
    period: f64,
    amp: f64,
) -> Result<TimeSeriesFrame> {
    if center >= frame.len() {
        return Err(Error::InvalidArgument(format!(
            "center {center} outside 0..{}",
            frame.len()
        )));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidArgument(format!("width {width} must be > 0")));
    }
    if !(period >= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "period {period} must be >= 2"
        )));
    }
    let mut values = frame.values().clone();
    let c = center as f64;
    for t in 0..frame.len() {
        let tf = t as f64;
        let window = libm::exp(-(tf - c) * (tf - c) / (2.0 * width * width));
        let add = amp * window * libm::sin(2.0 * PI * tf / period);
        for v in values.row_mut(t) {
            *v += add;
        }
    }
    let mut out = frame.with_values(values)?;
    if !frame.is_fully_observed() {
        out = TimeSeriesFrame::new(
            out.values().clone(),
            frame.mask().to_vec(),
            frame.sample_freq(),
            frame.channel_names().to_vec(),
            frame.start_time(),
        )?;
    }
    Ok(out)
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Stats that leave values untouched.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn destandardize_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }
}

pub fn fit_stats(frame: &TimeSeriesFrame) -> Result<ChannelStats> {
    let t = frame.len() as f64;
    let mut mean = Vec::with_capacity(frame.channels());
    let mut std = Vec::with_capacity(frame.channels());
    for n in 0..frame.channels() {
        let col = frame.values().col(n);
        let m = col.iter().sum::<f64>() / t;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t;
        let s = libm::sqrt(var);
        if !(s > 0.0) {
            return Err(Error::DegenerateChannel(n));
        }
        mean.push(m);
        std.push(s);
    }
    Ok(ChannelStats { mean, std })
}

fn check_stats(frame: &TimeSeriesFrame, stats: &ChannelStats) -> Result<()> {
    if stats.channels() != frame.channels() || stats.std.len() != frame.channels() {
        return Err(Error::ShapeMismatch(format!(
            "stats for {} channels, frame has {}",
            stats.channels(),
            frame.channels()
        )));
    }
    if let Some(n) = stats.std.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::DegenerateChannel(n));
    }
    Ok(())
}

pub fn standardize(frame: &TimeSeriesFrame, stats: &ChannelStats) -> Result<TimeSeriesFrame> {
    check_stats(frame, stats)?;
    let mut values = frame.values().clone();
    for t in 0..values.rows() {
        stats.standardize_row(values.row_mut(t));
    }
    frame.with_values(values)
}

pub fn destandardize(frame: &TimeSeriesFrame, stats: &ChannelStats) -> Result<TimeSeriesFrame> {
    check_stats(frame, stats)?;
    let mut values = frame.values().clone();
    for t in 0..values.rows() {
        stats.destandardize_row(values.row_mut(t));
    }
    frame.with_values(values)
}
