//! Dominant-period selection from wavelet detail energy, plus a spectral variant.
//!
//! The wavelet path decomposes every feature column, averages the detail
//! coefficients across columns, scores each level by the squared norm of
//! that average and maps the strongest levels `j` to dyadic periods `2^j`.
//! The spectral path ranks non-DC DFT bins by mean magnitude instead.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::wavelet::{
    dwt_level, dwt_level_adjoint, dwt_multilevel, max_levels, WaveletBasis, WaveletDecomposition,
    WaveletKind,
};

/// Decomposition depth cap: covers periods up to 64 samples.
pub const MAX_LEVELS: usize = 6;

/// One selected period.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PeriodEntry {
    /// Wavelet level `j` (1-based) or DFT bin, depending on the extractor.
    pub index: usize,
    pub frequency: f64,
    /// Period length in samples.
    pub period: usize,
    /// Number of period-length rows needed to cover the sequence.
    pub folds: usize,
    pub amplitude: f64,
}

/// Selected periods ordered by descending amplitude.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PeriodSet {
    pub entries: Vec<PeriodEntry>,
}

impl PeriodSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn periods(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.period).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.amplitude).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.frequency).collect()
    }
}

/// Level scores: squared norm of the cross-series mean of each level's details.
pub fn level_amplitudes(decomps: &[WaveletDecomposition]) -> Result<Vec<f64>> {
    let first = decomps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no decompositions to score".into()))?;
    for (i, d) in decomps.iter().enumerate() {
        let same = d.levels() == first.levels()
            && d.details
                .iter()
                .zip(&first.details)
                .all(|(a, b)| a.len() == b.len());
        if !same {
            return Err(Error::ShapeMismatch(format!(
                "decomposition {i} does not match the level layout of decomposition 0"
            )));
        }
    }
    let inv = 1.0 / decomps.len() as f64;
    Ok((0..first.levels())
        .map(|j| {
            (0..first.details[j].len())
                .map(|i| {
                    let mean = decomps.iter().map(|d| d.details[j][i]).sum::<f64>() * inv;
                    mean * mean
                })
                .sum()
        })
        .collect())
}

/// Indices (0-based) and values of the `k` largest scores, largest first.
///
/// Equal scores are ordered by smaller index. When fewer than `k` scores
/// exist all of them are returned.
pub fn select_topk(scores: &[f64], k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "no amplitudes to select from".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if let Some(i) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFiniteAmplitude(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps the lower index first among equal scores
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    order.truncate(k.min(scores.len()));
    let amps = order.iter().map(|&i| scores[i]).collect();
    Ok((order, amps))
}

/// Maps selected levels to frequency `F / 2^j`, period `2^j` and fold count `ceil(T / 2^j)`.
pub fn levels_to_periods(
    levels: &[usize],
    amplitudes: &[f64],
    sample_freq: f64,
    len: usize,
) -> Result<PeriodSet> {
    if levels.is_empty() || levels.len() != amplitudes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} levels with {} amplitudes",
            levels.len(),
            amplitudes.len()
        )));
    }
    if !(sample_freq > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample frequency {sample_freq} must be > 0"
        )));
    }
    let mut entries = Vec::with_capacity(levels.len());
    for (&j, &amplitude) in levels.iter().zip(amplitudes) {
        if j == 0 || j >= usize::BITS as usize {
            return Err(Error::InvalidArgument(format!("level {j} out of range")));
        }
        let period = 1usize << j;
        if period > len {
            return Err(Error::PeriodExceedsWindow { period, len });
        }
        let frequency = sample_freq / period as f64;
        entries.push(PeriodEntry {
            index: j,
            frequency,
            // 1 / f in samples; exact for dyadic periods
            period: libm::round(sample_freq / frequency) as usize,
            folds: len.div_ceil(period),
            amplitude,
        });
    }
    Ok(PeriodSet { entries })
}

/// How periods are chosen inside the network and by the `periods` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ExtractorKind {
    Dwt,
    Fft,
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dwt => "dwt",
            Self::Fft => "fft",
        })
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dwt" => Ok(Self::Dwt),
            "fft" => Ok(Self::Fft),
            _ => Err(Error::InvalidArgument(format!(
                "unknown period extractor `{s}`"
            ))),
        }
    }
}

/// Rows `[offset, len)` analysed by the wavelet path and the decomposition depth.
///
/// Depth is `min(floor(log2 T), MAX_LEVELS)`; when `T` is not a multiple of
/// `2^J` only the most recent `floor(T / 2^J) * 2^J` rows are analysed.
pub fn dwt_window(len: usize) -> (usize, usize) {
    let levels = max_levels(len).min(MAX_LEVELS);
    let block = 1usize << levels;
    let used = (len / block) * block;
    (len - used, levels)
}

/// Centred column `c` of rows `[offset, rows)`.
fn centred_column(x: &Matrix, c: usize, offset: usize) -> Vec<f64> {
    let mut col: Vec<f64> = (offset..x.rows()).map(|t| x.get(t, c)).collect();
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    for v in &mut col {
        *v -= mean;
    }
    col
}

/// Wavelet period selection over the columns of `x` (T×d).
///
/// Columns are centred first; detail filters ignore constants, so this only
/// removes rounding noise.
pub fn extract_periods(
    x: &Matrix,
    basis: &WaveletBasis,
    k: usize,
    sample_freq: f64,
) -> Result<PeriodSet> {
    let len = x.rows();
    if len < 4 {
        return Err(Error::TooShort(format!(
            "period extraction needs T >= 4, got {len}"
        )));
    }
    if x.cols() == 0 {
        return Err(Error::ShapeMismatch("no feature columns".into()));
    }
    let (offset, levels) = dwt_window(len);
    let decomps = (0..x.cols())
        .map(|c| dwt_multilevel(&centred_column(x, c, offset), basis, levels))
        .collect::<Result<Vec<_>>>()?;
    let scores = level_amplitudes(&decomps)?;
    let (idx, amps) = select_topk(&scores, k)?;
    let levels: Vec<usize> = idx.iter().map(|i| i + 1).collect();
    levels_to_periods(&levels, &amps, sample_freq, len)
}

/// Mean DFT magnitude of the centred columns at bins `1..=T/2`.
pub fn mean_spectrum(x: &Matrix) -> Vec<f64> {
    let len = x.rows();
    let (cos, sin) = twiddles(len);
    let mut spectrum = vec![0.0; len / 2];
    for c in 0..x.cols() {
        let col = centred_column(x, c, 0);
        for (b, s) in spectrum.iter_mut().enumerate() {
            let (re, im) = dft_bin(&col, b + 1, &cos, &sin);
            *s += libm::sqrt(re * re + im * im);
        }
    }
    let inv = 1.0 / x.cols() as f64;
    spectrum.iter_mut().for_each(|s| *s *= inv);
    spectrum
}

fn twiddles(len: usize) -> (Vec<f64>, Vec<f64>) {
    let step = 2.0 * PI / len as f64;
    (
        (0..len).map(|i| libm::cos(step * i as f64)).collect(),
        (0..len).map(|i| libm::sin(step * i as f64)).collect(),
    )
}

/// `X[bin] = sum_t x[t] e^{-2 pi i bin t / T}` as (re, im).
fn dft_bin(x: &[f64], bin: usize, cos: &[f64], sin: &[f64]) -> (f64, f64) {
    let n = x.len();
    let (mut re, mut im) = (0.0, 0.0);
    let mut phase = 0;
    for &v in x {
        re += v * cos[phase];
        im -= v * sin[phase];
        phase += bin;
        if phase >= n {
            phase -= n;
        }
    }
    (re, im)
}

/// Spectral period selection: top-`k` non-DC bins, period `ceil(T / bin)`.
pub fn extract_periods_fft(x: &Matrix, k: usize, sample_freq: f64) -> Result<PeriodSet> {
    let len = x.rows();
    if len < 4 {
        return Err(Error::TooShort(format!(
            "period extraction needs T >= 4, got {len}"
        )));
    }
    if x.cols() == 0 {
        return Err(Error::ShapeMismatch("no feature columns".into()));
    }
    let spectrum = mean_spectrum(x);
    let (idx, amps) = select_topk(&spectrum, k)?;
    let entries = idx
        .iter()
        .zip(amps)
        .map(|(&i, amplitude)| {
            let bin = i + 1;
            let period = len.div_ceil(bin);
            PeriodEntry {
                index: bin,
                frequency: bin as f64 * sample_freq / len as f64,
                period,
                folds: len.div_ceil(period),
                amplitude,
            }
        })
        .collect();
    Ok(PeriodSet { entries })
}

/// Period extractor bound to its parameters, with amplitude gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum PeriodExtractor {
    Dwt(WaveletBasis),
    Fft,
}

impl PeriodExtractor {
    pub fn new(kind: ExtractorKind, basis: WaveletKind) -> Self {
        match kind {
            ExtractorKind::Dwt => Self::Dwt(WaveletBasis::new(basis)),
            ExtractorKind::Fft => Self::Fft,
        }
    }

    pub fn extract(&self, x: &Matrix, k: usize, sample_freq: f64) -> Result<PeriodSet> {
        match self {
            Self::Dwt(basis) => extract_periods(x, basis, k, sample_freq),
            Self::Fft => extract_periods_fft(x, k, sample_freq),
        }
    }

    /// Accumulates `sum_i d_amp[i] * dA_i/dx` into `grad` for the entries of `set`.
    ///
    /// The selection itself is piecewise constant and contributes nothing.
    pub fn amplitude_backward(
        &self,
        x: &Matrix,
        set: &PeriodSet,
        d_amp: &[f64],
        grad: &mut Matrix,
    ) {
        let d = x.cols();
        // gradient w.r.t. the centred mean column, rows [offset, T)
        let (offset, g_mean) = match self {
            Self::Dwt(basis) => (
                dwt_window(x.rows()).0,
                dwt_amplitude_grad(x, basis, set, d_amp),
            ),
            Self::Fft => {
                fft_amplitude_grad(x, set, d_amp, grad);
                return;
            }
        };
        let g_centred = centre(g_mean);
        let inv = 1.0 / d as f64;
        for (i, g) in g_centred.iter().enumerate() {
            for v in grad.row_mut(offset + i) {
                *v += g * inv;
            }
        }
    }
}

/// Centering is a symmetric projection, so its adjoint is itself.
fn centre(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    v
}

fn dwt_amplitude_grad(
    x: &Matrix,
    basis: &WaveletBasis,
    set: &PeriodSet,
    d_amp: &[f64],
) -> Vec<f64> {
    let (offset, levels) = dwt_window(x.rows());
    let d = x.cols() as f64;
    let mean: Vec<f64> = (offset..x.rows())
        .map(|t| x.row(t).iter().sum::<f64>() / d)
        .collect();
    let mean = centre(mean);
    let mut approxes = Vec::with_capacity(levels + 1);
    let mut details = Vec::with_capacity(levels);
    approxes.push(mean);
    for _ in 0..levels {
        let (det, app) = dwt_level(approxes.last().unwrap(), basis).expect("dyadic window");
        details.push(det);
        approxes.push(app);
    }
    let mut d_level = vec![0.0; levels];
    for (e, g) in set.entries.iter().zip(d_amp) {
        d_level[e.index - 1] += g;
    }
    let mut g_approx = vec![0.0; approxes[levels].len()];
    for j in (0..levels).rev() {
        let g_detail: Vec<f64> = details[j].iter().map(|c| 2.0 * c * d_level[j]).collect();
        let mut g_in = vec![0.0; approxes[j].len()];
        dwt_level_adjoint(&g_detail, &g_approx, basis, &mut g_in);
        g_approx = g_in;
    }
    g_approx
}

fn fft_amplitude_grad(x: &Matrix, set: &PeriodSet, d_amp: &[f64], grad: &mut Matrix) {
    let len = x.rows();
    let (cos, sin) = twiddles(len);
    let inv = 1.0 / x.cols() as f64;
    for c in 0..x.cols() {
        let col = centred_column(x, c, 0);
        let mut g = vec![0.0; len];
        for (e, &da) in set.entries.iter().zip(d_amp) {
            let (re, im) = dft_bin(&col, e.index, &cos, &sin);
            let mag = libm::sqrt(re * re + im * im);
            if mag == 0.0 {
                continue;
            }
            let scale = da * inv / mag;
            let mut phase = 0;
            for gt in g.iter_mut() {
                *gt += scale * (re * cos[phase] - im * sin[phase]);
                phase += e.index;
                if phase >= len {
                    phase -= len;
                }
            }
        }
        for (t, v) in centre(g).into_iter().enumerate() {
            let cur = grad.get(t, c);
            grad.set(t, c, cur + v);
        }
    }
}
