//! Period-folding convolutional forecaster with hand-written reverse-mode gradients.
//!
//! ```text
//! H0 = embed(X)                                   per-timestep affine, T×d
//! Hl = H(l-1) + sum_i softmax(A)_i * R_i          l = 1..L
//!      R_i = trunc(unfold(inception(fold(pad(H(l-1), p_i)))))
//! y  = head(HL[T-1])                              one step ahead, N channels
//! ```
//!
//! Periods `p_i` and amplitudes `A` are re-extracted from each block's input
//! on every pass. The top-k choice is piecewise constant and gets no
//! gradient; the amplitudes themselves are smooth in `H(l-1)` and are
//! differentiated through the softmax weights.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::period::{ExtractorKind, PeriodExtractor, PeriodSet};
use crate::tensorize::Folded2D;
use crate::wavelet::WaveletKind;

/// Nonlinearity applied after the 1×1 merge projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "identity" => Ok(Self::Identity),
            _ => Err(Error::InvalidArgument(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub top_k: usize,
    pub basis: WaveletKind,
    pub extractor: ExtractorKind,
    pub kernel_sizes: Vec<usize>,
    pub window_len: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            embed_dim: 16,
            layers: 1,
            top_k: 2,
            basis: WaveletKind::Haar,
            extractor: ExtractorKind::Dwt,
            kernel_sizes: vec![1, 3, 5],
            window_len: 96,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1".into());
        }
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.top_k == 0 {
            return bad("top_k must be >= 1".into());
        }
        if self.kernel_sizes.is_empty() {
            return bad("kernel_sizes must not be empty".into());
        }
        if let Some(s) = self.kernel_sizes.iter().find(|&&s| s % 2 == 0) {
            return bad(format!("kernel size {s} must be odd"));
        }
        for (i, s) in self.kernel_sizes.iter().enumerate() {
            if self.kernel_sizes[..i].contains(s) {
                return bad(format!("kernel size {s} listed twice"));
            }
        }
        if self.window_len < 8 {
            return bad(format!("window_len {} must be >= 8", self.window_len));
        }
        Ok(())
    }

    /// Named parameter tensors in storage order.
    pub fn layout(&self) -> Vec<ParamSpec> {
        let (n, d) = (self.input_channels, self.embed_dim);
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            specs.push(ParamSpec {
                name,
                shape,
                offset,
            });
            offset += len;
        };
        push("embed.weight".into(), vec![d, n]);
        push("embed.bias".into(), vec![d]);
        for l in 0..self.layers {
            for &s in &self.kernel_sizes {
                push(format!("blocks.{l}.conv{s}.weight"), vec![d, d, s, s]);
                push(format!("blocks.{l}.conv{s}.bias"), vec![d]);
            }
            push(format!("blocks.{l}.merge.weight"), vec![d, d]);
            push(format!("blocks.{l}.merge.bias"), vec![d]);
        }
        push("head.weight".into(), vec![n, d]);
        push("head.bias".into(), vec![n]);
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(ParamSpec::len).sum()
    }
}

/// Location of one named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
struct BlockOffsets {
    convs: Vec<(usize, usize)>,
    merge_w: usize,
    merge_b: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    embed_w: usize,
    embed_b: usize,
    blocks: Vec<BlockOffsets>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Offsets {
    fn new(config: &NetworkConfig) -> Self {
        let layout = config.layout();
        let at = |name: &str| layout.iter().find(|p| p.name == name).unwrap().offset;
        let blocks = (0..config.layers)
            .map(|l| BlockOffsets {
                convs: config
                    .kernel_sizes
                    .iter()
                    .map(|s| {
                        (
                            at(&format!("blocks.{l}.conv{s}.weight")),
                            at(&format!("blocks.{l}.conv{s}.bias")),
                        )
                    })
                    .collect(),
                merge_w: at(&format!("blocks.{l}.merge.weight")),
                merge_b: at(&format!("blocks.{l}.merge.bias")),
            })
            .collect();
        Self {
            embed_w: at("embed.weight"),
            embed_b: at("embed.bias"),
            blocks,
            head_w: at("head.weight"),
            head_b: at("head.bias"),
            total: layout.iter().map(ParamSpec::len).sum(),
        }
    }
}

/// Borrowed parameters of one inception block.
///
/// Branch `b` convolves with a `kernel_sizes[b]`-square kernel stored as
/// `[out][in][row][col]`; branch outputs are averaged, projected by the
/// `[out][in]` merge matrix and passed through `activation`.
#[derive(Debug, Clone)]
pub struct InceptionParams<'a> {
    pub channels: usize,
    pub kernel_sizes: &'a [usize],
    pub conv_weights: Vec<&'a [f64]>,
    pub conv_biases: Vec<&'a [f64]>,
    pub merge_weight: &'a [f64],
    pub merge_bias: &'a [f64],
    pub activation: Activation,
}

impl InceptionParams<'_> {
    fn check(&self) -> Result<()> {
        let d = self.channels;
        let ok = self.conv_weights.len() == self.kernel_sizes.len()
            && self.conv_biases.len() == self.kernel_sizes.len()
            && self
                .kernel_sizes
                .iter()
                .zip(&self.conv_weights)
                .all(|(s, w)| w.len() == d * d * s * s)
            && self.conv_biases.iter().all(|b| b.len() == d)
            && self.merge_weight.len() == d * d
            && self.merge_bias.len() == d;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "inception parameters inconsistent with channel count".into(),
            ))
        }
    }
}

/// Padded input grid plus the cached activations of the positions evaluated.
#[derive(Debug, Clone)]
struct BranchTrace {
    grid: Vec<f64>,
    folds: usize,
    period: usize,
    /// `[position][channel]`, pre-merge average of the conv branches.
    avg: Vec<f64>,
    z: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    input: Matrix,
    periods: PeriodSet,
    weights: Vec<f64>,
    branches: Vec<BranchTrace>,
    /// Sequence rows at which the block output was evaluated.
    positions: Vec<usize>,
}

struct Trace {
    embedded: Matrix,
    blocks: Vec<BlockTrace>,
    feature: Vec<f64>,
}

/// Padded copy of `x` laid out as a `folds × period × d` grid.
fn padded_grid(x: &Matrix, period: usize) -> (Vec<f64>, usize) {
    let folds = x.rows().div_ceil(period);
    let mut grid = vec![0.0; folds * period * x.cols()];
    grid[..x.rows() * x.cols()].copy_from_slice(x.as_slice());
    (grid, folds)
}

/// Evaluates the inception block at grid position `q`, writing `d` values to each output.
#[allow(clippy::too_many_arguments)]
fn inception_at(
    grid: &[f64],
    folds: usize,
    period: usize,
    p: &InceptionParams<'_>,
    q: usize,
    avg: &mut [f64],
    z: &mut [f64],
    out: &mut [f64],
) {
    let d = p.channels;
    let (r, c) = (q / period, q % period);
    avg.iter_mut().for_each(|v| *v = 0.0);
    for (b, &s) in p.kernel_sizes.iter().enumerate() {
        let w = p.conv_weights[b];
        let bias = p.conv_biases[b];
        let h = s / 2;
        for o in 0..d {
            let mut acc = bias[o];
            for u in 0..s {
                let rr = r + u;
                if rr < h || rr - h >= folds {
                    continue;
                }
                let rr = rr - h;
                for v in 0..s {
                    let cc = c + v;
                    if cc < h || cc - h >= period {
                        continue;
                    }
                    let base = (rr * period + cc - h) * d;
                    let cell = &grid[base..base + d];
                    let wbase = o * d * s * s + u * s + v;
                    for (i, x) in cell.iter().enumerate() {
                        acc += w[wbase + i * s * s] * x;
                    }
                }
            }
            avg[o] += acc;
        }
    }
    let inv = 1.0 / p.kernel_sizes.len() as f64;
    avg.iter_mut().for_each(|v| *v *= inv);
    for o in 0..d {
        let row = &p.merge_weight[o * d..(o + 1) * d];
        z[o] = p.merge_bias[o] + row.iter().zip(avg.iter()).map(|(w, a)| w * a).sum::<f64>();
        out[o] = p.activation.apply(z[o]);
    }
}

/// Inception block over every cell of a folded grid; the spatial shape is preserved.
pub fn inception_forward(folded: &Folded2D, params: &InceptionParams<'_>) -> Result<Folded2D> {
    params.check()?;
    if folded.channels() != params.channels {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} channels, block expects {}",
            folded.channels(),
            params.channels
        )));
    }
    let d = params.channels;
    let cells = folded.folds() * folded.period();
    let mut out = vec![0.0; cells * d];
    let (mut avg, mut z) = (vec![0.0; d], vec![0.0; d]);
    for q in 0..cells {
        inception_at(
            folded.as_slice(),
            folded.folds(),
            folded.period(),
            params,
            q,
            &mut avg,
            &mut z,
            &mut out[q * d..(q + 1) * d],
        );
    }
    Folded2D::from_grid(
        out,
        folded.folds(),
        folded.period(),
        d,
        folded.original_len(),
    )
}

/// Numerically stable softmax; rejects non-finite input.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteAmplitude(i));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| libm::exp(v - max)).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `sum_i softmax(amplitudes)_i * reps[i]`.
pub fn aggregate(reps: &[Matrix], amplitudes: &[f64]) -> Result<Matrix> {
    if reps.is_empty() || reps.len() != amplitudes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} representations with {} amplitudes",
            reps.len(),
            amplitudes.len()
        )));
    }
    let (rows, cols) = (reps[0].rows(), reps[0].cols());
    if reps.iter().any(|r| r.rows() != rows || r.cols() != cols) {
        return Err(Error::ShapeMismatch(
            "representations differ in shape".into(),
        ));
    }
    let weights = softmax(amplitudes)?;
    if reps.len() == 1 {
        return Ok(reps[0].clone());
    }
    let mut out = Matrix::zeros(rows, cols);
    for (rep, w) in reps.iter().zip(&weights) {
        for (o, v) in out.as_mut_slice().iter_mut().zip(rep.as_slice()) {
            *o += w * v;
        }
    }
    Ok(out)
}

fn block_forward(
    x: &Matrix,
    params: &InceptionParams<'_>,
    k: usize,
    extractor: &PeriodExtractor,
    positions: Vec<usize>,
) -> Result<BlockTrace> {
    let d = params.channels;
    let periods = extractor.extract(x, k, 1.0)?;
    let weights = softmax(&periods.amplitudes())?;
    let mut branches = Vec::with_capacity(periods.len());
    for entry in &periods.entries {
        let (grid, folds) = padded_grid(x, entry.period);
        let n = positions.len() * d;
        let (mut avg, mut z, mut out) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for (j, &q) in positions.iter().enumerate() {
            let span = j * d..(j + 1) * d;
            inception_at(
                &grid,
                folds,
                entry.period,
                params,
                q,
                &mut avg[span.clone()],
                &mut z[span.clone()],
                &mut out[span],
            );
        }
        branches.push(BranchTrace {
            grid,
            folds,
            period: entry.period,
            avg,
            z,
            out,
        });
    }
    Ok(BlockTrace {
        input: x.clone(),
        periods,
        weights,
        branches,
        positions,
    })
}

impl BlockTrace {
    /// Aggregated block output at `positions`, `[position][channel]`.
    fn output(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.positions.len() * d];
        if self.branches.len() == 1 {
            out.copy_from_slice(&self.branches[0].out);
            return out;
        }
        for (b, w) in self.branches.iter().zip(&self.weights) {
            for (o, v) in out.iter_mut().zip(&b.out) {
                *o += w * v;
            }
        }
        out
    }
}

/// Full-sequence TimesBlock body (without the residual): T×d in, T×d out.
pub fn times_block(
    x: &Matrix,
    params: &InceptionParams<'_>,
    k: usize,
    extractor: &PeriodExtractor,
) -> Result<Matrix> {
    params.check()?;
    if x.cols() != params.channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, block expects {}",
            x.cols(),
            params.channels
        )));
    }
    let trace = block_forward(x, params, k, extractor, (0..x.rows()).collect())?;
    Matrix::from_vec(x.rows(), x.cols(), trace.output(params.channels))
}

/// Parameters and gradient slots of the forecaster.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    extractor: PeriodExtractor,
    offsets: Offsets,
    params: Vec<f64>,
    grads: Vec<f64>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Network {
    /// Network with every parameter zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let offsets = Offsets::new(&config);
        let extractor = PeriodExtractor::new(config.extractor, config.basis);
        Ok(Self {
            params: vec![0.0; offsets.total],
            grads: vec![0.0; offsets.total],
            config,
            extractor,
            offsets,
        })
    }

    /// Seeded initialization: weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(net.config.seed);
        for spec in net.config.layout() {
            if !spec.name.ends_with(".weight") {
                continue;
            }
            let receptive: usize = spec.shape[2..].iter().product();
            let fan_in = spec.shape[1] * receptive;
            let fan_out = spec.shape[0] * receptive;
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for p in &mut net.params[spec.range()] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Rebuilds a network from a flat parameter vector in layout order.
    pub fn from_params(config: NetworkConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters supplied, configuration needs {}",
                params.len(),
                net.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> Vec<ParamSpec> {
        self.config.layout()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Mutable view of one named tensor.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let spec = self.config.layout().into_iter().find(|p| p.name == name)?;
        Some(&mut self.params[spec.range()])
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        let spec = self.config.layout().into_iter().find(|p| p.name == name)?;
        Some(&self.params[spec.range()])
    }

    pub fn block_params(&self, layer: usize) -> InceptionParams<'_> {
        let b = &self.offsets.blocks[layer];
        let d = self.config.embed_dim;
        let p = &self.params;
        InceptionParams {
            channels: d,
            kernel_sizes: &self.config.kernel_sizes,
            conv_weights: b
                .convs
                .iter()
                .zip(&self.config.kernel_sizes)
                .map(|(&(w, _), s)| &p[w..w + d * d * s * s])
                .collect(),
            conv_biases: b
                .convs
                .iter()
                .map(|&(_, bias)| &p[bias..bias + d])
                .collect(),
            merge_weight: &p[b.merge_w..b.merge_w + d * d],
            merge_bias: &p[b.merge_b..b.merge_b + d],
            activation: self.config.activation,
        }
    }

    pub fn extractor(&self) -> &PeriodExtractor {
        &self.extractor
    }

    /// Per-timestep affine embedding, T×N → T×d.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let (n, d) = (self.config.input_channels, self.config.embed_dim);
        if x.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, network expects {n}",
                x.cols()
            )));
        }
        let w = &self.params[self.offsets.embed_w..self.offsets.embed_w + d * n];
        let b = &self.params[self.offsets.embed_b..self.offsets.embed_b + d];
        let mut out = Matrix::zeros(x.rows(), d);
        for t in 0..x.rows() {
            let xt = x.row(t);
            for (o, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = b[o]
                    + w[o * n..(o + 1) * n]
                        .iter()
                        .zip(xt)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
        }
        Ok(out)
    }

    fn check_window(&self, window: &Matrix) -> Result<()> {
        if window.rows() != self.config.window_len || window.cols() != self.config.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "window is {}x{}, network expects {}x{}",
                window.rows(),
                window.cols(),
                self.config.window_len,
                self.config.input_channels
            )));
        }
        Ok(())
    }

    fn run(&self, window: &Matrix) -> Result<Trace> {
        self.check_window(window)?;
        let t_len = window.rows();
        let d = self.config.embed_dim;
        let embedded = self.embed(window)?;
        let mut h = embedded.clone();
        let mut blocks = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let last = l + 1 == self.config.layers;
            // the head only reads the final row, so the last block is evaluated there alone
            let positions = if last {
                vec![t_len - 1]
            } else {
                (0..t_len).collect()
            };
            let trace = block_forward(
                &h,
                &self.block_params(l),
                self.config.top_k,
                &self.extractor,
                positions,
            )?;
            let out = trace.output(d);
            if last {
                let row = h.row_mut(t_len - 1);
                for (v, o) in row.iter_mut().zip(&out) {
                    *v += o;
                }
            } else {
                for (v, o) in h.as_mut_slice().iter_mut().zip(&out) {
                    *v += o;
                }
            }
            blocks.push(trace);
        }
        let feature = h.row(t_len - 1).to_vec();
        Ok(Trace {
            embedded,
            blocks,
            feature,
        })
    }

    fn head(&self, feature: &[f64]) -> Vec<f64> {
        let (n, d) = (self.config.input_channels, self.config.embed_dim);
        let w = &self.params[self.offsets.head_w..self.offsets.head_w + n * d];
        let b = &self.params[self.offsets.head_b..self.offsets.head_b + n];
        (0..n)
            .map(|o| {
                b[o] + w[o * d..(o + 1) * d]
                    .iter()
                    .zip(feature)
                    .map(|(a, x)| a * x)
                    .sum::<f64>()
            })
            .collect()
    }

    /// One-step-ahead prediction for every channel.
    pub fn forward(&self, window: &Matrix) -> Result<Vec<f64>> {
        let trace = self.run(window)?;
        Ok(self.head(&trace.feature))
    }

    /// Fills the gradient slots with d(loss)/d(params) and returns the loss,
    /// the mean over channels of the squared one-step error.
    pub fn backward(&mut self, window: &Matrix, target: &[f64]) -> Result<f64> {
        let mut grads = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(window, target, 1.0, &mut grads)?;
        self.grads = grads;
        Ok(loss)
    }

    /// Adds `scale * d(loss)/d(params)` into `grads` and returns the loss.
    pub fn accumulate_gradient(
        &self,
        window: &Matrix,
        target: &[f64],
        scale: f64,
        grads: &mut [f64],
    ) -> Result<f64> {
        let n = self.config.input_channels;
        let d = self.config.embed_dim;
        if target.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "target has {} channels, network predicts {n}",
                target.len()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch(
                "gradient buffer does not match parameter count".into(),
            ));
        }
        let trace = self.run(window)?;
        let pred = self.head(&trace.feature);
        let loss = pred
            .iter()
            .zip(target)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / n as f64;
        if !loss.is_finite() {
            return Err(Error::NumericOverflow("loss"));
        }
        let dy: Vec<f64> = pred
            .iter()
            .zip(target)
            .map(|(p, y)| 2.0 * (p - y) / n as f64 * scale)
            .collect();

        // head
        let (hw, hb) = (self.offsets.head_w, self.offsets.head_b);
        let mut d_feature = vec![0.0; d];
        for o in 0..n {
            grads[hb + o] += dy[o];
            for i in 0..d {
                grads[hw + o * d + i] += dy[o] * trace.feature[i];
                d_feature[i] += self.params[hw + o * d + i] * dy[o];
            }
        }

        let t_len = window.rows();
        // gradient w.r.t. the output of the current layer, full T×d
        let mut d_h = Matrix::zeros(t_len, d);
        d_h.row_mut(t_len - 1).copy_from_slice(&d_feature);
        for l in (0..self.config.layers).rev() {
            let block = &trace.blocks[l];
            let d_out: Vec<f64> = block
                .positions
                .iter()
                .flat_map(|&t| d_h.row(t).to_vec())
                .collect();
            // residual path passes d_h through unchanged
            let mut d_in = d_h.clone();
            self.block_backward(l, block, &d_out, &mut d_in, grads)?;
            d_h = d_in;
        }

        // embedding
        let (ew, eb) = (self.offsets.embed_w, self.offsets.embed_b);
        for t in 0..t_len {
            let g = d_h.row(t);
            let x = window.row(t);
            for o in 0..d {
                grads[eb + o] += g[o];
                for i in 0..n {
                    grads[ew + o * n + i] += g[o] * x[i];
                }
            }
        }
        if !d_h.is_finite() || trace.embedded.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("backward pass"));
        }
        Ok(loss)
    }

    fn block_backward(
        &self,
        layer: usize,
        block: &BlockTrace,
        d_out: &[f64],
        d_in: &mut Matrix,
        grads: &mut [f64],
    ) -> Result<()> {
        let d = self.config.embed_dim;
        let t_len = block.input.rows();
        let params = self.block_params(layer);
        let offs = &self.offsets.blocks[layer];

        // softmax weights: dL/dw_i = <d_out, R_i>
        let d_weights: Vec<f64> = block
            .branches
            .iter()
            .map(|b| b.out.iter().zip(d_out).map(|(r, g)| r * g).sum())
            .collect();
        let mean: f64 = block
            .weights
            .iter()
            .zip(&d_weights)
            .map(|(w, g)| w * g)
            .sum();
        let d_amp: Vec<f64> = block
            .weights
            .iter()
            .zip(&d_weights)
            .map(|(w, g)| w * (g - mean))
            .collect();
        self.extractor
            .amplitude_backward(&block.input, &block.periods, &d_amp, d_in);

        let nk = params.kernel_sizes.len();
        let inv = 1.0 / nk as f64;
        let mut dz = vec![0.0; d];
        let mut d_avg = vec![0.0; d];
        for (branch, &w_i) in block.branches.iter().zip(&block.weights) {
            let (folds, period) = (branch.folds, branch.period);
            let mut d_grid = vec![0.0; branch.grid.len()];
            for (j, &q) in block.positions.iter().enumerate() {
                let span = j * d..(j + 1) * d;
                let z = &branch.z[span.clone()];
                let avg = &branch.avg[span.clone()];
                for o in 0..d {
                    dz[o] = w_i * d_out[j * d + o] * params.activation.derivative(z[o]);
                }
                d_avg.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..d {
                    if dz[o] == 0.0 {
                        continue;
                    }
                    grads[offs.merge_b + o] += dz[o];
                    for i in 0..d {
                        grads[offs.merge_w + o * d + i] += dz[o] * avg[i];
                        d_avg[i] += params.merge_weight[o * d + i] * dz[o];
                    }
                }
                let (r, c) = (q / period, q % period);
                for (b, &s) in params.kernel_sizes.iter().enumerate() {
                    let (w_off, b_off) = offs.convs[b];
                    let w = params.conv_weights[b];
                    let h = s / 2;
                    for o in 0..d {
                        let g = d_avg[o] * inv;
                        if g == 0.0 {
                            continue;
                        }
                        grads[b_off + o] += g;
                        for u in 0..s {
                            let rr = r + u;
                            if rr < h || rr - h >= folds {
                                continue;
                            }
                            let rr = rr - h;
                            for v in 0..s {
                                let cc = c + v;
                                if cc < h || cc - h >= period {
                                    continue;
                                }
                                let base = (rr * period + cc - h) * d;
                                let wbase = o * d * s * s + u * s + v;
                                for i in 0..d {
                                    grads[w_off + wbase + i * s * s] += g * branch.grid[base + i];
                                    d_grid[base + i] += g * w[wbase + i * s * s];
                                }
                            }
                        }
                    }
                }
            }
            // padding rows are constants; only the first T rows map back to the input
            for (dst, src) in d_in.as_mut_slice().iter_mut().zip(&d_grid[..t_len * d]) {
                *dst += src;
            }
        }
        Ok(())
    }
}
