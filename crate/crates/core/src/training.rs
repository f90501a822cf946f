//! Supervised one-step training, recursive multi-step rollout and evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::ChannelStats;
use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;
use crate::matrix::Matrix;
use crate::metrics::{average_reports, compute_metrics, MetricReport};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Forecast length used when evaluating.
    pub horizon: usize,
    pub window_len: usize,
    /// Step between consecutive training windows.
    pub stride: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            horizon: 10,
            window_len: 96,
            stride: 1,
            seed: 0,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if self.window_len < 8 {
            return bad("window_len must be >= 8");
        }
        if self.stride == 0 {
            return bad("stride must be >= 1");
        }
        Ok(())
    }
}

/// One supervised pair: `window_len` rows of input and the row that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Matrix,
    pub target: Vec<f64>,
}

pub fn make_windows(values: &Matrix, window_len: usize, stride: usize) -> Result<Vec<Window>> {
    if stride == 0 || window_len == 0 {
        return Err(Error::InvalidArgument(
            "window_len and stride must be >= 1".into(),
        ));
    }
    if values.rows() <= window_len {
        return Err(Error::TooShort(format!(
            "{} rows leave no target after a window of {window_len}",
            values.rows()
        )));
    }
    Ok((0..values.rows() - window_len)
        .step_by(stride)
        .map(|i| Window {
            input: values.slice_rows(i, i + window_len),
            target: values.row(i + window_len).to_vec(),
        })
        .collect())
}

/// Adaptive-moment optimizer state (decay 0.9 / 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(size: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; size],
            v: vec![0.0; size],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Mean one-step squared error over a set of windows.
pub fn one_step_loss(net: &Network, windows: &[Window]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let y = net.forward(&w.input)?;
        total += y
            .iter()
            .zip(&w.target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / y.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Mini-batch Adam on one-step squared error with early stopping on validation loss.
///
/// Both frames are expected to be standardized already and are not modified.
pub fn train(
    net: &Network,
    train_frame: &TimeSeriesFrame,
    val_frame: &TimeSeriesFrame,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.window_len != net.config().window_len {
        return Err(Error::ShapeMismatch(format!(
            "train window {} differs from network window {}",
            cfg.window_len,
            net.config().window_len
        )));
    }
    for f in [train_frame, val_frame] {
        if f.channels() != net.config().input_channels {
            return Err(Error::ShapeMismatch(format!(
                "frame has {} channels, network expects {}",
                f.channels(),
                net.config().input_channels
            )));
        }
    }
    let train_windows = make_windows(train_frame.values(), cfg.window_len, cfg.stride)?;
    let val_windows = make_windows(val_frame.values(), cfg.window_len, cfg.stride)
        .map_err(|_| Error::TooShort("empty validation set".into()))?;

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.params().len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut grads = vec![0.0; net.params().len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, net.params().to_vec());
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let w = &train_windows[i];
                total += match net.accumulate_gradient(&w.input, &w.target, scale, &mut grads) {
                    Ok(l) => l,
                    Err(Error::NumericOverflow(_)) => return Err(Error::Diverged(epoch)),
                    Err(e) => return Err(e),
                };
            }
            adam.update(net.params_mut(), &grads);
        }
        let train_loss = total / train_windows.len() as f64;
        let val_loss = one_step_loss(&net, &val_windows)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, net.params().to_vec());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best;
    Ok(TrainOutcome {
        network: Network::from_params(net.config().clone(), params)?,
        history,
        best_epoch,
    })
}

/// `horizon` future rows predicted from one input window.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub predictions: Matrix,
    /// Index of the last observed row the forecast starts from.
    pub origin_index: usize,
}

/// Anything that maps a window of history to a multi-step forecast.
pub trait Forecaster {
    fn window_len(&self) -> usize;
    fn forecast(&self, window: &Matrix, horizon: usize) -> Result<ForecastResult>;
}

/// Feeds each one-step prediction back as the newest input row.
pub fn forecast_recursive(
    net: &Network,
    window: &Matrix,
    horizon: usize,
) -> Result<ForecastResult> {
    let n = window.cols();
    let mut current = window.clone();
    let mut predictions = Matrix::zeros(horizon, n);
    for g in 0..horizon {
        let y = net.forward(&current)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePrediction(g + 1));
        }
        predictions.row_mut(g).copy_from_slice(&y);
        let data = current.as_mut_slice();
        data.copy_within(n.., 0);
        let len = data.len();
        data[len - n..].copy_from_slice(&y);
    }
    Ok(ForecastResult {
        predictions,
        origin_index: window.rows() - 1,
    })
}

/// Repeats the last observed row.
pub fn persistence_forecast(window: &Matrix, horizon: usize) -> Result<ForecastResult> {
    if window.rows() == 0 {
        return Err(Error::InvalidArgument("empty window".into()));
    }
    let last = window.row(window.rows() - 1);
    let mut predictions = Matrix::zeros(horizon, window.cols());
    for g in 0..horizon {
        predictions.row_mut(g).copy_from_slice(last);
    }
    Ok(ForecastResult {
        predictions,
        origin_index: window.rows() - 1,
    })
}

impl Forecaster for Network {
    fn window_len(&self) -> usize {
        self.config().window_len
    }

    fn forecast(&self, window: &Matrix, horizon: usize) -> Result<ForecastResult> {
        forecast_recursive(self, window, horizon)
    }
}

/// Last-value baseline with a fixed input length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Persistence {
    pub window_len: usize,
}

impl Forecaster for Persistence {
    fn window_len(&self) -> usize {
        self.window_len
    }

    fn forecast(&self, window: &Matrix, horizon: usize) -> Result<ForecastResult> {
        persistence_forecast(window, horizon)
    }
}

/// Forecast and observed future at one origin, in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Row (within the evaluated frame) of the first forecast step.
    pub start: usize,
    pub predicted: Matrix,
    pub observed: Matrix,
}

/// Runs the forecaster at every `origin_stride`-th origin of a standardized frame.
pub fn rollouts<F: Forecaster + ?Sized>(
    model: &F,
    frame: &TimeSeriesFrame,
    stats: &ChannelStats,
    horizon: usize,
    origin_stride: usize,
) -> Result<Vec<Rollout>> {
    let window_len = model.window_len();
    if horizon == 0 || origin_stride == 0 {
        return Err(Error::InvalidArgument(
            "horizon and origin stride must be >= 1".into(),
        ));
    }
    if stats.channels() != frame.channels() {
        return Err(Error::ShapeMismatch(
            "stats do not match frame channels".into(),
        ));
    }
    if frame.len() < window_len + horizon {
        return Err(Error::TooShort(format!(
            "{} rows cannot hold a window of {window_len} plus {horizon} targets",
            frame.len()
        )));
    }
    let values = frame.values();
    let mut out = Vec::new();
    for start in (window_len..=frame.len() - horizon).step_by(origin_stride) {
        let window = values.slice_rows(start - window_len, start);
        let mut predicted = model.forecast(&window, horizon)?.predictions;
        let mut observed = values.slice_rows(start, start + horizon);
        for g in 0..horizon {
            stats.destandardize_row(predicted.row_mut(g));
            stats.destandardize_row(observed.row_mut(g));
        }
        out.push(Rollout {
            start,
            predicted,
            observed,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvaluationReport {
    pub horizon: usize,
    pub origins: usize,
    pub per_channel: Vec<MetricReport>,
    pub average: MetricReport,
}

/// Error metrics over all origins and all `horizon` steps, per channel and averaged.
pub fn evaluate<F: Forecaster + ?Sized>(
    model: &F,
    frame: &TimeSeriesFrame,
    stats: &ChannelStats,
    horizon: usize,
    origin_stride: usize,
) -> Result<EvaluationReport> {
    let rolls = rollouts(model, frame, stats, horizon, origin_stride)?;
    report_from_rollouts(&rolls, horizon)
}

pub fn report_from_rollouts(rolls: &[Rollout], horizon: usize) -> Result<EvaluationReport> {
    let first = rolls.first().ok_or(Error::Metrics("no rollouts"))?;
    let channels = first.observed.cols();
    let per_channel = (0..channels)
        .map(|n| {
            let obs: Vec<f64> = rolls.iter().flat_map(|r| r.observed.col(n)).collect();
            let pred: Vec<f64> = rolls.iter().flat_map(|r| r.predicted.col(n)).collect();
            compute_metrics(&obs, &pred)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        horizon,
        origins: rolls.len(),
        average: average_reports(&per_channel)?,
        per_channel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fit_stats, standardize, synth_multiperiod, SynthSpec};
    use crate::network::{Activation, NetworkConfig};
    use crate::period::ExtractorKind;
    use crate::wavelet::WaveletKind;

    fn ramp(rows: usize) -> Matrix {
        Matrix::column(&(0..rows).map(|v| v as f64).collect::<Vec<_>>())
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(10), 8, 1).unwrap().len(), 2);
        let w = make_windows(&ramp(9), 8, 1).unwrap();
        assert_eq!((w.len(), w[0].target.clone()), (1, vec![8.0]));
        assert!(make_windows(&ramp(8), 8, 1).is_err());
        assert_eq!(make_windows(&ramp(20), 8, 5).unwrap().len(), 3);
    }

    fn small_net(seed: u64) -> Network {
        Network::new(NetworkConfig {
            input_channels: 1,
            embed_dim: 4,
            layers: 1,
            top_k: 2,
            kernel_sizes: vec![1, 3],
            window_len: 16,
            seed,
            ..NetworkConfig::default()
        })
        .unwrap()
    }

    fn cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: lr,
            window_len: 16,
            stride: 2,
            seed: 3,
            patience: 100,
            ..TrainConfig::default()
        }
    }

    fn sine_frame(len: usize) -> TimeSeriesFrame {
        let f = synth_multiperiod(&SynthSpec {
            length: len,
            periods: vec![16.0],
            amplitudes: vec![1.0],
            noise_std: 0.0,
            channels: 1,
            seed: 0,
            sample_freq: 1.0,
        })
        .unwrap();
        standardize(&f, &fit_stats(&f).unwrap()).unwrap()
    }

    #[test]
    fn zero_targets_are_already_optimal() {
        let mut net = small_net(1);
        net.param_mut("head.weight")
            .unwrap()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let zeros = TimeSeriesFrame::from_values(Matrix::zeros(64, 1), 1.0).unwrap();
        let out = train(&net, &zeros, &zeros, &cfg(2, 1e-2)).unwrap();
        assert_eq!(out.history[0].train_loss, 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let net = small_net(2);
        let f = sine_frame(128);
        let out = train(&net, &f, &f, &cfg(3, 0.0)).unwrap();
        assert_eq!(out.network.params(), net.params());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let net = Network::new(NetworkConfig {
            input_channels: 1,
            embed_dim: 8,
            layers: 1,
            top_k: 1,
            window_len: 32,
            seed: 5,
            ..NetworkConfig::default()
        })
        .unwrap();
        let f = sine_frame(512);
        let c = TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 3e-3,
            window_len: 32,
            stride: 4,
            seed: 9,
            patience: 50,
            ..TrainConfig::default()
        };
        let a = train(&net, &f, &f, &c).unwrap();
        let first = a.history[0].train_loss;
        let last = a.history.last().unwrap().train_loss;
        assert!(last < 0.25 * first, "first {first} last {last}");
        let b = train(&net, &f, &f, &c).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn training_errors() {
        let net = small_net(0);
        let f = sine_frame(64);
        let short = sine_frame(16);
        assert!(matches!(
            train(&net, &f, &short, &cfg(1, 1e-3)),
            Err(Error::TooShort(_))
        ));
        let mut c = cfg(1, 1e-3);
        c.window_len = 32;
        assert!(train(&net, &f, &f, &c).is_err());
    }

    /// Network whose output is `last input + 1`, built by hand.
    fn increment_net() -> Network {
        let mut net = Network::zeros(NetworkConfig {
            input_channels: 1,
            embed_dim: 1,
            layers: 1,
            top_k: 1,
            kernel_sizes: vec![1],
            window_len: 8,
            activation: Activation::Identity,
            ..NetworkConfig::default()
        })
        .unwrap();
        net.param_mut("embed.weight").unwrap()[0] = 1.0;
        net.param_mut("head.weight").unwrap()[0] = 1.0;
        net.param_mut("head.bias").unwrap()[0] = 1.0;
        net
    }

    #[test]
    fn recursive_rollout() {
        let net = increment_net();
        let w = Matrix::column(&[-2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = forecast_recursive(&net, &w, 3).unwrap();
        assert_eq!(r.predictions.col(0), vec![6.0, 7.0, 8.0]);
        let one = forecast_recursive(&net, &w, 1).unwrap();
        assert_eq!(one.predictions.row(0), net.forward(&w).unwrap().as_slice());

        let zero = Network::zeros(net.config().clone()).unwrap();
        let r = forecast_recursive(&zero, &w, 10).unwrap();
        assert!(r.predictions.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rollout_prefix_property() {
        let net = small_net(11);
        let w = sine_frame(16).values().clone();
        let long = forecast_recursive(&net, &w, 12).unwrap();
        let short = forecast_recursive(&net, &w, 5).unwrap();
        assert_eq!(long.predictions.slice_rows(0, 5), short.predictions);
    }

    #[test]
    fn persistence_rows() {
        let w = Matrix::from_rows(&[[0.0, 0.0], [1.5, -2.0]]).unwrap();
        let r = persistence_forecast(&w, 2).unwrap();
        assert_eq!(
            r.predictions,
            Matrix::from_rows(&[[1.5, -2.0], [1.5, -2.0]]).unwrap()
        );
        assert_eq!(
            persistence_forecast(&w, 1).unwrap().predictions.row(0),
            &[1.5, -2.0]
        );
        let z = persistence_forecast(&Matrix::zeros(3, 2), 4).unwrap();
        assert!(z.predictions.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn persistence_evaluation() {
        let constant = TimeSeriesFrame::from_values(Matrix::column(&[4.0; 40]), 1.0).unwrap();
        let stats = ChannelStats::identity(1);
        let r = evaluate(&Persistence { window_len: 8 }, &constant, &stats, 5, 1).unwrap();
        assert_eq!(
            (r.average.mae, r.average.mse, r.average.mape),
            (0.0, 0.0, Some(0.0))
        );

        let alt: Vec<f64> = (0..40).map(|t| (t % 2) as f64).collect();
        let alt = TimeSeriesFrame::from_values(Matrix::column(&alt), 1.0).unwrap();
        let r = evaluate(&Persistence { window_len: 8 }, &alt, &stats, 1, 1).unwrap();
        assert_eq!(r.average.mae, 1.0);
        assert_eq!(r.origins, 32);
    }

    struct Oracle(Matrix);

    impl Forecaster for Oracle {
        fn window_len(&self) -> usize {
            8
        }
        fn forecast(&self, window: &Matrix, horizon: usize) -> Result<ForecastResult> {
            // locate the window in the full series and return the true future
            let start = (0..self.0.rows())
                .find(|&i| self.0.slice_rows(i, i + 8) == *window)
                .unwrap()
                + 8;
            Ok(ForecastResult {
                predictions: self.0.slice_rows(start, start + horizon),
                origin_index: start - 1,
            })
        }
    }

    #[test]
    fn perfect_forecaster_scores_zero() {
        let values = Matrix::column(&(0..30).map(|t| 1.0 + t as f64).collect::<Vec<_>>());
        let frame = TimeSeriesFrame::from_values(values.clone(), 1.0).unwrap();
        let stats = ChannelStats {
            mean: vec![2.0],
            std: vec![3.0],
        };
        let r = evaluate(&Oracle(values), &frame, &stats, 4, 3).unwrap();
        assert_eq!(
            (r.average.mae, r.average.mse, r.average.rmse),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn evaluation_needs_room() {
        let f = TimeSeriesFrame::from_values(Matrix::zeros(10, 1), 1.0).unwrap();
        assert!(evaluate(
            &Persistence { window_len: 8 },
            &f,
            &ChannelStats::identity(1),
            3,
            1
        )
        .is_err());
    }

    #[test]
    fn fft_network_trains() {
        let net = Network::new(NetworkConfig {
            input_channels: 1,
            embed_dim: 4,
            top_k: 2,
            extractor: ExtractorKind::Fft,
            basis: WaveletKind::Db2,
            window_len: 16,
            ..NetworkConfig::default()
        })
        .unwrap();
        let f = sine_frame(128);
        let out = train(&net, &f, &f, &cfg(3, 1e-2)).unwrap();
        assert_eq!(out.history.len(), 3);
    }
}
