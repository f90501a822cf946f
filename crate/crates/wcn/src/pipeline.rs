//! Preprocessing, splitting, tuning, training and ablation runs shared by the
//! command-line front end and the tests.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use wcn_core::dataset::{
    denoise_adaptive, fit_stats, impute_missing, inject_local_periodicity, standardize,
    ChannelStats, SplitRatios,
};
use wcn_core::metrics::MetricReport;
use wcn_core::network::Network;
use wcn_core::period::ExtractorKind;
use wcn_core::tpe::{optimize, OptimizeResult, Point, Sampler, SearchSpace, TrialHistory};
use wcn_core::training::{evaluate, train, EvaluationReport, Forecaster, TrainOutcome};
use wcn_core::TimeSeriesFrame;

use crate::config::{
    DataSection, InjectSection, NetworkSection, RunConfig, SamplerKind, TrainSection,
};
use crate::tuning::apply_point;

/// Imputation followed by optional adaptive denoising.
pub fn preprocess(frame: &TimeSeriesFrame, data: &DataSection) -> Result<TimeSeriesFrame> {
    let filled = impute_missing(frame).context("imputation")?;
    if data.denoise {
        Ok(denoise_adaptive(&filled, data.taps, data.step).context("denoising")?)
    } else {
        Ok(filled)
    }
}

/// Standardized series with the train/test/val boundaries.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frame: TimeSeriesFrame,
    pub stats: ChannelStats,
    /// End rows of the train and test segments; val runs to the end.
    pub train_end: usize,
    pub test_end: usize,
}

impl Prepared {
    /// Splits `frame` and standardizes everything with statistics of the train segment.
    pub fn new(frame: &TimeSeriesFrame, ratios: SplitRatios) -> Result<Self> {
        let (train, _, _) = wcn_core::dataset::split(frame, ratios)?;
        let stats = fit_stats(&train)?;
        Self::with_stats(frame, ratios, stats)
    }

    /// As [`Prepared::new`] but with given statistics, e.g. those stored with a model.
    pub fn with_stats(
        frame: &TimeSeriesFrame,
        ratios: SplitRatios,
        stats: ChannelStats,
    ) -> Result<Self> {
        let (train, test, _) = wcn_core::dataset::split(frame, ratios)?;
        Ok(Self {
            frame: standardize(frame, &stats)?,
            stats,
            train_end: train.len(),
            test_end: train.len() + test.len(),
        })
    }

    pub fn channels(&self) -> usize {
        self.frame.channels()
    }

    pub fn train(&self) -> TimeSeriesFrame {
        self.frame
            .slice(0, self.train_end)
            .expect("bounds checked at construction")
    }

    /// Test segment preceded by up to `context` rows so the first forecast can start at its first row.
    pub fn test(&self, context: usize) -> TimeSeriesFrame {
        let start = self.train_end.saturating_sub(context);
        self.frame
            .slice(start, self.test_end)
            .expect("bounds checked at construction")
    }

    /// Validation segment preceded by up to `context` rows.
    pub fn val(&self, context: usize) -> TimeSeriesFrame {
        let start = self.test_end.saturating_sub(context);
        self.frame
            .slice(start, self.frame.len())
            .expect("bounds checked at construction")
    }
}

/// Builds a network from the settings and trains it on the train segment,
/// stopping early on the validation segment.
pub fn fit(
    prepared: &Prepared,
    net: &NetworkSection,
    tr: &TrainSection,
    seed: u64,
    horizon: usize,
) -> Result<TrainOutcome> {
    let net_cfg = net.to_config(prepared.channels(), seed);
    let train_cfg = tr.to_config(net.window_len, horizon, seed);
    let model = Network::new(net_cfg)?;
    Ok(train(
        &model,
        &prepared.train(),
        &prepared.val(net.window_len),
        &train_cfg,
    )?)
}

pub fn evaluate_on_test<F: Forecaster + ?Sized>(
    model: &F,
    prepared: &Prepared,
    horizon: usize,
    origin_stride: usize,
) -> Result<EvaluationReport> {
    let frame = prepared.test(model.window_len());
    Ok(evaluate(
        model,
        &frame,
        &prepared.stats,
        horizon,
        origin_stride,
    )?)
}

/// Best trial of a tuning run with the model it trained.
pub struct TuneOutcome {
    pub result: OptimizeResult,
    pub best_model: Option<Network>,
}

/// Searches `space` for the settings with the lowest validation MSE over `cfg.tune.horizon` steps.
///
/// Every trial trains with the same seed, so the loss is a function of the point alone.
/// Trials that fail to train score as non-finite and are recorded with the sentinel loss.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    prepared: &Prepared,
    cfg: &RunConfig,
    base_net: &NetworkSection,
    space: &SearchSpace,
    sampler: SamplerKind,
    budget: usize,
    seed: u64,
    history: TrialHistory,
) -> Result<TuneOutcome> {
    let sampler = match sampler {
        SamplerKind::Tpe => Sampler::Tpe(cfg.tune.tpe()),
        SamplerKind::Random => Sampler::Random,
    };
    let mut best: Option<(f64, Network)> = None;
    let objective = |_: usize, point: &Point| -> f64 {
        let run = || -> Result<(f64, Network)> {
            let (net, tr) = apply_point(space, point, base_net, &cfg.train)?;
            let outcome = fit(prepared, &net, &tr, seed, cfg.tune.horizon)?;
            let frame = prepared.val(net.window_len);
            let report = evaluate(
                &outcome.network,
                &frame,
                &prepared.stats,
                cfg.tune.horizon,
                cfg.tune.origin_stride,
            )?;
            Ok((report.average.mse, outcome.network))
        };
        match run() {
            Ok((loss, model)) if loss.is_finite() => {
                if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    best = Some((loss, model));
                }
                loss
            }
            _ => f64::NAN,
        }
    };
    let result = optimize(objective, space, budget, seed, sampler, history)?;
    Ok(TuneOutcome {
        result,
        best_model: best.map(|(_, m)| m),
    })
}

pub const VARIANTS: [&str; 4] = ["WCN", "WCN-FFT", "WCN-RS", "WCN-w/o-TPE"];
pub const DATASETS: [&str; 2] = ["clean", "injected"];

fn variant_setup(name: &str) -> (ExtractorKind, Option<SamplerKind>) {
    match name {
        "WCN" => (ExtractorKind::Dwt, Some(SamplerKind::Tpe)),
        "WCN-FFT" => (ExtractorKind::Fft, Some(SamplerKind::Tpe)),
        "WCN-RS" => (ExtractorKind::Dwt, Some(SamplerKind::Random)),
        _ => (ExtractorKind::Dwt, None),
    }
}

/// Default injection window: centred in the test segment, a quarter of its length wide.
pub fn injection_window(len: usize, ratios: SplitRatios, inject: &InjectSection) -> (usize, f64) {
    let (train, test, _) = ratios.lengths(len);
    let center = inject.center.unwrap_or(train + test / 2);
    let width = inject.width.unwrap_or((test as f64 / 4.0).max(1.0));
    (center, width)
}

pub fn inject(
    frame: &TimeSeriesFrame,
    ratios: SplitRatios,
    inj: &InjectSection,
) -> Result<TimeSeriesFrame> {
    let (center, width) = injection_window(frame.len(), ratios, inj);
    Ok(inject_local_periodicity(
        frame, center, width, inj.period, inj.amp,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub dataset: String,
    pub variant: String,
    pub seed: u64,
    pub horizon: usize,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub dataset: String,
    pub variant: String,
    pub horizon: usize,
    pub seeds: usize,
    /// Medians over seeds.
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub summary: Vec<AblationSummary>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One variant on one dataset with one seed, evaluated on the test segment at every horizon.
fn ablation_cell(
    prepared: &Prepared,
    cfg: &RunConfig,
    variant: &str,
    seed: u64,
) -> Result<Vec<(usize, MetricReport)>> {
    let (extractor, tuner) = variant_setup(variant);
    let base = NetworkSection {
        extractor,
        ..cfg.network.clone()
    };
    let model = match tuner {
        Some(sampler) => {
            let space = cfg.tune.search_space()?;
            let out = tune(
                prepared,
                cfg,
                &base,
                &space,
                sampler,
                cfg.tune.budget,
                seed,
                TrialHistory::default(),
            )?;
            match out.best_model {
                Some(m) => m,
                None => anyhow::bail!("{variant}: every tuning trial failed"),
            }
        }
        None => fit(prepared, &base, &cfg.train, seed, cfg.tune.horizon)?.network,
    };
    cfg.ablate
        .horizons
        .iter()
        .map(|&h| {
            Ok((
                h,
                evaluate_on_test(&model, prepared, h, cfg.evaluate.origin_stride)?.average,
            ))
        })
        .collect()
}

/// Every variant on the clean and the injected dataset for every seed.
///
/// `frame` is the loaded series before preprocessing; the injected copy is
/// built from it and both go through the same preprocessing and split.
pub fn ablate(frame: &TimeSeriesFrame, cfg: &RunConfig) -> Result<AblationReport> {
    let injected = inject(frame, cfg.data.split, &cfg.ablate.inject).context("ablate.inject")?;
    let mut runs = Vec::new();
    for (name, data) in DATASETS.iter().zip([frame, &injected]) {
        let prepared = Prepared::new(&preprocess(data, &cfg.data)?, cfg.data.split)?;
        for variant in VARIANTS {
            for &seed in &cfg.ablate.seeds {
                let cell = ablation_cell(&prepared, cfg, variant, seed)
                    .with_context(|| format!("{name}/{variant}"))?;
                runs.extend(cell.into_iter().map(|(horizon, metrics)| AblationRun {
                    dataset: name.to_string(),
                    variant: variant.to_string(),
                    seed,
                    horizon,
                    metrics,
                }));
            }
        }
    }
    let mut summary = Vec::new();
    for dataset in DATASETS {
        for variant in VARIANTS {
            for &horizon in &cfg.ablate.horizons {
                let cell: Vec<&AblationRun> = runs
                    .iter()
                    .filter(|r| {
                        r.dataset == dataset && r.variant == variant && r.horizon == horizon
                    })
                    .collect();
                let pick = |f: fn(&MetricReport) -> f64| {
                    median(cell.iter().map(|r| f(&r.metrics)).collect())
                };
                let mapes: Vec<f64> = cell.iter().filter_map(|r| r.metrics.mape).collect();
                summary.push(AblationSummary {
                    dataset: dataset.to_string(),
                    variant: variant.to_string(),
                    horizon,
                    seeds: cell.len(),
                    mae: pick(|m| m.mae),
                    mse: pick(|m| m.mse),
                    rmse: pick(|m| m.rmse),
                    mape: (!mapes.is_empty()).then(|| median(mapes)),
                });
            }
        }
    }
    Ok(AblationReport { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use wcn_core::Matrix;

    fn ramp(n: usize) -> TimeSeriesFrame {
        TimeSeriesFrame::from_values(
            Matrix::column(&(0..n).map(|t| t as f64).collect::<Vec<_>>()),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn segments_with_context() {
        let p = Prepared::new(&ramp(100), SplitRatios::default()).unwrap();
        assert_eq!((p.train_end, p.test_end), (70, 90));
        assert_eq!(p.train().len(), 70);
        assert_eq!(p.test(8).len(), 28);
        assert_eq!(p.val(8).len(), 18);
        assert_eq!(p.val(200).len(), 100);
        // standardized with train statistics: train mean is 34.5
        assert!(p.train().values().col(0).iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn injection_defaults_sit_in_test_segment() {
        let (c, w) = injection_window(1000, SplitRatios::default(), &InjectSection::default());
        assert_eq!(c, 800);
        assert_eq!(w, 50.0);
    }
}
