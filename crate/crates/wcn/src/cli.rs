//! `wcn` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use wcn_core::dataset::{inject_local_periodicity, synth_multiperiod, ChannelStats, SynthSpec};
use wcn_core::metrics::MetricReport;
use wcn_core::period::PeriodExtractor;
use wcn_core::tpe::{SearchSpace, TrialHistory};
use wcn_core::training::{
    forecast_recursive, report_from_rollouts, rollouts, EvaluationReport, Forecaster, Persistence,
};
use wcn_core::TimeSeriesFrame;

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, SamplerKind};
use crate::io;
use crate::pipeline::{self, Prepared};
use crate::tuning::apply_point;

#[derive(Debug, Parser)]
#[command(
    name = "wcn",
    version,
    about = "Multi-period forecasting with wavelet period selection"
)]
pub struct Cli {
    /// TOML run configuration; every key is optional (defaults listed below).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a sum-of-sinusoids series, optionally with a local periodic burst.
    Synth(SynthArgs),
    /// Impute missing values and denoise.
    Preprocess(DataArgs),
    /// Score candidate periods and write the top-k table.
    Periods(PeriodsArgs),
    /// Search hyperparameters on the validation segment.
    Tune(TuneArgs),
    /// Train a network and write a checkpoint.
    Train(TrainArgs),
    /// Forecast past the end of the series.
    Forecast(ForecastArgs),
    /// Error metrics on the test segment.
    Evaluate(EvaluateArgs),
    /// Compare WCN, WCN-FFT, WCN-RS and WCN-w/o-TPE on clean and injected data.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub length: usize,
    /// Comma-separated period lengths in samples.
    #[arg(long, value_delimiter = ',', required = true)]
    pub periods: Vec<f64>,
    /// Comma-separated amplitudes, one per period.
    #[arg(long, value_delimiter = ',', required = true)]
    pub amps: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Sampling frequency in Hz.
    #[arg(long, default_value_t = 1.0)]
    pub freq: f64,
    /// Centre sample of the injected burst [default: length / 2].
    #[arg(long)]
    pub inject_center: Option<usize>,
    /// Gaussian window width in samples [default: length / 8].
    #[arg(long)]
    pub inject_width: Option<f64>,
    /// Period of the injected sinusoid [default: 32].
    #[arg(long)]
    pub inject_period: Option<f64>,
    /// Amplitude of the injected sinusoid [default: 1].
    #[arg(long)]
    pub inject_amp: Option<f64>,
    /// Output CSV [default: <out-dir>/synth.csv].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV [default: data.path from the config].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output CSV [default: <out-dir>/preprocessed.csv].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PeriodsArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of periods [default: network.top_k].
    #[arg(short)]
    pub k: Option<usize>,
    /// Analyse only the last N rows.
    #[arg(long)]
    pub last: Option<usize>,
    /// Output CSV [default: <out-dir>/periods.csv].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sampler [default: tune.sampler].
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerKind>,
    /// Number of new trials [default: tune.budget].
    #[arg(long)]
    pub budget: Option<usize>,
    /// Continue from a history CSV written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// best_params.json from `tune`, applied on top of the config.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Output CSV [default: <out-dir>/forecast.csv].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    Persistence,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(
        long,
        conflicts_with = "baseline",
        required_unless_present = "baseline"
    )]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Comma-separated horizons [default: evaluate.horizons].
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    /// Input length for the baseline [default: network.window_len].
    #[arg(long)]
    pub window_len: Option<usize>,
    /// Also write observed-vs-forecast pairs per horizon.
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
}

/// Parses the process arguments and runs the chosen command.
pub fn main() -> std::process::ExitCode {
    let cmd = Cli::command().after_long_help(format!(
        "Configuration defaults:\n\n{}",
        RunConfig::default_toml()
    ));
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).context("--config")?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("--out-dir {}", cli.out_dir.display()))?;
    let ctx = Ctx {
        cfg,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Synth(a) => ctx.synth(a),
        Command::Preprocess(a) => ctx.preprocess(a),
        Command::Periods(a) => ctx.periods(a),
        Command::Tune(a) => ctx.tune(a),
        Command::Train(a) => ctx.train(a),
        Command::Forecast(a) => ctx.forecast(a),
        Command::Evaluate(a) => ctx.evaluate(a),
        Command::Ablate(a) => ctx.ablate(a),
    }
}

struct Ctx {
    cfg: RunConfig,
    out_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BestParams {
    pub trial_index: usize,
    pub loss: f64,
    pub seed: u64,
    /// Values as written in the history CSV.
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct ChannelMetrics<'a> {
    channel: &'a str,
    #[serde(flatten)]
    metrics: &'a MetricReport,
}

#[derive(Debug, Serialize)]
struct HorizonReport<'a> {
    horizon: usize,
    origins: usize,
    per_channel: Vec<ChannelMetrics<'a>>,
    average: &'a MetricReport,
}

#[derive(Debug, Serialize)]
struct EvaluationFile<'a> {
    model: String,
    seed: u64,
    config: &'a RunConfig,
    horizons: Vec<HorizonReport<'a>>,
}

impl Ctx {
    fn out(&self, explicit: Option<PathBuf>, default: &str) -> PathBuf {
        explicit.unwrap_or_else(|| self.out_dir.join(default))
    }

    fn data_path(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.cfg.data.path.clone())
            .ok_or_else(|| anyhow!("--data is required (or set data.path in the config)"))
    }

    fn load(&self, flag: Option<PathBuf>) -> Result<TimeSeriesFrame> {
        let path = self.data_path(flag)?;
        io::load_csv(&path, self.cfg.data.sample_freq).context("--data")
    }

    fn load_prepared(&self, flag: Option<PathBuf>) -> Result<Prepared> {
        let frame = pipeline::preprocess(&self.load(flag)?, &self.cfg.data)?;
        Prepared::new(&frame, self.cfg.data.split)
    }

    fn synth(&self, a: SynthArgs) -> Result<()> {
        let spec = SynthSpec {
            length: a.length,
            periods: a.periods,
            amplitudes: a.amps,
            noise_std: a.noise,
            channels: a.channels,
            seed: self.cfg.seed,
            sample_freq: a.freq,
        };
        spec.validate()
            .context("--periods/--amps/--length/--noise/--channels/--freq")?;
        let mut frame = synth_multiperiod(&spec)?;
        let injecting = a.inject_center.is_some()
            || a.inject_width.is_some()
            || a.inject_period.is_some()
            || a.inject_amp.is_some();
        if injecting {
            frame = inject_local_periodicity(
                &frame,
                a.inject_center.unwrap_or(a.length / 2),
                a.inject_width.unwrap_or(a.length as f64 / 8.0),
                a.inject_period.unwrap_or(32.0),
                a.inject_amp.unwrap_or(1.0),
            )
            .context("--inject-center/--inject-width/--inject-period/--inject-amp")?;
        }
        io::write_csv(&self.out(a.output, "synth.csv"), &frame)
    }

    fn preprocess(&self, a: DataArgs) -> Result<()> {
        let frame = pipeline::preprocess(&self.load(a.data)?, &self.cfg.data)?;
        io::write_csv(&self.out(a.output, "preprocessed.csv"), &frame)
    }

    fn periods(&self, a: PeriodsArgs) -> Result<()> {
        let k = a.k.unwrap_or(self.cfg.network.top_k);
        if k == 0 {
            bail!("-k must be >= 1");
        }
        let frame = pipeline::preprocess(&self.load(a.data)?, &self.cfg.data)?;
        let values = match a.last {
            Some(n) if n == 0 || n > frame.len() => bail!("--last must be in 1..={}", frame.len()),
            Some(n) => frame.values().slice_rows(frame.len() - n, frame.len()),
            None => frame.values().clone(),
        };
        let extractor = PeriodExtractor::new(self.cfg.network.extractor, self.cfg.network.basis);
        let set = extractor
            .extract(&values, k, frame.sample_freq())
            .context("-k")?;
        io::write_periods(&self.out(a.output, "periods.csv"), &set)
    }

    fn tune(&self, a: TuneArgs) -> Result<()> {
        let budget = a.budget.unwrap_or(self.cfg.tune.budget);
        if budget == 0 {
            bail!("--budget must be >= 1");
        }
        let sampler = a.sampler.unwrap_or(self.cfg.tune.sampler);
        let space = self.cfg.tune.search_space()?;
        let history = match &a.resume {
            Some(p) => io::read_trials(p, &space).context("--resume")?,
            None => TrialHistory::default(),
        };
        let prepared = self.load_prepared(a.data)?;
        let out = pipeline::tune(
            &prepared,
            &self.cfg,
            &self.cfg.network,
            &space,
            sampler,
            budget,
            self.cfg.seed,
            history,
        )?;
        io::write_trials(
            &self.out_dir.join("tune_history.csv"),
            &space,
            &out.result.history,
        )?;
        let best_index = out
            .result
            .history
            .records
            .iter()
            .position(|t| t.loss == out.result.best_loss)
            .expect("best trial is in the history");
        let best = BestParams {
            trial_index: best_index,
            loss: out.result.best_loss,
            seed: self.cfg.seed,
            params: space
                .dims()
                .iter()
                .enumerate()
                .map(|(j, d)| {
                    (
                        d.name.clone(),
                        space.format_value(j, &out.result.best_point[j]),
                    )
                })
                .collect(),
        };
        io::write_text(
            &self.out_dir.join("best_params.json"),
            &serde_json::to_string_pretty(&best)?,
        )
    }

    fn train(&self, a: TrainArgs) -> Result<()> {
        let (mut net, mut tr) = (self.cfg.network.clone(), self.cfg.train.clone());
        if let Some(p) = &a.params {
            let text =
                fs::read_to_string(p).with_context(|| format!("--params {}", p.display()))?;
            let best: BestParams =
                serde_json::from_str(&text).with_context(|| format!("--params {}", p.display()))?;
            let space = self.cfg.tune.search_space()?;
            let point = params_to_point(&space, &best.params).context("--params")?;
            (net, tr) = apply_point(&space, &point, &net, &tr).context("--params")?;
        }
        let prepared = self.load_prepared(a.data)?;
        let outcome = pipeline::fit(&prepared, &net, &tr, self.cfg.seed, self.cfg.tune.horizon)?;
        Checkpoint::from_network(&outcome.network, &prepared.stats)
            .save(&self.out_dir.join("checkpoint.json"))?;
        io::write_loss_history(&self.out_dir.join("loss_history.csv"), &outcome.history)
    }

    fn load_checkpoint(
        &self,
        path: &Path,
        channels: usize,
    ) -> Result<(wcn_core::network::Network, ChannelStats)> {
        let ck = Checkpoint::load(path).context("--checkpoint")?;
        if ck.config.input_channels != channels {
            bail!(
                "--checkpoint expects {} channels but --data has {channels}",
                ck.config.input_channels
            );
        }
        ck.to_network().context("--checkpoint")
    }

    fn forecast(&self, a: ForecastArgs) -> Result<()> {
        if a.horizon == 0 {
            bail!("--horizon must be >= 1");
        }
        let raw = self.load(a.data)?;
        let (net, stats) = self.load_checkpoint(&a.checkpoint, raw.channels())?;
        let frame = pipeline::preprocess(&raw, &self.cfg.data)?;
        let w = net.config().window_len;
        if frame.len() < w {
            bail!("--data has {} rows, the model needs {w}", frame.len());
        }
        let std = wcn_core::dataset::standardize(&frame, &stats)?;
        let window = std.values().slice_rows(frame.len() - w, frame.len());
        let mut pred = forecast_recursive(&net, &window, a.horizon)?.predictions;
        for g in 0..a.horizon {
            stats.destandardize_row(pred.row_mut(g));
        }
        let start = frame
            .start_time()
            .advanced(frame.len(), frame.sample_freq());
        let out = TimeSeriesFrame::new(
            pred,
            vec![true; a.horizon * frame.channels()],
            frame.sample_freq(),
            frame.channel_names().to_vec(),
            start,
        )?;
        io::write_csv(&self.out(a.output, "forecast.csv"), &out)
    }

    fn evaluate(&self, a: EvaluateArgs) -> Result<()> {
        let horizons = a
            .horizons
            .unwrap_or_else(|| self.cfg.evaluate.horizons.clone());
        if horizons.is_empty() || horizons.contains(&0) {
            bail!("--horizons must list positive steps");
        }
        let raw = self.load(a.data)?;
        let (model, prepared, label): (Box<dyn Forecaster>, Prepared, String) =
            match (&a.checkpoint, a.baseline) {
                (Some(path), _) => {
                    let (net, stats) = self.load_checkpoint(path, raw.channels())?;
                    let frame = pipeline::preprocess(&raw, &self.cfg.data)?;
                    let prepared = Prepared::with_stats(&frame, self.cfg.data.split, stats)?;
                    (
                        Box::new(net),
                        prepared,
                        format!("checkpoint {}", path.display()),
                    )
                }
                (None, Some(Baseline::Persistence)) => {
                    let window_len = a.window_len.unwrap_or(self.cfg.network.window_len);
                    if window_len == 0 {
                        bail!("--window-len must be >= 1");
                    }
                    let frame = pipeline::preprocess(&raw, &self.cfg.data)?;
                    // persistence is scale-free; identity stats keep observed values bit-exact
                    let prepared = Prepared::with_stats(
                        &frame,
                        self.cfg.data.split,
                        ChannelStats::identity(frame.channels()),
                    )?;
                    (
                        Box::new(Persistence { window_len }),
                        prepared,
                        "persistence".into(),
                    )
                }
                (None, None) => bail!("--checkpoint or --baseline is required"),
            };
        let names = prepared.frame.channel_names().to_vec();
        let test = prepared.test(model.window_len());
        let mut reports: Vec<EvaluationReport> = Vec::new();
        for &h in &horizons {
            let rolls = rollouts(
                model.as_ref(),
                &test,
                &prepared.stats,
                h,
                self.cfg.evaluate.origin_stride,
            )
            .with_context(|| format!("--horizons {h}"))?;
            let report = report_from_rollouts(&rolls, h)?;
            io::write_metrics(
                &self.out_dir.join(format!("metrics_h{h}.csv")),
                &names,
                &report.per_channel,
                &report.average,
            )?;
            if a.emit_plot_data {
                write_plot_data(&self.out_dir.join(format!("plot_h{h}.csv")), &names, &rolls)?;
            }
            reports.push(report);
        }
        let file = EvaluationFile {
            model: label,
            seed: self.cfg.seed,
            config: &self.cfg,
            horizons: reports
                .iter()
                .map(|r| HorizonReport {
                    horizon: r.horizon,
                    origins: r.origins,
                    per_channel: names
                        .iter()
                        .zip(&r.per_channel)
                        .map(|(n, m)| ChannelMetrics {
                            channel: n,
                            metrics: m,
                        })
                        .collect(),
                    average: &r.average,
                })
                .collect(),
        };
        io::write_text(
            &self.out_dir.join("evaluation.json"),
            &serde_json::to_string_pretty(&file)?,
        )
    }

    fn ablate(&self, a: AblateArgs) -> Result<()> {
        let frame = self.load(a.data)?;
        let report = pipeline::ablate(&frame, &self.cfg)?;
        write_ablation(&self.out_dir, &report)?;
        io::write_text(
            &self.out_dir.join("ablation.json"),
            &serde_json::to_string_pretty(&report)?,
        )
    }
}

fn params_to_point(
    space: &SearchSpace,
    params: &BTreeMap<String, String>,
) -> Result<Vec<wcn_core::tpe::ParamValue>> {
    if let Some(extra) = params.keys().find(|k| space.index_of(k).is_none()) {
        bail!("`{extra}` is not in the search space");
    }
    space
        .dims()
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let text = params
                .get(&d.name)
                .ok_or_else(|| anyhow!("missing `{}`", d.name))?;
            Ok(space.parse_value(j, text)?)
        })
        .collect()
}

fn write_plot_data(
    path: &Path,
    names: &[String],
    rolls: &[wcn_core::training::Rollout],
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["origin", "step", "channel", "observed", "predicted"])?;
    for r in rolls {
        for g in 0..r.predicted.rows() {
            for (n, name) in names.iter().enumerate() {
                w.write_record([
                    r.start.to_string(),
                    (g + 1).to_string(),
                    name.clone(),
                    r.observed.get(g, n).to_string(),
                    r.predicted.get(g, n).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_ablation(dir: &Path, report: &pipeline::AblationReport) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    w.write_record([
        "dataset", "variant", "horizon", "seeds", "mae", "mse", "rmse", "mape",
    ])?;
    for s in &report.summary {
        w.write_record([
            s.dataset.clone(),
            s.variant.clone(),
            s.horizon.to_string(),
            s.seeds.to_string(),
            s.mae.to_string(),
            s.mse.to_string(),
            s.rmse.to_string(),
            opt(s.mape),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("ablation_runs.csv"))?;
    w.write_record([
        "dataset", "variant", "seed", "horizon", "mae", "mse", "rmse", "mape",
    ])?;
    for r in &report.runs {
        w.write_record([
            r.dataset.clone(),
            r.variant.clone(),
            r.seed.to_string(),
            r.horizon.to_string(),
            r.metrics.mae.to_string(),
            r.metrics.mse.to_string(),
            r.metrics.rmse.to_string(),
            opt(r.metrics.mape),
        ])?;
    }
    w.flush()?;
    Ok(())
}
