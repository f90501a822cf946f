//! Run configuration read from TOML.
//!
//! Every section and field is optional; missing ones take the defaults below.
//! Unknown keys are rejected and the whole file is validated before any
//! command does work.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wcn_core::dataset::{SplitRatios, DEFAULT_STEP, DEFAULT_TAPS};
use wcn_core::network::{Activation, NetworkConfig};
use wcn_core::period::ExtractorKind;
use wcn_core::tpe::{Dimension, SearchSpace, TpeConfig};
use wcn_core::training::TrainConfig;
use wcn_core::wavelet::WaveletKind;

use crate::tuning::{check_space, default_search_space};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub tune: TuneSection,
    pub evaluate: EvaluateSection,
    pub ablate: AblateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Input CSV; `--data` on the command line takes precedence.
    pub path: Option<PathBuf>,
    pub sample_freq: f64,
    pub split: SplitRatios,
    pub denoise: bool,
    pub taps: usize,
    pub step: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            sample_freq: 1.0,
            split: SplitRatios::default(),
            denoise: true,
            taps: DEFAULT_TAPS,
            step: DEFAULT_STEP,
        }
    }
}

/// Network settings; the channel count comes from the data and the seed from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub embed_dim: usize,
    pub layers: usize,
    pub top_k: usize,
    pub basis: WaveletKind,
    pub extractor: ExtractorKind,
    pub kernel_sizes: Vec<usize>,
    pub window_len: usize,
    pub activation: Activation,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::default();
        Self {
            embed_dim: d.embed_dim,
            layers: d.layers,
            top_k: d.top_k,
            basis: d.basis,
            extractor: d.extractor,
            kernel_sizes: d.kernel_sizes,
            window_len: d.window_len,
            activation: d.activation,
        }
    }
}

impl NetworkSection {
    pub fn to_config(&self, channels: usize, seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_channels: channels,
            embed_dim: self.embed_dim,
            layers: self.layers,
            top_k: self.top_k,
            basis: self.basis,
            extractor: self.extractor,
            kernel_sizes: self.kernel_sizes.clone(),
            window_len: self.window_len,
            activation: self.activation,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub stride: usize,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            stride: d.stride,
            patience: d.patience,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, window_len: usize, horizon: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            horizon,
            window_len,
            stride: self.stride,
            seed,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Tpe,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub budget: usize,
    pub sampler: SamplerKind,
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    /// Forecast length of the validation objective.
    pub horizon: usize,
    /// Step between validation forecast origins.
    pub origin_stride: usize,
    /// Replaces the built-in search space when given.
    pub space: Option<Vec<Dimension>>,
}

impl Default for TuneSection {
    fn default() -> Self {
        let t = TpeConfig::default();
        Self {
            budget: 20,
            sampler: SamplerKind::Tpe,
            n_startup: t.n_startup,
            gamma: t.gamma,
            n_candidates: t.n_candidates,
            horizon: 10,
            origin_stride: 1,
            space: None,
        }
    }
}

impl TuneSection {
    pub fn tpe(&self) -> TpeConfig {
        TpeConfig {
            n_startup: self.n_startup,
            gamma: self.gamma,
            n_candidates: self.n_candidates,
        }
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        match &self.space {
            Some(dims) => Ok(SearchSpace::new(dims.clone())?),
            None => Ok(default_search_space()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub horizons: Vec<usize>,
    pub origin_stride: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            horizons: vec![10, 30, 60],
            origin_stride: 1,
        }
    }
}

/// Gaussian-windowed sinusoid added to build the second ablation dataset.
/// `center` and `width` default to the middle and a quarter of the test segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectSection {
    pub center: Option<usize>,
    pub width: Option<f64>,
    pub period: f64,
    pub amp: f64,
}

impl Default for InjectSection {
    fn default() -> Self {
        Self {
            center: None,
            width: None,
            period: 32.0,
            amp: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub horizons: Vec<usize>,
    pub inject: InjectSection,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            horizons: vec![10],
            inject: InjectSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field; error messages name the offending key.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.sample_freq > 0.0 && d.sample_freq.is_finite()) {
            bail!("data.sample_freq must be positive");
        }
        d.split.validate().context("data.split")?;
        if d.taps == 0 {
            bail!("data.taps must be >= 1");
        }
        if !(d.step > 0.0 && d.step < 2.0) {
            bail!("data.step must lie in (0, 2)");
        }
        self.network
            .to_config(1, self.seed)
            .validate()
            .context("network")?;
        let horizon = self.tune.horizon.max(1);
        self.train
            .to_config(self.network.window_len, horizon, self.seed)
            .validate()
            .context("train")?;
        if self.tune.budget == 0 {
            bail!("tune.budget must be >= 1");
        }
        if self.tune.horizon == 0 {
            bail!("tune.horizon must be >= 1");
        }
        if self.tune.origin_stride == 0 {
            bail!("tune.origin_stride must be >= 1");
        }
        self.tune.tpe().validate().context("tune")?;
        check_space(
            &self.tune.search_space().context("tune.space")?,
            &self.network,
            &self.train,
        )
        .context("tune.space")?;
        if self.evaluate.horizons.is_empty() || self.evaluate.horizons.contains(&0) {
            bail!("evaluate.horizons must be a non-empty list of positive steps");
        }
        if self.evaluate.origin_stride == 0 {
            bail!("evaluate.origin_stride must be >= 1");
        }
        if self.ablate.seeds.is_empty() {
            bail!("ablate.seeds must not be empty");
        }
        if self.ablate.horizons.is_empty() || self.ablate.horizons.contains(&0) {
            bail!("ablate.horizons must be a non-empty list of positive steps");
        }
        let inj = &self.ablate.inject;
        if !(inj.period >= 2.0) {
            bail!("ablate.inject.period must be >= 2");
        }
        if !inj.amp.is_finite() {
            bail!("ablate.inject.amp must be finite");
        }
        if inj.width.is_some_and(|w| !(w > 0.0)) {
            bail!("ablate.inject.width must be > 0");
        }
        Ok(())
    }

    /// TOML listing every key with its default value.
    pub fn default_toml() -> String {
        toml::to_string(&RunConfig::default()).expect("default config serializes")
    }
}
