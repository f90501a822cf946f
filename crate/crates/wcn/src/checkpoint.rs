//! JSON checkpoint: format version, network config, standardization stats and
//! one entry per named parameter tensor.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wcn_core::dataset::ChannelStats;
use wcn_core::network::{Network, NetworkConfig};

use crate::io::write_text;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: NetworkConfig,
    pub stats: ChannelStats,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, stats: &ChannelStats) -> Self {
        let tensors = net
            .layout()
            .into_iter()
            .map(|spec| Tensor {
                values: net.params()[spec.range()].to_vec(),
                name: spec.name,
                shape: spec.shape,
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config: net.config().clone(),
            stats: stats.clone(),
            tensors,
        }
    }

    /// Rebuilds the network; every tensor must match the config's layout by name and shape.
    pub fn to_network(&self) -> Result<(Network, ChannelStats)> {
        if self.format_version != FORMAT_VERSION {
            bail!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            );
        }
        self.config.validate().context("checkpoint config")?;
        if self.stats.channels() != self.config.input_channels {
            bail!(
                "checkpoint stats cover {} channels, config has {}",
                self.stats.channels(),
                self.config.input_channels
            );
        }
        let layout = self.config.layout();
        if layout.len() != self.tensors.len() {
            bail!(
                "checkpoint has {} tensors, config expects {}",
                self.tensors.len(),
                layout.len()
            );
        }
        let mut params = Vec::with_capacity(self.config.parameter_count());
        for (spec, t) in layout.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.shape != t.shape {
                bail!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name,
                    t.shape,
                    spec.name,
                    spec.shape
                );
            }
            if t.values.len() != spec.len() {
                bail!(
                    "tensor `{}` has {} values for shape {:?}",
                    t.name,
                    t.values.len(),
                    t.shape
                );
            }
            params.extend_from_slice(&t.values);
        }
        Ok((
            Network::from_params(self.config.clone(), params)?,
            self.stats.clone(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("checkpoint {}", path.display()))
    }
}
