//! Maps search-space points onto network and training settings.

use anyhow::{anyhow, bail, Result};
use wcn_core::network::Activation;
use wcn_core::tpe::{Dimension, Domain, ParamValue, SearchSpace};
use wcn_core::wavelet::WaveletKind;

use crate::config::{NetworkSection, TrainSection};

/// k in 1..=5, d in {16, 32, 64}, L in 1..=3, log-uniform learning rate,
/// wavelet basis and kernel set.
pub fn default_search_space() -> SearchSpace {
    let cat = |c: &[&str]| Domain::Categorical {
        choices: c.iter().map(|s| s.to_string()).collect(),
    };
    SearchSpace::new(vec![
        Dimension::new("top_k", Domain::IntUniform { lo: 1, hi: 5 }),
        Dimension::new("embed_dim", cat(&["16", "32", "64"])),
        Dimension::new("layers", Domain::IntUniform { lo: 1, hi: 3 }),
        Dimension::new("learning_rate", Domain::LogUniform { lo: 1e-4, hi: 1e-2 }),
        Dimension::new("basis", cat(&["haar", "db2", "db4", "sym4"])),
        Dimension::new("kernel_sizes", cat(&["1,3", "1,3,5"])),
    ])
    .expect("built-in space is valid")
}

fn parse_kernels(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| anyhow!("bad kernel list `{text}`"))
        })
        .collect()
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        bail!("`{name}` needs a positive integer, got {v}")
    }
}

/// Writes one dimension's value into the settings.
fn apply_one(
    dim: &Dimension,
    value: &ParamValue,
    net: &mut NetworkSection,
    train: &mut TrainSection,
) -> Result<()> {
    let text = match (&dim.domain, value) {
        (Domain::Categorical { choices }, ParamValue::Choice(i)) => Some(
            choices
                .get(*i)
                .ok_or_else(|| anyhow!("choice {i} out of range"))?
                .as_str(),
        ),
        _ => None,
    };
    let number = || -> Result<f64> {
        match text {
            Some(t) => t
                .trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("`{}` needs a number, got `{t}`", dim.name)),
            None => Ok(value.as_f64()),
        }
    };
    let word =
        || -> Result<&str> { text.ok_or_else(|| anyhow!("`{}` must be categorical", dim.name)) };
    match dim.name.as_str() {
        "top_k" => net.top_k = as_count(&dim.name, number()?)?,
        "embed_dim" => net.embed_dim = as_count(&dim.name, number()?)?,
        "layers" => net.layers = as_count(&dim.name, number()?)?,
        "window_len" => net.window_len = as_count(&dim.name, number()?)?,
        "epochs" => train.epochs = as_count(&dim.name, number()?)?,
        "batch_size" => train.batch_size = as_count(&dim.name, number()?)?,
        "learning_rate" => train.learning_rate = number()?,
        "basis" => net.basis = word()?.parse::<WaveletKind>()?,
        "activation" => net.activation = word()?.parse::<Activation>()?,
        "kernel_sizes" => net.kernel_sizes = parse_kernels(word()?)?,
        other => bail!("unknown hyperparameter `{other}`"),
    }
    Ok(())
}

/// Settings for one trial: the base settings with every dimension of `point` applied.
pub fn apply_point(
    space: &SearchSpace,
    point: &[ParamValue],
    net: &NetworkSection,
    train: &TrainSection,
) -> Result<(NetworkSection, TrainSection)> {
    let (mut net, mut train) = (net.clone(), train.clone());
    for (dim, v) in space.dims().iter().zip(point) {
        apply_one(dim, v, &mut net, &mut train)?;
    }
    Ok((net, train))
}

/// Rejects spaces whose extreme values cannot be applied or give invalid settings.
pub fn check_space(space: &SearchSpace, net: &NetworkSection, train: &TrainSection) -> Result<()> {
    for dim in space.dims() {
        let values: Vec<ParamValue> = match &dim.domain {
            Domain::Uniform { lo, hi } | Domain::LogUniform { lo, hi } => {
                vec![ParamValue::Real(*lo), ParamValue::Real(*hi)]
            }
            Domain::IntUniform { lo, hi } => vec![ParamValue::Int(*lo), ParamValue::Int(*hi)],
            Domain::Categorical { choices } => (0..choices.len()).map(ParamValue::Choice).collect(),
        };
        for v in values {
            let (mut n, mut t) = (net.clone(), train.clone());
            apply_one(dim, &v, &mut n, &mut t).map_err(|e| anyhow!("`{}`: {e}", dim.name))?;
            n.to_config(1, 0)
                .validate()
                .map_err(|e| anyhow!("`{}`: {e}", dim.name))?;
            t.to_config(n.window_len, 1, 0)
                .validate()
                .map_err(|e| anyhow!("`{}`: {e}", dim.name))?;
        }
    }
    Ok(())
}
