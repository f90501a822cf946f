//! Tree-structured Parzen estimator over flat mixed search spaces.
//!
//! After a random start-up phase, trials are split at the `gamma` quantile of
//! their losses. One Parzen density is fitted to the good trials and one to
//! the rest; candidates drawn from the good density are scored by the ratio
//! `good(x) / bad(x)` and the best candidate is evaluated next.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Loss recorded for trials whose objective returned a non-finite value.
pub const FAILED_TRIAL_LOSS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Domain {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    IntUniform { lo: i64, hi: i64 },
    Categorical { choices: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dimension {
    pub name: String,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub domain: Domain,
}

impl Dimension {
    pub fn new(name: impl Into<String>, domain: Domain) -> Self {
        Self {
            name: name.into(),
            domain,
        }
    }
}

/// Ordered list of named dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        for (i, d) in dims.iter().enumerate() {
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidArgument(format!(
                    "dimension `{}` defined twice",
                    d.name
                )));
            }
            let ok = match &d.domain {
                Domain::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
                Domain::LogUniform { lo, hi } => *lo > 0.0 && hi.is_finite() && lo < hi,
                Domain::IntUniform { lo, hi } => lo < hi,
                Domain::Categorical { choices } => !choices.is_empty(),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "dimension `{}` has an invalid domain",
                    d.name
                )));
            }
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn contains(&self, point: &[ParamValue]) -> bool {
        point.len() == self.dims.len()
            && self
                .dims
                .iter()
                .zip(point)
                .all(|(d, v)| match (&d.domain, v) {
                    (Domain::Uniform { lo, hi }, ParamValue::Real(x)) => lo <= x && x <= hi,
                    (Domain::LogUniform { lo, hi }, ParamValue::Real(x)) => lo <= x && x <= hi,
                    (Domain::IntUniform { lo, hi }, ParamValue::Int(x)) => lo <= x && x <= hi,
                    (Domain::Categorical { choices }, ParamValue::Choice(i)) => *i < choices.len(),
                    _ => false,
                })
    }

    /// Independent uniform draw in every dimension (log-uniform for log dims).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        self.dims
            .iter()
            .map(|d| match &d.domain {
                Domain::Uniform { lo, hi } => ParamValue::Real(rng.random_range(*lo..=*hi)),
                Domain::LogUniform { lo, hi } => {
                    let x = libm::exp(rng.random_range(libm::log(*lo)..=libm::log(*hi)));
                    ParamValue::Real(x.clamp(*lo, *hi))
                }
                Domain::IntUniform { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
                Domain::Categorical { choices } => {
                    ParamValue::Choice(rng.random_range(0..choices.len()))
                }
            })
            .collect()
    }

    /// Renders a value the way history files store it.
    pub fn format_value(&self, dim: usize, value: &ParamValue) -> String {
        match (&self.dims[dim].domain, value) {
            (Domain::Categorical { choices }, ParamValue::Choice(i)) => choices[*i].clone(),
            _ => format!("{value}"),
        }
    }

    /// Parses a value written by [`SearchSpace::format_value`].
    pub fn parse_value(&self, dim: usize, text: &str) -> Result<ParamValue> {
        let bad = || {
            Error::InvalidArgument(format!(
                "`{text}` is not valid for `{}`",
                self.dims[dim].name
            ))
        };
        let v = match &self.dims[dim].domain {
            Domain::Uniform { .. } | Domain::LogUniform { .. } => {
                ParamValue::Real(text.trim().parse().map_err(|_| bad())?)
            }
            Domain::IntUniform { .. } => ParamValue::Int(text.trim().parse().map_err(|_| bad())?),
            Domain::Categorical { choices } => ParamValue::Choice(
                choices
                    .iter()
                    .position(|c| c == text.trim())
                    .ok_or_else(bad)?,
            ),
        };
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ParamValue {
    Real(f64),
    Int(i64),
    /// Index into the dimension's choice list.
    Choice(usize),
}

impl ParamValue {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Self::Real(x) => x,
            Self::Int(i) => i as f64,
            Self::Choice(i) => i as f64,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Real(x) => write!(f, "{x}"),
            Self::Int(i) => write!(f, "{i}"),
            Self::Choice(i) => write!(f, "{i}"),
        }
    }
}

pub type Point = Vec<ParamValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub point: Point,
    pub loss: f64,
}

/// Evaluated trials in evaluation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialHistory {
    pub records: Vec<Trial>,
}

impl TrialHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a trial; non-finite losses are stored as [`FAILED_TRIAL_LOSS`].
    pub fn record(&mut self, point: Point, loss: f64) {
        let loss = if loss.is_finite() {
            loss
        } else {
            FAILED_TRIAL_LOSS
        };
        self.records.push(Trial { point, loss });
    }

    /// First trial with the minimum loss.
    pub fn best(&self) -> Option<&Trial> {
        self.records
            .iter()
            .fold(None, |best: Option<&Trial>, t| match best {
                Some(b) if b.loss <= t.loss => Some(b),
                _ => Some(t),
            })
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indices of the good and bad trials and the loss threshold between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSplit {
    pub good: Vec<usize>,
    pub bad: Vec<usize>,
    pub threshold: f64,
}

/// Good trials have loss strictly below the `gamma` quantile; if none do, the
/// first trial with the minimum loss is the single good one.
pub fn split_observations(history: &TrialHistory, gamma: f64) -> Result<ObservationSplit> {
    if history.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "splitting needs at least 2 trials, have {}",
            history.len()
        )));
    }
    let losses: Vec<f64> = history.records.iter().map(|t| t.loss).collect();
    let threshold = quantile(&losses, gamma);
    let mut good: Vec<usize> = (0..losses.len())
        .filter(|&i| losses[i] < threshold)
        .collect();
    if good.is_empty() {
        let best = (0..losses.len())
            .reduce(|b, i| if losses[i] < losses[b] { i } else { b })
            .unwrap();
        good.push(best);
    }
    let bad = (0..losses.len()).filter(|i| !good.contains(i)).collect();
    Ok(ObservationSplit {
        good,
        bad,
        threshold,
    })
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * core::f64::consts::FRAC_1_SQRT_2))
}

#[derive(Debug, Clone, PartialEq)]
pub enum DimDensity {
    /// Mixture of a uniform prior and truncated Gaussians, in the dimension's
    /// working coordinates (log for log-uniform, widened by half a step for integers).
    Continuous {
        lo: f64,
        hi: f64,
        centers: Vec<f64>,
        bandwidth: f64,
    },
    Categorical {
        weights: Vec<f64>,
    },
}

impl DimDensity {
    fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Continuous {
                lo,
                hi,
                centers,
                bandwidth,
            } => {
                if x < *lo || x > *hi {
                    return 0.0;
                }
                let h = *bandwidth;
                let mut total = 1.0 / (hi - lo);
                for &c in centers {
                    let mass = phi((hi - c) / h) - phi((lo - c) / h);
                    let z = (x - c) / h;
                    total += libm::exp(-0.5 * z * z)
                        / (h * libm::sqrt(2.0 * core::f64::consts::PI) * mass);
                }
                total / (centers.len() + 1) as f64
            }
            Self::Categorical { weights } => weights.get(x as usize).copied().unwrap_or(0.0),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Continuous {
                lo,
                hi,
                centers,
                bandwidth,
            } => {
                let pick = rng.random_range(0..=centers.len());
                if pick == centers.len() {
                    return rng.random_range(*lo..=*hi);
                }
                let c = centers[pick];
                for _ in 0..64 {
                    let x = c + bandwidth * standard_normal(rng);
                    if (*lo..=*hi).contains(&x) {
                        return x;
                    }
                }
                c
            }
            Self::Categorical { weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return i as f64;
                    }
                }
                (weights.len() - 1) as f64
            }
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; 1 - u keeps the log argument in (0, 1]
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Product of independent per-dimension Parzen densities.
#[derive(Debug, Clone, PartialEq)]
pub struct ParzenDensity {
    pub dims: Vec<DimDensity>,
}

fn working_bounds(domain: &Domain) -> (f64, f64) {
    match domain {
        Domain::Uniform { lo, hi } => (*lo, *hi),
        Domain::LogUniform { lo, hi } => (libm::log(*lo), libm::log(*hi)),
        Domain::IntUniform { lo, hi } => (*lo as f64 - 0.5, *hi as f64 + 0.5),
        Domain::Categorical { choices } => (0.0, choices.len() as f64),
    }
}

fn to_working(domain: &Domain, v: &ParamValue) -> f64 {
    match domain {
        Domain::LogUniform { .. } => libm::log(v.as_f64()),
        _ => v.as_f64(),
    }
}

fn from_working(domain: &Domain, x: f64) -> ParamValue {
    match domain {
        Domain::Uniform { lo, hi } => ParamValue::Real(x.clamp(*lo, *hi)),
        Domain::LogUniform { lo, hi } => ParamValue::Real(libm::exp(x).clamp(*lo, *hi)),
        Domain::IntUniform { lo, hi } => ParamValue::Int((libm::round(x) as i64).clamp(*lo, *hi)),
        Domain::Categorical { .. } => ParamValue::Choice(x as usize),
    }
}

/// Fits one kernel per point with a shared Scott bandwidth floored at
/// `range / min(100, n + 1)`; categorical dims use add-one smoothed counts.
pub fn fit_parzen(points: &[&Point], space: &SearchSpace) -> Result<ParzenDensity> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a density to zero points".into(),
        ));
    }
    if let Some(p) = points.iter().find(|p| !space.contains(p)) {
        return Err(Error::InvalidArgument(format!(
            "point {p:?} lies outside the search space"
        )));
    }
    let n = points.len() as f64;
    let dims = space
        .dims()
        .iter()
        .enumerate()
        .map(|(j, dim)| match &dim.domain {
            Domain::Categorical { choices } => {
                let mut counts = vec![1.0; choices.len()];
                for p in points {
                    if let ParamValue::Choice(i) = p[j] {
                        counts[i] += 1.0;
                    }
                }
                let total = n + choices.len() as f64;
                DimDensity::Categorical {
                    weights: counts.into_iter().map(|c| c / total).collect(),
                }
            }
            domain => {
                let (lo, hi) = working_bounds(domain);
                let centers: Vec<f64> = points.iter().map(|p| to_working(domain, &p[j])).collect();
                let mean = centers.iter().sum::<f64>() / n;
                let std =
                    libm::sqrt(centers.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n);
                let range = hi - lo;
                let floor = range / (n + 1.0).min(100.0);
                let bandwidth = (1.06 * std * libm::pow(n, -0.2)).clamp(floor, range);
                DimDensity::Continuous {
                    lo,
                    hi,
                    centers,
                    bandwidth,
                }
            }
        })
        .collect();
    Ok(ParzenDensity { dims })
}

impl ParzenDensity {
    pub fn log_pdf(&self, point: &[ParamValue], space: &SearchSpace) -> f64 {
        self.dims
            .iter()
            .zip(space.dims())
            .zip(point)
            .map(|((dens, dim), v)| libm::log(dens.pdf(to_working(&dim.domain, v))))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, space: &SearchSpace, rng: &mut R) -> Point {
        self.dims
            .iter()
            .zip(space.dims())
            .map(|(dens, dim)| from_working(&dim.domain, dens.sample(rng)))
            .collect()
    }
}

/// Log of `good(point) / bad(point)`.
pub fn log_ei_ratio(
    point: &[ParamValue],
    good: &ParzenDensity,
    bad: &ParzenDensity,
    space: &SearchSpace,
) -> f64 {
    let lg = good.log_pdf(point, space);
    let lb = bad.log_pdf(point, space);
    debug_assert!(
        lb.is_finite(),
        "prior component keeps the bad density positive in-space"
    );
    lg - lb
}

/// `good(point) / bad(point)`, evaluated in log space.
pub fn ei_ratio(
    point: &[ParamValue],
    good: &ParzenDensity,
    bad: &ParzenDensity,
    space: &SearchSpace,
) -> f64 {
    libm::exp(log_ei_ratio(point, good, bad, space))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TpeConfig {
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            n_startup: 10,
            gamma: 0.25,
            n_candidates: 24,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma {} not in (0, 1)",
                self.gamma
            )));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidArgument("n_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

/// Next point to evaluate given the history so far.
pub fn suggest<R: Rng + ?Sized>(
    history: &TrialHistory,
    space: &SearchSpace,
    rng: &mut R,
    cfg: &TpeConfig,
) -> Result<Point> {
    if history.len() < cfg.n_startup.max(2) {
        return Ok(space.sample_uniform(rng));
    }
    let split = split_observations(history, cfg.gamma)?;
    let pts =
        |idx: &[usize]| -> Vec<&Point> { idx.iter().map(|&i| &history.records[i].point).collect() };
    let good = fit_parzen(&pts(&split.good), space)?;
    let bad = if split.bad.is_empty() {
        // every trial counted as good; compare against the uniform prior alone
        fit_parzen(&pts(&split.good), space)?
    } else {
        fit_parzen(&pts(&split.bad), space)?
    };
    let cands: Vec<Point> = (0..cfg.n_candidates)
        .map(|_| good.sample(space, rng))
        .collect();
    Ok(best_candidate(cands, &good, &bad, space).expect("n_candidates >= 1"))
}

/// Candidate with the highest ratio; the earliest one wins ties.
pub fn best_candidate(
    candidates: Vec<Point>,
    good: &ParzenDensity,
    bad: &ParzenDensity,
    space: &SearchSpace,
) -> Option<Point> {
    let mut best: Option<(f64, Point)> = None;
    for cand in candidates {
        let score = log_ei_ratio(&cand, good, bad, space);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    best.map(|(_, p)| p)
}

/// How the next trial's point is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Tpe(TpeConfig),
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub best_point: Point,
    pub best_loss: f64,
    pub history: TrialHistory,
}

/// RNG for trial `index`; resuming from a saved history replays the same stream.
pub fn trial_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs `budget` new trials on top of `history` and returns the best trial overall.
pub fn optimize<F>(
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    sampler: Sampler,
    mut history: TrialHistory,
) -> Result<OptimizeResult>
where
    F: FnMut(usize, &Point) -> f64,
{
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    if let Sampler::Tpe(cfg) = &sampler {
        cfg.validate()?;
    }
    if let Some(t) = history.records.iter().find(|t| !space.contains(&t.point)) {
        return Err(Error::InvalidArgument(format!(
            "history point {:?} lies outside the space",
            t.point
        )));
    }
    for _ in 0..budget {
        let index = history.len();
        let mut rng = trial_rng(seed, index);
        let point = match &sampler {
            Sampler::Tpe(cfg) => suggest(&history, space, &mut rng, cfg)?,
            Sampler::Random => space.sample_uniform(&mut rng),
        };
        let loss = objective(index, &point);
        history.record(point, loss);
    }
    let best = history.best().expect("budget >= 1").clone();
    Ok(OptimizeResult {
        best_point: best.point,
        best_loss: best.loss,
        history,
    })
}
