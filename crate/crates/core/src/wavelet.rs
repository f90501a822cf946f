//! Periodized orthogonal discrete wavelet transform.
//!
//! One analysis level maps an even-length signal `x` of length `n` to
//!
//! ```text
//! approx[k] = sum_i g[i] * x[(2k + i) mod n]
//! detail[k] = sum_i h[i] * x[(2k + i) mod n]        k = 0 .. n/2
//! ```
//!
//! with `h[i] = (-1)^i g[L-1-i]`. Circular indexing keeps the transform
//! orthonormal for every even `n`, so coefficient energy equals signal energy.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

const HAAR: [f64; 2] = [
    core::f64::consts::FRAC_1_SQRT_2,
    core::f64::consts::FRAC_1_SQRT_2,
];

const DB2: [f64; 4] = [
    0.48296291314453416,
    0.8365163037378079,
    0.2241438680420134,
    -0.12940952255126037,
];

const DB4: [f64; 8] = [
    0.2303778133088965,
    0.7148465705529157,
    0.6308807679298589,
    -0.027983769416859854,
    -0.18703481171909309,
    0.030841381835560764,
    0.0328830116668852,
    -0.010597401785069032,
];

const SYM4: [f64; 8] = [
    0.0322231006040427,
    -0.012603967262037833,
    -0.09921954357684722,
    0.29785779560527736,
    0.8037387518059161,
    0.49761866763201545,
    -0.02963552764599851,
    -0.07576571478927333,
];

/// Supported orthogonal wavelet families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum WaveletKind {
    Haar,
    Db2,
    Db4,
    Sym4,
}

impl WaveletKind {
    pub const ALL: [WaveletKind; 4] = [Self::Haar, Self::Db2, Self::Db4, Self::Sym4];

    pub fn name(self) -> &'static str {
        match self {
            Self::Haar => "haar",
            Self::Db2 => "db2",
            Self::Db4 => "db4",
            Self::Sym4 => "sym4",
        }
    }

    fn lowpass(self) -> &'static [f64] {
        match self {
            Self::Haar => &HAAR,
            Self::Db2 => &DB2,
            Self::Db4 => &DB4,
            Self::Sym4 => &SYM4,
        }
    }
}

impl fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveletKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown wavelet basis `{s}`")))
    }
}

/// Quadrature-mirror filter pair for one wavelet family.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    kind: WaveletKind,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl WaveletBasis {
    pub fn new(kind: WaveletKind) -> Self {
        let lowpass = kind.lowpass().to_vec();
        let len = lowpass.len();
        let highpass = (0..len)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * lowpass[len - 1 - i]
            })
            .collect();
        Self {
            kind,
            lowpass,
            highpass,
        }
    }

    pub fn kind(&self) -> WaveletKind {
        self.kind
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    pub fn taps(&self) -> usize {
        self.lowpass.len()
    }
}

impl From<WaveletKind> for WaveletBasis {
    fn from(kind: WaveletKind) -> Self {
        Self::new(kind)
    }
}

/// Detail coefficients of every level plus the coarsest approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    /// `details[j - 1]` holds level `j`.
    pub details: Vec<Vec<f64>>,
    pub approx: Vec<f64>,
}

impl WaveletDecomposition {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Squared norm of all coefficients.
    pub fn energy(&self) -> f64 {
        self.details
            .iter()
            .chain(core::iter::once(&self.approx))
            .flat_map(|c| c.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// One analysis step; returns `(detail, approx)`, each of half the input length.
pub fn dwt_level(signal: &[f64], basis: &WaveletBasis) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::OddLength(n));
    }
    let half = n / 2;
    let mut detail = vec![0.0; half];
    let mut approx = vec![0.0; half];
    let (g, h) = (basis.lowpass(), basis.highpass());
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        let mut idx = 2 * k;
        for i in 0..g.len() {
            if idx >= n {
                idx -= n;
            }
            let x = signal[idx];
            a += g[i] * x;
            d += h[i] * x;
            idx += 1;
        }
        approx[k] = a;
        detail[k] = d;
    }
    Ok((detail, approx))
}

/// Adjoint of [`dwt_level`]: accumulates `D^T d_detail + A^T d_approx` into `grad_signal`.
///
/// For an orthonormal filter pair this is also the inverse transform.
pub fn dwt_level_adjoint(
    d_detail: &[f64],
    d_approx: &[f64],
    basis: &WaveletBasis,
    grad_signal: &mut [f64],
) {
    let n = grad_signal.len();
    let (g, h) = (basis.lowpass(), basis.highpass());
    for k in 0..d_detail.len() {
        let mut idx = 2 * k;
        for i in 0..g.len() {
            if idx >= n {
                idx %= n;
            }
            grad_signal[idx] += h[i] * d_detail[k] + g[i] * d_approx[k];
            idx += 1;
        }
    }
}

/// Largest decomposition depth for a signal of length `len`: `floor(log2(len))`.
pub fn max_levels(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        (usize::BITS - 1 - len.leading_zeros()) as usize
    }
}

/// Applies [`dwt_level`] `levels` times, starting from the signal itself.
pub fn dwt_multilevel(
    signal: &[f64],
    basis: &WaveletBasis,
    levels: usize,
) -> Result<WaveletDecomposition> {
    let max = max_levels(signal.len());
    if levels == 0 || levels > max {
        return Err(Error::LevelsOutOfRange { levels, max });
    }
    let mut details = Vec::with_capacity(levels);
    let mut approx = signal.to_vec();
    for _ in 0..levels {
        let (d, a) = dwt_level(&approx, basis)?;
        details.push(d);
        approx = a;
    }
    Ok(WaveletDecomposition { details, approx })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_are_orthonormal_qmf_pairs() {
        for kind in WaveletKind::ALL {
            let b = WaveletBasis::new(kind);
            let (g, h) = (b.lowpass(), b.highpass());
            assert_eq!(g.len(), h.len());
            assert!(g.len() % 2 == 0);
            let energy: f64 = g.iter().chain(h).map(|v| v * v).sum();
            assert!((energy - 2.0).abs() < 1e-9, "{kind}: {energy}");
            let sum: f64 = g.iter().sum();
            assert!((sum - core::f64::consts::SQRT_2).abs() < 1e-9, "{kind}");
            // even-shift orthogonality
            for shift in (2..g.len()).step_by(2) {
                let c: f64 = (0..g.len() - shift).map(|i| g[i] * g[i + shift]).sum();
                assert!(c.abs() < 1e-9, "{kind} shift {shift}: {c}");
            }
            let cross: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
            assert!(cross.abs() < 1e-12);
        }
    }

    #[test]
    fn haar_constant_and_ramp() {
        let b = WaveletBasis::new(WaveletKind::Haar);
        let (d, a) = dwt_level(&[3.0; 4], &b).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
        for v in a {
            assert!((v - 3.0 * core::f64::consts::SQRT_2).abs() < 1e-12);
        }
        let (d, a) = dwt_level(&[1.0, 2.0, 3.0, 4.0], &b).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((a[0] - 3.0 * s).abs() < 1e-12 && (a[1] - 7.0 * s).abs() < 1e-12);
        assert!((d[0] + s).abs() < 1e-12 && (d[1] + s).abs() < 1e-12);
        assert!((a[0] - 2.1213).abs() < 1e-4 && (a[1] - 4.9497).abs() < 1e-4);
    }

    #[test]
    fn odd_length_rejected() {
        let b = WaveletBasis::new(WaveletKind::Db2);
        assert_eq!(dwt_level(&[1.0, 2.0, 3.0], &b), Err(Error::OddLength(3)));
    }

    #[test]
    fn multilevel_shapes_and_range() {
        let b = WaveletBasis::new(WaveletKind::Haar);
        let x: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let dec = dwt_multilevel(&x, &b, 3).unwrap();
        let lens: Vec<usize> = dec.details.iter().map(Vec::len).collect();
        assert_eq!(lens, vec![4, 2, 1]);
        assert_eq!(dec.approx.len(), 1);
        let one = dwt_multilevel(&x, &b, 1).unwrap();
        let (d, a) = dwt_level(&x, &b).unwrap();
        assert_eq!(one.details, vec![d]);
        assert_eq!(one.approx, a);
        assert!(matches!(
            dwt_multilevel(&x, &b, 4),
            Err(Error::LevelsOutOfRange { .. })
        ));
        assert!(matches!(
            dwt_multilevel(&x, &b, 0),
            Err(Error::LevelsOutOfRange { .. })
        ));
    }

    #[test]
    fn adjoint_inverts_level() {
        for kind in WaveletKind::ALL {
            let b = WaveletBasis::new(kind);
            let x: Vec<f64> = (0..16)
                .map(|v| libm::sin(v as f64 * 0.7) + 0.1 * v as f64)
                .collect();
            let (d, a) = dwt_level(&x, &b).unwrap();
            let mut back = vec![0.0; 16];
            dwt_level_adjoint(&d, &a, &b, &mut back);
            for (u, v) in back.iter().zip(&x) {
                assert!((u - v).abs() < 1e-9, "{kind}");
            }
        }
    }

    #[test]
    fn max_levels_is_floor_log2() {
        assert_eq!(max_levels(1), 0);
        assert_eq!(max_levels(8), 3);
        assert_eq!(max_levels(96), 6);
        assert_eq!(max_levels(1024), 10);
    }
}
