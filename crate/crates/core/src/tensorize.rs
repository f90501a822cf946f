//! Folding a T×d sequence into a (folds × period × d) grid and back.
//!
//! Row `r` of the grid is the `r`-th period of the sequence, so moving along
//! a row stays inside one period and moving down a column steps from one
//! period to the next at the same phase.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sequence folded by one period length.
#[derive(Debug, Clone, PartialEq)]
pub struct Folded2D {
    /// Row-major `[fold][phase][channel]`.
    data: Vec<f64>,
    folds: usize,
    period: usize,
    channels: usize,
    original_len: usize,
}

impl Folded2D {
    /// Wraps an existing grid; `data.len()` must equal `folds * period * channels`.
    pub fn from_grid(
        data: Vec<f64>,
        folds: usize,
        period: usize,
        channels: usize,
        original_len: usize,
    ) -> Result<Self> {
        if data.len() != folds * period * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {folds}x{period}x{channels} grid",
                data.len()
            )));
        }
        if period == 0 || original_len > folds * period || folds * period - original_len >= period {
            return Err(Error::ShapeMismatch(format!(
                "original length {original_len} incompatible with {folds} folds of period {period}"
            )));
        }
        Ok(Self {
            data,
            folds,
            period,
            channels,
            original_len,
        })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn original_len(&self) -> usize {
        self.original_len
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.period + col) * self.channels + ch]
    }
}

/// Appends zero rows until the length is a multiple of `period`.
/// Returns the padded matrix and the original length.
pub fn pad_to_multiple(x: &Matrix, period: usize) -> Result<(Matrix, usize)> {
    if period == 0 {
        return Err(Error::InvalidArgument("period must be >= 1".into()));
    }
    let len = x.rows();
    let padded_len = len.div_ceil(period) * period;
    let mut out = x.clone();
    if padded_len > len {
        out.append_rows(&Matrix::zeros(padded_len - len, x.cols()))?;
    }
    Ok((out, len))
}

/// Reshapes a padded `(folds * period) × d` matrix into a grid, one period per row.
pub fn fold(padded: &Matrix, period: usize, folds: usize, original_len: usize) -> Result<Folded2D> {
    if padded.rows() != folds * period {
        return Err(Error::ShapeMismatch(format!(
            "{} rows cannot fold into {folds} x {period}",
            padded.rows()
        )));
    }
    Folded2D::from_grid(
        padded.as_slice().to_vec(),
        folds,
        period,
        padded.cols(),
        original_len,
    )
}

/// Flattens the grid back to a sequence and drops the padding rows.
pub fn unfold_trunc(folded: &Folded2D) -> Matrix {
    let keep = folded.original_len * folded.channels;
    Matrix::from_vec(
        folded.original_len,
        folded.channels,
        folded.data[..keep].to_vec(),
    )
    .expect("grid holds at least original_len rows")
}

/// `pad_to_multiple` followed by `fold`.
pub fn fold_sequence(x: &Matrix, period: usize) -> Result<Folded2D> {
    let (padded, len) = pad_to_multiple(x, period)?;
    let folds = padded.rows() / period;
    fold(&padded, period, folds, len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn padding_lengths() {
        let (p, t) = pad_to_multiple(&Matrix::zeros(5, 2), 2).unwrap();
        assert_eq!((p.rows(), t), (6, 5));
        let x = Matrix::column(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(pad_to_multiple(&x, 3).unwrap().0, x);
        let (p, _) = pad_to_multiple(&Matrix::column(&[9.0]), 4).unwrap();
        assert_eq!(p.col(0), vec![9.0, 0.0, 0.0, 0.0]);
        assert!(pad_to_multiple(&x, 0).is_err());
    }

    #[test]
    fn fold_is_row_major_by_period() {
        let x = Matrix::column(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = fold(&x, 3, 2, 6).unwrap();
        assert_eq!((f.folds(), f.period()), (2, 3));
        assert_eq!(
            [f.get(0, 0, 0), f.get(0, 2, 0), f.get(1, 0, 0)],
            [1.0, 3.0, 4.0]
        );
        let col = fold(&x, 1, 6, 6).unwrap();
        assert_eq!((col.folds(), col.period()), (6, 1));
        let row = fold(&x, 6, 1, 6).unwrap();
        assert_eq!((row.folds(), row.period()), (1, 6));
        assert!(fold(&x, 4, 2, 6).is_err());
    }

    #[test]
    fn unfold_truncates() {
        let g = Folded2D::from_grid(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 1, 3).unwrap();
        assert_eq!(unfold_trunc(&g).col(0), vec![1.0, 2.0, 3.0]);
        let g = Folded2D::from_grid(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 1, 4).unwrap();
        assert_eq!(unfold_trunc(&g).rows(), 4);
    }

    #[test]
    fn round_trip_small_cases() {
        for t in 1..20 {
            let x =
                Matrix::from_vec(t, 2, (0..2 * t).map(|v| v as f64 * 0.5 - 3.0).collect()).unwrap();
            for p in 1..=2 * t {
                assert_eq!(unfold_trunc(&fold_sequence(&x, p).unwrap()), x);
            }
        }
    }
}
