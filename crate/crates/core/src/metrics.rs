//! MAE, MSE, RMSE and MAPE.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Observations with magnitude below this are left out of MAPE.
pub const MAPE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Percent; `None` when every observation was near zero.
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub n_points: usize,
}

pub fn compute_metrics(observed: &[f64], predicted: &[f64]) -> Result<MetricReport> {
    if observed.len() != predicted.len() {
        return Err(Error::Metrics("observed and predicted lengths differ"));
    }
    if observed.is_empty() {
        return Err(Error::Metrics("empty input"));
    }
    let n = observed.len() as f64;
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    let mut skipped = 0;
    for (&x, &y) in observed.iter().zip(predicted) {
        let e = y - x;
        abs += e.abs();
        sq += e * e;
        if x.abs() < MAPE_EPSILON {
            skipped += 1;
        } else {
            pct += (e / x).abs();
        }
    }
    let valid = observed.len() - skipped;
    let mse = sq / n;
    Ok(MetricReport {
        mae: abs / n,
        mse,
        rmse: libm::sqrt(mse),
        mape: (valid > 0).then(|| pct / valid as f64 * 100.0),
        mape_skipped: skipped,
        n_points: observed.len(),
    })
}

/// Equal-weight average of per-channel reports.
///
/// MAPE averages over the channels where it is defined; `rmse` is the mean
/// of channel RMSEs, not the root of the mean MSE.
pub fn average_reports(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::Metrics("no reports to average"));
    }
    let k = reports.len() as f64;
    let mapes: Vec<f64> = reports.iter().filter_map(|r| r.mape).collect();
    Ok(MetricReport {
        mae: reports.iter().map(|r| r.mae).sum::<f64>() / k,
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / k,
        rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / k,
        mape: (!mapes.is_empty()).then(|| mapes.iter().sum::<f64>() / mapes.len() as f64),
        mape_skipped: reports.iter().map(|r| r.mape_skipped).sum(),
        n_points: reports.iter().map(|r| r.n_points).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_values() {
        let r = compute_metrics(&[1.0, 2.0, 4.0], &[2.0, 1.0, 5.0]).unwrap();
        assert_eq!((r.mae, r.mse, r.rmse), (1.0, 1.0, 1.0));
        assert!((r.mape.unwrap() - 175.0 / 3.0).abs() < 1e-9);
        let r = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.mae, r.mse, r.rmse, r.mape), (0.0, 0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn zero_guard() {
        let r = compute_metrics(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!((r.mape, r.mape_skipped, r.mae), (Some(0.0), 1, 0.5));
        let r = compute_metrics(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((r.mape, r.mape_skipped), (None, 2));
    }

    #[test]
    fn input_errors() {
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-50.0f64..50.0, n),
                proptest::collection::vec(-50.0f64..50.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rmse_squares_to_mse_and_bounds_mae((x, y) in pairs()) {
            let r = compute_metrics(&x, &y).unwrap();
            prop_assert!((r.rmse * r.rmse - r.mse).abs() <= 1e-9 * (1.0 + r.mse));
            prop_assert!(r.mae <= r.rmse + 1e-12);
        }

        #[test]
        fn scaling((x, y) in pairs(), c in 0.01f64..100.0) {
            let r = compute_metrics(&x, &y).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let s = compute_metrics(&xs, &ys).unwrap();
            prop_assert!((s.mae - c * r.mae).abs() <= 1e-9 * (1.0 + s.mae));
            prop_assert!((s.rmse - c * r.rmse).abs() <= 1e-9 * (1.0 + s.rmse));
            prop_assert!((s.mse - c * c * r.mse).abs() <= 1e-9 * (1.0 + s.mse));
            if let (Some(a), Some(b)) = (r.mape, s.mape) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
            }
        }

        #[test]
        fn permutation_invariant((x, y) in pairs(), seed in any::<u64>()) {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            // deterministic shuffle from the seed
            let mut s = seed | 1;
            for i in (1..idx.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                idx.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let xp: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let a = compute_metrics(&x, &y).unwrap();
            let b = compute_metrics(&xp, &yp).unwrap();
            prop_assert!((a.mae - b.mae).abs() <= 1e-9);
            prop_assert!((a.mse - b.mse).abs() <= 1e-9);
            prop_assert_eq!(a.mape_skipped, b.mape_skipped);
        }
    }
}
