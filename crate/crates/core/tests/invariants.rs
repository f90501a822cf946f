use proptest::prelude::*;
use wcn_core::dataset::SplitRatios;
use wcn_core::metrics::compute_metrics;
use wcn_core::network::softmax;
use wcn_core::tensorize::fold_sequence;
use wcn_core::tensorize::unfold_trunc;
use wcn_core::tpe::{optimize, Dimension, Domain, Sampler, SearchSpace, TpeConfig, TrialHistory};
use wcn_core::wavelet::{dwt_multilevel, max_levels, WaveletBasis, WaveletKind};
use wcn_core::Matrix;

fn kind() -> impl Strategy<Value = WaveletKind> {
    prop::sample::select(WaveletKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn dwt_preserves_energy(kind in kind(), pow in 3u32..9, seed in prop::collection::vec(-10.0f64..10.0, 256)) {
        let t = 1usize << pow;
        let x = &seed[..t];
        let d = dwt_multilevel(x, &WaveletBasis::new(kind), max_levels(t)).unwrap();
        let e: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((d.energy() - e).abs() <= 1e-9 * e.max(1.0));
    }

    #[test]
    fn dwt_is_linear(kind in kind(), a in prop::collection::vec(-5.0f64..5.0, 64), b in prop::collection::vec(-5.0f64..5.0, 64), s in -3.0f64..3.0) {
        let basis = WaveletBasis::new(kind);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let (da, db, dm) = (
            dwt_multilevel(&a, &basis, 3).unwrap(),
            dwt_multilevel(&b, &basis, 3).unwrap(),
            dwt_multilevel(&mix, &basis, 3).unwrap(),
        );
        for l in 0..3 {
            for i in 0..dm.details[l].len() {
                prop_assert!((dm.details[l][i] - da.details[l][i] - s * db.details[l][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fold_round_trips(t in 1usize..80, d in 1usize..4, p in 1usize..100) {
        let x = Matrix::from_vec(t, d, (0..t * d).map(|v| v as f64).collect()).unwrap();
        let folded = fold_sequence(&x, p).unwrap();
        prop_assert_eq!(folded.folds() * folded.period(), t.div_ceil(p) * p);
        prop_assert_eq!(unfold_trunc(&folded), x);
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let w = softmax(&v).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn metrics_are_ordered(obs in prop::collection::vec(-100.0f64..100.0, 1..50), shift in -5.0f64..5.0) {
        let pred: Vec<f64> = obs.iter().map(|o| o + shift).collect();
        let r = compute_metrics(&obs, &pred).unwrap();
        prop_assert!(r.mae >= 0.0 && r.mse >= 0.0);
        prop_assert!(r.mae <= r.rmse + 1e-12);
        prop_assert!((r.mae - shift.abs()).abs() < 1e-9);
    }

    #[test]
    fn split_covers_every_row(t in 10usize..5000) {
        let (a, b, c) = SplitRatios::default().lengths(t);
        prop_assert_eq!(a + b + c, t);
        prop_assert!(a > 0);
    }

    #[test]
    fn tpe_stays_in_space(seed in 0u64..1000) {
        let space = SearchSpace::new(vec![
            Dimension::new("x", Domain::LogUniform { lo: 1e-4, hi: 1e-1 }),
            Dimension::new("k", Domain::IntUniform { lo: 1, hi: 5 }),
            Dimension::new("c", Domain::Categorical { choices: vec!["a".into(), "b".into()] }),
        ]).unwrap();
        let cfg = TpeConfig { n_startup: 3, ..TpeConfig::default() };
        let r = optimize(|_, p| p[0].as_f64() + p[1].as_f64(), &space, 12, seed, Sampler::Tpe(cfg), TrialHistory::default()).unwrap();
        prop_assert_eq!(r.history.len(), 12);
        prop_assert!(r.history.records.iter().all(|t| space.contains(&t.point)));
    }
}
