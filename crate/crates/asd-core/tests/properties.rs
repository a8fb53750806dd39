//! Property tests for the metric and smoothing invariants.

use proptest::prelude::*;

use asd_core::corpus::{standardize, AudioClip, ClipMeta, Domain, Label, Split};
use asd_core::eval::{auc, hmean, pauc};
use asd_core::smooth::{build_pool, smooth, DomainFilter, Metric, ScoredSample, SmoothConfig};
use asd_core::table::RowMeta;

fn meta(i: usize) -> RowMeta {
    RowMeta {
        clip_id: format!("clip{i:03}"),
        machine: "m".into(),
        section: 0,
        domain: Domain::Source,
        label: Label::Normal,
    }
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((any::<bool>(), -100i32..100), 4..40).prop_filter_map(
        "needs both classes",
        |pairs| {
            let labels: Vec<bool> = pairs.iter().map(|(l, _)| *l).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                return None;
            }
            let scores = pairs.iter().map(|(_, s)| *s as f64 / 8.0).collect();
            Some((scores, labels))
        },
    )
}

proptest! {
    #[test]
    fn auc_in_range_and_complement((scores, labels) in scores_and_labels()) {
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=100.0).contains(&a));
        // Negating scores reverses the ranking.
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auc(&negated, &labels).unwrap();
        prop_assert!((a + b - 100.0).abs() < 1e-9);
    }

    #[test]
    fn auc_shift_and_scale_invariant((scores, labels) in scores_and_labels(),
                                     shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        let transformed: Vec<f64> = scores.iter().map(|s| s * scale + shift).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&transformed, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn pauc_bounded_by_100((scores, labels) in scores_and_labels(), p in 0.05f64..1.0) {
        let v = pauc(&scores, &labels, p).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
    }

    #[test]
    fn hmean_between_min_and_max(values in prop::collection::vec(0.1f64..100.0, 1..10)) {
        let h = hmean(&values);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(0.0, f64::max);
        prop_assert!(h >= min - 1e-9 && h <= max + 1e-9);
    }

    #[test]
    fn smoothing_stays_within_score_range(
        features in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 3..20),
        raw_scores in prop::collection::vec(0.0f64..50.0, 20),
        k in 1usize..6,
    ) {
        let n = features.len();
        let k = k.min(n);
        let samples: Vec<ScoredSample> = features
            .into_iter()
            .enumerate()
            .map(|(i, feature)| ScoredSample {
                meta: meta(i),
                feature,
                score_gen: raw_scores[i],
            })
            .collect();
        let pool = build_pool(samples.clone(), DomainFilter::All, Metric::Euclidean).unwrap();
        let cfg = SmoothConfig { k, domain_filter: DomainFilter::All, metric: Metric::Euclidean };
        let out = smooth(&pool, &samples, &cfg).unwrap();
        let min = raw_scores[..n].iter().cloned().fold(f64::INFINITY, f64::min);
        let max = raw_scores[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in out {
            prop_assert!(v >= min - 1e-9 && v <= max + 1e-9);
        }
    }

    #[test]
    fn smoothing_preserves_global_mean_at_full_k(
        raw_scores in prop::collection::vec(0.0f64..50.0, 2..15),
    ) {
        // With K equal to the pool size every ensemble covers all samples.
        let n = raw_scores.len();
        let samples: Vec<ScoredSample> = raw_scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredSample {
                meta: meta(i),
                feature: vec![i as f64],
                score_gen: s,
            })
            .collect();
        let pool = build_pool(samples.clone(), DomainFilter::All, Metric::Euclidean).unwrap();
        let cfg = SmoothConfig { k: n, domain_filter: DomainFilter::All, metric: Metric::Euclidean };
        let out = smooth(&pool, &samples, &cfg).unwrap();
        let mean = raw_scores.iter().sum::<f64>() / n as f64;
        for v in out {
            prop_assert!((v - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_yields_unit_moments(
        samples in prop::collection::vec(-0.9f64..0.9, 64..256),
    ) {
        let spread = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - samples.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let clip = AudioClip {
            meta: ClipMeta {
                clip_id: "c".into(),
                machine: "m".into(),
                section: 0,
                domain: Domain::Source,
                label: Label::Normal,
                split: Split::Train,
            },
            sample_rate: 16_000,
            samples,
        };
        let std = standardize(&clip).unwrap();
        let n = std.samples.len() as f64;
        let mean = std.samples.iter().sum::<f64>() / n;
        let var = std.samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }
}
