use i2t2i_core::ingest::{CaptionEntry, EvaluationManifest, JudgmentEntry, ManifestRow};
use i2t2i_core::metric::{aggregate_scores, cosine_similarity_slices, Aggregation};
use i2t2i_core::model::{CaptionSource, JudgmentScale};
use i2t2i_core::rank::{brute_force_tau_oracle, count_pairs_brute_force, count_pairs_fast, kendall_tau, TauVariant};
use proptest::prelude::*;

fn vector(max_dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..=max_dim).prop_filter("non-zero", |v| v.iter().any(|&x| x != 0.0))
}

fn pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_dim).prop_flat_map(|d| {
        let v = prop::collection::vec(-1e3f64..1e3, d).prop_filter("non-zero", |v| v.iter().any(|&x| x != 0.0));
        (v.clone(), v)
    })
}

// Independent naive formula.
fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded((a, b) in pair(256)) {
        let ab = cosine_similarity_slices(&a, &b).unwrap();
        let ba = cosine_similarity_slices(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - naive_cosine(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_scale_invariant((a, b) in pair(128), k in 1e-3f64..1e3) {
        let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
        let base = cosine_similarity_slices(&a, &b).unwrap();
        prop_assert!((cosine_similarity_slices(&scaled, &b).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn self_similarity_is_one(a in vector(512)) {
        prop_assert!((cosine_similarity_slices(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_stays_in_range(scores in prop::collection::vec(-1.0f64..=1.0, 1..50)) {
        let m = aggregate_scores(&scores, Aggregation::Mean).unwrap();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
    }

    #[test]
    fn fast_pair_counts_match_brute_force(
        xy in (2usize..120).prop_flat_map(|n| (prop::collection::vec(0u8..6, n), prop::collection::vec(0u8..6, n)))
    ) {
        let x: Vec<f64> = xy.0.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = xy.1.iter().map(|&v| v as f64).collect();
        prop_assert_eq!(count_pairs_fast(&x, &y).unwrap(), count_pairs_brute_force(&x, &y).unwrap());
        for variant in [TauVariant::TauB, TauVariant::TauC] {
            let fast = kendall_tau(&x, &y, variant);
            let slow = brute_force_tau_oracle(&x, &y, variant);
            match (fast, slow) {
                (Ok(f), Ok(s)) => prop_assert_eq!(f, s),
                (Err(_), Err(_)) => {}
                (f, s) => prop_assert!(false, "fast {:?} vs oracle {:?}", f, s),
            }
        }
    }

    #[test]
    fn tau_is_antisymmetric_under_negation(
        xy in (3usize..60).prop_flat_map(|n| (prop::collection::vec(-50i32..50, n), prop::collection::vec(-50i32..50, n)))
    ) {
        let x: Vec<f64> = xy.0.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = xy.1.iter().map(|&v| v as f64).collect();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        if let (Ok(a), Ok(b)) = (kendall_tau(&x, &y, TauVariant::TauB), kendall_tau(&x, &neg, TauVariant::TauB)) {
            prop_assert!((a.tau + b.tau).abs() < 1e-12);
        }
    }

    #[test]
    fn manifest_round_trips(
        rows in prop::collection::vec(("[a-z0-9]{1,8}", "[a-z ]{1,30}", prop::collection::vec(1u8..=4, 0..4)), 0..8)
    ) {
        let rows: Vec<ManifestRow> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (id, text, likert))| ManifestRow {
                sample_id: format!("{i}-{id}"),
                image: format!("{id}.png"),
                captions: vec![CaptionEntry::new(text, CaptionSource::HumanReference)],
                judgments: likert.into_iter().map(|v| JudgmentEntry { value: v as f64, scale: JudgmentScale::Likert1To4 }).collect(),
                provenance: "prop".into(),
            })
            .collect();
        let m = EvaluationManifest::new("flickr8k_expert", rows);
        let back = EvaluationManifest::parse(m.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(back, m);
    }
}
