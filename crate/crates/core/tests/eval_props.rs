use proptest::prelude::*;
use stagerec_core::eval::{auc, freshness_report, mrr, ndcg_at_k, ranking_metrics, Impression};

/// Scores on a coarse grid so ties are common, with at least one positive and one negative.
fn impression() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=12)
        .prop_flat_map(|n| (prop::collection::vec((-4i32..=4).prop_map(f64::from), n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("needs both labels", |(_, l)| l.contains(&true) && l.contains(&false))
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn transforms() -> impl Strategy<Value = usize> {
    0usize..4
}

fn apply(t: usize, x: f64) -> f64 {
    match t {
        0 => 3.0 * x - 7.0,
        1 => x * x * x + x,
        2 => (x / 4.0).exp(),
        _ => x.atan(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn auc_equals_pair_count((scores, labels) in impression()) {
        prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_lie_in_range((scores, labels) in impression()) {
        let items: Vec<usize> = (0..scores.len()).collect();
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let m = mrr(&items, &scores, &labels).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
        for k in [1, 5, 10] {
            let n = ndcg_at_k(&items, &scores, &labels, k).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        }
    }

    #[test]
    fn metrics_ignore_monotone_transforms((scores, labels) in impression(), t in transforms()) {
        let items: Vec<usize> = (0..scores.len()).collect();
        let moved: Vec<f64> = scores.iter().map(|&x| apply(t, x)).collect();
        prop_assert_eq!(auc(&scores, &labels), auc(&moved, &labels));
        prop_assert_eq!(mrr(&items, &scores, &labels), mrr(&items, &moved, &labels));
        for k in [5, 10] {
            prop_assert_eq!(ndcg_at_k(&items, &scores, &labels, k), ndcg_at_k(&items, &moved, &labels, k));
        }
    }

    #[test]
    fn perfect_rankings_have_unit_ndcg(
        (n_pos, labels) in (1usize..6, 1usize..8).prop_flat_map(|(p, q)| {
            let mut l = vec![true; p];
            l.extend(vec![false; q]);
            (Just(p), Just(l).prop_shuffle())
        }),
        k in 1usize..12,
    ) {
        prop_assume!(n_pos <= k);
        let scores: Vec<f64> = labels.iter().enumerate().map(|(j, &l)| if l { 100.0 - j as f64 } else { -(j as f64) }).collect();
        let items: Vec<usize> = (0..labels.len()).rev().collect();
        prop_assert_eq!(ndcg_at_k(&items, &scores, &labels, k).unwrap(), 1.0);
    }

    #[test]
    fn dataset_metrics_ignore_processing_order(
        imps in prop::collection::vec(impression(), 1..20),
        rot in 0usize..20,
    ) {
        let build = |v: &[(Vec<f64>, Vec<bool>)]| -> Vec<Impression> {
            v.iter()
                .enumerate()
                .map(|(u, (s, l))| Impression::new(u, 0, (0..s.len()).collect(), s.clone(), l.clone()).unwrap())
                .collect()
        };
        let mut rotated = imps.clone();
        let r = rot % imps.len();
        rotated.rotate_left(r);
        let mut reversed = imps.clone();
        reversed.reverse();
        let base = ranking_metrics(&build(&imps));
        prop_assert_eq!(&base, &ranking_metrics(&build(&rotated)));
        prop_assert_eq!(&base, &ranking_metrics(&build(&reversed)));
    }

    #[test]
    fn impressions_need_both_labels(n in 1usize..8, label in any::<bool>()) {
        prop_assert!(Impression::new(0, 0, (0..n).collect(), vec![0.0; n], vec![label; n]).is_err());
    }

    #[test]
    fn freshness_shares_and_ranks_are_bounded(
        lists in prop::collection::vec(prop::collection::vec(0usize..40, 0..12), 1..20),
        new_cut in 0usize..40,
        old_cut in 0usize..40,
    ) {
        let r = freshness_report(&lists, 10, |i| i >= new_cut, |i| i < old_cut);
        prop_assert!((0.0..=1.0).contains(&r.new_pct));
        prop_assert!((0.0..=1.0).contains(&r.historical_pct));
        for rank in [r.nrank, r.orank].into_iter().flatten() {
            prop_assert!((0.0..10.0).contains(&rank));
        }
    }
}
