use proptest::prelude::*;

use dialog_rank::corpus::RankingInstance;
use dialog_rank::ranking::{mean_probability, rank, recall_at_k, tfidf_fit, tfidf_score, RankingResult};

fn scored(scores: Vec<f64>, truth: usize) -> RankingResult {
    RankingResult::from_scores(scores, truth).unwrap()
}

fn instance_set() -> impl Strategy<Value = (usize, Vec<(Vec<f64>, usize)>)> {
    (2usize..=10).prop_flat_map(|n| {
        let one = (prop::collection::vec(-5.0f64..5.0, n), 0..n);
        (Just(n), prop::collection::vec(one, 1..40))
    })
}

proptest! {
    #[test]
    fn recall_is_monotone_in_k((n, set) in instance_set()) {
        let results: Vec<_> = set.into_iter().map(|(s, t)| scored(s, t)).collect();
        let mut last = 0.0;
        for k in 1..=n {
            let r = recall_at_k(&results, k).unwrap();
            prop_assert!(r >= last);
            last = r;
        }
        prop_assert_eq!(recall_at_k(&results, n).unwrap(), 1.0);
    }

    #[test]
    fn rank_ignores_monotone_transforms(scores in prop::collection::vec(-3.0f64..3.0, 2..10), seed in 0usize..100) {
        let truth = seed % scores.len();
        let inst = RankingInstance::new("c", (0..scores.len()).map(|i| i.to_string()).collect(), truth).unwrap();
        let base = rank(&inst, &|_: &str, r: &str| Ok(scores[r.parse::<usize>().unwrap()])).unwrap();
        let squashed = rank(&inst, &|_: &str, r: &str| {
            let x = scores[r.parse::<usize>().unwrap()];
            Ok(x.exp() * 2.0 + 7.0)
        }).unwrap();
        prop_assert_eq!(&base.order, &squashed.order);
        prop_assert_eq!(base.rank_of_truth, squashed.rank_of_truth);
    }

    #[test]
    fn ensemble_mean_stays_in_range(mut scores in prop::collection::vec(0.0f64..=1.0, 1..12)) {
        let (lo, hi) = scores.iter().fold((1.0f64, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        let mut reversed: Vec<f64> = scores.iter().rev().copied().collect();
        let m = mean_probability(&mut scores).unwrap();
        prop_assert!(lo <= m && m <= hi);
        prop_assert_eq!(m, mean_probability(&mut reversed).unwrap());
    }

    #[test]
    fn tfidf_symmetric_and_order_free(
        docs in prop::collection::vec(prop::collection::vec(0u8..12, 1..8), 1..20),
        a in prop::collection::vec(0u8..14, 0..10),
        b in prop::collection::vec(0u8..14, 0..10),
    ) {
        let words = |v: &[u8]| v.iter().map(|i| format!("t{i}")).collect::<Vec<_>>();
        let model = tfidf_fit(docs.iter().map(|d| words(d))).unwrap();
        let (wa, wb) = (words(&a), words(&b));
        let s = tfidf_score(&wa, &wb, &model);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, tfidf_score(&wb, &wa, &model));
        let mut shuffled = wa.clone();
        shuffled.reverse();
        prop_assert_eq!(s, tfidf_score(&shuffled, &wb, &model));
    }
}
