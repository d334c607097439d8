use proptest::prelude::*;
use rankleak::model::{Query, Schema};
use rankleak::ranking::{
    certify_additivity, certify_monotonicity, linear_score, InteractionRanking, LinearRanking,
    RandomScore, RankingFunction, RankingWeights,
};

#[test]
fn linear_ranking_passes_both_checks() {
    let domains = [2, 3, 4, 2, 3];
    let s = Schema::with_domains(&domains[..3], &domains[3..]).unwrap();
    let w = RankingWeights::new(vec![0.3, 1.0, 2.5], vec![0.7, 1.9]).unwrap();
    let r = LinearRanking::new(w);
    assert!(s.arity() == domains.len());
    let mono = certify_monotonicity(&r, &domains, 2000, 11);
    let add = certify_additivity(&r, &domains, 2000, 12);
    assert!(mono.passed(), "{:?}", mono.violations.first());
    assert!(add.passed(), "{:?}", add.violations.first());
    assert!(mono.trials_run > 0 && add.trials_run > 0);
}

#[test]
fn random_score_is_rejected() {
    let domains = [3, 3, 3, 3];
    let r = RandomScore { seed: 5, n: 50 };
    let mono = certify_monotonicity(&r, &domains, 500, 1);
    let add = certify_additivity(&r, &domains, 500, 2);
    assert!(!mono.violations.is_empty());
    assert!(!add.violations.is_empty());
}

#[test]
fn interaction_term_breaks_additivity() {
    let domains = [2, 2, 2];
    let s = Schema::binary(2, 1).unwrap();
    let r = InteractionRanking {
        base: LinearRanking::new(RankingWeights::unit(&s)),
        pair: (0, 1),
        coef: -0.9,
    };
    let add = certify_additivity(&r, &domains, 3000, 3);
    assert!(!add.violations.is_empty());
    // Each term still grows with a mismatch, so monotonicity survives.
    assert!(certify_monotonicity(&r, &domains, 3000, 4).passed());
}

#[test]
fn too_few_attributes_is_degenerate() {
    let r = RandomScore { seed: 0, n: 3 };
    let rep = certify_monotonicity(&r, &[2], 10, 0);
    assert!(rep.degenerate.is_some());
    assert!(!rep.passed());
}

proptest! {
    /// Score is the weighted count of attributes whose value is outside the predicate.
    #[test]
    fn linear_score_counts_weighted_mismatches(
        vals in proptest::collection::vec(0u32..3, 4),
        preds in proptest::collection::vec(proptest::sample::subsequence(vec![0u32, 1, 2], 1..=3), 4),
        w in proptest::collection::vec(0.01f64..10.0, 4),
    ) {
        let s = Schema::with_domains(&[3, 3], &[3, 3]).unwrap();
        let weights = RankingWeights::new(w[..2].to_vec(), w[2..].to_vec()).unwrap();
        let q = Query::new(&s, preds.clone()).unwrap();
        let values: Vec<_> = vals.iter().map(|&v| Some(v)).collect();
        let expected: f64 = (0..4).filter(|&i| !preds[i].contains(&vals[i])).map(|i| w[i]).sum();
        prop_assert!((linear_score(&values, &q, &weights) - expected).abs() < 1e-12);
        prop_assert!((LinearRanking::new(weights).score(&values, &q) - expected).abs() < 1e-12);
    }
}
