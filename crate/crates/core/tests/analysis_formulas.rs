mod common;

use std::sync::Arc;

use common::attack;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankleak::adversary::{
    find_q, Algorithm, AttackOptions, Goal, Probe, QueryHistory, VictimKnowledge,
};
use rankleak::analysis::{
    erf, findq_success_prob, q_in_quick_finish_prob, q_point_quick_finish_prob,
    qi_in_expected_cost, qi_point_expected_cost, IndexReading, InstanceStats,
};
use rankleak::engine::{Engine, InterfaceConfig};
use rankleak::harness::gen_uniform_bool;
use rankleak::model::{Database, TupleId};
use rankleak::ranking::{LinearRanking, RankingWeights, TieBreakPolicy};
use statrs::distribution::{ContinuousCDF, Normal};

/// P(N(0, sd^2) < x), written against a normal CDF rather than erf.
fn phi(x: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return if x > 0.0 {
            1.0
        } else if x < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    Normal::new(0.0, sd).unwrap().cdf(x)
}

fn spread(w: &[f64], dom: &[usize], positions: &[usize]) -> f64 {
    positions
        .iter()
        .map(|&i| w[i].powi(2) * (dom[i] as f64 - 1.0) / (dom[i] as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Public distances computed straight from the tuples.
fn distances(db: &Database, victim: TupleId, w: &RankingWeights, s: &[usize]) -> Vec<f64> {
    let v = db.get(victim).unwrap();
    db.tuples()
        .iter()
        .filter(|t| t.id != victim)
        .map(|t| {
            s.iter()
                .filter(|&&i| t.values[i] != v.values[i])
                .map(|&i| w.public[i])
                .sum()
        })
        .collect()
}

fn reference_p(d: &[f64], sd: f64) -> f64 {
    d.iter().map(|&x| phi(x, sd)).product()
}

fn reference_quick(d: &[f64], w1: f64, sd: f64, dom1: usize) -> f64 {
    let ratio: f64 = d.iter().map(|&x| phi(x - w1, sd) / phi(x, sd)).product();
    (1.0 - ratio).clamp(0.0, 1.0).powi(dom1 as i32 - 1)
}

fn reference_qi_in(d: &[f64], w: &[f64], dom: &[usize], literal: bool) -> f64 {
    if d.iter().all(|&x| x > 0.0) {
        return 1.0;
    }
    let c = |h: usize| -> f64 {
        (1..=h)
            .map(|i| {
                if literal {
                    (dom[i - 1] as f64).powi(i as i32)
                } else {
                    dom[..i].iter().map(|&x| x as f64).product()
                }
            })
            .sum()
    };
    let mut total = 0.0;
    for h in 1..dom.len() {
        let p = reference_p(d, spread(w, dom, &(0..h).collect::<Vec<_>>()));
        total += c(h + 1) * (1.0 - (1.0 - p).powf(c(h)));
    }
    total.max(1.0)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// A random binary instance with random weights; the victim is tuple 0.
fn instance() -> impl Strategy<Value = (Database, RankingWeights)> {
    (2usize..5, 2usize..4, 3usize..25, any::<u64>()).prop_flat_map(|(m, mp, n, seed)| {
        (
            proptest::collection::vec(0.05f64..3.0, m),
            proptest::collection::vec(0.05f64..3.0, mp),
        )
            .prop_map(move |(pw, qw)| {
                let n = n.min(1 << (m + mp));
                let db = gen_uniform_bool(n, m, mp, seed).unwrap();
                (db, RankingWeights::new(pw, qw).unwrap())
            })
    })
}

fn stats_of(db: &Database, w: &RankingWeights) -> InstanceStats {
    InstanceStats::from_db(db, db.tuples()[0].id, w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn estimators_match_a_second_implementation((db, w) in instance()) {
        let v = db.tuples()[0].id;
        let st = stats_of(&db, &w);
        let publics: Vec<usize> = (0..w.public.len()).collect();
        let d = distances(&db, v, &w, &publics);
        let dom = vec![2usize; w.private.len()];
        let all: Vec<usize> = (0..dom.len()).collect();
        let rest: Vec<usize> = (1..dom.len()).collect();

        let p = reference_p(&d, spread(&w.private, &dom, &all));
        prop_assert!(close(findq_success_prob(&st), p));
        prop_assert!(close(qi_point_expected_cost(&st), 1.0 / p + dom.len() as f64));
        let q = reference_quick(&d, w.private[0], spread(&w.private, &dom, &rest), 2);
        prop_assert!(close(q_point_quick_finish_prob(&st), q));
        for (reading, literal) in [(IndexReading::Intended, false), (IndexReading::Literal, true)] {
            prop_assert!(close(qi_in_expected_cost(&st, reading), reference_qi_in(&d, &w.private, &dom, literal)));
        }
        let s: Vec<usize> = publics.iter().copied().filter(|i| i % 2 == 0).collect();
        let d_s = distances(&db, v, &w, &s);
        let q_in = reference_quick(&d_s, w.private[0], spread(&w.private, &dom, &rest[..rest.len() - 1]), 2);
        prop_assert!(close(q_in_quick_finish_prob(&st, &s, &rest[..rest.len() - 1]).unwrap(), q_in));
    }

    #[test]
    fn estimates_stay_in_range((db, w) in instance()) {
        let st = stats_of(&db, &w);
        let p = findq_success_prob(&st);
        prop_assert!(p > 0.0 && p <= 1.0);
        let walk = st.private_domains.iter().map(|d| d - 1).sum::<usize>() as f64;
        prop_assert!(qi_point_expected_cost(&st) >= 1.0 + walk - 1e-12);
        let b = q_point_quick_finish_prob(&st);
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(qi_in_expected_cost(&st, IndexReading::Intended) >= 1.0);
    }

    #[test]
    fn smaller_private_weights_lower_the_insertion_estimate((db, w) in instance(), c in 0.01f64..1.0) {
        let big = stats_of(&db, &w);
        let small = stats_of(&db, &RankingWeights::new(w.public.clone(), w.private.iter().map(|x| x * c).collect()).unwrap());
        prop_assert!(qi_point_expected_cost(&small) <= qi_point_expected_cost(&big) * (1.0 + 1e-12));
        prop_assert!(findq_success_prob(&small) >= findq_success_prob(&big) * (1.0 - 1e-12));
    }

    #[test]
    fn larger_target_weight_raises_the_quick_finish_bound((db, w) in instance(), c in 1.0f64..10.0) {
        let mut heavier = w.clone();
        heavier.private[0] *= c;
        let lo = q_point_quick_finish_prob(&stats_of(&db, &w));
        let hi = q_point_quick_finish_prob(&stats_of(&db, &heavier));
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn all_points_reduces_to_the_point_bound((db, w) in instance()) {
        let st = stats_of(&db, &w);
        let s: Vec<usize> = (0..w.public.len()).collect();
        let s_prime: Vec<usize> = (1..w.private.len()).collect();
        let a = q_in_quick_finish_prob(&st, &s, &s_prime).unwrap();
        prop_assert!(close(a, q_point_quick_finish_prob(&st)));
    }

    #[test]
    fn fewer_public_points_weakly_raise_the_bound((db, w) in instance(), drop in any::<prop::sample::Index>()) {
        let st = stats_of(&db, &w);
        let s: Vec<usize> = (0..w.public.len()).collect();
        let s_prime: Vec<usize> = (1..w.private.len()).collect();
        let mut smaller = s.clone();
        smaller.remove(drop.index(s.len()));
        let full = q_in_quick_finish_prob(&st, &s, &s_prime).unwrap();
        let less = q_in_quick_finish_prob(&st, &smaller, &s_prime).unwrap();
        prop_assert!(less >= full - 1e-12);
    }

    /// Fails on instances where other tuples sit farther than w'_1 from v:
    /// less variance then pushes each ratio term toward 1.
    #[test]
    fn fewer_private_points_weakly_raise_the_bound((db, w) in instance(), drop in any::<prop::sample::Index>()) {
        let st = stats_of(&db, &w);
        let s: Vec<usize> = (0..w.public.len()).collect();
        let s_prime: Vec<usize> = (1..w.private.len()).collect();
        let mut smaller = s_prime.clone();
        smaller.remove(drop.index(s_prime.len()));
        let full = q_in_quick_finish_prob(&st, &s, &s_prime).unwrap();
        let less = q_in_quick_finish_prob(&st, &s, &smaller).unwrap();
        prop_assert!(less >= full - 1e-12, "{} < {}", less, full);
    }

    #[test]
    fn erf_matches_its_power_series(x in -3.0f64..3.0) {
        // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        for n in 1..120 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        let series = 2.0 / std::f64::consts::PI.sqrt() * sum;
        prop_assert!((erf(x) - series).abs() < 1e-9);
        prop_assert!((erf(-x) + erf(x)).abs() < 1e-15);
    }
}

#[test]
fn find_cost_for_hand_computed_constants() {
    // One other tuple at public distance 0 returns v half the time whatever
    // the variance, so p(h) = 1/2 for every h.
    let with_domains = |dom: Vec<usize>| InstanceStats {
        mismatches: vec![vec![false, false]],
        public_weights: vec![1.0, 1.0],
        private_weights: vec![1.0; dom.len()],
        private_domains: dom,
    };
    let binary = with_domains(vec![2, 2, 2]);
    // c = 2, 6, 14: 6 * (1 - 1/4) + 14 * (1 - 1/64)
    assert!((qi_in_expected_cost(&binary, IndexReading::Intended) - 18.281_25).abs() < 1e-12);
    assert!((qi_in_expected_cost(&binary, IndexReading::Literal) - 18.281_25).abs() < 1e-12);
    let mixed = with_domains(vec![2, 3, 4]);
    // Intended c = 2, 8, 32; literal c = 2, 11, 75.
    assert!((qi_in_expected_cost(&mixed, IndexReading::Intended) - 37.875).abs() < 1e-12);
    let literal = 11.0 * 0.75 + 75.0 * (1.0 - 0.5f64.powi(11));
    assert!((qi_in_expected_cost(&mixed, IndexReading::Literal) - literal).abs() < 1e-12);
}

#[test]
fn insertion_attack_cost_stays_below_its_estimate() {
    let trials = 100;
    let (mut spent, mut estimate) = (0.0, 0.0);
    for trial in 0..trials {
        let db = gen_uniform_bool(200, 6, 4, 7000 + trial).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let victim = db.tuples()[rng.random_range(0..db.n())].id;
        let w = RankingWeights::unit(db.schema());
        estimate += qi_point_expected_cost(&InstanceStats::from_db(&db, victim, &w).unwrap());
        let run = attack(
            &db,
            &w,
            TieBreakPolicy::ById,
            Algorithm::QiPoint,
            1,
            victim,
            Goal::Target(0),
            trial,
            AttackOptions::default(),
        );
        assert!(run.outcome.is_success());
        spent += run.outcome.queries_used as f64;
    }
    let (spent, estimate) = (spent / trials as f64, estimate / trials as f64);
    assert!(
        spent <= estimate,
        "mean queries {spent} above mean estimate {estimate}"
    );
}

/// With a unique public projection and small private weights, the normal
/// approximation behind the find probability is accurate.
#[test]
fn first_draw_success_matches_find_probability() {
    let trials = 600;
    let (mut hits, mut p_sum) = (0.0, 0.0);
    let mut kept = 0;
    for trial in 0..trials {
        let db = gen_uniform_bool(200, 10, 4, 9000 + trial).unwrap();
        let s = db.schema().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let victim = db.tuples()[rng.random_range(0..db.n())].id;
        let vp = db.get(victim).unwrap().public(&s).to_vec();
        if db
            .tuples()
            .iter()
            .any(|t| t.id != victim && t.public(&s) == vp.as_slice())
        {
            continue;
        }
        kept += 1;
        let w = RankingWeights::new(vec![0.3; 10], vec![0.25; 4]).unwrap();
        p_sum += findq_success_prob(&InstanceStats::from_db(&db, victim, &w).unwrap());
        let engine = Arc::new(Engine::new(
            db.clone(),
            Arc::new(LinearRanking::new(w)),
            TieBreakPolicy::ById,
            InterfaceConfig::point_only(1),
        ));
        let mut session = engine.session();
        let vk = VictimKnowledge::from_db(&db, victim).unwrap();
        let mut probe = Probe::new(&mut session, victim, None);
        let mut history = QueryHistory::new();
        let mut first = None;
        find_q(&mut probe, &vk, &mut history, &mut rng, &mut |a| {
            first.get_or_insert(a.top() == Some(victim));
            true
        })
        .unwrap();
        hits += first.unwrap() as u8 as f64;
    }
    let k = kept as f64;
    let (freq, p) = (hits / k, p_sum / k);
    let se = (p * (1.0 - p) / k).sqrt();
    assert!(kept > 300);
    assert!(
        (freq - p).abs() <= 3.0 * se,
        "first-draw frequency {freq}, mean p {p}, se {se}"
    );
}
