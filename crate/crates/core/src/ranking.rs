//! Ranking functions, tie-breaking, and axiom certification.

use std::cmp::Ordering;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Database, Provenance, Query, Schema, Tuple, TupleId, Value};

/// Scores a tuple against a query; lower is better.
pub trait RankingFunction: Send + Sync + fmt::Debug {
    fn score(&self, values: &[Value], q: &Query) -> f64;
}

/// 0 if the value is in the predicate, 1 otherwise. Null is never in a predicate.
pub fn discrete_distance(predicate: &[u32], value: Value) -> f64 {
    match value {
        Some(x) if predicate.binary_search(&x).is_ok() => 0.0,
        _ => 1.0,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("weight {index} is {value}, weights must be finite and positive")]
    NonPositive { index: usize, value: f64 },
    #[error("expected {expected} weights, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingWeights {
    pub public: Vec<f64>,
    pub private: Vec<f64>,
}

impl RankingWeights {
    pub fn new(public: Vec<f64>, private: Vec<f64>) -> Result<Self, WeightError> {
        for (index, &value) in public.iter().chain(&private).enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(WeightError::NonPositive { index, value });
            }
        }
        Ok(Self { public, private })
    }

    pub fn unit(schema: &Schema) -> Self {
        Self {
            public: vec![1.0; schema.m()],
            private: vec![1.0; schema.m_prime()],
        }
    }

    /// Independent draws from (0, 1].
    pub fn random(schema: &Schema, rng: &mut impl Rng) -> Self {
        let mut draw = || 1.0 - rng.random::<f64>();
        Self {
            public: (0..schema.m()).map(|_| draw()).collect(),
            private: (0..schema.m_prime()).map(|_| draw()).collect(),
        }
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<(), WeightError> {
        let got = self.public.len() + self.private.len();
        if self.public.len() != schema.m() || self.private.len() != schema.m_prime() {
            return Err(WeightError::Arity {
                expected: schema.arity(),
                got,
            });
        }
        Ok(())
    }

    /// Weight of schema attribute `index`.
    pub fn get(&self, index: usize) -> f64 {
        if index < self.public.len() {
            self.public[index]
        } else {
            self.private[index - self.public.len()]
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            public: self.public.iter().map(|w| w * c).collect(),
            private: self.private.iter().map(|w| w * c).collect(),
        }
    }
}

/// Weighted count of predicate mismatches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRanking {
    pub weights: RankingWeights,
}

impl LinearRanking {
    pub fn new(weights: RankingWeights) -> Self {
        Self { weights }
    }
}

impl RankingFunction for LinearRanking {
    fn score(&self, values: &[Value], q: &Query) -> f64 {
        // Fixed left-to-right order keeps equal sums bitwise equal.
        let mut s = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if discrete_distance(q.predicate(i), v) != 0.0 {
                s += self.weights.get(i);
            }
        }
        s
    }
}

pub fn linear_score(values: &[Value], q: &Query, w: &RankingWeights) -> f64 {
    LinearRanking::new(w.clone()).score(values, q)
}

/// Pseudo-random score in [1, n], a deterministic function of tuple and query.
#[derive(Debug, Clone)]
pub struct RandomScore {
    pub seed: u64,
    pub n: u64,
}

impl RankingFunction for RandomScore {
    fn score(&self, values: &[Value], q: &Query) -> f64 {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        let mut mix = |x: u64| {
            h = splitmix(h ^ x);
        };
        for v in values {
            mix(v.map_or(u64::MAX, u64::from));
        }
        for p in q.predicates() {
            mix(0xa5a5);
            for &x in p {
                mix(u64::from(x));
            }
        }
        (1 + h % self.n.max(1)) as f64
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Linear score plus `coef * d_a * d_b` for one attribute pair.
#[derive(Debug, Clone)]
pub struct InteractionRanking {
    pub base: LinearRanking,
    pub pair: (usize, usize),
    pub coef: f64,
}

impl RankingFunction for InteractionRanking {
    fn score(&self, values: &[Value], q: &Query) -> f64 {
        let (a, b) = self.pair;
        let da = discrete_distance(q.predicate(a), values[a]);
        let db = discrete_distance(q.predicate(b), values[b]);
        self.base.score(values, q) + self.coef * da * db
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreakPolicy {
    #[default]
    ById,
    InsertedFirst,
    InsertedLast,
}

impl TieBreakPolicy {
    pub fn key(self, provenance: Provenance) -> u8 {
        match (self, provenance) {
            (TieBreakPolicy::ById, _) => 0,
            (TieBreakPolicy::InsertedFirst, Provenance::Inserted) => 0,
            (TieBreakPolicy::InsertedFirst, Provenance::BonaFide) => 1,
            (TieBreakPolicy::InsertedLast, Provenance::BonaFide) => 0,
            (TieBreakPolicy::InsertedLast, Provenance::Inserted) => 1,
        }
    }
}

/// Sort key of a tuple under a query: (score, policy key, id).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankKey {
    pub score: f64,
    pub policy: u8,
    pub id: TupleId,
}

impl RankKey {
    pub fn of(t: &Tuple, q: &Query, ranking: &dyn RankingFunction, policy: TieBreakPolicy) -> Self {
        Self {
            score: ranking.score(&t.values, q),
            policy: policy.key(t.provenance),
            id: t.id,
        }
    }

    pub fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.policy.cmp(&other.policy))
            .then(self.id.cmp(&other.id))
    }
}

/// Every tuple id in rank order.
pub fn total_order(
    db: &Database,
    q: &Query,
    ranking: &dyn RankingFunction,
    policy: TieBreakPolicy,
) -> Vec<TupleId> {
    let mut keys: Vec<RankKey> = db
        .tuples()
        .iter()
        .map(|t| RankKey::of(t, q, ranking, policy))
        .collect();
    keys.sort_by(RankKey::cmp);
    keys.into_iter().map(|k| k.id).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub query: Vec<Vec<u32>>,
    pub better: Vec<Value>,
    pub worse: Vec<Value>,
    pub attribute: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub trials_run: usize,
    pub violations: Vec<Violation>,
    /// Set when no trial could be formed.
    pub degenerate: Option<String>,
}

impl CertReport {
    pub fn passed(&self) -> bool {
        self.degenerate.is_none() && self.violations.is_empty()
    }
}

const MAX_WITNESSES: usize = 32;

fn random_subset(rng: &mut ChaCha8Rng, size: usize) -> Vec<u32> {
    loop {
        let s: Vec<u32> = (0..size as u32).filter(|_| rng.random_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn random_query(rng: &mut ChaCha8Rng, domains: &[usize]) -> Vec<Vec<u32>> {
    domains
        .iter()
        .map(|&d| {
            if rng.random_bool(0.5) {
                vec![rng.random_range(0..d as u32)]
            } else {
                random_subset(rng, d)
            }
        })
        .collect()
}

fn random_values(rng: &mut ChaCha8Rng, domains: &[usize]) -> Vec<Value> {
    domains
        .iter()
        .map(|&d| Some(rng.random_range(0..d as u32)))
        .collect()
}

fn raw_query(preds: Vec<Vec<u32>>) -> Query {
    // Predicates come from in-domain sorted draws.
    let mut q = Query::point_u32(&vec![0; preds.len()]);
    for (i, p) in preds.into_iter().enumerate() {
        q.set(i, p);
    }
    q
}

/// Samples tuple pairs that differ on one attribute where only one of them
/// matches the query, and checks that the matching one scores strictly lower.
pub fn certify_monotonicity(
    ranking: &dyn RankingFunction,
    domains: &[usize],
    trials: usize,
    seed: u64,
) -> CertReport {
    if domains.len() < 2 {
        return CertReport {
            trials_run: 0,
            violations: vec![],
            degenerate: Some("no testable triple".into()),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for _ in 0..trials {
        let attr = rng.random_range(0..domains.len());
        let d = domains[attr] as u32;
        let mut preds = random_query(&mut rng, domains);
        // The varied attribute needs a proper subset so a mismatch exists.
        if preds[attr].len() == d as usize {
            let drop = rng.random_range(0..d);
            preds[attr].retain(|&x| x != drop);
        }
        let inside = preds[attr][rng.random_range(0..preds[attr].len())];
        let outside: Vec<u32> = (0..d).filter(|x| !preds[attr].contains(x)).collect();
        let out = outside[rng.random_range(0..outside.len())];
        let mut t = random_values(&mut rng, domains);
        t[attr] = Some(inside);
        let mut t2 = t.clone();
        t2[attr] = Some(out);
        let q = raw_query(preds);
        let (s1, s2) = (ranking.score(&t, &q), ranking.score(&t2, &q));
        if s1 >= s2 && violations.len() < MAX_WITNESSES {
            violations.push(Violation {
                query: q.predicates().to_vec(),
                better: t,
                worse: t2,
                attribute: attr,
                detail: format!("matching tuple scored {s1}, mismatching tuple scored {s2}"),
            });
        }
    }
    CertReport {
        trials_run: trials,
        violations,
        degenerate: None,
    }
}

/// Samples (q, t, t') with t strictly ahead of t', narrows one predicate of q
/// to t's value, and checks that t stays strictly ahead.
pub fn certify_additivity(
    ranking: &dyn RankingFunction,
    domains: &[usize],
    trials: usize,
    seed: u64,
) -> CertReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut run = 0;
    for _ in 0..trials {
        let mut formed = None;
        for _ in 0..64 {
            let q = raw_query(random_query(&mut rng, domains));
            let a = random_values(&mut rng, domains);
            let b = random_values(&mut rng, domains);
            if a == b {
                continue;
            }
            let (sa, sb) = (ranking.score(&a, &q), ranking.score(&b, &q));
            match sa.total_cmp(&sb) {
                Ordering::Less => formed = Some((q, a, b)),
                Ordering::Greater => formed = Some((q, b, a)),
                Ordering::Equal => continue,
            }
            break;
        }
        let Some((q, t, t2)) = formed else { continue };
        run += 1;
        let attr = rng.random_range(0..domains.len());
        let q2 = q.with_point(attr, t[attr].expect("sampled values are non-null"));
        let (s1, s2) = (ranking.score(&t, &q2), ranking.score(&t2, &q2));
        if s1 >= s2 && violations.len() < MAX_WITNESSES {
            violations.push(Violation {
                query: q.predicates().to_vec(),
                better: t,
                worse: t2,
                attribute: attr,
                detail: format!("after narrowing: better scored {s1}, worse scored {s2}"),
            });
        }
    }
    CertReport {
        trials_run: run,
        degenerate: (run == 0).then(|| "no strictly ordered pair found".to_string()),
        violations,
    }
}
