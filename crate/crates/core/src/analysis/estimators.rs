use serde::{Deserialize, Serialize};

use super::erf::erf_scaled;
use super::AnalysisError;
use crate::model::{Database, TupleId};
use crate::ranking::RankingWeights;

/// What the estimators need to know about one victim in one database.
///
/// Private attributes are stored with the target first, so `private_*[0]`
/// is the attribute under attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    /// For every other tuple, which public attributes differ from the victim.
    pub mismatches: Vec<Vec<bool>>,
    pub public_weights: Vec<f64>,
    pub private_weights: Vec<f64>,
    pub private_domains: Vec<usize>,
}

impl InstanceStats {
    pub fn from_db(
        db: &Database,
        victim: TupleId,
        weights: &RankingWeights,
    ) -> Result<Self, AnalysisError> {
        let schema = db.schema();
        weights
            .check_schema(schema)
            .map_err(|e| AnalysisError::Weights(e.to_string()))?;
        let v = db.get(victim).ok_or(AnalysisError::UnknownVictim(victim))?;
        let mismatches = db
            .tuples()
            .iter()
            .filter(|t| t.id != victim)
            .map(|t| {
                schema
                    .public_indices()
                    .map(|i| v.values[i].is_none() || v.values[i] != t.values[i])
                    .collect()
            })
            .collect();
        Ok(Self {
            mismatches,
            public_weights: weights.public.clone(),
            private_weights: weights.private.clone(),
            private_domains: schema
                .private_indices()
                .map(|i| schema.domain_size(i))
                .collect(),
        })
    }

    /// The same instance with private attribute `j` moved to the front.
    pub fn with_target(mut self, j: usize) -> Self {
        let w = self.private_weights.remove(j);
        self.private_weights.insert(0, w);
        let d = self.private_domains.remove(j);
        self.private_domains.insert(0, d);
        self
    }

    pub fn m_prime(&self) -> usize {
        self.private_weights.len()
    }

    /// Weighted public disagreement with every other tuple.
    pub fn public_distances(&self) -> Vec<f64> {
        let all: Vec<usize> = (0..self.public_weights.len()).collect();
        self.distances_on(&all)
    }

    /// Public disagreement restricted to the attributes in `s`.
    pub fn distances_on(&self, s: &[usize]) -> Vec<f64> {
        self.mismatches
            .iter()
            .map(|row| {
                s.iter()
                    .filter(|&&i| row[i])
                    .map(|&i| self.public_weights[i])
                    .sum()
            })
            .collect()
    }

    /// `sum w'_i^2 (|V_i| - 1) / |V_i|^2` over the given private positions.
    fn private_variance(&self, positions: impl IntoIterator<Item = usize>) -> f64 {
        positions
            .into_iter()
            .map(|i| {
                let w = self.private_weights[i];
                let d = self.private_domains[i] as f64;
                w * w * (d - 1.0) / (d * d)
            })
            .sum()
    }

    fn return_prob(&self, var: f64) -> f64 {
        self.public_distances()
            .iter()
            .map(|&d| 0.5 + 0.5 * erf_scaled(d, var))
            .product()
    }

    fn quick_finish(&self, distances: &[f64], var: f64) -> f64 {
        let w1 = self.private_weights[0];
        let ratio: f64 = distances
            .iter()
            .map(|&d| (1.0 + erf_scaled(d - w1, var)) / (1.0 + erf_scaled(d, var)))
            .product();
        let exponent = self.private_domains[0] as i32 - 1;
        (1.0 - ratio).clamp(0.0, 1.0).powi(exponent)
    }
}

/// Which product index to use in the find-cost constant `c_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexReading {
    /// `prod_{j<=i} |V_j|`: the number of point combinations over the first
    /// `i` private attributes.
    #[default]
    Intended,
    /// `prod_{j<=i} |V_i|`, i.e. `|V_i|^i`, as printed.
    Literal,
}

/// Probability that a uniformly drawn private point combination, with the
/// victim's public values, returns the victim.
pub fn findq_success_prob(stats: &InstanceStats) -> f64 {
    stats.return_prob(stats.private_variance(0..stats.m_prime()))
}

/// Expected query cost of the point-interface insertion attack.
pub fn qi_point_expected_cost(stats: &InstanceStats) -> f64 {
    let walk: usize = stats.private_domains.iter().map(|d| d - 1).sum();
    1.0 / findq_success_prob(stats) + walk as f64
}

/// Lower bound on the probability that the point-interface query-only attack
/// settles the target within `|V_1|` queries.
pub fn q_point_quick_finish_prob(stats: &InstanceStats) -> f64 {
    let var = stats.private_variance(1..stats.m_prime());
    stats.quick_finish(&stats.public_distances(), var)
}

/// Expected find cost of the IN-interface insertion attack.
pub fn qi_in_expected_cost(stats: &InstanceStats, reading: IndexReading) -> f64 {
    let d = stats.public_distances();
    if d.iter().all(|&x| x > 0.0) {
        return 1.0;
    }
    let m_prime = stats.m_prime();
    let dom = |i: usize| stats.private_domains[i - 1] as f64;
    let c = |h: usize| -> f64 {
        (1..=h)
            .map(|i| match reading {
                IndexReading::Intended => (1..=i).map(dom).product::<f64>(),
                IndexReading::Literal => dom(i).powi(i as i32),
            })
            .sum()
    };
    let total: f64 = (1..m_prime)
        .map(|h| {
            let p = stats.return_prob(stats.private_variance(0..h));
            c(h + 1) * (1.0 - (1.0 - p).powf(c(h)))
        })
        .sum();
    // The all-star query is always issued, so the cost is at least one.
    total.max(1.0)
}

/// Lower bound on the probability that the IN-interface query-only attack
/// settles the target within `|V_1|` queries, given a seed query with point
/// predicates on publics `s` and on private positions `s_prime` (plus the
/// target).
pub fn q_in_quick_finish_prob(
    stats: &InstanceStats,
    s: &[usize],
    s_prime: &[usize],
) -> Result<f64, AnalysisError> {
    if s_prime.contains(&0) {
        return Err(AnalysisError::TargetInPointSet);
    }
    if let Some(&i) = s.iter().find(|&&i| i >= stats.public_weights.len()) {
        return Err(AnalysisError::AttributeOutOfRange(i));
    }
    if let Some(&i) = s_prime.iter().find(|&&i| i >= stats.m_prime()) {
        return Err(AnalysisError::AttributeOutOfRange(i));
    }
    let var = stats.private_variance(s_prime.iter().copied());
    Ok(stats.quick_finish(&stats.distances_on(s), var))
}

/// Every applicable estimate for one victim, as printed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub findq_success_prob: f64,
    pub qi_point_expected_cost: f64,
    pub q_point_quick_finish_prob: f64,
    pub qi_in_expected_cost: f64,
    pub qi_in_expected_cost_literal: f64,
    pub q_in_quick_finish_prob_all_points: f64,
}

pub fn estimate_all(stats: &InstanceStats) -> EstimateReport {
    let s: Vec<usize> = (0..stats.public_weights.len()).collect();
    let s_prime: Vec<usize> = (1..stats.m_prime()).collect();
    EstimateReport {
        findq_success_prob: findq_success_prob(stats),
        qi_point_expected_cost: qi_point_expected_cost(stats),
        q_point_quick_finish_prob: q_point_quick_finish_prob(stats),
        qi_in_expected_cost: qi_in_expected_cost(stats, IndexReading::Intended),
        qi_in_expected_cost_literal: qi_in_expected_cost(stats, IndexReading::Literal),
        q_in_quick_finish_prob_all_points: q_in_quick_finish_prob(stats, &s, &s_prime)
            .expect("positions are in range"),
    }
}
