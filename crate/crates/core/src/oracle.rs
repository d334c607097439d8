//! Brute-force ground truth for small instances.
//!
//! A value `x` of private attribute `B` is feasible for the victim when some
//! alternative database holding `v[B] = x` answers every expressible query
//! exactly like the real one. Two alternatives are tried: the database with
//! only the victim's cell changed, and the database with the labels `v[B]`
//! and `x` swapped throughout the column. Each witness is a legal database
//! under the same ranking, so a value kept here can never be excluded by a
//! query-only adversary.

use std::cmp::Ordering;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{InterfaceConfig, QueryKind};
use crate::model::{project_public, Database, Query, RankedAnswer, Schema, Tuple, TupleId, Value};
use crate::ranking::{RankingFunction, TieBreakPolicy};

pub const DEFAULT_QUERY_BOUND: u128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("{queries} expressible queries exceed the bound of {bound}")]
    SpaceTooLarge { queries: u128, bound: u128 },
    #[error("tuple {0} is not in the database")]
    UnknownVictim(TupleId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeFeasibility {
    /// Private attribute position.
    pub attribute: usize,
    pub name: String,
    pub truth: Value,
    pub feasible: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub victim: TupleId,
    pub k: usize,
    pub query_kind: QueryKind,
    pub queries_checked: u64,
    pub attributes: Vec<AttributeFeasibility>,
}

impl FeasibleSet {
    pub fn feasible(&self, j: usize) -> &[u32] {
        &self.attributes[j].feasible
    }

    pub fn singleton(&self, j: usize) -> Option<u32> {
        match self.attributes[j].feasible.as_slice() {
            [x] => Some(*x),
            _ => None,
        }
    }

    pub fn is_full_domain(&self, schema: &Schema, j: usize) -> bool {
        self.attributes[j].feasible.len() == schema.domain_size(schema.private_index(j))
    }
}

/// Number of queries the interface can express.
pub fn query_space(schema: &Schema, kind: QueryKind) -> u128 {
    (0..schema.arity())
        .map(|i| {
            let d = schema.domain_size(i) as u32;
            match kind {
                QueryKind::PointOnly => d as u128,
                QueryKind::InAllowed => 2u128.saturating_pow(d).saturating_sub(1),
            }
        })
        .fold(1u128, u128::saturating_mul)
}

/// Every expressible query, lazily.
pub fn expressible_queries(schema: &Schema, kind: QueryKind) -> impl Iterator<Item = Query> {
    let per_attr: Vec<Vec<Vec<u32>>> = (0..schema.arity())
        .map(|i| {
            let d = schema.domain_size(i) as u32;
            match kind {
                QueryKind::PointOnly => (0..d).map(|x| vec![x]).collect(),
                QueryKind::InAllowed => (1u64..(1u64 << d))
                    .map(|mask| (0..d).filter(|b| mask >> b & 1 == 1).collect())
                    .collect(),
            }
        })
        .collect();
    per_attr
        .into_iter()
        .multi_cartesian_product()
        .map(Query::from_sorted)
}

/// Top-k by scoring and fully sorting every tuple.
pub fn exhaustive_topk(
    db: &Database,
    q: &Query,
    ranking: &dyn RankingFunction,
    policy: TieBreakPolicy,
    k: usize,
) -> RankedAnswer {
    let ids = ranked_ids(db.tuples(), q, ranking, policy, k);
    RankedAnswer {
        entries: ids
            .iter()
            .map(|id| project_public(db.get(*id).expect("ranked id exists"), db.schema()))
            .collect(),
        k,
    }
}

fn ranked_ids(
    tuples: &[Tuple],
    q: &Query,
    ranking: &dyn RankingFunction,
    policy: TieBreakPolicy,
    k: usize,
) -> Vec<TupleId> {
    let mut scored: Vec<(f64, u8, TupleId)> = tuples
        .iter()
        .map(|t| (ranking.score(&t.values, q), policy.key(t.provenance), t.id))
        .collect();
    scored.sort_by(|a, b| match a.0.partial_cmp(&b.0) {
        Some(Ordering::Equal) | None => (a.1, a.2).cmp(&(b.1, b.2)),
        Some(o) => o,
    });
    scored.into_iter().take(k).map(|s| s.2).collect()
}

struct Candidate {
    j: usize,
    x: u32,
    worlds: Vec<Vec<Tuple>>,
}

/// Feasible values of every private attribute of `victim` for a query-only
/// adversary behind an interface configured as `cfg`.
pub fn feasible_values(
    db: &Database,
    victim: TupleId,
    ranking: &dyn RankingFunction,
    policy: TieBreakPolicy,
    cfg: &InterfaceConfig,
    bound: u128,
) -> Result<FeasibleSet, OracleError> {
    let schema = db.schema();
    let queries = query_space(schema, cfg.query_kind);
    if queries > bound {
        return Err(OracleError::SpaceTooLarge { queries, bound });
    }
    let v = db.get(victim).ok_or(OracleError::UnknownVictim(victim))?;
    let pos = db
        .tuples()
        .iter()
        .position(|t| t.id == victim)
        .expect("victim present");
    let mut candidates = Vec::new();
    let mut attributes = Vec::new();
    for j in 0..schema.m_prime() {
        let col = schema.private_index(j);
        let truth = v.values[col];
        attributes.push(AttributeFeasibility {
            attribute: j,
            name: schema.attribute(col).name.clone(),
            truth,
            feasible: Vec::new(),
        });
        for x in 0..schema.domain_size(col) as u32 {
            if truth == Some(x) {
                continue;
            }
            let mut worlds = Vec::new();
            let mut changed = v.values.clone();
            changed[col] = Some(x);
            if db.contains_values(&changed).is_none() {
                let mut w = db.tuples().to_vec();
                w[pos].values = changed;
                worlds.push(w);
            }
            let mut swapped = db.tuples().to_vec();
            for t in &mut swapped {
                if t.values[col] == truth {
                    t.values[col] = Some(x);
                } else if t.values[col] == Some(x) {
                    t.values[col] = truth;
                }
            }
            worlds.push(swapped);
            candidates.push(Candidate { j, x, worlds });
        }
    }

    let mut checked = 0u64;
    for q in expressible_queries(schema, cfg.query_kind) {
        if candidates.is_empty() {
            break;
        }
        checked += 1;
        let real = ranked_ids(db.tuples(), &q, ranking, policy, cfg.k);
        for c in &mut candidates {
            c.worlds
                .retain(|w| ranked_ids(w, &q, ranking, policy, cfg.k) == real);
        }
        candidates.retain(|c| !c.worlds.is_empty());
    }

    for (j, a) in attributes.iter_mut().enumerate() {
        let mut feasible: Vec<u32> = candidates
            .iter()
            .filter(|c| c.j == j)
            .map(|c| c.x)
            .collect();
        if let Some(t) = a.truth {
            feasible.push(t);
        }
        feasible.sort_unstable();
        a.feasible = feasible;
    }
    Ok(FeasibleSet {
        victim,
        k: cfg.k,
        query_kind: cfg.query_kind,
        queries_checked: checked,
        attributes,
    })
}
