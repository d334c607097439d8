//! Black-box inference attacks against a [`SearchInterface`].
//!
//! Every attack drives the interface through a [`Probe`], which records the
//! trace, enforces a client-side budget and converts rate limiting into a
//! clean stop with a partial ledger.

mod findq;
mod qi;
mod qonly;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError, InterfaceConfig, SearchInterface};
use crate::model::{Database, Provenance, Query, RankedAnswer, Schema, TupleId, Value};
use crate::ranking::{RankingFunction, TieBreakPolicy};

pub use findq::{find_q, QueryHistory};
pub use qi::{qi_in, qi_point, QiOptions};
pub use qonly::{q_in, q_point};

/// What the adversary knows about the victim before attacking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VictimKnowledge {
    pub id: TupleId,
    pub public_values: Vec<Value>,
}

impl VictimKnowledge {
    pub fn from_db(db: &Database, id: TupleId) -> Option<Self> {
        db.get(id).map(|t| Self {
            id,
            public_values: t.public(db.schema()).to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    QiPoint,
    QPoint,
    QiIn,
    QIn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::QiPoint,
        Algorithm::QPoint,
        Algorithm::QiIn,
        Algorithm::QIn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::QiPoint => "qi-point",
            Algorithm::QPoint => "q-point",
            Algorithm::QiIn => "qi-in",
            Algorithm::QIn => "q-in",
        }
    }

    pub fn inserts(self) -> bool {
        matches!(self, Algorithm::QiPoint | Algorithm::QiIn)
    }

    pub fn uses_in(self) -> bool {
        matches!(self, Algorithm::QiIn | Algorithm::QIn)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (qi-point, q-point, qi-in, q-in)"))
    }
}

/// Why a probe stopped the attack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Halt {
    Budget,
    Engine(EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TraceEvent {
    Query {
        predicates: Vec<Vec<u32>>,
        returned: Vec<TupleId>,
        victim_rank: Option<usize>,
    },
    Insert {
        values: Vec<Value>,
        /// `None` when the engine refused a duplicate.
        id: Option<TupleId>,
    },
}

/// Metered, recording wrapper around an interface.
pub struct Probe<'a> {
    iface: &'a mut dyn SearchInterface,
    victim: TupleId,
    budget: Option<u64>,
    trace: Vec<TraceEvent>,
    queries: u64,
    inserts: u64,
    inserted: Vec<Vec<Value>>,
    cache: HashMap<Query, RankedAnswer>,
}

impl<'a> Probe<'a> {
    pub fn new(iface: &'a mut dyn SearchInterface, victim: TupleId, budget: Option<u64>) -> Self {
        Self {
            iface,
            victim,
            budget,
            trace: Vec::new(),
            queries: 0,
            inserts: 0,
            inserted: Vec::new(),
            cache: HashMap::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        self.iface.schema()
    }

    pub fn depth(&self) -> usize {
        self.iface.depth()
    }

    pub fn victim(&self) -> TupleId {
        self.victim
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn inserts(&self) -> u64 {
        self.inserts
    }

    pub fn requests(&self) -> u64 {
        self.queries + self.inserts
    }

    /// Successful inserts so far.
    pub fn inserted_count(&self) -> usize {
        self.inserted.len()
    }

    fn check_budget(&self) -> Result<(), Halt> {
        match self.budget {
            Some(b) if self.requests() >= b => Err(Halt::Budget),
            _ => Ok(()),
        }
    }

    fn lift(e: EngineError) -> Halt {
        match e {
            EngineError::RateLimitExceeded => Halt::Budget,
            other => Halt::Engine(other),
        }
    }

    pub fn search(&mut self, q: &Query) -> Result<RankedAnswer, Halt> {
        self.check_budget()?;
        let a = self.iface.search(q).map_err(Self::lift)?;
        self.queries += 1;
        self.trace.push(TraceEvent::Query {
            predicates: q.predicates().to_vec(),
            returned: a.ids().collect(),
            victim_rank: a.rank_of(self.victim),
        });
        Ok(a)
    }

    /// Search that never re-issues a query. Valid only while the database
    /// does not change, so inserts clear the cache.
    pub fn search_cached(&mut self, q: &Query) -> Result<RankedAnswer, Halt> {
        if let Some(a) = self.cache.get(q) {
            return Ok(a.clone());
        }
        let a = self.search(q)?;
        self.cache.insert(q.clone(), a.clone());
        Ok(a)
    }

    pub fn is_cached(&self, q: &Query) -> bool {
        self.cache.contains_key(q)
    }

    /// `Ok(None)` means the engine already holds these exact values.
    pub fn insert(&mut self, values: &[Value]) -> Result<Option<TupleId>, Halt> {
        self.check_budget()?;
        let r = match self.iface.insert(values) {
            Ok(id) => Some(id),
            Err(EngineError::DuplicateTuple) => None,
            Err(e) => return Err(Self::lift(e)),
        };
        self.inserts += 1;
        self.cache.clear();
        if r.is_some() {
            self.inserted.push(values.to_vec());
        }
        self.trace.push(TraceEvent::Insert {
            values: values.to_vec(),
            id: r,
        });
        Ok(r)
    }
}

/// True when some tuple that was behind `v` (or unlisted) in `before` is
/// ahead of `v` in `after`. `v` must be listed in `before`.
///
/// Under an additive ranking, if the two queries differ only in that `after`
/// narrows attribute B to the point θ, this proves `v[B] != θ`.
pub fn overtaken(before: &RankedAnswer, after: &RankedAnswer, v: TupleId) -> bool {
    let Some(rank) = before.rank_of(v) else {
        return false;
    };
    let ahead_before: HashSet<TupleId> = before.entries[..rank - 1].iter().map(|e| e.id).collect();
    let ahead_after = match after.rank_of(v) {
        Some(r) => &after.entries[..r - 1],
        None => &after.entries[..],
    };
    ahead_after.iter().any(|e| !ahead_before.contains(&e.id))
}

/// Issues `q` and `q_prime`, which must differ on exactly one private
/// attribute with a point predicate in `q_prime`, and reports whether they
/// form a differential pair for the victim.
///
/// A strict worsening of the victim's rank (absent counts as infinitely bad)
/// always qualifies; with k > 1 an observed overtaking of the victim also does.
pub fn verify_differential_pair(
    iface: &mut dyn SearchInterface,
    q: &Query,
    q_prime: &Query,
    victim: TupleId,
) -> Result<bool, EngineError> {
    let diff = q.differing_attributes(q_prime);
    let schema = iface.schema();
    if diff.len() != 1 || schema.is_public(diff[0]) || !q_prime.is_point(diff[0]) {
        return Err(EngineError::BadRequest(
            "queries must differ on exactly one private attribute".into(),
        ));
    }
    let a = iface.search(q)?;
    let b = iface.search(q_prime)?;
    Ok(overtaken(&a, &b, victim))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub q: Vec<Vec<u32>>,
    pub q_prime: Vec<Vec<u32>>,
    /// Successful inserts that preceded the pair.
    pub inserts_before: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub value: u32,
    pub witness: Witness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Open,
    Inferred(u32),
    /// Every domain value was excluded.
    PossibleNull,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeLedger {
    /// Private attribute position (0 for B1).
    pub attribute: usize,
    pub name: String,
    pub domain_size: usize,
    /// A nullable attribute is never inferred from a single remaining value,
    /// since the victim may hold Null.
    #[serde(default)]
    pub nullable: bool,
    pub excluded: Vec<Exclusion>,
    pub resolution: Resolution,
    /// Resolved by the probe turning out to equal the victim.
    #[serde(default)]
    pub by_identity: bool,
}

impl AttributeLedger {
    fn new(schema: &Schema, j: usize) -> Self {
        let idx = schema.private_index(j);
        Self {
            attribute: j,
            name: schema.attribute(idx).name.clone(),
            domain_size: schema.domain_size(idx),
            nullable: schema.attribute(idx).allows_null,
            excluded: Vec::new(),
            resolution: Resolution::Open,
            by_identity: false,
        }
    }

    pub fn excluded_values(&self) -> BTreeSet<u32> {
        self.excluded.iter().map(|e| e.value).collect()
    }

    pub fn is_excluded(&self, value: u32) -> bool {
        self.excluded.iter().any(|e| e.value == value)
    }

    pub fn remaining(&self) -> Vec<u32> {
        (0..self.domain_size as u32)
            .filter(|&x| !self.is_excluded(x))
            .collect()
    }

    /// Records an exclusion and updates the resolution. Returns false if the
    /// value was already excluded.
    fn exclude(&mut self, value: u32, witness: Witness) -> bool {
        if self.is_excluded(value) {
            return false;
        }
        self.excluded.push(Exclusion { value, witness });
        let rest = self.remaining();
        self.resolution = match rest.as_slice() {
            [] => Resolution::PossibleNull,
            [x] if !self.nullable => Resolution::Inferred(*x),
            _ => Resolution::Open,
        };
        true
    }

    pub fn is_resolved(&self) -> bool {
        self.resolution != Resolution::Open
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttackStatus {
    Inferred { value: u32 },
    InferredAll { values: Vec<u32> },
    Undetermined { reason: String },
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub algorithm: Algorithm,
    pub victim: TupleId,
    /// Private attribute position, or `None` when inferring all.
    pub target: Option<usize>,
    #[serde(flatten)]
    pub status: AttackStatus,
    pub ledger: Vec<AttributeLedger>,
    pub queries_used: u64,
    pub inserts_used: u64,
    /// Point-query draws made by find_q (all calls).
    pub find_draws: u64,
    /// Queries spent before the first query returning the victim was found.
    pub initial_find_queries: u64,
    /// Queries spent after that point.
    pub queries_after_first_find: u64,
    /// Completed walk rounds (Q&I only).
    pub walk_rounds: usize,
    /// Successfully inserted tuples, in order.
    pub inserted: Vec<Vec<Value>>,
    pub trace: Vec<TraceEvent>,
}

impl AttackOutcome {
    pub fn inferred_value(&self, j: usize) -> Option<u32> {
        match self.ledger.get(j)?.resolution {
            Resolution::Inferred(x) => Some(x),
            _ => None,
        }
    }

    pub fn exclusion_count(&self) -> usize {
        self.ledger.iter().map(|l| l.excluded.len()).sum()
    }

    pub fn cost(&self) -> u64 {
        self.queries_used + self.inserts_used
    }

    /// Amortized cost per resolved private attribute.
    pub fn amortized_cost(&self) -> Option<f64> {
        let resolved = self.ledger.iter().filter(|l| l.is_resolved()).count();
        (resolved > 0).then(|| self.cost() as f64 / resolved as f64)
    }

    pub fn is_success(&self) -> bool {
        matches!(
            self.status,
            AttackStatus::Inferred { .. } | AttackStatus::InferredAll { .. }
        )
    }
}

/// Which attributes the attack must resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Target(usize),
    All,
}

impl Goal {
    fn target(self) -> Option<usize> {
        match self {
            Goal::Target(j) => Some(j),
            Goal::All => None,
        }
    }
}

/// Bookkeeping shared by all attacks.
pub(crate) struct AttackState {
    pub algorithm: Algorithm,
    pub goal: Goal,
    pub ledger: Vec<AttributeLedger>,
    pub find_draws: u64,
    pub first_find_done: Option<u64>,
    pub walk_rounds: usize,
}

impl AttackState {
    pub fn new(algorithm: Algorithm, goal: Goal, schema: &Schema) -> Self {
        Self {
            algorithm,
            goal,
            ledger: (0..schema.m_prime())
                .map(|j| AttributeLedger::new(schema, j))
                .collect(),
            find_draws: 0,
            first_find_done: None,
            walk_rounds: 0,
        }
    }

    pub fn mark_first_find(&mut self, probe: &Probe) {
        if self.first_find_done.is_none() {
            self.first_find_done = Some(probe.queries());
        }
    }

    pub fn goal_attrs(&self) -> Vec<usize> {
        match self.goal {
            Goal::Target(j) => vec![j],
            Goal::All => (0..self.ledger.len()).collect(),
        }
    }

    pub fn goal_met(&self) -> bool {
        self.goal_attrs()
            .iter()
            .all(|&j| self.ledger[j].is_resolved())
    }

    pub fn success_status(&self) -> Option<AttackStatus> {
        match self.goal {
            Goal::Target(j) => match self.ledger[j].resolution {
                Resolution::Inferred(x) => Some(AttackStatus::Inferred { value: x }),
                _ => None,
            },
            Goal::All => self
                .ledger
                .iter()
                .map(|l| match l.resolution {
                    Resolution::Inferred(x) => Some(x),
                    _ => None,
                })
                .collect::<Option<Vec<u32>>>()
                .map(|values| AttackStatus::InferredAll { values }),
        }
    }

    /// Status once the goal attributes are resolved or the attack gave up.
    pub fn final_status(&self, fallback_reason: &str) -> AttackStatus {
        if let Some(s) = self.success_status() {
            return s;
        }
        let null = self
            .goal_attrs()
            .iter()
            .any(|&j| self.ledger[j].resolution == Resolution::PossibleNull);
        AttackStatus::Undetermined {
            reason: if null {
                "possible-null".into()
            } else {
                fallback_reason.into()
            },
        }
    }

    pub fn finish(self, probe: Probe, victim: TupleId, status: AttackStatus) -> AttackOutcome {
        let first = self.first_find_done.unwrap_or(probe.queries);
        AttackOutcome {
            algorithm: self.algorithm,
            victim,
            target: self.goal.target(),
            status,
            ledger: self.ledger,
            queries_used: probe.queries,
            inserts_used: probe.inserts,
            find_draws: self.find_draws,
            initial_find_queries: first,
            queries_after_first_find: probe.queries - first,
            walk_rounds: self.walk_rounds,
            inserted: probe.inserted,
            trace: probe.trace,
        }
    }

    pub fn halted(self, probe: Probe, victim: TupleId, halt: Halt) -> AttackOutcome {
        let status = match halt {
            Halt::Budget => self
                .success_status()
                .unwrap_or(AttackStatus::BudgetExhausted),
            Halt::Engine(e) => AttackStatus::Undetermined {
                reason: format!("engine error: {e}"),
            },
        };
        self.finish(probe, victim, status)
    }
}

/// Options shared by every attack entry point.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttackOptions {
    /// Client-side cap on queries plus inserts.
    pub budget: Option<u64>,
    /// Q&I only: stop after this many completed walk rounds.
    pub max_rounds: Option<usize>,
}

/// Runs `algorithm` against one attribute (`Goal::Target`) or all of them.
pub fn run_attack(
    algorithm: Algorithm,
    iface: &mut dyn SearchInterface,
    vk: &VictimKnowledge,
    goal: Goal,
    seed: u64,
    opts: AttackOptions,
) -> AttackOutcome {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut probe = Probe::new(iface, vk.id, opts.budget);
    match algorithm {
        Algorithm::QiPoint | Algorithm::QiIn => qi::run(
            &mut probe,
            vk,
            algorithm,
            goal,
            &mut rng,
            QiOptions {
                max_rounds: opts.max_rounds,
            },
        )
        .finish_with(probe, vk.id),
        Algorithm::QPoint | Algorithm::QIn => {
            qonly::run(&mut probe, vk, algorithm, goal, &mut rng).finish_with(probe, vk.id)
        }
    }
}

/// Drives `algorithm` until every private attribute is inferred or given up on.
pub fn infer_all(
    algorithm: Algorithm,
    iface: &mut dyn SearchInterface,
    vk: &VictimKnowledge,
    seed: u64,
    opts: AttackOptions,
) -> AttackOutcome {
    run_attack(algorithm, iface, vk, Goal::All, seed, opts)
}

/// Result of an attack body before the probe is folded in.
pub(crate) enum Ending {
    Done(AttackState, AttackStatus),
    Halted(AttackState, Halt),
}

impl Ending {
    fn finish_with(self, probe: Probe, victim: TupleId) -> AttackOutcome {
        match self {
            Ending::Done(st, status) => st.finish(probe, victim, status),
            Ending::Halted(st, halt) => st.halted(probe, victim, halt),
        }
    }
}

/// Replays every exclusion witness of `outcome` against fresh engines built
/// from `db` plus the attack's inserts, returning one verdict per exclusion
/// in ledger order.
pub fn replay_exclusions(
    db: &Database,
    ranking: Arc<dyn RankingFunction>,
    policy: TieBreakPolicy,
    k: usize,
    outcome: &AttackOutcome,
) -> Result<Vec<bool>, EngineError> {
    let mut engines: HashMap<usize, Arc<Engine>> = HashMap::new();
    let schema = db.schema().clone();
    let mut verdicts = Vec::new();
    for attr in &outcome.ledger {
        for ex in &attr.excluded {
            let n = ex.witness.inserts_before;
            let engine = engines
                .entry(n)
                .or_insert_with(|| {
                    let e = Engine::new(
                        db.clone(),
                        Arc::clone(&ranking),
                        policy,
                        InterfaceConfig::in_allowed(k),
                    );
                    for values in &outcome.inserted[..n] {
                        e.admin_insert(values.clone(), Provenance::Inserted)
                            .expect("replayed insert was accepted originally");
                    }
                    Arc::new(e)
                })
                .clone();
            let q = Query::new(&schema, ex.witness.q.clone())?;
            let q2 = Query::new(&schema, ex.witness.q_prime.clone())?;
            let diff = q.differing_attributes(&q2);
            let right_attr = diff == [schema.private_index(attr.attribute)]
                && q2.point_value(diff[0]) == Some(ex.value);
            let mut session = engine.session();
            verdicts.push(
                right_attr && verify_differential_pair(&mut session, &q, &q2, outcome.victim)?,
            );
        }
    }
    Ok(verdicts)
}
