//! The query engine: answers top-k queries under interface capability flags
//! and meters every request per actor.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    project_public, Database, ModelError, Provenance, Query, RankedAnswer, Schema, TupleId, Value,
};
use crate::ranking::{RankKey, RankingFunction, TieBreakPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    PointOnly,
    InAllowed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceConfig {
    pub k: usize,
    pub query_kind: QueryKind,
    pub insertion_allowed: bool,
    /// Maximum accepted requests per actor.
    pub rate_limit: Option<u64>,
    /// Requests that must pass before an inserted tuple is visible.
    pub insertion_delay: Option<u64>,
}

impl Default for InterfaceConfig {
    fn default() -> Self {
        Self {
            k: 1,
            query_kind: QueryKind::InAllowed,
            insertion_allowed: true,
            rate_limit: None,
            insertion_delay: None,
        }
    }
}

impl InterfaceConfig {
    pub fn point_only(k: usize) -> Self {
        Self {
            k,
            query_kind: QueryKind::PointOnly,
            ..Self::default()
        }
    }

    pub fn in_allowed(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn without_insertion(mut self) -> Self {
        self.insertion_allowed = false;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("rate limit exceeded")]
    RateLimitExceeded,
    #[error("IN predicate on a point-only interface")]
    UnsupportedPredicate,
    #[error("insertion constraint")]
    InsertionForbidden,
    #[error("duplicate tuple")]
    DuplicateTuple,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

impl EngineError {
    /// Wire error code.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::RateLimitExceeded => "rate_limited",
            EngineError::UnsupportedPredicate => "unsupported_predicate",
            EngineError::InsertionForbidden => "insertion_forbidden",
            EngineError::DuplicateTuple => "duplicate_tuple",
            EngineError::SchemaMismatch(_) | EngineError::BadRequest(_) => "bad_request",
            EngineError::Transport(_) => "transport",
        }
    }

    pub fn from_code(code: &str) -> Self {
        match code {
            "rate_limited" => EngineError::RateLimitExceeded,
            "unsupported_predicate" => EngineError::UnsupportedPredicate,
            "insertion_forbidden" => EngineError::InsertionForbidden,
            "duplicate_tuple" => EngineError::DuplicateTuple,
            "bad_request" => EngineError::BadRequest(String::new()),
            other => EngineError::Transport(format!("unknown error code `{other}`")),
        }
    }
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DuplicateTuple => EngineError::DuplicateTuple,
            other => EngineError::SchemaMismatch(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActorId(pub u64);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub queries_issued: u64,
    /// Accepted insert requests, including ones refused as duplicates.
    pub inserts_attempted: u64,
    pub tuples_inserted: u64,
}

impl BudgetLedger {
    pub fn requests(&self) -> u64 {
        self.queries_issued + self.inserts_attempted
    }
}

struct State {
    db: Database,
    /// Inserted tuples that are hidden until the clock passes the value.
    hidden_until: HashMap<TupleId, u64>,
}

/// Shared, thread-safe engine. Reads run concurrently; writes serialize.
pub struct Engine {
    state: RwLock<State>,
    ranking: Arc<dyn RankingFunction>,
    policy: TieBreakPolicy,
    cfg: InterfaceConfig,
    clock: AtomicU64,
    next_actor: AtomicU64,
    ledgers: Mutex<HashMap<ActorId, BudgetLedger>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("cfg", &self.cfg)
            .field("policy", &self.policy)
            .field("n", &self.state.read().db.n())
            .finish()
    }
}

impl Engine {
    pub fn new(
        db: Database,
        ranking: Arc<dyn RankingFunction>,
        policy: TieBreakPolicy,
        cfg: InterfaceConfig,
    ) -> Self {
        assert!(cfg.k >= 1, "k must be at least 1");
        Self {
            state: RwLock::new(State {
                db,
                hidden_until: HashMap::new(),
            }),
            ranking,
            policy,
            cfg,
            clock: AtomicU64::new(0),
            next_actor: AtomicU64::new(0),
            ledgers: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &InterfaceConfig {
        &self.cfg
    }

    pub fn policy(&self) -> TieBreakPolicy {
        self.policy
    }

    pub fn ranking(&self) -> &Arc<dyn RankingFunction> {
        &self.ranking
    }

    pub fn schema(&self) -> Schema {
        self.state.read().db.schema().clone()
    }

    /// Copy of the current database, hidden tuples included.
    pub fn snapshot(&self) -> Database {
        self.state.read().db.clone()
    }

    pub fn register_actor(&self) -> ActorId {
        let id = ActorId(self.next_actor.fetch_add(1, Ordering::Relaxed));
        self.ledgers.lock().insert(id, BudgetLedger::default());
        id
    }

    pub fn session(self: &Arc<Self>) -> EngineSession {
        EngineSession {
            actor: self.register_actor(),
            schema: self.schema(),
            engine: Arc::clone(self),
        }
    }

    pub fn ledger(&self, actor: ActorId) -> BudgetLedger {
        self.ledgers.lock().get(&actor).copied().unwrap_or_default()
    }

    pub fn total_ledger(&self) -> BudgetLedger {
        let ledgers = self.ledgers.lock();
        ledgers
            .values()
            .fold(BudgetLedger::default(), |a, l| BudgetLedger {
                queries_issued: a.queries_issued + l.queries_issued,
                inserts_attempted: a.inserts_attempted + l.inserts_attempted,
                tuples_inserted: a.tuples_inserted + l.tuples_inserted,
            })
    }

    fn check_query(&self, q: &Query) -> Result<(), EngineError> {
        let state = self.state.read();
        let schema = state.db.schema();
        if q.arity() != schema.arity() {
            return Err(EngineError::SchemaMismatch(format!(
                "expected {} predicates, got {}",
                schema.arity(),
                q.arity()
            )));
        }
        for (i, p) in q.predicates().iter().enumerate() {
            if p.is_empty()
                || p.last()
                    .is_some_and(|&x| x as usize >= schema.domain_size(i))
            {
                return Err(EngineError::SchemaMismatch(format!(
                    "bad predicate on attribute {i}"
                )));
            }
        }
        if self.cfg.query_kind == QueryKind::PointOnly && !q.is_point_query() {
            return Err(EngineError::UnsupportedPredicate);
        }
        Ok(())
    }

    /// Counts one accepted request against the actor, or refuses it.
    fn charge(&self, actor: ActorId, insert: bool) -> Result<u64, EngineError> {
        let mut ledgers = self.ledgers.lock();
        let ledger = ledgers.entry(actor).or_default();
        if let Some(limit) = self.cfg.rate_limit {
            if ledger.requests() >= limit {
                return Err(EngineError::RateLimitExceeded);
            }
        }
        if insert {
            ledger.inserts_attempted += 1;
        } else {
            ledger.queries_issued += 1;
        }
        Ok(self.clock.fetch_add(1, Ordering::SeqCst) + 1)
    }

    /// Answers `q` for `actor` with depth `min(k, interface k)`.
    pub fn answer(
        &self,
        actor: ActorId,
        q: &Query,
        k: Option<usize>,
    ) -> Result<RankedAnswer, EngineError> {
        self.check_query(q)?;
        let now = self.charge(actor, false)?;
        let k = k.map_or(self.cfg.k, |k| k.clamp(1, self.cfg.k));
        let state = self.state.read();
        Ok(top_k(&state, q, self.ranking.as_ref(), self.policy, k, now))
    }

    pub fn insert(&self, actor: ActorId, values: Vec<Value>) -> Result<TupleId, EngineError> {
        if !self.cfg.insertion_allowed {
            return Err(EngineError::InsertionForbidden);
        }
        let mut state = self.state.write();
        state.db.schema().validate_values(&values)?;
        let now = self.charge(actor, true)?;
        let id = state.db.insert(values, Provenance::Inserted)?;
        if let Some(delay) = self.cfg.insertion_delay {
            state.hidden_until.insert(id, now + delay);
        }
        self.ledgers
            .lock()
            .entry(actor)
            .or_default()
            .tuples_inserted += 1;
        Ok(id)
    }

    /// Unmetered insert, visible immediately.
    pub fn admin_insert(
        &self,
        values: Vec<Value>,
        provenance: Provenance,
    ) -> Result<TupleId, EngineError> {
        Ok(self.state.write().db.insert(values, provenance)?)
    }

    pub fn admin_remove(&self, id: TupleId) -> Result<(), EngineError> {
        let mut state = self.state.write();
        state.hidden_until.remove(&id);
        state.db.remove(id)?;
        Ok(())
    }

    pub fn admin_update(&self, id: TupleId, values: Vec<Value>) -> Result<(), EngineError> {
        Ok(self.state.write().db.update(id, values)?)
    }

    /// Answer without metering or delay, for tests and the oracle cross-check.
    pub fn peek(&self, q: &Query, k: usize) -> RankedAnswer {
        let state = self.state.read();
        top_k(&state, q, self.ranking.as_ref(), self.policy, k, u64::MAX)
    }
}

fn top_k(
    state: &State,
    q: &Query,
    ranking: &dyn RankingFunction,
    policy: TieBreakPolicy,
    k: usize,
    now: u64,
) -> RankedAnswer {
    let db = &state.db;
    let mut keys: Vec<(RankKey, usize)> = db
        .tuples()
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            state
                .hidden_until
                .get(&t.id)
                .is_none_or(|&until| now > until)
        })
        .map(|(i, t)| (RankKey::of(t, q, ranking, policy), i))
        .collect();
    let cmp = |a: &(RankKey, usize), b: &(RankKey, usize)| a.0.cmp(&b.0);
    if keys.len() > k {
        keys.select_nth_unstable_by(k - 1, cmp);
        keys.truncate(k);
    }
    keys.sort_unstable_by(cmp);
    RankedAnswer {
        entries: keys
            .into_iter()
            .map(|(_, i)| project_public(&db.tuples()[i], db.schema()))
            .collect(),
        k,
    }
}

/// What an adversary can do: read the schema, search, insert.
pub trait SearchInterface {
    fn schema(&self) -> &Schema;
    /// Interface depth k.
    fn depth(&self) -> usize;
    fn query_kind(&self) -> QueryKind;
    fn search(&mut self, q: &Query) -> Result<RankedAnswer, EngineError>;
    fn insert(&mut self, values: &[Value]) -> Result<TupleId, EngineError>;
}

/// In-process actor bound to a shared engine.
#[derive(Clone)]
pub struct EngineSession {
    engine: Arc<Engine>,
    actor: ActorId,
    schema: Schema,
}

impl EngineSession {
    pub fn actor(&self) -> ActorId {
        self.actor
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn ledger(&self) -> BudgetLedger {
        self.engine.ledger(self.actor)
    }
}

impl SearchInterface for EngineSession {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn depth(&self) -> usize {
        self.engine.cfg.k
    }

    fn query_kind(&self) -> QueryKind {
        self.engine.cfg.query_kind
    }

    fn search(&mut self, q: &Query) -> Result<RankedAnswer, EngineError> {
        self.engine.answer(self.actor, q, None)
    }

    fn insert(&mut self, values: &[Value]) -> Result<TupleId, EngineError> {
        self.engine.insert(self.actor, values.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{total_order, LinearRanking, RankingWeights};

    fn engine(rows: Vec<Vec<u32>>, cfg: InterfaceConfig) -> Arc<Engine> {
        let s = Schema::binary(2, 2).unwrap();
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect();
        let db = Database::from_rows(s.clone(), rows).unwrap();
        Arc::new(Engine::new(
            db,
            Arc::new(LinearRanking::new(RankingWeights::unit(&s))),
            TieBreakPolicy::ById,
            cfg,
        ))
    }

    #[test]
    fn full_match_comes_first() {
        let e = engine(
            vec![vec![0, 0, 0, 0], vec![1, 0, 1, 1], vec![0, 1, 1, 0]],
            InterfaceConfig::default(),
        );
        let mut s = e.session();
        let a = s.search(&Query::point_u32(&[1, 0, 1, 1])).unwrap();
        assert_eq!(a.top(), Some(TupleId(1)));
        assert_eq!(s.ledger().queries_issued, 1);
    }

    #[test]
    fn in_predicate_refused_on_point_interface() {
        let e = engine(vec![vec![0, 0, 0, 0]], InterfaceConfig::point_only(1));
        let s = Schema::binary(2, 2).unwrap();
        let mut sess = e.session();
        assert_eq!(
            sess.search(&Query::star(&s)),
            Err(EngineError::UnsupportedPredicate)
        );
        assert_eq!(sess.ledger().queries_issued, 0);
    }

    #[test]
    fn k_at_least_n_lists_everything_in_order() {
        let rows = vec![
            vec![0, 0, 0, 0],
            vec![1, 1, 1, 1],
            vec![0, 1, 0, 1],
            vec![1, 0, 0, 0],
        ];
        let e = engine(rows, InterfaceConfig::in_allowed(10));
        let q = Query::point_u32(&[1, 1, 0, 0]);
        let a = e.session().search(&q).unwrap();
        let db = e.snapshot();
        let order = total_order(&db, &q, e.ranking().as_ref(), TieBreakPolicy::ById);
        assert_eq!(a.ids().collect::<Vec<_>>(), order);
    }

    #[test]
    fn rate_limit_refuses_sixth_request() {
        let cfg = InterfaceConfig {
            rate_limit: Some(5),
            ..InterfaceConfig::default()
        };
        let e = engine(vec![vec![0, 0, 0, 0]], cfg);
        let mut s = e.session();
        let q = Query::point_u32(&[0, 0, 0, 0]);
        for _ in 0..5 {
            s.search(&q).unwrap();
        }
        assert_eq!(s.search(&q), Err(EngineError::RateLimitExceeded));
        assert_eq!(s.ledger().queries_issued, 5);
        // Other actors have their own budget.
        assert!(e.session().search(&q).is_ok());
    }

    #[test]
    fn insertion_gate_and_duplicates() {
        let e = engine(
            vec![vec![0, 0, 0, 0]],
            InterfaceConfig::default().without_insertion(),
        );
        assert_eq!(
            e.session().insert(&[Some(1); 4]),
            Err(EngineError::InsertionForbidden)
        );
        let e = engine(vec![vec![0, 0, 0, 0]], InterfaceConfig::default());
        let mut s = e.session();
        assert_eq!(s.insert(&[Some(0); 4]), Err(EngineError::DuplicateTuple));
        assert_eq!(s.insert(&[Some(1); 4]), Ok(TupleId(1)));
        let l = s.ledger();
        assert_eq!((l.inserts_attempted, l.tuples_inserted), (2, 1));
    }

    #[test]
    fn delayed_insert_stays_hidden() {
        let cfg = InterfaceConfig {
            insertion_delay: Some(2),
            ..InterfaceConfig::default()
        };
        let e = engine(vec![vec![0, 0, 0, 0]], cfg);
        let mut s = e.session();
        let id = s.insert(&[Some(1); 4]).unwrap();
        let q = Query::point_u32(&[1, 1, 1, 1]);
        assert_ne!(s.search(&q).unwrap().top(), Some(id));
        assert_ne!(s.search(&q).unwrap().top(), Some(id));
        assert_eq!(s.search(&q).unwrap().top(), Some(id));
    }

    #[test]
    fn requested_depth_is_capped() {
        let e = engine(
            vec![vec![0, 0, 0, 0], vec![1, 1, 1, 1], vec![0, 1, 0, 1]],
            InterfaceConfig::in_allowed(2),
        );
        let a = e
            .answer(e.register_actor(), &Query::point_u32(&[0; 4]), Some(9))
            .unwrap();
        assert_eq!((a.k, a.entries.len()), (2, 2));
        let a = e
            .answer(e.register_actor(), &Query::point_u32(&[0; 4]), Some(1))
            .unwrap();
        assert_eq!(a.entries.len(), 1);
    }
}
