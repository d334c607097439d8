//! Query-and-insert attacks.
//!
//! A probe tuple `t` shares the victim's public values. Starting from a query
//! that lists `v` ahead of `t`, the walk narrows the predicates on which `t`
//! is not the sole member to `t`'s values one attribute at a time. Somewhere
//! `t` (or another tuple) must overtake `v`; that step is a differential pair
//! excluding `t`'s value on the narrowed attribute. The probe then moves to
//! the next unexcluded value and the loop repeats.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::findq::{find_q, QueryHistory};
use super::{
    overtaken, Algorithm, AttackOptions, AttackOutcome, AttackState, AttackStatus, Ending, Goal,
    Halt, Probe, Resolution, VictimKnowledge, Witness,
};
use crate::engine::SearchInterface;
use crate::model::{Query, RankedAnswer, Schema, TupleId, Value};

#[derive(Debug, Clone, Copy, Default)]
pub struct QiOptions {
    /// Stop (as budget exhaustion) after this many completed rounds.
    pub max_rounds: Option<usize>,
}

/// Q&I attack over a point-query interface.
pub fn qi_point(
    iface: &mut dyn SearchInterface,
    vk: &VictimKnowledge,
    target: usize,
    seed: u64,
    opts: AttackOptions,
) -> AttackOutcome {
    super::run_attack(
        Algorithm::QiPoint,
        iface,
        vk,
        Goal::Target(target),
        seed,
        opts,
    )
}

/// Q&I attack over an IN-query interface.
pub fn qi_in(
    iface: &mut dyn SearchInterface,
    vk: &VictimKnowledge,
    target: usize,
    seed: u64,
    opts: AttackOptions,
) -> AttackOutcome {
    super::run_attack(Algorithm::QiIn, iface, vk, Goal::Target(target), seed, opts)
}

/// Breadth-first point-fixing over private attributes: first all stars, then
/// every value of the first attribute in `order`, then every pair of values
/// of the first two, and so on. Resumes where it left off.
struct InFinder {
    order: Vec<usize>,
    sizes: Vec<u32>,
    level: usize,
    combo: Vec<u32>,
    started: bool,
}

impl InFinder {
    fn new(schema: &Schema, target: usize) -> Self {
        let first = schema.private_index(target);
        let mut order = vec![first];
        order.extend(schema.private_indices().filter(|&i| i != first));
        let sizes = order
            .iter()
            .map(|&i| schema.domain_size(i) as u32)
            .collect();
        Self {
            order,
            sizes,
            level: 0,
            combo: Vec::new(),
            started: false,
        }
    }

    fn next(&mut self, schema: &Schema, vk: &VictimKnowledge) -> Option<Query> {
        if !self.started {
            self.started = true;
        } else if !self.advance() {
            return None;
        }
        let mut q = Query::star(schema);
        for (i, v) in vk.public_values.iter().enumerate() {
            q.set_point(i, v.unwrap_or(0));
        }
        for (&attr, &val) in self.order.iter().zip(&self.combo) {
            q.set_point(attr, val);
        }
        Some(q)
    }

    fn advance(&mut self) -> bool {
        let mut i = self.level;
        while i > 0 {
            i -= 1;
            self.combo[i] += 1;
            if self.combo[i] < self.sizes[i] {
                return true;
            }
            self.combo[i] = 0;
        }
        if self.level == self.order.len() {
            return false;
        }
        self.level += 1;
        self.combo = vec![0; self.level];
        true
    }
}

enum Finder {
    Point(QueryHistory),
    In(InFinder),
}

struct Qi<'p, 'a, R: Rng> {
    probe: &'p mut Probe<'a>,
    vk: VictimKnowledge,
    schema: Schema,
    st: AttackState,
    finder: Finder,
    rng: &'p mut R,
    /// Private values of the probe, indexed by private position.
    t: Vec<u32>,
    probe_id: Option<TupleId>,
    /// Point queries that were accepted before, newest last. Probes only
    /// accumulate, so a rejected query is never worth re-issuing.
    found: Vec<Query>,
}

enum Step {
    Continue,
    Stop(AttackStatus),
}

impl<R: Rng> Qi<'_, '_, R> {
    fn t_values(&self) -> Vec<Value> {
        self.vk
            .public_values
            .iter()
            .copied()
            .chain(self.t.iter().map(|&x| Some(x)))
            .collect()
    }

    fn accepted(&self, a: &RankedAnswer) -> bool {
        let Some(rv) = a.rank_of(self.vk.id) else {
            return false;
        };
        match self.probe_id.and_then(|p| a.rank_of(p)) {
            Some(rt) => rt > rv,
            None => true,
        }
    }

    /// Finds a query listing the victim ahead of the current probe.
    fn find(&mut self) -> Result<Option<(Query, RankedAnswer)>, Halt> {
        let probe_id = self.probe_id;
        let v = self.vk.id;
        let mut accept = |a: &RankedAnswer| {
            let Some(rv) = a.rank_of(v) else { return false };
            probe_id.and_then(|p| a.rank_of(p)).is_none_or(|rt| rt > rv)
        };
        let found = match &mut self.finder {
            Finder::Point(history) => {
                while let Some(q) = self.found.pop() {
                    let a = self.probe.search(&q)?;
                    if accept(&a) {
                        self.found.push(q.clone());
                        return Ok(Some((q, a)));
                    }
                }
                let r = find_q(self.probe, &self.vk, history, self.rng, &mut accept);
                let (found, draws) = match r {
                    Ok(x) => x,
                    Err((h, draws)) => {
                        self.st.find_draws += draws;
                        return Err(h);
                    }
                };
                self.st.find_draws += draws;
                if let Some((q, _)) = &found {
                    self.found.push(q.clone());
                }
                found
            }
            Finder::In(f) => {
                let mut found = None;
                while let Some(q) = f.next(&self.schema, &self.vk) {
                    let a = self.probe.search(&q)?;
                    if accept(&a) {
                        found = Some((q, a));
                        break;
                    }
                }
                found
            }
        };
        if found.is_some() {
            self.st.mark_first_find(self.probe);
        }
        Ok(found)
    }

    /// Inserts the current probe. `Some(status)` when the insert proved `t = v`.
    fn place_probe(&mut self) -> Result<Option<AttackStatus>, Halt> {
        let values = self.t_values();
        match self.probe.insert(&values)? {
            Some(id) => self.probe_id = Some(id),
            None => {
                // Some tuple already holds t's values; the exact match names it.
                let a = self.probe.search(&Query::point(&values))?;
                let holder = a.top();
                if holder == Some(self.vk.id) {
                    for (j, l) in self.st.ledger.iter_mut().enumerate() {
                        l.resolution = Resolution::Inferred(self.t[j]);
                        l.by_identity = true;
                    }
                    return Ok(self.st.success_status());
                }
                self.probe_id = holder;
            }
        }
        Ok(None)
    }

    fn round(&mut self, current: &mut Option<Query>) -> Result<Step, Halt> {
        if let Some(s) = self.place_probe()? {
            return Ok(Step::Stop(s));
        }
        let start = match current.take() {
            Some(q) => {
                let a = self.probe.search(&q)?;
                if self.accepted(&a) {
                    Some((q, a))
                } else {
                    self.found.retain(|f| *f != q);
                    self.find()?
                }
            }
            None => self.find()?,
        };
        let Some((q0, a0)) = start else {
            return Ok(Step::Stop(self.st.final_status("no-query-found")));
        };
        let m = self.schema.m();
        let changed: Vec<usize> = self
            .schema
            .private_indices()
            .filter(|&i| q0.predicate(i) != [self.t[i - m]])
            .collect();
        let inserts_before = self.probe.inserted_count();
        let (mut prev_q, mut prev_a) = (q0, a0);
        let mut event = None;
        for &attr in changed.iter().rev() {
            let next_q = prev_q.with_point(attr, self.t[attr - m]);
            let next_a = self.probe.search(&next_q)?;
            if overtaken(&prev_a, &next_a, self.vk.id) {
                event = Some((attr, next_q));
                break;
            }
            prev_q = next_q;
            prev_a = next_a;
        }
        let Some((attr, next_q)) = event else {
            return Ok(Step::Stop(AttackStatus::Undetermined {
                reason: "probe-not-visible".into(),
            }));
        };
        let j = attr - m;
        let theta = self.t[j];
        let witness = Witness {
            q: prev_q.predicates().to_vec(),
            q_prime: next_q.predicates().to_vec(),
            inserts_before,
        };
        if !self.st.ledger[j].exclude(theta, witness) {
            return Ok(Step::Stop(self.st.final_status("no-progress")));
        }
        self.st.walk_rounds += 1;
        *current = Some(prev_q);
        match self.st.ledger[j].remaining().first() {
            Some(&next) => self.t[j] = next,
            None => return Ok(Step::Stop(self.st.final_status("possible-null"))),
        }
        Ok(Step::Continue)
    }
}

pub(crate) fn run(
    probe: &mut Probe,
    vk: &VictimKnowledge,
    algorithm: Algorithm,
    goal: Goal,
    rng: &mut ChaCha8Rng,
    opts: QiOptions,
) -> Ending {
    let schema = probe.schema().clone();
    let target = match goal {
        Goal::Target(j) => j,
        Goal::All => 0,
    };
    let finder = if algorithm == Algorithm::QiIn {
        Finder::In(InFinder::new(&schema, target))
    } else {
        Finder::Point(QueryHistory::new())
    };
    let mut qi = Qi {
        probe,
        vk: vk.clone(),
        st: AttackState::new(algorithm, goal, &schema),
        t: vec![0; schema.m_prime()],
        schema,
        finder,
        rng,
        probe_id: None,
        found: Vec::new(),
    };
    let mut current = None;
    if algorithm == Algorithm::QiIn {
        // The IN attack locates the victim before placing any probe.
        match qi.find() {
            Ok(Some((q, _))) => current = Some(q),
            Ok(None) => {
                let s = qi.st.final_status("no-query-found");
                return Ending::Done(qi.st, s);
            }
            Err(h) => return Ending::Halted(qi.st, h),
        }
    }
    loop {
        if qi.st.goal_met() {
            let s = qi.st.final_status("no-progress");
            return Ending::Done(qi.st, s);
        }
        if opts.max_rounds.is_some_and(|r| qi.st.walk_rounds >= r) {
            return Ending::Done(qi.st, AttackStatus::BudgetExhausted);
        }
        match qi.round(&mut current) {
            Ok(Step::Continue) => {}
            Ok(Step::Stop(s)) => return Ending::Done(qi.st, s),
            Err(h) => return Ending::Halted(qi.st, h),
        }
    }
}
