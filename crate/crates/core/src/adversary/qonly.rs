//! Query-only attacks.
//!
//! Both attacks issue sibling groups: queries identical except for the
//! target attribute's point value. Within a group, a sibling that lists the
//! victim and a sibling in which the victim gets overtaken form a
//! differential pair excluding the second sibling's value.

use std::collections::{HashMap, HashSet};

use itertools::Itertools;
use rand_chacha::ChaCha8Rng;

use super::findq::{find_q, QueryHistory};
use super::{
    overtaken, Algorithm, AttackOptions, AttackOutcome, AttackState, Ending, Goal, Halt, Probe,
    VictimKnowledge, Witness,
};
use crate::engine::SearchInterface;
use crate::model::{Query, RankedAnswer, Schema};

/// Q-only attack over a point-query interface.
pub fn q_point(
    iface: &mut dyn SearchInterface,
    vk: &VictimKnowledge,
    target: usize,
    seed: u64,
    opts: AttackOptions,
) -> AttackOutcome {
    super::run_attack(
        Algorithm::QPoint,
        iface,
        vk,
        Goal::Target(target),
        seed,
        opts,
    )
}

/// Q-only attack over an IN-query interface.
pub fn q_in(
    iface: &mut dyn SearchInterface,
    vk: &VictimKnowledge,
    target: usize,
    seed: u64,
    opts: AttackOptions,
) -> AttackOutcome {
    super::run_attack(Algorithm::QIn, iface, vk, Goal::Target(target), seed, opts)
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    items.iter().copied().combinations(k).collect()
}

struct QOnly<'p, 'a> {
    probe: &'p mut Probe<'a>,
    vk: VictimKnowledge,
    schema: Schema,
    st: AttackState,
    /// Schema index of the attribute under attack.
    attr: usize,
    j: usize,
    /// Group key -> whether some sibling listed the victim.
    groups: HashMap<Query, bool>,
}

impl QOnly<'_, '_> {
    fn group_key(&self, q: &Query) -> Query {
        q.with_point(self.attr, 0)
    }

    fn resolved(&self) -> bool {
        self.st.ledger[self.j].is_resolved()
    }

    /// Issues the unexcluded siblings of `q` and records exclusions.
    /// Returns whether any sibling listed the victim.
    fn siblings(&mut self, q: &Query) -> Result<bool, Halt> {
        let key = self.group_key(q);
        if let Some(&present) = self.groups.get(&key) {
            return Ok(present);
        }
        let v = self.vk.id;
        let mut issued: Vec<(u32, Query, RankedAnswer)> = Vec::new();
        for x in self.st.ledger[self.j].remaining() {
            let qx = q.with_point(self.attr, x);
            let a = self.probe.search_cached(&qx)?;
            issued.push((x, qx, a));
        }
        let present = issued.iter().any(|(_, _, a)| a.contains(v));
        for (_, qy, ay) in issued.iter().filter(|(_, _, a)| a.contains(v)) {
            for (x, qx, ax) in &issued {
                if qx != qy && overtaken(ay, ax, v) {
                    self.st.ledger[self.j].exclude(
                        *x,
                        Witness {
                            q: qy.predicates().to_vec(),
                            q_prime: qx.predicates().to_vec(),
                            inserts_before: 0,
                        },
                    );
                }
            }
        }
        self.groups.insert(key, present);
        Ok(present)
    }

    /// Finds a seed listing the victim, resuming the shared history.
    fn seed(
        &mut self,
        history: &mut QueryHistory,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Query>, Halt> {
        let v = self.vk.id;
        let mut accept = |a: &RankedAnswer| a.contains(v);
        match find_q(self.probe, &self.vk, history, rng, &mut accept) {
            Ok((found, draws)) => {
                self.st.find_draws += draws;
                if found.is_some() {
                    self.st.mark_first_find(self.probe);
                }
                Ok(found.map(|(q, _)| q))
            }
            Err((h, draws)) => {
                self.st.find_draws += draws;
                Err(h)
            }
        }
    }

    /// Breadth-first revision tree around `seed`. Level L holds queries that
    /// differ from the seed on exactly L non-target attributes. A query none
    /// of whose siblings lists the victim prunes every descendant that only
    /// additionally moves public attributes.
    fn point_tree(&mut self, seed: &Query) -> Result<(), Halt> {
        let revisable: Vec<usize> = (0..self.schema.arity())
            .filter(|&i| i != self.attr)
            .collect();
        let mut pruned: Vec<(Query, Vec<usize>)> = Vec::new();
        for level in 1..=revisable.len() {
            for set in combinations(&revisable, level) {
                let alternatives: Vec<Vec<u32>> = set
                    .iter()
                    .map(|&a| {
                        let keep = seed.point_value(a).unwrap_or(0);
                        (0..self.schema.domain_size(a) as u32)
                            .filter(|&x| x != keep)
                            .collect()
                    })
                    .collect();
                for values in alternatives
                    .iter()
                    .map(|alt| alt.iter().copied())
                    .multi_cartesian_product()
                {
                    let mut q = seed.clone();
                    for (&a, &x) in set.iter().zip(&values) {
                        q.set_point(a, x);
                    }
                    let skip = pruned.iter().any(|(pq, pset)| {
                        pset.len() < set.len()
                            && pset
                                .iter()
                                .all(|a| set.contains(a) && pq.predicate(*a) == q.predicate(*a))
                            && set
                                .iter()
                                .filter(|a| !pset.contains(a))
                                .all(|&a| self.schema.is_public(a))
                    });
                    if skip {
                        continue;
                    }
                    let present = self.siblings(&q)?;
                    if self.resolved() {
                        return Ok(());
                    }
                    if !present {
                        pruned.push((q, set.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Widens public predicates to their full domains, over attribute sets of
    /// growing size. A set is tried only if each of its maximal proper
    /// subsets still had a sibling listing the victim.
    fn widen(&mut self, seed: &Query) -> Result<(), Halt> {
        let publics: Vec<usize> = self.schema.public_indices().collect();
        let mut alive: HashSet<Vec<usize>> = HashSet::new();
        alive.insert(Vec::new());
        for size in 1..=publics.len() {
            for set in combinations(&publics, size) {
                let parents_alive = (0..set.len()).all(|drop| {
                    let mut sub = set.clone();
                    sub.remove(drop);
                    alive.contains(&sub)
                });
                if !parents_alive {
                    continue;
                }
                let mut q = seed.clone();
                for &a in &set {
                    q.set(a, (0..self.schema.domain_size(a) as u32).collect());
                }
                let present = self.siblings(&q)?;
                if self.resolved() {
                    return Ok(());
                }
                if present {
                    alive.insert(set);
                }
            }
        }
        Ok(())
    }

    fn attack_one(
        &mut self,
        in_mode: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<&'static str>, Halt> {
        let mut history = QueryHistory::new();
        self.groups.clear();
        loop {
            if self.resolved() {
                return Ok(None);
            }
            let Some(seed) = self.seed(&mut history, rng)? else {
                return Ok(Some("exhausted"));
            };
            self.siblings(&seed)?;
            if self.resolved() {
                return Ok(None);
            }
            if in_mode {
                self.widen(&seed)?;
            } else {
                self.point_tree(&seed)?;
            }
        }
    }
}

pub(crate) fn run(
    probe: &mut Probe,
    vk: &VictimKnowledge,
    algorithm: Algorithm,
    goal: Goal,
    rng: &mut ChaCha8Rng,
) -> Ending {
    let schema = probe.schema().clone();
    let st = AttackState::new(algorithm, goal, &schema);
    let targets = st.goal_attrs();
    let mut q = QOnly {
        probe,
        vk: vk.clone(),
        attr: 0,
        j: 0,
        schema,
        st,
        groups: HashMap::new(),
    };
    let mut reason = "exhausted";
    for j in targets {
        q.j = j;
        q.attr = q.schema.private_index(j);
        match q.attack_one(algorithm == Algorithm::QIn, rng) {
            Ok(None) => {}
            Ok(Some(r)) => reason = r,
            Err(h) => return Ending::Halted(q.st, h),
        }
    }
    let status = q.st.final_status(reason);
    Ending::Done(q.st, status)
}
