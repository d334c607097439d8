#![allow(dead_code)]

use std::sync::Arc;

use rankleak::adversary::{
    run_attack, Algorithm, AttackOptions, AttackOutcome, Goal, VictimKnowledge,
};
use rankleak::engine::{Engine, EngineSession, InterfaceConfig};
use rankleak::model::{Database, TupleId};
use rankleak::ranking::{LinearRanking, RankingWeights, TieBreakPolicy};

/// The interface an algorithm is designed for.
pub fn interface_for(algorithm: Algorithm, k: usize) -> InterfaceConfig {
    let cfg = if algorithm.uses_in() {
        InterfaceConfig::in_allowed(k)
    } else {
        InterfaceConfig::point_only(k)
    };
    if algorithm.inserts() {
        cfg
    } else {
        cfg.without_insertion()
    }
}

pub struct Run {
    pub outcome: AttackOutcome,
    pub session: EngineSession,
}

#[allow(clippy::too_many_arguments)]
pub fn attack(
    db: &Database,
    weights: &RankingWeights,
    policy: TieBreakPolicy,
    algorithm: Algorithm,
    k: usize,
    victim: TupleId,
    goal: Goal,
    seed: u64,
    opts: AttackOptions,
) -> Run {
    let engine = Arc::new(Engine::new(
        db.clone(),
        Arc::new(LinearRanking::new(weights.clone())),
        policy,
        interface_for(algorithm, k),
    ));
    let mut session = engine.session();
    let vk = VictimKnowledge::from_db(db, victim).expect("victim in db");
    let outcome = run_attack(algorithm, &mut session, &vk, goal, seed, opts);
    Run { outcome, session }
}
