use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use rankleak::engine::{Engine, InterfaceConfig};
use rankleak::model::{Database, ModelError, Provenance, Query, Schema, Value};
use rankleak::oracle::exhaustive_topk;
use rankleak::protocol::encode_answer;
use rankleak::ranking::{LinearRanking, RankingWeights, TieBreakPolicy};

const PUBLIC: [usize; 2] = [2, 3];
const PRIVATE: [usize; 2] = [2, 3];

fn schema() -> Schema {
    Schema::with_domains(&PUBLIC, &PRIVATE).unwrap()
}

fn row() -> impl Strategy<Value = Vec<Value>> {
    let cells: Vec<BoxedStrategy<Value>> = PUBLIC
        .iter()
        .chain(PRIVATE.iter())
        .map(|&d| (0..d as u32).prop_map(Some).boxed())
        .collect();
    cells
}

fn predicate(d: usize) -> impl Strategy<Value = Vec<u32>> {
    proptest::sample::subsequence((0..d as u32).collect::<Vec<_>>(), 1..=d)
}

fn query() -> impl Strategy<Value = Vec<Vec<u32>>> {
    let preds: Vec<BoxedStrategy<Vec<u32>>> = PUBLIC
        .iter()
        .chain(PRIVATE.iter())
        .map(|&d| predicate(d).boxed())
        .collect();
    preds
}

fn weights() -> impl Strategy<Value = RankingWeights> {
    (
        proptest::collection::vec(0.05f64..4.0, PUBLIC.len()),
        proptest::collection::vec(0.05f64..4.0, PRIVATE.len()),
    )
        .prop_map(|(p, q)| RankingWeights::new(p, q).unwrap())
}

fn policy() -> impl Strategy<Value = TieBreakPolicy> {
    prop_oneof![
        Just(TieBreakPolicy::ById),
        Just(TieBreakPolicy::InsertedFirst),
        Just(TieBreakPolicy::InsertedLast),
    ]
}

/// Inserts rows in order, skipping duplicates; every third row is marked inserted.
fn build(rows: &[Vec<Value>]) -> Database {
    let mut db = Database::new(schema());
    for (i, r) in rows.iter().enumerate() {
        let prov = if i % 3 == 2 {
            Provenance::Inserted
        } else {
            Provenance::BonaFide
        };
        match db.insert(r.clone(), prov) {
            Ok(_) | Err(ModelError::DuplicateTuple) => {}
            Err(e) => panic!("{e}"),
        }
    }
    db
}

proptest! {
    #[test]
    fn database_never_holds_duplicates(rows in proptest::collection::vec(row(), 1..40)) {
        let mut db = build(&rows);
        let distinct: HashSet<&Vec<Value>> = rows.iter().collect();
        prop_assert_eq!(db.n(), distinct.len());
        let again = rows[0].clone();
        prop_assert_eq!(db.insert(again, Provenance::Inserted), Err(ModelError::DuplicateTuple));
        let seen: HashSet<&Vec<Value>> = db.tuples().iter().map(|t| &t.values).collect();
        prop_assert_eq!(seen.len(), db.n());
    }

    #[test]
    fn engine_matches_exhaustive_sort(
        rows in proptest::collection::vec(row(), 1..30),
        preds in query(),
        w in weights(),
        policy in policy(),
        k in 1usize..6,
    ) {
        let db = build(&rows);
        let ranking = LinearRanking::new(w.clone());
        let engine = Engine::new(db.clone(), Arc::new(ranking.clone()), policy, InterfaceConfig::in_allowed(k));
        let q = Query::new(db.schema(), preds).unwrap();
        prop_assert_eq!(engine.peek(&q, k), exhaustive_topk(&db, &q, &ranking, policy, k));
    }

    #[test]
    fn answers_reveal_only_public_values(
        rows in proptest::collection::vec(row(), 1..30),
        preds in query(),
        k in 1usize..6,
    ) {
        let db = build(&rows);
        let s = schema();
        let engine = Arc::new(Engine::new(
            db.clone(),
            Arc::new(LinearRanking::new(RankingWeights::unit(&s))),
            TieBreakPolicy::ById,
            InterfaceConfig::in_allowed(k),
        ));
        let q = Query::new(&s, preds).unwrap();
        let answer = engine.peek(&q, k);
        prop_assert!(answer.entries.len() <= k);
        for e in &answer.entries {
            prop_assert_eq!(e.public.len(), s.m());
            let t = db.get(e.id).unwrap();
            prop_assert_eq!(&e.public[..], t.public(&s));
        }
        let json: serde_json::Value = serde_json::from_str(&encode_answer(&answer)).unwrap();
        for e in json["entries"].as_array().unwrap() {
            let keys: Vec<&String> = e.as_object().unwrap().keys().collect();
            prop_assert_eq!(keys, vec!["id", "public"]);
            prop_assert_eq!(e["public"].as_array().unwrap().len(), s.m());
        }
    }
}

#[test]
fn point_answers_are_ranked_by_score_then_tie_policy() {
    let s = schema();
    let mut db = Database::new(s.clone());
    let a = db
        .insert(
            vec![Some(0), Some(0), Some(1), Some(0)],
            Provenance::BonaFide,
        )
        .unwrap();
    let b = db
        .insert(
            vec![Some(0), Some(0), Some(0), Some(1)],
            Provenance::Inserted,
        )
        .unwrap();
    let q = Query::point_u32(&[0, 0, 0, 0]);
    let ranking = LinearRanking::new(RankingWeights::unit(&s));
    let ids = |p| {
        exhaustive_topk(&db, &q, &ranking, p, 2)
            .ids()
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(TieBreakPolicy::ById), vec![a, b]);
    assert_eq!(ids(TieBreakPolicy::InsertedFirst), vec![b, a]);
    assert_eq!(ids(TieBreakPolicy::InsertedLast), vec![a, b]);
}
