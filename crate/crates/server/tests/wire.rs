use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankleak::adversary::{run_attack, Algorithm, AttackOptions, Goal, VictimKnowledge};
use rankleak::engine::{Engine, EngineError, InterfaceConfig, SearchInterface};
use rankleak::harness::gen_uniform_bool;
use rankleak::model::{Database, Query};
use rankleak::protocol::{encode_request, handle_line, Request};
use rankleak::ranking::{LinearRanking, RankingWeights, TieBreakPolicy};
use rankleak_server::{serve, ServerError, WireClient};

fn engine(db: &Database, cfg: InterfaceConfig) -> Arc<Engine> {
    Arc::new(Engine::new(
        db.clone(),
        Arc::new(LinearRanking::new(RankingWeights::unit(db.schema()))),
        TieBreakPolicy::ById,
        cfg,
    ))
}

fn toy() -> Database {
    gen_uniform_bool(20, 3, 2, 1).unwrap()
}

#[test]
fn answers_carry_only_ids_and_public_values() {
    let db = toy();
    let server = serve(engine(&db, InterfaceConfig::in_allowed(3)), "127.0.0.1:0").unwrap();
    let mut c = WireClient::connect(server.local_addr()).unwrap();
    assert_eq!(c.depth(), 3);
    assert_eq!(c.schema(), db.schema());
    let line = c
        .raw(&encode_request(&Request::Query {
            predicates: vec![vec![0], vec![1], vec![0, 1], vec![0], vec![1]],
            k: None,
        }))
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["ok"], true);
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        let keys: Vec<_> = e.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["id", "public"]);
        assert_eq!(e["public"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn sixth_request_under_a_limit_of_five_is_refused() {
    let db = toy();
    let cfg = InterfaceConfig {
        rate_limit: Some(5),
        ..InterfaceConfig::point_only(1)
    };
    let server = serve(engine(&db, cfg), "127.0.0.1:0").unwrap();
    let mut c = WireClient::connect(server.local_addr()).unwrap();
    let q = Query::point_u32(&[0, 0, 0, 0, 0]);
    for _ in 0..5 {
        c.search(&q).unwrap();
    }
    assert_eq!(c.search(&q), Err(EngineError::RateLimitExceeded));
    assert_eq!(
        c.raw(&encode_request(&Request::Query {
            predicates: q.predicates().to_vec(),
            k: None
        }))
        .unwrap(),
        r#"{"ok":false,"error":"rate_limited"}"#
    );
    // A new connection is a new actor with its own allowance.
    let mut other = WireClient::connect(server.local_addr()).unwrap();
    assert!(other.search(&q).is_ok());
}

#[test]
fn forbidden_inserts_and_bad_lines_get_error_replies() {
    let db = toy();
    let server = serve(
        engine(&db, InterfaceConfig::point_only(1).without_insertion()),
        "127.0.0.1:0",
    )
    .unwrap();
    let mut c = WireClient::connect(server.local_addr()).unwrap();
    assert!(!c.insertion_allowed());
    assert_eq!(
        c.insert(&[Some(0), Some(0), Some(0), Some(0), Some(0)]),
        Err(EngineError::InsertionForbidden)
    );
    let reply = c.raw("{not json").unwrap();
    assert!(
        reply.starts_with(r#"{"ok":false,"error":"bad_request""#),
        "{reply}"
    );
    let reply = c.raw(r#"{"op":"query","predicates":[[0]]}"#).unwrap();
    assert!(reply.contains("bad_request"));
    let star = Query::star(db.schema());
    assert_eq!(c.search(&star), Err(EngineError::UnsupportedPredicate));
    // Still usable after the errors.
    assert!(c.search(&Query::point_u32(&[1, 1, 1, 1, 1])).is_ok());
}

#[test]
fn shutdown_is_idempotent_and_closes_connections() {
    let db = toy();
    let server = serve(engine(&db, InterfaceConfig::point_only(1)), "127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let stream = TcpStream::connect(addr).unwrap();
    let mut w = stream.try_clone().unwrap();
    let mut r = BufReader::new(stream);
    w.write_all(b"{\"op\":\"schema\"}\n").unwrap();
    let mut line = String::new();
    r.read_line(&mut line).unwrap();
    assert!(line.contains("\"ok\":true"));
    server.shutdown();
    server.shutdown();
    line.clear();
    assert_eq!(r.read_line(&mut line).unwrap_or(0), 0);
    assert!(WireClient::connect(addr).is_err());
    drop(server);
}

#[test]
fn busy_address_is_a_bind_failure() {
    let db = toy();
    let a = serve(engine(&db, InterfaceConfig::point_only(1)), "127.0.0.1:0").unwrap();
    let b = serve(engine(&db, InterfaceConfig::point_only(1)), a.local_addr());
    assert!(matches!(b, Err(ServerError::Bind { .. })));
}

fn random_request(rng: &mut ChaCha8Rng, db: &Database) -> String {
    let s = db.schema();
    match rng.random_range(0..10) {
        0 => encode_request(&Request::Insert {
            values: (0..s.arity())
                .map(|i| Some(rng.random_range(0..s.domain_size(i) as u32)))
                .collect(),
        }),
        1 => "{\"op\":\"query\",\"predicates\":[[9]]}".into(),
        2 => encode_request(&Request::Schema),
        _ => encode_request(&Request::Query {
            predicates: (0..s.arity())
                .map(|i| {
                    let d = s.domain_size(i) as u32;
                    let mut p: Vec<u32> = (0..d).filter(|_| rng.random_bool(0.5)).collect();
                    if p.is_empty() {
                        p.push(rng.random_range(0..d));
                    }
                    p
                })
                .collect(),
            k: rng.random_bool(0.3).then(|| rng.random_range(1..5)),
        }),
    }
}

#[test]
fn served_replies_are_byte_identical_to_in_process_ones() {
    let db = toy();
    let cfg = InterfaceConfig::in_allowed(4);
    let local = engine(&db, cfg.clone());
    let actor = local.register_actor();
    let server = serve(engine(&db, cfg), "127.0.0.1:0").unwrap();
    let mut c = WireClient::connect(server.local_addr()).unwrap();
    // The client's schema request counts for neither side.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..300 {
        let line = random_request(&mut rng, &db);
        assert_eq!(
            c.raw(&line).unwrap(),
            handle_line(&local, actor, &line),
            "{line}"
        );
    }
}

#[test]
fn attacks_over_the_wire_match_in_process_runs() {
    let db = gen_uniform_bool(60, 4, 3, 5).unwrap();
    let victim = db.tuples()[11].id;
    let vk = VictimKnowledge::from_db(&db, victim).unwrap();
    for alg in Algorithm::ALL {
        let cfg = if alg.uses_in() {
            InterfaceConfig::in_allowed(1)
        } else {
            InterfaceConfig::point_only(1)
        };
        let cfg = if alg.inserts() {
            cfg
        } else {
            cfg.without_insertion()
        };
        let local = engine(&db, cfg.clone());
        let a = run_attack(
            alg,
            &mut local.session(),
            &vk,
            Goal::Target(0),
            3,
            AttackOptions::default(),
        );
        let server = serve(engine(&db, cfg), "127.0.0.1:0").unwrap();
        let mut c = WireClient::connect(server.local_addr()).unwrap();
        let b = run_attack(
            alg,
            &mut c,
            &vk,
            Goal::Target(0),
            3,
            AttackOptions::default(),
        );
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap(),
            "{alg}"
        );
    }
}
