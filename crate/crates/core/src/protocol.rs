//! Newline-delimited JSON messages.
//!
//! Requests:
//! `{"op":"query","predicates":[[..],..],"k":1}`, `{"op":"insert","values":[..]}`,
//! `{"op":"schema"}`.
//! Responses always carry `"ok"`; failures carry an `"error"` code.

use serde::{Deserialize, Serialize};

use crate::engine::{ActorId, Engine, EngineError, QueryKind};
use crate::model::{PublicProjection, Query, RankedAnswer, Schema, TupleId, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Query {
        predicates: Vec<Vec<u32>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    Insert {
        values: Vec<Value>,
    },
    Schema,
}

#[derive(Serialize)]
struct EntriesReply<'a> {
    ok: bool,
    entries: &'a [PublicProjection],
}

#[derive(Serialize)]
struct InsertReply {
    ok: bool,
    id: TupleId,
}

#[derive(Serialize)]
struct SchemaReply<'a> {
    ok: bool,
    schema: &'a Schema,
    k: usize,
    query_kind: QueryKind,
    insertion_allowed: bool,
}

#[derive(Serialize)]
struct ErrorReply<'a> {
    ok: bool,
    error: &'a str,
}

/// Any response, as decoded by a client.
#[derive(Debug, Clone, Deserialize)]
pub struct Reply {
    pub ok: bool,
    #[serde(default)]
    pub entries: Option<Vec<PublicProjection>>,
    #[serde(default)]
    pub id: Option<TupleId>,
    #[serde(default)]
    pub schema: Option<Schema>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub query_kind: Option<QueryKind>,
    #[serde(default)]
    pub insertion_allowed: Option<bool>,
    #[serde(default)]
    pub error: Option<String>,
}

impl Reply {
    pub fn into_result(self) -> Result<Self, EngineError> {
        if self.ok {
            Ok(self)
        } else {
            Err(EngineError::from_code(self.error.as_deref().unwrap_or("")))
        }
    }
}

pub fn encode_request(req: &Request) -> String {
    serde_json::to_string(req).expect("requests always serialize")
}

pub fn encode_answer(answer: &RankedAnswer) -> String {
    to_line(&EntriesReply {
        ok: true,
        entries: &answer.entries,
    })
}

pub fn encode_error(err: &EngineError) -> String {
    to_line(&ErrorReply {
        ok: false,
        error: err.code(),
    })
}

fn to_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("replies always serialize")
}

/// Executes one request line for `actor` and returns the reply line
/// (without the trailing newline).
pub fn handle_line(engine: &Engine, actor: ActorId, line: &str) -> String {
    let req: Request = match serde_json::from_str(line.trim()) {
        Ok(r) => r,
        Err(e) => return encode_error(&EngineError::BadRequest(e.to_string())),
    };
    handle_request(engine, actor, req)
}

pub fn handle_request(engine: &Engine, actor: ActorId, req: Request) -> String {
    match req {
        Request::Query { predicates, k } => {
            if k == Some(0) {
                return encode_error(&EngineError::BadRequest("k must be positive".into()));
            }
            let schema = engine.schema();
            let q = match Query::new(&schema, predicates) {
                Ok(q) => q,
                Err(e) => return encode_error(&EngineError::from(e)),
            };
            match engine.answer(actor, &q, k) {
                Ok(a) => encode_answer(&a),
                Err(e) => encode_error(&e),
            }
        }
        Request::Insert { values } => match engine.insert(actor, values) {
            Ok(id) => to_line(&InsertReply { ok: true, id }),
            Err(e) => encode_error(&e),
        },
        Request::Schema => {
            let cfg = engine.config();
            to_line(&SchemaReply {
                ok: true,
                schema: &engine.schema(),
                k: cfg.k,
                query_kind: cfg.query_kind,
                insertion_allowed: cfg.insertion_allowed,
            })
        }
    }
}

pub fn decode_reply(line: &str) -> Result<Reply, EngineError> {
    serde_json::from_str::<Reply>(line)
        .map_err(|e| EngineError::Transport(format!("undecodable reply: {e}")))?
        .into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::InterfaceConfig;
    use crate::model::Database;
    use crate::ranking::{LinearRanking, RankingWeights, TieBreakPolicy};
    use std::sync::Arc;

    fn engine(cfg: InterfaceConfig) -> Engine {
        let s = Schema::binary(1, 1).unwrap();
        let db = Database::from_rows(
            s.clone(),
            vec![vec![Some(0), Some(1)], vec![Some(1), Some(0)]],
        )
        .unwrap();
        Engine::new(
            db,
            Arc::new(LinearRanking::new(RankingWeights::unit(&s))),
            TieBreakPolicy::ById,
            cfg,
        )
    }

    #[test]
    fn query_reply_has_only_ids_and_publics() {
        let e = engine(InterfaceConfig::in_allowed(2));
        let a = e.register_actor();
        let out = handle_line(&e, a, r#"{"op":"query","predicates":[[1],[0,1]],"k":2}"#);
        assert_eq!(
            out,
            r#"{"ok":true,"entries":[{"id":1,"public":[1]},{"id":0,"public":[0]}]}"#
        );
    }

    #[test]
    fn error_codes() {
        let e = engine(InterfaceConfig::point_only(1).without_insertion());
        let a = e.register_actor();
        assert_eq!(
            handle_line(&e, a, r#"{"op":"insert","values":[1,1]}"#),
            r#"{"ok":false,"error":"insertion_forbidden"}"#
        );
        assert_eq!(
            handle_line(&e, a, r#"{"op":"query","predicates":[[0,1],[0]]}"#),
            r#"{"ok":false,"error":"unsupported_predicate"}"#
        );
        assert_eq!(
            handle_line(&e, a, "not json"),
            r#"{"ok":false,"error":"bad_request"}"#
        );
        assert_eq!(
            handle_line(&e, a, r#"{"op":"query","predicates":[[5],[0]]}"#),
            r#"{"ok":false,"error":"bad_request"}"#
        );
    }

    #[test]
    fn schema_reply_roundtrips() {
        let e = engine(InterfaceConfig::in_allowed(3));
        let out = handle_line(&e, e.register_actor(), r#"{"op":"schema"}"#);
        let r = decode_reply(&out).unwrap();
        assert_eq!(r.k, Some(3));
        assert_eq!(r.schema.unwrap().m(), 1);
        assert_eq!(r.query_kind, Some(QueryKind::InAllowed));
    }

    #[test]
    fn request_encoding_roundtrips() {
        let req = Request::Query {
            predicates: vec![vec![0], vec![0, 1]],
            k: Some(2),
        };
        let line = encode_request(&req);
        assert_eq!(serde_json::from_str::<Request>(&line).unwrap(), req);
    }
}
