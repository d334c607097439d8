//! TCP front end for an [`Engine`] speaking newline-delimited JSON, and a
//! client that exposes a served engine as a [`SearchInterface`].
//!
//! Every connection is its own actor, so rate limits and budgets apply per
//! connection. Each connection is handled on its own thread.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;
use rankleak::engine::{Engine, EngineError, QueryKind, SearchInterface};
use rankleak::model::{Query, RankedAnswer, Schema, TupleId, Value};
use rankleak::protocol::{decode_reply, encode_request, handle_line, Reply, Request};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Shared {
    stopping: AtomicBool,
    next_conn: AtomicU64,
    /// Open connections, kept so shutdown can unblock their readers.
    conns: Mutex<HashMap<u64, TcpStream>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

/// A running server. Dropping it shuts the server down.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Mutex<Option<JoinHandle<()>>>,
}

/// Starts serving `engine` on `addr` (port 0 picks a free port).
pub fn serve(
    engine: Arc<Engine>,
    addr: impl ToSocketAddrs + std::fmt::Debug,
) -> Result<ServerHandle, ServerError> {
    let shown = format!("{addr:?}");
    let listener = TcpListener::bind(addr).map_err(|source| ServerError::Bind {
        addr: shown,
        source,
    })?;
    let local = listener.local_addr()?;
    let shared = Arc::new(Shared {
        stopping: AtomicBool::new(false),
        next_conn: AtomicU64::new(0),
        conns: Mutex::new(HashMap::new()),
        workers: Mutex::new(Vec::new()),
    });
    let acceptor = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("rankleak-accept".into())
            .spawn(move || accept_loop(listener, engine, shared))?
    };
    log::info!("serving on {local}");
    Ok(ServerHandle {
        addr: local,
        shared,
        acceptor: Mutex::new(Some(acceptor)),
    })
}

fn accept_loop(listener: TcpListener, engine: Arc<Engine>, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let id = shared.next_conn.fetch_add(1, Ordering::SeqCst);
        match stream.try_clone() {
            Ok(c) => {
                shared.conns.lock().insert(id, c);
            }
            Err(e) => {
                log::warn!("dropping connection: {e}");
                continue;
            }
        }
        let engine = Arc::clone(&engine);
        let conn_shared = Arc::clone(&shared);
        let worker = thread::Builder::new()
            .name(format!("rankleak-conn-{id}"))
            .spawn(move || {
                if let Err(e) = handle_connection(stream, &engine) {
                    log::debug!("connection {id} closed: {e}");
                }
                conn_shared.conns.lock().remove(&id);
            });
        match worker {
            Ok(h) => {
                let mut workers = shared.workers.lock();
                workers.retain(|w| !w.is_finished());
                workers.push(h);
            }
            Err(e) => {
                log::warn!("cannot spawn connection thread: {e}");
                shared.conns.lock().remove(&id);
            }
        }
    }
}

fn handle_connection(stream: TcpStream, engine: &Engine) -> io::Result<()> {
    let actor = engine.register_actor();
    let peer = stream.peer_addr()?;
    log::debug!("{peer} connected as actor {}", actor.0);
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = handle_line(engine, actor, &line);
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
    }
    Ok(())
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes every connection and joins all threads.
    /// Later calls do nothing.
    pub fn shutdown(&self) {
        let Some(acceptor) = self.acceptor.lock().take() else {
            return;
        };
        self.shared.stopping.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        let _ = acceptor.join();
        for (_, c) in self.shared.conns.lock().drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
        let workers: Vec<_> = self.shared.workers.lock().drain(..).collect();
        for w in workers {
            let _ = w.join();
        }
        log::info!("server on {} stopped", self.addr);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// One request/reply line stream.
struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Conn {
    fn raw(&mut self, line: &str) -> Result<String, EngineError> {
        self.writer.write_all(line.as_bytes()).map_err(transport)?;
        self.writer.write_all(b"\n").map_err(transport)?;
        let mut reply = String::new();
        let n = self.reader.read_line(&mut reply).map_err(transport)?;
        if n == 0 {
            return Err(EngineError::Transport(
                "server closed the connection".into(),
            ));
        }
        while reply.ends_with('\n') || reply.ends_with('\r') {
            reply.pop();
        }
        Ok(reply)
    }

    fn request(&mut self, req: &Request) -> Result<Reply, EngineError> {
        let line = self.raw(&encode_request(req))?;
        decode_reply(&line)
    }
}

/// Client side of the wire protocol.
pub struct WireClient {
    conn: Conn,
    schema: Schema,
    k: usize,
    query_kind: QueryKind,
    insertion_allowed: bool,
}

impl WireClient {
    /// Connects and fetches the schema and interface description.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, EngineError> {
        let stream = TcpStream::connect(addr).map_err(transport)?;
        stream.set_nodelay(true).map_err(transport)?;
        let mut conn = Conn {
            writer: stream.try_clone().map_err(transport)?,
            reader: BufReader::new(stream),
        };
        let reply = conn.request(&Request::Schema)?;
        let missing = |what: &str| EngineError::Transport(format!("schema reply without {what}"));
        Ok(Self {
            schema: reply.schema.ok_or_else(|| missing("schema"))?,
            k: reply.k.ok_or_else(|| missing("k"))?,
            query_kind: reply.query_kind.ok_or_else(|| missing("query_kind"))?,
            insertion_allowed: reply
                .insertion_allowed
                .ok_or_else(|| missing("insertion_allowed"))?,
            conn,
        })
    }

    pub fn insertion_allowed(&self) -> bool {
        self.insertion_allowed
    }

    /// Sends one raw line and returns the raw reply line without its newline.
    pub fn raw(&mut self, line: &str) -> Result<String, EngineError> {
        self.conn.raw(line)
    }

    pub fn request(&mut self, req: &Request) -> Result<Reply, EngineError> {
        self.conn.request(req)
    }
}

fn transport(e: io::Error) -> EngineError {
    EngineError::Transport(e.to_string())
}

impl SearchInterface for WireClient {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn depth(&self) -> usize {
        self.k
    }

    fn query_kind(&self) -> QueryKind {
        self.query_kind
    }

    fn search(&mut self, q: &Query) -> Result<RankedAnswer, EngineError> {
        let reply = self.request(&Request::Query {
            predicates: q.predicates().to_vec(),
            k: None,
        })?;
        let entries = reply
            .entries
            .ok_or_else(|| EngineError::Transport("query reply without entries".into()))?;
        Ok(RankedAnswer { entries, k: self.k })
    }

    fn insert(&mut self, values: &[Value]) -> Result<TupleId, EngineError> {
        let reply = self.request(&Request::Insert {
            values: values.to_vec(),
        })?;
        reply
            .id
            .ok_or_else(|| EngineError::Transport("insert reply without id".into()))
    }
}
