use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rankleak::adversary::{
    run_attack, Algorithm, AttackOptions, AttackOutcome, AttackStatus, Goal, VictimKnowledge,
};
use rankleak::analysis::{estimate_all, InstanceStats};
use rankleak::engine::{Engine, InterfaceConfig, QueryKind, SearchInterface};
use rankleak::harness::{
    gen_uniform_bool, gen_zipf, load_csv, run_sweep, write_csv, write_schema, ExperimentConfig,
};
use rankleak::model::{Database, Schema, TupleId};
use rankleak::oracle::{feasible_values, DEFAULT_QUERY_BOUND};
use rankleak::ranking::{LinearRanking, RankingWeights, TieBreakPolicy};
use rankleak_server::{serve, WireClient};
use serde::Deserialize;

const EXIT_INTERNAL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_UNDETERMINED: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Parser)]
#[command(
    name = "rankleak",
    version,
    about = "Private-attribute inference against top-k ranked search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV plus schema JSON).
    Gen(GenArgs),
    /// Serve a dataset over newline-delimited JSON on TCP.
    Serve(ServeArgs),
    /// Attack one victim, in-process or against a running server.
    Attack(AttackArgs),
    /// Enumerate every query and print the feasible private values of a victim.
    OracleCheck(OracleArgs),
    /// Print the closed-form cost and success estimates for a victim.
    Estimate(EstimateArgs),
    /// Run a parameter sweep described by a JSON config.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    UniformBool,
    Zipf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    mprime: usize,
    #[arg(long, default_value_t = 10)]
    avg_domain: usize,
    #[arg(long, default_value_t = 2.0)]
    z: f64,
    #[arg(long)]
    seed: u64,
    /// CSV destination.
    #[arg(long)]
    out: PathBuf,
    /// Schema destination (default: next to the CSV as `<stem>.schema.json`).
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterfaceKind {
    Point,
    In,
}

#[derive(Clone, Copy, ValueEnum)]
enum TiePolicyArg {
    ById,
    InsertedFirst,
    InsertedLast,
}

impl From<TiePolicyArg> for TieBreakPolicy {
    fn from(p: TiePolicyArg) -> Self {
        match p {
            TiePolicyArg::ById => TieBreakPolicy::ById,
            TiePolicyArg::InsertedFirst => TieBreakPolicy::InsertedFirst,
            TiePolicyArg::InsertedLast => TieBreakPolicy::InsertedLast,
        }
    }
}

#[derive(Args)]
struct WeightArgs {
    /// JSON file `{"public": [...], "private": [...]}`; unit weights otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Overrides every private weight.
    #[arg(long)]
    private_weight: Option<f64>,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Query interface; defaults to what the algorithm needs.
    #[arg(long, value_enum)]
    interface: Option<InterfaceKind>,
    #[arg(long)]
    no_insert: bool,
    #[arg(long)]
    rate_limit: Option<u64>,
    #[arg(long)]
    insertion_delay: Option<u64>,
    #[arg(long, value_enum, default_value = "by-id")]
    tie_policy: TiePolicyArg,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// Attack a running server instead of an in-process engine. The data
    /// files then only supply the victim's public values.
    #[arg(long)]
    server: Option<String>,
    #[arg(long)]
    victim: u64,
    #[arg(long)]
    algo: Algorithm,
    #[arg(long)]
    budget: Option<u64>,
    /// Private attribute to infer, by name (e.g. B1).
    #[arg(long, conflicts_with = "all")]
    target: Option<String>,
    /// Infer every private attribute.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    seed: u64,
    /// Where to write the outcome JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    victim: u64,
    /// Refuse query spaces larger than this.
    #[arg(long, default_value_t = DEFAULT_QUERY_BOUND)]
    bound: u128,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long)]
    victim: u64,
    #[arg(long, default_value = "B1")]
    target: String,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the config's output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors that should exit with the usage code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RANKLEAK_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Attack(a) => cmd_attack(a),
        Command::OracleCheck(a) => cmd_oracle(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<Usage>() {
                EXIT_USAGE
            } else {
                EXIT_INTERNAL
            })
        }
    }
}

fn cmd_gen(a: GenArgs) -> Result<u8> {
    let db = match a.kind {
        GenKind::UniformBool => gen_uniform_bool(a.n, a.m, a.mprime, a.seed),
        GenKind::Zipf => gen_zipf(a.n, a.m, a.mprime, a.avg_domain, a.z, a.seed),
    }
    .map_err(|e| usage(e.to_string()))?;
    let schema_out = a.schema_out.unwrap_or_else(|| sidecar(&a.out));
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_csv(&db, file)?;
    write_schema(db.schema(), &schema_out)?;
    println!(
        "wrote {} tuples over {} public and {} private attributes to {} (schema {})",
        db.n(),
        db.schema().m(),
        db.schema().m_prime(),
        a.out.display(),
        schema_out.display()
    );
    Ok(0)
}

fn sidecar(csv: &Path) -> PathBuf {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv.with_file_name(format!("{stem}.schema.json"))
}

fn load(d: &DataArgs) -> Result<Database> {
    load_csv(&d.data, &d.schema)
        .map_err(|e| usage(format!("cannot load {}: {e}", d.data.display())))
}

#[derive(Deserialize)]
struct WeightFile {
    public: Vec<f64>,
    private: Vec<f64>,
}

fn weights(a: &WeightArgs, schema: &Schema) -> Result<RankingWeights> {
    let mut w = match &a.weights {
        None => RankingWeights::unit(schema),
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let f: WeightFile =
                serde_json::from_str(&text).map_err(|e| usage(format!("bad weights file: {e}")))?;
            RankingWeights::new(f.public, f.private).map_err(|e| usage(e.to_string()))?
        }
    };
    if let Some(x) = a.private_weight {
        w.private.iter_mut().for_each(|p| *p = x);
    }
    w.check_schema(schema).map_err(|e| usage(e.to_string()))?;
    Ok(w)
}

fn interface(a: &EngineArgs, default: QueryKind) -> Result<InterfaceConfig> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let query_kind = match a.interface {
        Some(InterfaceKind::Point) => QueryKind::PointOnly,
        Some(InterfaceKind::In) => QueryKind::InAllowed,
        None => default,
    };
    Ok(InterfaceConfig {
        k: a.k,
        query_kind,
        insertion_allowed: !a.no_insert,
        rate_limit: a.rate_limit,
        insertion_delay: a.insertion_delay,
    })
}

fn engine(db: Database, a: &EngineArgs, default: QueryKind) -> Result<Arc<Engine>> {
    let w = weights(&a.weights, db.schema())?;
    let cfg = interface(a, default)?;
    Ok(Arc::new(Engine::new(
        db,
        Arc::new(LinearRanking::new(w)),
        a.tie_policy.into(),
        cfg,
    )))
}

fn cmd_serve(a: ServeArgs) -> Result<u8> {
    let db = load(&a.data)?;
    let e = engine(db, &a.engine, QueryKind::InAllowed)?;
    let server = serve(e, a.addr.as_str())?;
    println!("listening on {}", server.local_addr());
    loop {
        std::thread::park();
    }
}

fn private_position(schema: &Schema, name: &str) -> Result<usize> {
    let idx = schema
        .index_of(name)
        .ok_or_else(|| usage(format!("no attribute named `{name}`")))?;
    if schema.is_public(idx) {
        return Err(usage(format!("`{name}` is public")));
    }
    Ok(idx - schema.m())
}

fn victim_id(db: &Database, v: u64) -> Result<TupleId> {
    let id = TupleId(v);
    db.get(id)
        .ok_or_else(|| usage(format!("no tuple with id {v}")))?;
    Ok(id)
}

fn cmd_attack(a: AttackArgs) -> Result<u8> {
    let db = load(&a.data)?;
    let victim = victim_id(&db, a.victim)?;
    let vk = VictimKnowledge::from_db(&db, victim).expect("victim exists");
    let goal = match (&a.target, a.all) {
        (_, true) => Goal::All,
        (Some(name), false) => Goal::Target(private_position(db.schema(), name)?),
        (None, false) => return Err(usage("give --target NAME or --all")),
    };
    let opts = AttackOptions {
        budget: a.budget,
        max_rounds: None,
    };
    let default_kind = if a.algo.uses_in() {
        QueryKind::InAllowed
    } else {
        QueryKind::PointOnly
    };
    let schema = db.schema().clone();
    let outcome = match &a.server {
        Some(addr) => {
            let mut client = WireClient::connect(addr.as_str())
                .map_err(|e| anyhow!("cannot reach {addr}: {e}"))?;
            if client.schema() != &schema {
                bail!(
                    "the server's schema differs from {}",
                    a.data.schema.display()
                );
            }
            run_attack(a.algo, &mut client, &vk, goal, a.seed, opts)
        }
        None => {
            let e = engine(db, &a.engine, default_kind)?;
            run_attack(a.algo, &mut e.session(), &vk, goal, a.seed, opts)
        }
    };
    report_attack(&outcome, &schema);
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&outcome)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(match outcome.status {
        AttackStatus::Inferred { .. } | AttackStatus::InferredAll { .. } => 0,
        AttackStatus::Undetermined { .. } => EXIT_UNDETERMINED,
        AttackStatus::BudgetExhausted => EXIT_BUDGET,
    })
}

fn label(schema: &Schema, j: usize, x: u32) -> String {
    let attr = schema.attribute(schema.private_index(j));
    attr.domain
        .get(x as usize)
        .cloned()
        .unwrap_or_else(|| x.to_string())
}

fn report_attack(o: &AttackOutcome, schema: &Schema) {
    let name = |j: usize| schema.attribute(schema.private_index(j)).name.clone();
    match &o.status {
        AttackStatus::Inferred { value } => {
            let j = o.target.unwrap_or(0);
            println!(
                "{} of tuple {}: {}",
                name(j),
                o.victim,
                label(schema, j, *value)
            );
        }
        AttackStatus::InferredAll { values } => {
            for (j, x) in values.iter().enumerate() {
                println!(
                    "{} of tuple {}: {}",
                    name(j),
                    o.victim,
                    label(schema, j, *x)
                );
            }
        }
        AttackStatus::Undetermined { reason } => println!("undetermined: {reason}"),
        AttackStatus::BudgetExhausted => println!("budget exhausted"),
    }
    for l in &o.ledger {
        let ex = l.excluded_values();
        if !ex.is_empty() {
            let shown: Vec<String> = ex.iter().map(|&x| label(schema, l.attribute, x)).collect();
            println!("  {} excluded: {}", name(l.attribute), shown.join(", "));
        }
    }
    println!(
        "{}: {} queries, {} inserts",
        o.algorithm, o.queries_used, o.inserts_used
    );
}

fn cmd_oracle(a: OracleArgs) -> Result<u8> {
    let db = load(&a.data)?;
    let victim = victim_id(&db, a.victim)?;
    let w = weights(&a.engine.weights, db.schema())?;
    let cfg = interface(&a.engine, QueryKind::PointOnly)?;
    let f = feasible_values(
        &db,
        victim,
        &LinearRanking::new(w),
        a.engine.tie_policy.into(),
        &cfg,
        a.bound,
    )
    .map_err(|e| usage(e.to_string()))?;
    let schema = db.schema();
    println!("{} queries checked", f.queries_checked);
    for (j, attr) in f.attributes.iter().enumerate() {
        let shown: Vec<String> = attr.feasible.iter().map(|&x| label(schema, j, x)).collect();
        let full = if f.is_full_domain(schema, j) {
            " (full domain)"
        } else {
            ""
        };
        println!("{}: {{{}}}{full}", attr.name, shown.join(", "));
    }
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&f)?)?;
    }
    Ok(0)
}

fn cmd_estimate(a: EstimateArgs) -> Result<u8> {
    let db = load(&a.data)?;
    let victim = victim_id(&db, a.victim)?;
    let j = private_position(db.schema(), &a.target)?;
    let w = weights(&a.weights, db.schema())?;
    let stats = InstanceStats::from_db(&db, victim, &w)?.with_target(j);
    println!("{}", serde_json::to_string_pretty(&estimate_all(&stats))?);
    Ok(0)
}

fn cmd_sweep(a: SweepArgs) -> Result<u8> {
    let mut cfg = ExperimentConfig::from_path(&a.config).map_err(|e| usage(e.to_string()))?;
    if a.out.is_some() {
        cfg.output = a.out;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let result = run_sweep(&cfg, a.jobs)?;
    println!("parameter,value,algorithm,success_rate,mean_queries");
    for r in &result.rows {
        let mean = r
            .mean_queries
            .map(|x| format!("{x:.2}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{},{},{},{:.3},{mean}",
            r.parameter, r.value, r.algorithm, r.success_rate
        );
    }
    Ok(0)
}
