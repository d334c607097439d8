use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gen::{gen_uniform, gen_zipf_over, zipf_schema};
use super::{load_csv, HarnessError};
use crate::adversary::{run_attack, Algorithm, AttackOptions, AttackStatus, Goal, VictimKnowledge};
use crate::engine::{Engine, InterfaceConfig};
use crate::model::{Database, Schema, TupleId};
use crate::ranking::{LinearRanking, RankingWeights, TieBreakPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    UniformBool,
    Zipf { z: f64, avg_domain: usize },
    Csv { data: PathBuf, schema: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    #[default]
    Unit,
    /// Independent draws from (0, 1], one set per trial.
    Random,
    Fixed {
        public: Vec<f64>,
        private: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    K,
    N,
    M,
    MPrime,
    #[serde(rename = "w_prime_1")]
    WPrime1,
    /// The weight of every private attribute at once.
    PrivateWeight,
    TargetDomainSize,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::K => "k",
            SweepParameter::N => "n",
            SweepParameter::M => "m",
            SweepParameter::MPrime => "m_prime",
            SweepParameter::WPrime1 => "w_prime_1",
            SweepParameter::PrivateWeight => "private_weight",
            SweepParameter::TargetDomainSize => "target_domain_size",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

fn default_k() -> usize {
    1
}

fn default_trials() -> usize {
    100
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

/// One experiment: a base configuration plus the parameter to vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: Generator,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub m_prime: usize,
    #[serde(default)]
    pub weights: WeightSpec,
    /// Overrides every private weight after `weights` is applied.
    #[serde(default)]
    pub private_weight: Option<f64>,
    /// Overrides the target attribute's weight after `private_weight`.
    #[serde(default)]
    pub w_prime_1: Option<f64>,
    /// Domain size of the target attribute (generated data only).
    #[serde(default)]
    pub target_domain_size: Option<usize>,
    /// Private attribute under attack.
    #[serde(default)]
    pub target: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    pub sweep: SweepSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    /// Client-side cap on queries plus inserts per attack.
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub tie_policy: TieBreakPolicy,
    /// CSV destination; the manifest goes next to it with a `.json` extension.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_reader(File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sweep.values.is_empty() {
            return bad("the sweep needs at least one value".into());
        }
        if self.algorithms.is_empty() {
            return bad("select at least one algorithm".into());
        }
        let integral = !matches!(
            self.sweep.parameter,
            SweepParameter::WPrime1 | SweepParameter::PrivateWeight
        );
        for &x in &self.sweep.values {
            if !(x.is_finite() && x > 0.0) || (integral && x.fract() != 0.0) {
                return bad(format!(
                    "sweep value {x} is not valid for `{}`",
                    self.sweep.parameter.name()
                ));
            }
        }
        if let Generator::Csv { .. } = self.generator {
            if !matches!(
                self.sweep.parameter,
                SweepParameter::K | SweepParameter::WPrime1 | SweepParameter::PrivateWeight
            ) {
                return bad("CSV data can only be swept over k or private weights".into());
            }
        }
        Ok(())
    }

    /// The configuration at one sweep point.
    pub fn at(&self, value: f64) -> Self {
        let mut c = self.clone();
        let u = value as usize;
        match self.sweep.parameter {
            SweepParameter::K => c.k = u,
            SweepParameter::N => c.n = u,
            SweepParameter::M => c.m = u,
            SweepParameter::MPrime => c.m_prime = u,
            SweepParameter::WPrime1 => c.w_prime_1 = Some(value),
            SweepParameter::PrivateWeight => c.private_weight = Some(value),
            SweepParameter::TargetDomainSize => c.target_domain_size = Some(u),
        }
        c
    }

    fn database(&self, seed: u64) -> Result<Database, HarnessError> {
        let resized = |mut private: Vec<usize>| -> Result<Vec<usize>, HarnessError> {
            if let Some(d) = self.target_domain_size {
                *private.get_mut(self.target).ok_or_else(|| {
                    HarnessError::Config(format!("no private attribute {}", self.target))
                })? = d;
            }
            Ok(private)
        };
        match &self.generator {
            Generator::UniformBool => {
                let private = resized(vec![2; self.m_prime])?;
                gen_uniform(
                    Schema::with_domains(&vec![2; self.m], &private)?,
                    self.n,
                    seed,
                )
            }
            Generator::Zipf { z, avg_domain } => {
                let base = zipf_schema(self.m, self.m_prime, *avg_domain, seed)?;
                let public = base
                    .public_indices()
                    .map(|i| base.domain_size(i))
                    .collect::<Vec<_>>();
                let private = resized(
                    base.private_indices()
                        .map(|i| base.domain_size(i))
                        .collect(),
                )?;
                gen_zipf_over(Schema::with_domains(&public, &private)?, self.n, *z, seed)
            }
            Generator::Csv { data, schema } => load_csv(data, schema),
        }
    }

    fn weights(&self, schema: &Schema, rng: &mut impl Rng) -> Result<RankingWeights, HarnessError> {
        let mut w = match &self.weights {
            WeightSpec::Unit => RankingWeights::unit(schema),
            WeightSpec::Random => RankingWeights::random(schema, rng),
            WeightSpec::Fixed { public, private } => {
                let w = RankingWeights::new(public.clone(), private.clone())
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                w.check_schema(schema)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                w
            }
        };
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(x)
            } else {
                Err(HarnessError::Config(format!(
                    "{name} must be positive, got {x}"
                )))
            }
        };
        if let Some(x) = self.private_weight {
            let x = positive("private_weight", x)?;
            w.private.iter_mut().for_each(|p| *p = x);
        }
        if let Some(x) = self.w_prime_1 {
            w.private[self.target] = positive("w_prime_1", x)?;
        }
        Ok(w)
    }
}

/// Result of one attack in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub algorithm: Algorithm,
    pub victim: TupleId,
    pub correct: bool,
    pub wrong: bool,
    pub queries: u64,
    pub inserts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Trials whose victim had a Null target and was not attacked.
    pub null_victims: usize,
    /// Trials that could not be set up (e.g. impossible cardinality).
    pub errors: Vec<String>,
    pub records: Vec<TrialRecord>,
}

/// One CSV row: one sweep point, one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub attacked: usize,
    pub successes: usize,
    pub failures: usize,
    pub wrong: usize,
    pub null_victims: usize,
    pub errors: usize,
    pub success_rate: f64,
    /// Mean and median over successful attacks only.
    pub mean_queries: Option<f64>,
    pub median_queries: Option<f64>,
    pub mean_inserts: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub version: String,
    pub points: Vec<SweepPoint>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn rows_for(&self, algorithm: Algorithm) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.algorithm == algorithm)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Config, seeds and version, without per-trial records.
    pub fn write_manifest(&self, path: &Path) -> Result<(), HarnessError> {
        let manifest = serde_json::json!({
            "version": self.version,
            "config": self.config,
            "seeds": (0..self.config.trials).map(|t| self.config.seed + t as u64).collect::<Vec<_>>(),
            "points": self.points.iter().map(|p| serde_json::json!({
                "value": p.value,
                "null_victims": p.null_victims,
                "errors": p.errors,
            })).collect::<Vec<_>>(),
        });
        serde_json::to_writer_pretty(File::create(path)?, &manifest)?;
        Ok(())
    }
}

enum TrialResult {
    Attacked(Vec<TrialRecord>),
    NullVictim,
    Error(String),
}

fn run_trial(cfg: &ExperimentConfig, trial: usize) -> TrialResult {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let db = match cfg.database(seed) {
        Ok(db) => db,
        Err(e) => return TrialResult::Error(e.to_string()),
    };
    let schema = db.schema().clone();
    if cfg.target >= schema.m_prime() {
        return TrialResult::Error(format!("no private attribute {}", cfg.target));
    }
    if db.is_empty() {
        return TrialResult::Error("empty database".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let victim = &db.tuples()[rng.random_range(0..db.n())];
    let Some(truth) = victim.values[schema.private_index(cfg.target)] else {
        return TrialResult::NullVictim;
    };
    let weights = match cfg.weights(&schema, &mut rng) {
        Ok(w) => w,
        Err(e) => return TrialResult::Error(e.to_string()),
    };
    let ranking = Arc::new(LinearRanking::new(weights));
    let vk = VictimKnowledge::from_db(&db, victim.id).expect("victim is in the database");
    let records = cfg
        .algorithms
        .iter()
        .map(|&algorithm| {
            let iface = if algorithm.uses_in() {
                InterfaceConfig::in_allowed(cfg.k)
            } else {
                InterfaceConfig::point_only(cfg.k)
            };
            let iface = if algorithm.inserts() {
                iface
            } else {
                iface.without_insertion()
            };
            let engine = Arc::new(Engine::new(
                db.clone(),
                ranking.clone(),
                cfg.tie_policy,
                iface,
            ));
            let mut session = engine.session();
            let out = run_attack(
                algorithm,
                &mut session,
                &vk,
                Goal::Target(cfg.target),
                seed,
                AttackOptions {
                    budget: cfg.budget,
                    max_rounds: None,
                },
            );
            let inferred = match out.status {
                AttackStatus::Inferred { value } => Some(value),
                _ => None,
            };
            TrialRecord {
                trial,
                algorithm,
                victim: victim.id,
                correct: inferred == Some(truth),
                wrong: inferred.is_some_and(|x| x != truth),
                queries: out.queries_used,
                inserts: out.inserts_used,
            }
        })
        .collect();
    TrialResult::Attacked(records)
}

fn median(sorted: &[u64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2] as f64),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0),
    }
}

fn summarize(cfg: &ExperimentConfig, point: &SweepPoint) -> Vec<SweepRow> {
    cfg.algorithms
        .iter()
        .map(|&algorithm| {
            let recs: Vec<&TrialRecord> = point
                .records
                .iter()
                .filter(|r| r.algorithm == algorithm)
                .collect();
            let ok: Vec<&TrialRecord> = recs.iter().copied().filter(|r| r.correct).collect();
            let mut queries: Vec<u64> = ok.iter().map(|r| r.queries).collect();
            queries.sort_unstable();
            let mean = |xs: &mut dyn Iterator<Item = u64>| {
                (!ok.is_empty()).then(|| xs.sum::<u64>() as f64 / ok.len() as f64)
            };
            SweepRow {
                parameter: cfg.sweep.parameter.name().to_string(),
                value: point.value,
                algorithm,
                trials: cfg.trials,
                attacked: recs.len(),
                successes: ok.len(),
                failures: recs.len() - ok.len(),
                wrong: recs.iter().filter(|r| r.wrong).count(),
                null_victims: point.null_victims,
                errors: point.errors.len(),
                success_rate: if recs.is_empty() {
                    0.0
                } else {
                    ok.len() as f64 / recs.len() as f64
                },
                mean_queries: mean(&mut ok.iter().map(|r| r.queries)),
                median_queries: median(&queries),
                mean_inserts: mean(&mut ok.iter().map(|r| r.inserts)),
                seed: cfg.seed,
            }
        })
        .collect()
}

/// Runs every trial at every sweep point. Trial `t` uses seed `seed + t` at
/// every point, so points differ only in the swept parameter. With `jobs`,
/// trials run on a dedicated pool of that many threads.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let work = || -> Vec<SweepPoint> {
        cfg.sweep
            .values
            .iter()
            .map(|&value| {
                let at = cfg.at(value);
                let results: Vec<TrialResult> = (0..cfg.trials)
                    .into_par_iter()
                    .map(|t| run_trial(&at, t))
                    .collect();
                let mut point = SweepPoint {
                    value,
                    null_victims: 0,
                    errors: Vec::new(),
                    records: Vec::new(),
                };
                for r in results {
                    match r {
                        TrialResult::Attacked(recs) => point.records.extend(recs),
                        TrialResult::NullVictim => point.null_victims += 1,
                        TrialResult::Error(e) => point.errors.push(e),
                    }
                }
                point
            })
            .collect()
    };
    let points = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(work),
        None => work(),
    };
    let rows = points.iter().flat_map(|p| summarize(cfg, p)).collect();
    let result = SweepResult {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        points,
        rows,
    };
    if let Some(out) = &cfg.output {
        result.write_csv(out)?;
        result.write_manifest(&out.with_extension("json"))?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(parameter: SweepParameter, values: Vec<f64>) -> ExperimentConfig {
        ExperimentConfig {
            generator: Generator::UniformBool,
            n: 40,
            m: 4,
            m_prime: 3,
            weights: WeightSpec::Unit,
            private_weight: None,
            w_prime_1: None,
            target_domain_size: None,
            target: 0,
            k: 1,
            algorithms: vec![Algorithm::QiPoint, Algorithm::QPoint],
            sweep: SweepSpec { parameter, values },
            trials: 6,
            seed: 11,
            budget: None,
            tie_policy: TieBreakPolicy::ById,
            output: None,
        }
    }

    #[test]
    fn deterministic_regardless_of_threads() {
        let cfg = small(SweepParameter::K, vec![1.0, 3.0]);
        let a = run_sweep(&cfg, Some(1)).unwrap();
        let b = run_sweep(&cfg, Some(4)).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.points, b.points);
        assert_eq!(a.rows.len(), 4);
        for r in &a.rows {
            assert_eq!(r.wrong, 0);
            assert!((0.0..=1.0).contains(&r.success_rate));
        }
    }

    #[test]
    fn impossible_points_are_recorded_not_fatal() {
        let cfg = small(SweepParameter::N, vec![40.0, 500.0]);
        let res = run_sweep(&cfg, None).unwrap();
        assert_eq!(res.points[1].errors.len(), cfg.trials);
        assert_eq!(res.rows_for(Algorithm::QiPoint).nth(1).unwrap().attacked, 0);
    }

    #[test]
    fn target_domain_and_weight_overrides() {
        let mut cfg = small(SweepParameter::TargetDomainSize, vec![4.0]);
        cfg.w_prime_1 = Some(0.25);
        let res = run_sweep(&cfg, None).unwrap();
        assert!(res.rows.iter().all(|r| r.errors == 0 && r.wrong == 0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(SweepParameter::K, vec![1.5]);
        assert!(cfg.validate().is_err());
        cfg.sweep.values = vec![2.0];
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"generator":{"kind":"zipf","z":2.0,"avg_domain":3},"n":50,"m":3,"m_prime":2,
                "sweep":{"parameter":"w_prime_1","values":[0.5,1.0]},"seed":1}"#,
        )
        .unwrap();
        assert_eq!(cfg.k, 1);
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.algorithms.len(), 4);
        assert_eq!(cfg.weights, WeightSpec::Unit);
    }
}
