//! Data generation, CSV ingestion, experiment sweeps and scenarios.

mod csv_io;
mod gen;
mod scenarios;
mod sweep;

use thiserror::Error;

use crate::engine::EngineError;
use crate::model::ModelError;

pub use csv_io::{load_csv, read_csv, write_csv, write_schema};
pub use gen::{gen_uniform, gen_uniform_bool, gen_zipf, gen_zipf_over, sample_victim, zipf_schema};
pub use scenarios::{
    scenario_boolean_preference, scenario_zipcode_bisection, BooleanPreferenceReport, GeoDistance,
    PreferenceRanking, ZipTable, ZipcodeReport,
};
pub use sweep::{
    run_sweep, ExperimentConfig, Generator, SweepParameter, SweepPoint, SweepResult, SweepRow,
    SweepSpec, TrialRecord, WeightSpec,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot draw {n} distinct tuples from a space of {space}")]
    ImpossibleCardinality { n: usize, space: u128 },
    #[error("row {row}, column `{column}`: value `{value}` is not in the domain")]
    UnknownValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: empty cell but the attribute does not allow null")]
    NullNotAllowed { row: usize, column: String },
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {0} repeats an earlier row")]
    DuplicateRow(usize),
    #[error("column `{0}` is not declared in the schema")]
    UnknownColumn(String),
    #[error("schema attribute `{0}` has no column")]
    MissingColumn(String),
    #[error("victim zipcode {0} was pruned; the margin is too small for the ranking")]
    VictimNotFound(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
