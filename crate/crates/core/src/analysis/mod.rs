//! Closed-form cost estimators and the special instances behind the
//! worst-case and infeasibility results.

mod erf;
mod estimators;
mod fixtures;

use thiserror::Error;

use crate::model::{ModelError, TupleId};

pub use erf::{erf, erf_scaled};
pub use estimators::{
    estimate_all, findq_success_prob, q_in_quick_finish_prob, q_point_quick_finish_prob,
    qi_in_expected_cost, qi_point_expected_cost, EstimateReport, IndexReading, InstanceStats,
};
pub use fixtures::{
    build_shared_target_db, build_theorem1_db, build_theorem3_db, subset_gap_holds, FIXTURE_VICTIM,
    THEOREM3_MAX_TUPLES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("tuple {0} is not in the database")]
    UnknownVictim(TupleId),
    #[error("weights do not fit the schema: {0}")]
    Weights(String),
    #[error("the target attribute cannot be in the private point set")]
    TargetInPointSet,
    #[error("attribute position {0} is out of range")]
    AttributeOutOfRange(usize),
    #[error("the construction needs an all-binary schema")]
    NotBinary,
    #[error("{0} attributes is too many for exact power-of-three weights")]
    TooManyAttributes(usize),
    #[error("cannot place {n} distinct tuples in a space of {space}")]
    TooManyTuples { n: usize, space: u128 },
    #[error(transparent)]
    Model(#[from] ModelError),
}
