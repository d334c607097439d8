//! Ranked-retrieval attack lab: a top-k search engine over a database with
//! public and private attributes, black-box attacks that infer private values
//! from answer rankings, a brute-force feasibility oracle, closed-form cost
//! estimators and an experiment harness.

pub mod adversary;
pub mod analysis;
pub mod engine;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod ranking;
