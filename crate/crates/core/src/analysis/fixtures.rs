use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AnalysisError;
use crate::model::{Database, Provenance, Schema, TupleId, Value};
use crate::ranking::RankingWeights;

/// Most tuples placed in a [`build_theorem3_db`] instance.
pub const THEOREM3_MAX_TUPLES: usize = 32;

/// The victim (id 0, bona fide) plus, for every private attribute and every
/// other value of it, an inserted decoy equal to the victim except there.
///
/// Under `InsertedFirst` ties only the query matching the victim on every
/// private attribute returns it.
pub fn build_theorem1_db(schema: Schema, victim: &[Value]) -> Result<Database, AnalysisError> {
    let mut db = Database::new(schema);
    db.insert(victim.to_vec(), Provenance::BonaFide)?;
    let schema = db.schema().clone();
    for col in schema.private_indices() {
        for x in 0..schema.domain_size(col) as u32 {
            if victim[col] == Some(x) {
                continue;
            }
            let mut decoy = victim.to_vec();
            decoy[col] = Some(x);
            db.insert(decoy, Provenance::Inserted)?;
        }
    }
    Ok(db)
}

/// A binary instance where no query-only adversary can learn the first
/// private attribute of tuple 0 through a point interface.
///
/// Public projections are pairwise distinct and the weights are powers of
/// three with `w'_1 = 1` smallest, so any two distinct subset sums of the
/// remaining weights differ by more than `w'_1`.
pub fn build_theorem3_db(schema: &Schema) -> Result<(Database, RankingWeights), AnalysisError> {
    if schema.domain_sizes().iter().any(|&d| d != 2) {
        return Err(AnalysisError::NotBinary);
    }
    let (m, m_prime) = (schema.m(), schema.m_prime());
    if m + m_prime > 30 {
        return Err(AnalysisError::TooManyAttributes(m + m_prime));
    }
    let pow3 = |e: usize| 3f64.powi(e as i32);
    let private: Vec<f64> = (0..m_prime).map(pow3).collect();
    let public: Vec<f64> = (0..m).map(|i| pow3(m_prime + i)).collect();
    let weights = RankingWeights::new(public, private).expect("positive weights");

    let n = (1usize << m.min(20)).min(THEOREM3_MAX_TUPLES);
    let mut db = Database::new(schema.clone());
    for i in 0..n {
        let mut row: Vec<Value> = (0..m).map(|b| Some((i >> b & 1) as u32)).collect();
        row.extend((0..m_prime).map(|j| Some(((i + j) % 2) as u32)));
        db.insert(row, Provenance::BonaFide)?;
    }
    Ok((db, weights))
}

/// Whether every two distinct subsets of `weights` have sums more than
/// `gap` apart. Exhaustive, so meant for short weight lists.
pub fn subset_gap_holds(weights: &[f64], gap: f64) -> bool {
    assert!(
        weights.len() <= 20,
        "subset enumeration limited to 20 weights"
    );
    let mut sums: Vec<f64> = (0u32..1 << weights.len())
        .map(|mask| {
            weights
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, w)| w)
                .sum()
        })
        .collect();
    sums.sort_by(f64::total_cmp);
    sums.windows(2).all(|w| w[1] - w[0] > gap)
}

/// `n` distinct random tuples that all share value 0 on the first private
/// attribute. With IN queries nothing distinguishes the victim's value of
/// that attribute from any other.
pub fn build_shared_target_db(
    schema: Schema,
    n: usize,
    seed: u64,
) -> Result<Database, AnalysisError> {
    let target = schema.private_index(0);
    let sizes = schema.domain_sizes();
    let space: u128 = sizes
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .fold(1u128, |a, (_, &d)| a.saturating_mul(d as u128));
    if n as u128 > space {
        return Err(AnalysisError::TooManyTuples { n, space });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = Database::new(schema);
    while db.n() < n {
        let row: Vec<Value> = sizes
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                Some(if i == target {
                    0
                } else {
                    rng.random_range(0..d as u32)
                })
            })
            .collect();
        if db.contains_values(&row).is_none() {
            db.insert(row, Provenance::BonaFide)?;
        }
    }
    Ok(db)
}

/// Id of the victim in every fixture above.
pub const FIXTURE_VICTIM: TupleId = TupleId(0);
