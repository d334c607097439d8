use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use super::HarnessError;
use crate::model::{Database, Provenance, Schema, TupleId, Value};

/// Above this many candidate tuples, duplicates are rejected instead of
/// sampling distinct cube indices.
const INDEX_SAMPLE_LIMIT: u128 = 1 << 24;

fn space(schema: &Schema) -> u128 {
    schema
        .domain_sizes()
        .iter()
        .fold(1u128, |a, &d| a.saturating_mul(d as u128))
}

/// `n` distinct tuples, each attribute uniform over its domain.
pub fn gen_uniform(schema: Schema, n: usize, seed: u64) -> Result<Database, HarnessError> {
    let total = space(&schema);
    if n as u128 > total {
        return Err(HarnessError::ImpossibleCardinality { n, space: total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = schema.domain_sizes();
    let mut db = Database::new(schema);
    if total <= INDEX_SAMPLE_LIMIT {
        for mut code in index::sample(&mut rng, total as usize, n) {
            let mut row = vec![None; sizes.len()];
            for (cell, &d) in row.iter_mut().zip(&sizes).rev() {
                *cell = Some((code % d) as u32);
                code /= d;
            }
            db.insert(row, Provenance::BonaFide)?;
        }
    } else {
        while db.n() < n {
            let row: Vec<Value> = sizes
                .iter()
                .map(|&d| Some(rng.random_range(0..d as u32)))
                .collect();
            if db.contains_values(&row).is_none() {
                db.insert(row, Provenance::BonaFide)?;
            }
        }
    }
    Ok(db)
}

/// `n` distinct tuples over `m` public and `m_prime` private binary attributes.
pub fn gen_uniform_bool(
    n: usize,
    m: usize,
    m_prime: usize,
    seed: u64,
) -> Result<Database, HarnessError> {
    gen_uniform(Schema::binary(m, m_prime)?, n, seed)
}

/// `n` distinct tuples whose values follow Zipf(z) over each attribute's
/// domain (value 0 most frequent), on a schema from [`zipf_schema`].
pub fn gen_zipf(
    n: usize,
    m: usize,
    m_prime: usize,
    avg_domain: usize,
    z: f64,
    seed: u64,
) -> Result<Database, HarnessError> {
    gen_zipf_over(zipf_schema(m, m_prime, avg_domain, seed)?, n, z, seed)
}

/// Schema whose domain sizes are drawn uniformly around `avg_domain`, so
/// that their mean is `avg_domain`.
pub fn zipf_schema(
    m: usize,
    m_prime: usize,
    avg_domain: usize,
    seed: u64,
) -> Result<Schema, HarnessError> {
    if avg_domain < 2 {
        return Err(HarnessError::Config(
            "average domain size must be at least 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let lo = (avg_domain / 2).max(2);
    let hi = 2 * avg_domain - lo;
    let mut draw_size = || rng.random_range(lo..=hi);
    let public: Vec<usize> = (0..m).map(|_| draw_size()).collect();
    let private: Vec<usize> = (0..m_prime).map(|_| draw_size()).collect();
    Ok(Schema::with_domains(&public, &private)?)
}

/// `n` distinct Zipf(z)-distributed tuples over an existing schema.
pub fn gen_zipf_over(
    schema: Schema,
    n: usize,
    z: f64,
    seed: u64,
) -> Result<Database, HarnessError> {
    if !(z > 0.0) {
        return Err(HarnessError::Config(format!(
            "zipf exponent must be positive, got {z}"
        )));
    }
    let total = space(&schema);
    if n as u128 > total {
        return Err(HarnessError::ImpossibleCardinality { n, space: total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Zipf<f64>> = schema
        .domain_sizes()
        .iter()
        .map(|&d| Zipf::new(d as f64, z).expect("valid zipf parameters"))
        .collect();
    let mut db = Database::new(schema);
    let max_attempts = 1000 * n as u64 + 10_000;
    let mut attempts = 0;
    while db.n() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(HarnessError::Config(format!(
                "gave up after {max_attempts} draws: the skew leaves too few distinct tuples for n={n}"
            )));
        }
        let row: Vec<Value> = dists
            .iter()
            .map(|d| Some(d.sample(&mut rng) as u32 - 1))
            .collect();
        if db.contains_values(&row).is_none() {
            db.insert(row, Provenance::BonaFide)?;
        }
    }
    Ok(db)
}

/// Uniformly random tuple whose private attribute `j` is not Null.
pub fn sample_victim(db: &Database, j: usize, rng: &mut impl Rng) -> Option<TupleId> {
    let col = db.schema().private_index(j);
    let eligible: Vec<TupleId> = db
        .tuples()
        .iter()
        .filter(|t| t.values[col].is_some())
        .map(|t| t.id)
        .collect();
    eligible.choose(rng).copied()
}
