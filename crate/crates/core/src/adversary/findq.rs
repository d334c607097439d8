use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Halt, Probe, VictimKnowledge};
use crate::model::{Query, RankedAnswer, Schema};

/// Spaces at most this large are drawn from a shuffled enumeration; larger
/// ones by rejection against the history.
const ENUMERATE_LIMIT: u128 = 1 << 16;

/// Private-value combinations already tried for one victim.
#[derive(Debug, Clone, Default)]
pub struct QueryHistory {
    seen: HashSet<Vec<u32>>,
    /// Remaining combinations in draw order (popped from the back).
    pending: Option<Vec<Vec<u32>>>,
}

impl QueryHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn contains(&self, combo: &[u32]) -> bool {
        self.seen.contains(combo)
    }

    fn space(schema: &Schema) -> u128 {
        schema.private_indices().fold(1u128, |acc, i| {
            acc.saturating_mul(schema.domain_size(i) as u128)
        })
    }

    pub fn exhausted(&self, schema: &Schema) -> bool {
        self.seen.len() as u128 >= Self::space(schema)
    }

    fn draw(&mut self, schema: &Schema, rng: &mut impl Rng) -> Option<Vec<u32>> {
        let space = Self::space(schema);
        if self.seen.len() as u128 >= space {
            return None;
        }
        let combo = if space <= ENUMERATE_LIMIT {
            if self.pending.is_none() {
                let mut all = enumerate(schema);
                all.retain(|c| !self.seen.contains(c));
                all.shuffle(rng);
                self.pending = Some(all);
            }
            self.pending.as_mut().and_then(Vec::pop)?
        } else {
            loop {
                let c: Vec<u32> = schema
                    .private_indices()
                    .map(|i| rng.random_range(0..schema.domain_size(i) as u32))
                    .collect();
                if !self.seen.contains(&c) {
                    break c;
                }
            }
        };
        self.seen.insert(combo.clone());
        Some(combo)
    }
}

fn enumerate(schema: &Schema) -> Vec<Vec<u32>> {
    let sizes: Vec<u32> = schema
        .private_indices()
        .map(|i| schema.domain_size(i) as u32)
        .collect();
    let mut out = Vec::new();
    let mut cur = vec![0u32; sizes.len()];
    loop {
        out.push(cur.clone());
        let mut i = sizes.len();
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < sizes[i] {
                break;
            }
            cur[i] = 0;
        }
    }
}

/// Point query with the victim's public values and the given private values.
pub(crate) fn victim_point_query(vk: &VictimKnowledge, private: &[u32]) -> Query {
    let mut values: Vec<u32> = vk.public_values.iter().map(|v| v.unwrap_or(0)).collect();
    values.extend_from_slice(private);
    Query::point_u32(&values)
}

/// Draws point queries with the victim's public values and uniformly random,
/// never-repeated private values until one is accepted. Returns the query,
/// its answer and the number of draws, or `None` once the space is exhausted.
pub fn find_q(
    probe: &mut Probe,
    vk: &VictimKnowledge,
    history: &mut QueryHistory,
    rng: &mut impl Rng,
    accept: &mut dyn FnMut(&RankedAnswer) -> bool,
) -> Result<(Option<(Query, RankedAnswer)>, u64), (Halt, u64)> {
    let schema = probe.schema().clone();
    let mut draws = 0;
    while let Some(combo) = history.draw(&schema, rng) {
        draws += 1;
        let q = victim_point_query(vk, &combo);
        let a = probe.search(&q).map_err(|h| (h, draws))?;
        if accept(&a) {
            return Ok((Some((q, a)), draws));
        }
    }
    Ok((None, draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enumeration_covers_space_once() {
        let s = Schema::with_domains(&[2], &[2, 3, 2]).unwrap();
        let all = enumerate(&s);
        assert_eq!(all.len(), 12);
        let set: HashSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), 12);
    }

    #[test]
    fn draws_never_repeat_and_exhaust() {
        let s = Schema::with_domains(&[2], &[2, 3]).unwrap();
        let mut h = QueryHistory::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut got = HashSet::new();
        while let Some(c) = h.draw(&s, &mut rng) {
            assert!(got.insert(c));
        }
        assert_eq!(got.len(), 6);
        assert!(h.exhausted(&s));
    }

    #[test]
    fn large_spaces_use_rejection() {
        let s = Schema::with_domains(&[2], &[100, 100, 100]).unwrap();
        let mut h = QueryHistory::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut got = HashSet::new();
        for _ in 0..500 {
            assert!(got.insert(h.draw(&s, &mut rng).unwrap()));
        }
    }
}
