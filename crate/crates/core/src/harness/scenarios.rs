//! Two small end-to-end inference stories: a dating-site preference leak
//! and locating a user's zipcode with two fake accounts.

use std::sync::Arc;

use itertools::Itertools;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::engine::{Engine, InterfaceConfig, SearchInterface};
use crate::model::{
    AttributeDescriptor, Database, Provenance, Query, Schema, TupleId, Value, Visibility,
};
use crate::ranking::{discrete_distance, RankingFunction, TieBreakPolicy};

const MARRIED: usize = 0;
const REGION: usize = 1;
const PREFERENCE: usize = 2;
const YES: u32 = 0;
const NO: u32 = 1;
const PREF_NO: u32 = 0;
const PREF_ANY: u32 = 1;
const REGIONS: u32 = 4;
const RANDOM_POPULATIONS: usize = 500;

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn dating_schema() -> Schema {
    Schema::build(vec![
        AttributeDescriptor::new("married_before", Visibility::Public, labels(&["Yes", "No"])),
        AttributeDescriptor::indexed("region", Visibility::Public, REGIONS as usize),
        AttributeDescriptor::new(
            "ok_if_married_before",
            Visibility::Private,
            labels(&["No", "NoPreference"]),
        ),
    ])
    .expect("valid schema")
}

/// Dating-site ranking: the query's `married_before` predicate is the
/// searcher's own status. Profiles that refuse previously married matches
/// are pushed down when the searcher was married before.
#[derive(Debug, Clone)]
pub struct PreferenceRanking {
    pub region_weight: f64,
    pub preference_weight: f64,
}

impl RankingFunction for PreferenceRanking {
    fn score(&self, values: &[Value], q: &Query) -> f64 {
        let refuses = values[PREFERENCE] == Some(PREF_NO) && q.predicate(MARRIED) == [YES];
        let mut s = self.region_weight * discrete_distance(q.predicate(REGION), values[REGION]);
        if refuses {
            s += self.preference_weight;
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BooleanPreferenceReport {
    pub cases: usize,
    pub victims_no: usize,
    pub victims_no_preference: usize,
    pub rank_same: usize,
    pub rank_up: usize,
    pub rank_down: usize,
    pub inferred_correct: usize,
    pub inferred_wrong: usize,
    pub undetermined: usize,
    /// Victims with `NoPreference` whose rank dropped; never expected.
    pub no_preference_rank_down: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Same,
    Up,
    Down,
}

/// Ranks the victim for an unmarried and then a married searcher, both
/// searching the victim's region.
fn compare(population: &[Vec<Value>], victim: usize, ranking: &PreferenceRanking) -> Move {
    let schema = dating_schema();
    let n = population.len();
    let db = Database::from_rows(schema.clone(), population.to_vec()).expect("distinct rows");
    let engine = Arc::new(Engine::new(
        db,
        Arc::new(ranking.clone()),
        TieBreakPolicy::ById,
        InterfaceConfig::in_allowed(n).without_insertion(),
    ));
    let mut session = engine.session();
    let v = TupleId(victim as u64);
    let region = population[victim][REGION].expect("region is set");
    let mut rank = |married: u32| {
        let mut q = Query::star(&schema);
        q.set_point(MARRIED, married);
        q.set_point(REGION, region);
        session
            .search(&q)
            .expect("valid query")
            .rank_of(v)
            .expect("k covers the population")
    };
    let (r1, r2) = (rank(NO), rank(YES));
    match r2.cmp(&r1) {
        std::cmp::Ordering::Equal => Move::Same,
        std::cmp::Ordering::Less => Move::Up,
        std::cmp::Ordering::Greater => Move::Down,
    }
}

fn tally(report: &mut BooleanPreferenceReport, truth: u32, mv: Move) {
    report.cases += 1;
    if truth == PREF_NO {
        report.victims_no += 1;
    } else {
        report.victims_no_preference += 1;
    }
    let inferred = match mv {
        Move::Same => {
            report.rank_same += 1;
            None
        }
        Move::Up => {
            report.rank_up += 1;
            Some(PREF_ANY)
        }
        Move::Down => {
            report.rank_down += 1;
            if truth == PREF_ANY {
                report.no_preference_rank_down += 1;
            }
            Some(PREF_NO)
        }
    };
    match inferred {
        None => report.undetermined += 1,
        Some(x) if x == truth => report.inferred_correct += 1,
        Some(_) => report.inferred_wrong += 1,
    }
}

/// Runs the married-before comparison on every population of at most five
/// distinct profiles (each member in turn as the victim), then on random
/// larger populations drawn with `seed`.
///
/// A drop in rank means the victim refuses previously married matches; a
/// rise means the victim has no preference; an unchanged rank decides
/// nothing.
pub fn scenario_boolean_preference(seed: u64) -> BooleanPreferenceReport {
    let ranking = PreferenceRanking {
        region_weight: 1.0,
        preference_weight: 1.0,
    };
    let all: Vec<Vec<Value>> = (0..2)
        .cartesian_product(0..REGIONS)
        .cartesian_product(0..2)
        .map(|((a, r), b)| vec![Some(a), Some(r), Some(b)])
        .collect();
    let mut report = BooleanPreferenceReport::default();
    for size in 1..=5 {
        for population in all.iter().cloned().combinations(size) {
            for victim in 0..size {
                let truth = population[victim][PREFERENCE].expect("set");
                tally(&mut report, truth, compare(&population, victim, &ranking));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_POPULATIONS {
        let size = rng.random_range(6..=all.len());
        let mut population = all.clone();
        population.shuffle(&mut rng);
        population.truncate(size);
        let victim = rng.random_range(0..size);
        let truth = population[victim][PREFERENCE].expect("set");
        tally(&mut report, truth, compare(&population, victim, &ranking));
    }
    report
}

/// Zipcodes with planar coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipTable {
    pub codes: Vec<String>,
    pub coords: Vec<(f64, f64)>,
}

impl ZipTable {
    /// `side * side` codes on a unit grid, named `Z000`, `Z001`, ...
    pub fn grid(side: usize) -> Self {
        let (codes, coords) = (0..side * side)
            .map(|i| (format!("Z{i:03}"), ((i % side) as f64, (i / side) as f64)))
            .unzip();
        Self { codes, coords }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.codes.iter().position(|c| c == code)
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (x1, y1) = self.coords[a];
        let (x2, y2) = self.coords[b];
        (x1 - x2).hypot(y1 - y2)
    }
}

/// Name match dominates; among matching names, closer zipcodes rank first.
/// The query's zipcode predicate is the searcher's location.
#[derive(Debug, Clone)]
pub struct GeoDistance {
    pub table: Arc<ZipTable>,
    pub name_attr: usize,
    pub zip_attr: usize,
    pub name_weight: f64,
}

impl RankingFunction for GeoDistance {
    fn score(&self, values: &[Value], q: &Query) -> f64 {
        let name = self.name_weight
            * discrete_distance(q.predicate(self.name_attr), values[self.name_attr]);
        let geo = match values[self.zip_attr] {
            Some(z) => q
                .predicate(self.zip_attr)
                .iter()
                .map(|&from| self.table.distance(from as usize, z as usize))
                .fold(f64::INFINITY, f64::min),
            None => self.name_weight,
        };
        name + geo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipcodeReport {
    pub victim_zip: String,
    pub identified_zip: String,
    pub exact: bool,
    /// Distance between the identified and the true zipcode.
    pub error_distance: f64,
    pub stage1_rounds: usize,
    pub candidates_after_stage1: usize,
    pub queries: u64,
    pub profile_updates: u64,
}

const NAMES: usize = 8;
const HANDLES: usize = 4096;
const OTHER_USERS: usize = 60;
const PATIENCE: usize = 40;

/// Locates the victim's zipcode with two fake accounts sharing the victim's
/// name. Stage 1 searches from one account and compares the victim against
/// the other, pruning zipcodes inconsistent with the observed order (widened
/// by `margin`). Stage 2 moves one account over the survivors until the
/// victim outranks it, which happens only at the victim's own location.
pub fn scenario_zipcode_bisection(
    table: &ZipTable,
    victim_zip: &str,
    margin: f64,
    seed: u64,
) -> Result<ZipcodeReport, HarnessError> {
    if !(margin >= 0.0) {
        return Err(HarnessError::Config(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    if table.len() < 2 {
        return Err(HarnessError::Config(
            "the zip table needs at least two codes".into(),
        ));
    }
    let truth = table.index_of(victim_zip).ok_or_else(|| {
        HarnessError::Config(format!("zipcode `{victim_zip}` is not in the table"))
    })?;
    let table = Arc::new(table.clone());
    let schema = Schema::build(vec![
        AttributeDescriptor::indexed("name", Visibility::Public, NAMES),
        AttributeDescriptor::indexed("handle", Visibility::Public, HANDLES),
        AttributeDescriptor::new("zip", Visibility::Private, table.codes.clone()),
    ])?;
    let (name_attr, zip_attr) = (0, 2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut handles: Vec<u32> = (0..HANDLES as u32).collect();
    handles.shuffle(&mut rng);
    let mut handles = handles.into_iter();
    let victim_name = rng.random_range(0..NAMES as u32);
    let mut db = Database::new(schema.clone());
    let victim = db.insert(
        vec![Some(victim_name), handles.next(), Some(truth as u32)],
        Provenance::BonaFide,
    )?;
    for _ in 0..OTHER_USERS {
        db.insert(
            vec![
                Some(rng.random_range(0..NAMES as u32)),
                handles.next(),
                Some(rng.random_range(0..table.len() as u32)),
            ],
            Provenance::BonaFide,
        )?;
    }
    let ranking = GeoDistance {
        table: Arc::clone(&table),
        name_attr,
        zip_attr,
        name_weight: 1e6,
    };
    let engine = Arc::new(Engine::new(
        db,
        Arc::new(ranking),
        TieBreakPolicy::ById,
        InterfaceConfig::in_allowed(OTHER_USERS + 3),
    ));
    let mut session = engine.session();
    let fake = |handle: Option<u32>, zip: usize| vec![Some(victim_name), handle, Some(zip as u32)];
    let (h1, h2) = (handles.next(), handles.next());
    let a1 = engine.admin_insert(fake(h1, 0), Provenance::Inserted)?;
    let a2 = engine.admin_insert(fake(h2, 1), Provenance::Inserted)?;
    let mut updates = 2u64;
    let mut search_from = |zip: usize| {
        let mut q = Query::star(&schema);
        q.set_point(name_attr, victim_name);
        q.set_point(zip_attr, zip as u32);
        session.search(&q).expect("valid query")
    };

    let mut candidates: Vec<usize> = (0..table.len()).collect();
    let codes: Vec<usize> = (0..table.len()).collect();
    let mut rounds = 0;
    let mut idle = 0;
    while candidates.len() > 1 && idle < PATIENCE {
        rounds += 1;
        let pair: Vec<usize> = codes.choose_multiple(&mut rng, 2).copied().collect();
        let (z1, z2) = (pair[0], pair[1]);
        engine.admin_update(a1, fake(h1, z1))?;
        engine.admin_update(a2, fake(h2, z2))?;
        updates += 2;
        let answer = search_from(z1);
        let rank = |id| answer.rank_of(id).expect("same-name accounts are listed");
        let d12 = table.distance(z1, z2);
        let victim_closer = rank(victim) < rank(a2);
        let before = candidates.len();
        candidates.retain(|&z| {
            let d = table.distance(z1, z);
            if victim_closer {
                d <= d12 + margin
            } else {
                d + margin > d12
            }
        });
        idle = if candidates.len() < before {
            0
        } else {
            idle + 1
        };
    }
    let survivors = candidates.len();

    let mut identified = None;
    for &z in &candidates {
        engine.admin_update(a1, fake(h1, z))?;
        updates += 1;
        let answer = search_from(z);
        if answer.rank_of(victim) < answer.rank_of(a1) {
            identified = Some(z);
            break;
        }
    }
    let identified =
        identified.ok_or_else(|| HarnessError::VictimNotFound(victim_zip.to_string()))?;
    Ok(ZipcodeReport {
        victim_zip: victim_zip.to_string(),
        identified_zip: table.codes[identified].clone(),
        exact: identified == truth,
        error_distance: table.distance(identified, truth),
        stage1_rounds: rounds,
        candidates_after_stage1: survivors,
        queries: session.ledger().queries_issued,
        profile_updates: updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_victim_is_undetermined() {
        let ranking = PreferenceRanking {
            region_weight: 1.0,
            preference_weight: 1.0,
        };
        let pop = vec![vec![Some(NO), Some(0), Some(PREF_NO)]];
        assert_eq!(compare(&pop, 0, &ranking), Move::Same);
    }

    #[test]
    fn refusing_victim_drops_below_an_open_profile() {
        let ranking = PreferenceRanking {
            region_weight: 1.0,
            preference_weight: 1.0,
        };
        let pop = vec![
            vec![Some(NO), Some(0), Some(PREF_NO)],
            vec![Some(YES), Some(0), Some(PREF_ANY)],
        ];
        assert_eq!(compare(&pop, 0, &ranking), Move::Down);
        assert_eq!(compare(&pop, 1, &ranking), Move::Up);
    }

    #[test]
    fn grid_distances() {
        let t = ZipTable::grid(10);
        assert_eq!(t.len(), 100);
        assert_eq!(t.distance(0, 11), 2f64.sqrt());
        assert_eq!(t.index_of("Z042"), Some(42));
    }

    #[test]
    fn bisection_finds_the_exact_code() {
        let t = ZipTable::grid(10);
        for (i, code) in ["Z000", "Z055", "Z099", "Z037"].iter().enumerate() {
            let r = scenario_zipcode_bisection(&t, code, 0.0, i as u64).unwrap();
            assert!(r.exact, "{r:?}");
        }
    }
}
