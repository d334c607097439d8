//! Schemas, tuples, databases, queries and ranked answers.
//!
//! Domain values are small integer indices into each attribute's label list.
//! `None` stands for Null and is only legal where the attribute allows it.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single cell value: a domain index, or Null.
pub type Value = Option<u32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDescriptor {
    pub name: String,
    pub visibility: Visibility,
    pub domain: Vec<String>,
    #[serde(default)]
    pub allows_null: bool,
}

impl AttributeDescriptor {
    pub fn new(name: impl Into<String>, visibility: Visibility, domain: Vec<String>) -> Self {
        Self {
            name: name.into(),
            visibility,
            domain,
            allows_null: false,
        }
    }

    /// Descriptor whose labels are `"0".."size-1"`.
    pub fn indexed(name: impl Into<String>, visibility: Visibility, size: usize) -> Self {
        Self::new(name, visibility, (0..size).map(|i| i.to_string()).collect())
    }

    pub fn with_null(mut self, allows_null: bool) -> Self {
        self.allows_null = allows_null;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("attribute `{0}` has a domain with fewer than two values")]
    EmptyDomain(String),
    #[error("attribute `{0}` repeats a domain value")]
    DuplicateDomainValue(String),
    #[error("schema has no private attribute")]
    NoPrivateAttribute,
    #[error("schema has no public attribute")]
    NoPublicAttribute,
    #[error("attribute name `{0}` appears twice")]
    DuplicateAttributeName(String),
    #[error("tuple already present")]
    DuplicateTuple,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("tuple id {0} already in use")]
    DuplicateId(TupleId),
    #[error("no tuple with id {0}")]
    UnknownTuple(TupleId),
}

/// Attribute list with every public attribute ahead of every private one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct Schema {
    attributes: Vec<AttributeDescriptor>,
    m: usize,
}

/// On-disk shape of a schema: `{"attributes":[...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub attributes: Vec<AttributeDescriptor>,
}

impl TryFrom<SchemaFile> for Schema {
    type Error = ModelError;
    fn try_from(f: SchemaFile) -> Result<Self, ModelError> {
        Schema::build(f.attributes)
    }
}

impl From<Schema> for SchemaFile {
    fn from(s: Schema) -> Self {
        SchemaFile {
            attributes: s.attributes,
        }
    }
}

impl Schema {
    /// Validates descriptors and reorders them so publics precede privates.
    /// Relative order within each visibility class is preserved.
    pub fn build(descriptors: Vec<AttributeDescriptor>) -> Result<Self, ModelError> {
        let mut names = BTreeSet::new();
        for d in &descriptors {
            if !names.insert(d.name.as_str()) {
                return Err(ModelError::DuplicateAttributeName(d.name.clone()));
            }
            if d.domain.len() < 2 {
                return Err(ModelError::EmptyDomain(d.name.clone()));
            }
            let labels: BTreeSet<&str> = d.domain.iter().map(String::as_str).collect();
            if labels.len() != d.domain.len() {
                return Err(ModelError::DuplicateDomainValue(d.name.clone()));
            }
        }
        let (public, private): (Vec<_>, Vec<_>) = descriptors
            .into_iter()
            .partition(|d| d.visibility == Visibility::Public);
        if private.is_empty() {
            return Err(ModelError::NoPrivateAttribute);
        }
        if public.is_empty() {
            return Err(ModelError::NoPublicAttribute);
        }
        let m = public.len();
        let mut attributes = public;
        attributes.extend(private);
        Ok(Self { attributes, m })
    }

    /// Schema named `A1..Am`, `B1..Bm'` with the given domain sizes.
    pub fn with_domains(public: &[usize], private: &[usize]) -> Result<Self, ModelError> {
        let mut descs = Vec::with_capacity(public.len() + private.len());
        for (i, &s) in public.iter().enumerate() {
            descs.push(AttributeDescriptor::indexed(
                format!("A{}", i + 1),
                Visibility::Public,
                s,
            ));
        }
        for (j, &s) in private.iter().enumerate() {
            descs.push(AttributeDescriptor::indexed(
                format!("B{}", j + 1),
                Visibility::Private,
                s,
            ));
        }
        Self::build(descs)
    }

    /// All-binary schema with `m` public and `m_prime` private attributes.
    pub fn binary(m: usize, m_prime: usize) -> Result<Self, ModelError> {
        Self::with_domains(&vec![2; m], &vec![2; m_prime])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn m_prime(&self) -> usize {
        self.attributes.len() - self.m
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn attributes(&self) -> &[AttributeDescriptor] {
        &self.attributes
    }

    pub fn attribute(&self, index: usize) -> &AttributeDescriptor {
        &self.attributes[index]
    }

    pub fn domain_size(&self, index: usize) -> usize {
        self.attributes[index].domain.len()
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.domain.len()).collect()
    }

    pub fn is_public(&self, index: usize) -> bool {
        index < self.m
    }

    /// Schema index of private attribute `B_{j+1}`.
    pub fn private_index(&self, j: usize) -> usize {
        self.m + j
    }

    pub fn public_indices(&self) -> std::ops::Range<usize> {
        0..self.m
    }

    pub fn private_indices(&self) -> std::ops::Range<usize> {
        self.m..self.attributes.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Checks arity, domain bounds and Null permissions.
    pub fn validate_values(&self, values: &[Value]) -> Result<(), ModelError> {
        if values.len() != self.arity() {
            return Err(ModelError::SchemaMismatch(format!(
                "expected {} values, got {}",
                self.arity(),
                values.len()
            )));
        }
        for (i, (v, a)) in values.iter().zip(&self.attributes).enumerate() {
            match v {
                None if !a.allows_null => {
                    return Err(ModelError::SchemaMismatch(format!(
                        "attribute {i} (`{}`) does not allow null",
                        a.name
                    )))
                }
                Some(x) if *x as usize >= a.domain.len() => {
                    return Err(ModelError::SchemaMismatch(format!(
                        "value {x} outside domain of attribute {i} (`{}`)",
                        a.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TupleId(pub u64);

impl fmt::Display for TupleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    BonaFide,
    Inserted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tuple {
    pub id: TupleId,
    pub values: Vec<Value>,
    pub provenance: Provenance,
}

impl Tuple {
    pub fn public(&self, schema: &Schema) -> &[Value] {
        &self.values[..schema.m()]
    }

    pub fn private(&self, schema: &Schema) -> &[Value] {
        &self.values[schema.m()..]
    }
}

/// The part of a tuple an answer may reveal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicProjection {
    pub id: TupleId,
    pub public: Vec<Value>,
}

pub fn project_public(t: &Tuple, schema: &Schema) -> PublicProjection {
    PublicProjection {
        id: t.id,
        public: t.public(schema).to_vec(),
    }
}

/// Duplicate-free tuple collection. Insertion order is kept.
#[derive(Debug, Clone)]
pub struct Database {
    schema: Schema,
    tuples: Vec<Tuple>,
    by_id: HashMap<TupleId, usize>,
    by_values: HashMap<Vec<Value>, TupleId>,
    next_id: u64,
}

impl Database {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            tuples: Vec::new(),
            by_id: HashMap::new(),
            by_values: HashMap::new(),
            next_id: 0,
        }
    }

    /// Builds a database of bona fide tuples with ids `0..rows.len()`.
    pub fn from_rows(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self, ModelError> {
        let mut db = Self::new(schema);
        for row in rows {
            db.insert(row, Provenance::BonaFide)?;
        }
        Ok(db)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn get(&self, id: TupleId) -> Option<&Tuple> {
        self.by_id.get(&id).map(|&i| &self.tuples[i])
    }

    pub fn contains_values(&self, values: &[Value]) -> Option<TupleId> {
        self.by_values.get(values).copied()
    }

    pub fn next_id(&self) -> TupleId {
        TupleId(self.next_id)
    }

    /// Inserts with a fresh id.
    pub fn insert(
        &mut self,
        values: Vec<Value>,
        provenance: Provenance,
    ) -> Result<TupleId, ModelError> {
        let id = TupleId(self.next_id);
        self.insert_tuple(Tuple {
            id,
            values,
            provenance,
        })?;
        Ok(id)
    }

    /// Inserts a tuple carrying its own id.
    pub fn insert_tuple(&mut self, t: Tuple) -> Result<(), ModelError> {
        self.schema.validate_values(&t.values)?;
        if self.by_id.contains_key(&t.id) {
            return Err(ModelError::DuplicateId(t.id));
        }
        if self.by_values.contains_key(&t.values) {
            return Err(ModelError::DuplicateTuple);
        }
        self.next_id = self.next_id.max(t.id.0 + 1);
        self.by_values.insert(t.values.clone(), t.id);
        self.by_id.insert(t.id, self.tuples.len());
        self.tuples.push(t);
        Ok(())
    }

    pub fn remove(&mut self, id: TupleId) -> Result<Tuple, ModelError> {
        let idx = self.by_id.remove(&id).ok_or(ModelError::UnknownTuple(id))?;
        let t = self.tuples.remove(idx);
        self.by_values.remove(&t.values);
        for pos in self.by_id.values_mut() {
            if *pos > idx {
                *pos -= 1;
            }
        }
        Ok(t)
    }

    /// Replaces the values of an existing tuple, keeping id and provenance.
    pub fn update(&mut self, id: TupleId, values: Vec<Value>) -> Result<(), ModelError> {
        self.schema.validate_values(&values)?;
        let idx = *self.by_id.get(&id).ok_or(ModelError::UnknownTuple(id))?;
        if let Some(&other) = self.by_values.get(&values) {
            if other != id {
                return Err(ModelError::DuplicateTuple);
            }
            return Ok(());
        }
        let old = std::mem::replace(&mut self.tuples[idx].values, values.clone());
        self.by_values.remove(&old);
        self.by_values.insert(values, id);
        Ok(())
    }
}

/// How a predicate relates to its attribute's domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredicateKind {
    Point,
    In,
    Star,
}

/// One non-empty, sorted value set per attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    predicates: Vec<Vec<u32>>,
}

impl Query {
    /// Validates predicate sets against the schema; sorts and deduplicates them.
    pub fn new(schema: &Schema, predicates: Vec<Vec<u32>>) -> Result<Self, ModelError> {
        if predicates.len() != schema.arity() {
            return Err(ModelError::SchemaMismatch(format!(
                "expected {} predicates, got {}",
                schema.arity(),
                predicates.len()
            )));
        }
        let mut out = Vec::with_capacity(predicates.len());
        for (i, mut p) in predicates.into_iter().enumerate() {
            p.sort_unstable();
            p.dedup();
            if p.is_empty() {
                return Err(ModelError::SchemaMismatch(format!(
                    "empty predicate on attribute {i}"
                )));
            }
            if *p.last().unwrap() as usize >= schema.domain_size(i) {
                return Err(ModelError::SchemaMismatch(format!(
                    "predicate value outside domain of attribute {i}"
                )));
            }
            out.push(p);
        }
        Ok(Self { predicates: out })
    }

    /// Point query. Null cells map to value 0, which a Null never matches anyway.
    pub fn point(values: &[Value]) -> Self {
        Self {
            predicates: values.iter().map(|v| vec![v.unwrap_or(0)]).collect(),
        }
    }

    pub fn point_u32(values: &[u32]) -> Self {
        Self {
            predicates: values.iter().map(|&v| vec![v]).collect(),
        }
    }

    /// Caller guarantees sorted, deduplicated, in-domain predicate sets.
    pub(crate) fn from_sorted(predicates: Vec<Vec<u32>>) -> Self {
        Self { predicates }
    }

    pub fn star(schema: &Schema) -> Self {
        Self {
            predicates: (0..schema.arity())
                .map(|i| (0..schema.domain_size(i) as u32).collect())
                .collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.predicates.len()
    }

    pub fn predicates(&self) -> &[Vec<u32>] {
        &self.predicates
    }

    pub fn predicate(&self, attr: usize) -> &[u32] {
        &self.predicates[attr]
    }

    /// Replaces one predicate. The caller keeps the set non-empty and in-domain.
    pub fn set(&mut self, attr: usize, mut values: Vec<u32>) {
        values.sort_unstable();
        values.dedup();
        debug_assert!(!values.is_empty());
        self.predicates[attr] = values;
    }

    pub fn set_point(&mut self, attr: usize, value: u32) {
        self.predicates[attr].clear();
        self.predicates[attr].push(value);
    }

    pub fn with_point(&self, attr: usize, value: u32) -> Self {
        let mut q = self.clone();
        q.set_point(attr, value);
        q
    }

    pub fn matches(&self, attr: usize, value: Value) -> bool {
        match value {
            None => false,
            Some(x) => self.predicates[attr].binary_search(&x).is_ok(),
        }
    }

    pub fn is_point(&self, attr: usize) -> bool {
        self.predicates[attr].len() == 1
    }

    pub fn point_value(&self, attr: usize) -> Option<u32> {
        match self.predicates[attr].as_slice() {
            [x] => Some(*x),
            _ => None,
        }
    }

    pub fn is_star(&self, schema: &Schema, attr: usize) -> bool {
        self.predicates[attr].len() == schema.domain_size(attr)
    }

    pub fn kind(&self, schema: &Schema, attr: usize) -> PredicateKind {
        if self.is_star(schema, attr) {
            PredicateKind::Star
        } else if self.is_point(attr) {
            PredicateKind::Point
        } else {
            PredicateKind::In
        }
    }

    pub fn is_point_query(&self) -> bool {
        self.predicates.iter().all(|p| p.len() == 1)
    }

    /// Attributes on which `self` and `other` have different predicates.
    pub fn differing_attributes(&self, other: &Query) -> Vec<usize> {
        self.predicates
            .iter()
            .zip(&other.predicates)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn into_predicates(self) -> Vec<Vec<u32>> {
        self.predicates
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub entries: Vec<PublicProjection>,
    pub k: usize,
}

impl RankedAnswer {
    pub fn ids(&self) -> impl Iterator<Item = TupleId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    /// 1-based rank of `id`, if listed.
    pub fn rank_of(&self, id: TupleId) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id).map(|p| p + 1)
    }

    pub fn contains(&self, id: TupleId) -> bool {
        self.rank_of(id).is_some()
    }

    pub fn top(&self) -> Option<TupleId> {
        self.entries.first().map(|e| e.id)
    }
}

/// Whether the victim is listed, and where.
pub fn returns_victim(answer: &RankedAnswer, victim: TupleId) -> (bool, Option<usize>) {
    let rank = answer.rank_of(victim);
    (rank.is_some(), rank)
}
