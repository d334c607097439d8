use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::HarnessError;
use crate::model::{Database, ModelError, Provenance, Schema, SchemaFile, Tuple, TupleId, Value};

/// Reads a schema sidecar and a CSV file whose header names every attribute.
pub fn load_csv(data: &Path, schema: &Path) -> Result<Database, HarnessError> {
    let schema: Schema = serde_json::from_reader(File::open(schema)?)?;
    read_csv(File::open(data)?, schema)
}

/// Parses CSV rows into a database. Tuple ids are 0-based row numbers and
/// empty cells become Null where the attribute allows it.
pub fn read_csv(input: impl Read, schema: Schema) -> Result<Database, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let mut column_of = vec![None; schema.arity()];
    for (c, name) in header.iter().enumerate() {
        let i = schema
            .index_of(name)
            .ok_or_else(|| HarnessError::UnknownColumn(name.to_string()))?;
        column_of[i] = Some(c);
    }
    let column_of: Vec<usize> = column_of
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| HarnessError::MissingColumn(schema.attribute(i).name.clone()))
        })
        .collect::<Result<_, _>>()?;
    let lookups: Vec<HashMap<&str, u32>> = schema
        .attributes()
        .iter()
        .map(|a| {
            a.domain
                .iter()
                .enumerate()
                .map(|(x, l)| (l.as_str(), x as u32))
                .collect()
        })
        .collect();

    let mut db = Database::new(schema.clone());
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(HarnessError::RaggedRow {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut values: Vec<Value> = Vec::with_capacity(schema.arity());
        for (i, &c) in column_of.iter().enumerate() {
            let attr = schema.attribute(i);
            let cell = &record[c];
            if cell.is_empty() {
                if !attr.allows_null {
                    return Err(HarnessError::NullNotAllowed {
                        row,
                        column: attr.name.clone(),
                    });
                }
                values.push(None);
                continue;
            }
            let x = lookups[i]
                .get(cell)
                .ok_or_else(|| HarnessError::UnknownValue {
                    row,
                    column: attr.name.clone(),
                    value: cell.to_string(),
                })?;
            values.push(Some(*x));
        }
        db.insert_tuple(Tuple {
            id: TupleId(row as u64),
            values,
            provenance: Provenance::BonaFide,
        })
        .map_err(|e| match e {
            ModelError::DuplicateTuple => HarnessError::DuplicateRow(row),
            e => e.into(),
        })?;
    }
    Ok(db)
}

/// Writes the database as CSV with domain labels, in schema column order.
pub fn write_csv(db: &Database, output: impl Write) -> Result<(), HarnessError> {
    let schema = db.schema();
    let mut w = csv::Writer::from_writer(output);
    w.write_record(schema.attributes().iter().map(|a| a.name.as_str()))?;
    for t in db.tuples() {
        w.write_record(t.values.iter().enumerate().map(|(i, v)| match v {
            Some(x) => schema.attribute(i).domain[*x as usize].as_str(),
            None => "",
        }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schema(schema: &Schema, path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(file, &SchemaFile::from(schema.clone()))?;
    Ok(())
}
