//! Query specification files and CSV ingestion.
//!
//! A query spec is one JSON file naming the relations, their CSV files, the
//! aggregator, and the seed. Relation CSVs carry the attribute columns plus
//! a mandatory `weight` column and an optional `ts` column for replay
//! ordering. Schemas may be declared explicitly; the CSV header is the
//! fallback.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, DEFAULT_RESULT_CAP};
use crate::relation::{Relation, Value};
use crate::score::AggKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuerySpec {
    pub relations: Vec<RelationSpec>,
    #[serde(default = "default_agg")]
    pub aggregator: AggKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_override: Option<u32>,
    #[serde(default = "default_cap")]
    pub result_cap: u64,
}

fn default_agg() -> AggKind {
    AggKind::Product
}

fn default_cap() -> u64 {
    DEFAULT_RESULT_CAP
}

impl QuerySpec {
    pub fn from_file(path: &Path) -> Result<QuerySpec> {
        let text = std::fs::read_to_string(path)?;
        let spec: QuerySpec = serde_json::from_str(&text)?;
        let mut names = HashSet::new();
        for rel in &spec.relations {
            if !names.insert(rel.name.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate relation name {:?}",
                    rel.name
                )));
            }
            if let Some(schema) = &rel.schema {
                if schema.is_empty() {
                    return Err(Error::SchemaMismatch(format!(
                        "relation {:?} declares an empty schema",
                        rel.name
                    )));
                }
            }
        }
        if spec.relations.is_empty() {
            return Err(Error::InvalidArgument("no relations in spec".into()));
        }
        Ok(spec)
    }

    /// Resolve relation file paths relative to the spec's directory.
    pub fn resolve_paths(&mut self, spec_path: &Path) {
        let base = spec_path.parent().unwrap_or(Path::new("."));
        for rel in &mut self.relations {
            if rel.file.is_relative() {
                rel.file = base.join(&rel.file);
            }
        }
    }
}

/// One parsed CSV row.
#[derive(Debug, Clone)]
pub struct LoadedRow {
    pub values: Vec<Value>,
    pub weight: f64,
    pub ts: Option<u64>,
    pub line: u64,
}

/// Parse a relation CSV: header names the attributes plus `weight` and
/// optionally `ts`; all-digit cells become integers. Errors carry file:line.
pub fn load_rows(path: &Path, declared_schema: Option<&[String]>) -> Result<(Vec<String>, Vec<LoadedRow>)> {
    let file_label = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let weight_col = headers.iter().position(|h| h == "weight").ok_or_else(|| {
        Error::BadInput {
            file: file_label.clone(),
            line: 1,
            msg: "missing mandatory `weight` column".into(),
        }
    })?;
    let ts_col = headers.iter().position(|h| h == "ts");
    let attr_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != weight_col && Some(i) != ts_col)
        .collect();
    let schema: Vec<String> = attr_cols.iter().map(|&i| headers[i].clone()).collect();
    if let Some(declared) = declared_schema {
        let mut a: Vec<&String> = schema.iter().collect();
        let mut b: Vec<&String> = declared.iter().collect();
        a.sort();
        b.sort();
        if a != b {
            return Err(Error::SchemaMismatch(format!(
                "{file_label}: header attributes {schema:?} do not match declared schema {declared:?}"
            )));
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(0);
        let values: Vec<Value> = attr_cols
            .iter()
            .map(|&i| Value::parse(&record[i]))
            .collect();
        let weight: f64 = record[weight_col].parse().map_err(|_| Error::BadInput {
            file: file_label.clone(),
            line,
            msg: format!("weight {:?} is not a number", &record[weight_col]),
        })?;
        if !(0.0..=1.0).contains(&weight) || weight.is_nan() {
            return Err(Error::BadInput {
                file: file_label.clone(),
                line,
                msg: format!("weight {weight} outside [0, 1]"),
            });
        }
        let ts = match ts_col {
            Some(c) => Some(record[c].parse::<u64>().map_err(|_| Error::BadInput {
                file: file_label.clone(),
                line,
                msg: format!("ts {:?} is not a nonnegative integer", &record[c]),
            })?),
            None => None,
        };
        rows.push(LoadedRow {
            values,
            weight,
            ts,
            line,
        });
    }
    Ok((schema, rows))
}

/// Load every relation of the spec into an instance, enforcing set
/// semantics.
pub fn load_relations(spec: &QuerySpec) -> Result<Instance> {
    let mut relations = Vec::with_capacity(spec.relations.len());
    for rel_spec in &spec.relations {
        let (header_schema, rows) = load_rows(&rel_spec.file, rel_spec.schema.as_deref())?;
        let schema = rel_spec.schema.clone().unwrap_or(header_schema.clone());
        let mut relation = Relation::new(rel_spec.name.clone(), schema)?;
        // header order -> sorted schema order
        let reorder: Vec<usize> = relation
            .schema
            .iter()
            .map(|a| {
                header_schema
                    .iter()
                    .position(|h| h == a)
                    .expect("schema checked against header")
            })
            .collect();
        let mut seen = HashSet::new();
        let file_label = rel_spec.file.display().to_string();
        for row in rows {
            let values: Vec<Value> = reorder.iter().map(|&i| row.values[i].clone()).collect();
            if !seen.insert(values.clone()) {
                return Err(Error::DuplicateTuple {
                    file: file_label.clone(),
                    line: row.line,
                });
            }
            relation.push(values, row.weight, row.ts.unwrap_or(0))?;
        }
        relations.push(relation);
    }
    Instance::new(relations)
}

/// One insertion of a replay stream.
#[derive(Debug, Clone)]
pub struct StreamEvent {
    pub relation: usize,
    pub values: Vec<Value>,
    pub weight: f64,
}

/// Parse a stream CSV: columns `relation`, optional `ts`, `weight`, and the
/// union of all relation attributes; each row fills exactly its relation's
/// schema and leaves the other attribute cells empty. Events are replayed
/// in ts order (file order when ts is absent).
pub fn load_stream(path: &Path, instance_schemas: &[(String, Vec<String>)]) -> Result<Vec<StreamEvent>> {
    let file_label = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let rel_col = col("relation").ok_or_else(|| Error::BadInput {
        file: file_label.clone(),
        line: 1,
        msg: "missing `relation` column".into(),
    })?;
    let weight_col = col("weight").ok_or_else(|| Error::BadInput {
        file: file_label.clone(),
        line: 1,
        msg: "missing `weight` column".into(),
    })?;
    let ts_col = col("ts");

    let mut events: Vec<(u64, u64, StreamEvent)> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let rel_name = &record[rel_col];
        let relation = instance_schemas
            .iter()
            .position(|(name, _)| name == rel_name)
            .ok_or_else(|| Error::BadInput {
                file: file_label.clone(),
                line,
                msg: format!("unknown relation {rel_name:?}"),
            })?;
        let schema = &instance_schemas[relation].1;
        let values: Vec<Value> = schema
            .iter()
            .map(|attr| {
                let c = col(attr).ok_or_else(|| Error::BadInput {
                    file: file_label.clone(),
                    line,
                    msg: format!("missing attribute column {attr:?}"),
                })?;
                let cell = &record[c];
                if cell.is_empty() {
                    return Err(Error::BadInput {
                        file: file_label.clone(),
                        line,
                        msg: format!("empty cell for attribute {attr:?} of {rel_name:?}"),
                    });
                }
                Ok(Value::parse(cell))
            })
            .collect::<Result<Vec<_>>>()?;
        let weight: f64 = record[weight_col].parse().map_err(|_| Error::BadInput {
            file: file_label.clone(),
            line,
            msg: format!("weight {:?} is not a number", &record[weight_col]),
        })?;
        let ts = match ts_col {
            Some(c) => record[c].parse::<u64>().map_err(|_| Error::BadInput {
                file: file_label.clone(),
                line,
                msg: "bad ts".into(),
            })?,
            None => row_idx as u64,
        };
        events.push((
            ts,
            row_idx as u64,
            StreamEvent {
                relation,
                values,
                weight,
            },
        ));
    }
    events.sort_by_key(|(ts, idx, _)| (*ts, *idx));
    Ok(events.into_iter().map(|(_, _, e)| e).collect())
}
