//! Relations over named attributes, with weighted tuples in a canonical order.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::Score;

/// An attribute value: joins compare values for equality only, so the domain
/// is 64-bit integers and strings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl Value {
    /// All-digit text becomes an integer, everything else stays a string.
    pub fn parse(text: &str) -> Value {
        if !text.is_empty() && text.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = text.parse::<i64>() {
                return Value::Int(n);
            }
        }
        Value::Str(text.to_string())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

/// A weighted tuple. `values` is aligned with the owning relation's schema;
/// `ts` is the insertion ordinal (0 for all tuples in static mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuple {
    pub values: Vec<Value>,
    pub weight: f64,
    pub ts: u64,
}

/// A named relation whose tuples sit in a canonical order: grouped by the
/// key-attribute projection, groups ordered by key value, and tuples inside a
/// group ordered by `(ts, values)`.
#[derive(Debug, Clone)]
pub struct Relation {
    pub name: String,
    /// Attribute names, sorted; `tuples[i].values` follows this order.
    pub schema: Vec<String>,
    pub tuples: Vec<Tuple>,
    /// Positions (into `schema`) of the join-key attributes shared with the
    /// parent node. Empty at the root and before tree construction.
    pub key_positions: Vec<usize>,
    /// Key value of each group -> contiguous tuple range.
    pub groups: Vec<(Vec<Value>, Range<usize>)>,
    group_lookup: HashMap<Vec<Value>, usize>,
    /// Cached per-tuple scores; filled when the owning index fixes `L`.
    pub scores: Vec<Score>,
}

impl Relation {
    pub fn new(name: impl Into<String>, mut schema: Vec<String>) -> Result<Relation> {
        schema.sort();
        schema.dedup();
        if schema.is_empty() {
            return Err(Error::SchemaMismatch("empty schema".into()));
        }
        Ok(Relation {
            name: name.into(),
            schema,
            tuples: Vec::new(),
            key_positions: Vec::new(),
            groups: Vec::new(),
            group_lookup: HashMap::new(),
            scores: Vec::new(),
        })
    }

    pub fn attr_position(&self, attr: &str) -> Option<usize> {
        self.schema.iter().position(|a| a == attr)
    }

    /// Append a tuple; values must be given in schema order.
    pub fn push(&mut self, values: Vec<Value>, weight: f64, ts: u64) -> Result<()> {
        if values.len() != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "relation {} expects {} values, got {}",
                self.name,
                self.schema.len(),
                values.len()
            )));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidArgument(format!(
                "weight {weight} outside [0, 1]"
            )));
        }
        self.tuples.push(Tuple { values, weight, ts });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn key_of(&self, tuple: &Tuple) -> Vec<Value> {
        self.key_positions
            .iter()
            .map(|&p| tuple.values[p].clone())
            .collect()
    }

    /// Fix the key attributes and rebuild the canonical order and group index.
    pub fn set_key(&mut self, key_attrs: &[String]) -> Result<()> {
        let mut positions = Vec::with_capacity(key_attrs.len());
        for attr in key_attrs {
            let p = self.attr_position(attr).ok_or_else(|| {
                Error::SchemaMismatch(format!(
                    "key attribute {attr} missing from relation {}",
                    self.name
                ))
            })?;
            positions.push(p);
        }
        positions.sort_unstable();
        self.key_positions = positions;
        self.reindex();
        Ok(())
    }

    /// Re-sort tuples into canonical order and rebuild the group ranges.
    pub fn reindex(&mut self) {
        let key_positions = self.key_positions.clone();
        self.tuples.sort_by(|a, b| {
            let ka = key_positions.iter().map(|&p| &a.values[p]);
            let kb = key_positions.iter().map(|&p| &b.values[p]);
            ka.cmp(kb)
                .then_with(|| a.ts.cmp(&b.ts))
                .then_with(|| a.values.cmp(&b.values))
        });
        self.groups.clear();
        self.group_lookup.clear();
        let mut start = 0;
        while start < self.tuples.len() {
            let key = self.key_of(&self.tuples[start]);
            let mut end = start + 1;
            while end < self.tuples.len() && self.key_of(&self.tuples[end]) == key {
                end += 1;
            }
            self.group_lookup.insert(key.clone(), self.groups.len());
            self.groups.push((key, start..end));
            start = end;
        }
    }

    /// Contiguous range of tuples whose key projection equals `key`.
    pub fn group_range(&self, key: &[Value]) -> Range<usize> {
        match self.group_lookup.get(key) {
            Some(&g) => self.groups[g].1.clone(),
            None => 0..0,
        }
    }

    pub fn group_id(&self, key: &[Value]) -> Option<usize> {
        self.group_lookup.get(key).copied()
    }

    /// Detect exact duplicates by attribute values (set semantics).
    pub fn contains_values(&self, values: &[Value]) -> bool {
        self.tuples.iter().any(|t| t.values == values)
    }
}
