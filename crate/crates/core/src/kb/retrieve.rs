//! Keyed evidence lookup for detected errors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{KnowledgeBase, LayerId};
use crate::diagnose::ErrorType;
use crate::names;
use crate::text::edit_distance;

/// Upper bound on near-name candidates returned for one bad name.
pub const MAX_CANDIDATES: usize = 5;
const MAX_EDIT_DISTANCE: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceQuery {
    pub error_type: ErrorType,
    /// Table the bad element belongs to, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    /// Every table in play (the query's FROM list or the join's two sides).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    pub layer: LayerId,
    pub key: String,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Evidence {
    pub entries: Vec<EvidenceEntry>,
}

impl Evidence {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends entries not already present.
    pub fn merge(&mut self, other: Evidence) {
        for e in other.entries {
            if !self.entries.contains(&e) {
                self.entries.push(e);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrieveError {
    #[error("no retrieval rule for error type {0:?}")]
    UnknownErrorType(ErrorType),
    #[error("the knowledge base holds nothing relevant to this error")]
    EmptyEvidence,
}

/// Looks up the evidence that bears on one detected error.
///
/// * invalid column: K1 and K4 entries for near-name columns of the table
/// * invalid table: K1 entries for near-name tables
/// * join inconsistency: K6 edges touching any of the tables
/// * aggregation type mismatch: the column's K3 entry and K4 operations
pub fn retrieve(kb: &KnowledgeBase, q: &EvidenceQuery) -> Result<Evidence, RetrieveError> {
    let entries = match q.error_type {
        ErrorType::InvalidColumn => invalid_column(kb, q),
        ErrorType::InvalidTable => invalid_table(kb, q),
        ErrorType::JoinInconsistency => join_edges(kb, q),
        ErrorType::AggregationTypeMismatch => aggregation(kb, q),
        other => return Err(RetrieveError::UnknownErrorType(other)),
    };
    if entries.is_empty() {
        Err(RetrieveError::EmptyEvidence)
    } else {
        Ok(Evidence { entries })
    }
}

/// Names within edit distance 2 (closest first), then names sharing a
/// prefix with `target`, capped at [`MAX_CANDIDATES`].
pub(crate) fn near_names<'a>(target: &str, pool: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let pool: Vec<&str> = pool.collect();
    let mut close: Vec<(usize, &str)> =
        pool.iter().map(|n| (edit_distance(target, n), *n)).filter(|(d, _)| *d <= MAX_EDIT_DISTANCE).collect();
    close.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut out: Vec<&str> = close.into_iter().map(|(_, n)| n).collect();
    let t = names::key(target);
    let mut prefixed: Vec<&str> = pool
        .iter()
        .copied()
        .filter(|n| {
            let k = names::key(n);
            !t.is_empty() && (k.starts_with(&t) || t.starts_with(&k))
        })
        .filter(|n| !out.contains(n))
        .collect();
    prefixed.sort_unstable();
    out.extend(prefixed);
    out.truncate(MAX_CANDIDATES);
    out
}

fn invalid_column(kb: &KnowledgeBase, q: &EvidenceQuery) -> Vec<EvidenceEntry> {
    let Some(column) = q.column.as_deref() else { return Vec::new() };
    let scope: Vec<&str> = match &q.table {
        Some(t) => alloc::vec![t.as_str()],
        None => q.tables.iter().map(String::as_str).collect(),
    };
    let mut pool: Vec<(String, String)> = Vec::new();
    for t in scope {
        if let Some(meta) = kb.k1_metadata.table(t) {
            pool.extend(meta.columns.iter().map(|c| (meta.name.clone(), c.name.clone())));
        }
    }
    let labels: Vec<String> = pool.iter().map(|(_, c)| c.clone()).collect();
    let picked = near_names(column, labels.iter().map(String::as_str));
    let mut out = Vec::new();
    for name in picked {
        for (table, col) in pool.iter().filter(|(_, c)| c == name) {
            let key = format!("{table}.{col}");
            if let Some(m) = kb.k1_metadata.column(table, col) {
                out.push(EvidenceEntry {
                    layer: LayerId::K1,
                    key: key.clone(),
                    statement: format!("{key} (candidate for `{column}`): {}", m.description),
                });
            }
            if let Some(s) = kb.k4_columns.get(table, col) {
                out.push(EvidenceEntry {
                    layer: LayerId::K4,
                    key: key.clone(),
                    statement: format!("{key}: {}; allowed operations: {}", s.meaning, ops_list(s)),
                });
            }
        }
    }
    out
}

fn invalid_table(kb: &KnowledgeBase, q: &EvidenceQuery) -> Vec<EvidenceEntry> {
    let Some(target) = q.table.as_deref() else { return Vec::new() };
    let picked = near_names(target, kb.k1_metadata.tables.iter().map(|t| t.name.as_str()));
    picked
        .into_iter()
        .filter_map(|name| kb.k1_metadata.table(name))
        .map(|t| EvidenceEntry {
            layer: LayerId::K1,
            key: t.name.clone(),
            statement: format!("{} (candidate for `{target}`): {}", t.name, t.description),
        })
        .collect()
}

fn join_edges(kb: &KnowledgeBase, q: &EvidenceQuery) -> Vec<EvidenceEntry> {
    let mut tables: Vec<&str> = q.tables.iter().map(String::as_str).collect();
    if let Some(t) = &q.table {
        tables.push(t);
    }
    kb.k6_relations
        .join_edges
        .iter()
        .filter(|e| tables.iter().any(|t| e.touches(t)))
        .map(|e| {
            let mut statement = format!("{e} ({})", e.cardinality.as_str());
            if !e.label.is_empty() {
                statement.push_str(": ");
                statement.push_str(&e.label);
            }
            if e.inferred {
                statement.push_str(" [inferred, not a declared foreign key]");
            }
            EvidenceEntry { layer: LayerId::K6, key: e.to_string(), statement }
        })
        .collect()
}

fn aggregation(kb: &KnowledgeBase, q: &EvidenceQuery) -> Vec<EvidenceEntry> {
    let (Some(table), Some(column)) = (q.table.as_deref(), q.column.as_deref()) else { return Vec::new() };
    let mut out = Vec::new();
    if let Some(f) = kb.k3_field_types.get(table, column) {
        let mut statement = format!("{} is {}", f.column, f.semantic_category);
        if let Some(u) = &f.unit {
            statement.push_str(&format!(" in {u}"));
        }
        if !f.example_values.is_empty() {
            statement.push_str(&format!("; examples: {}", f.example_values.join(", ")));
        }
        out.push(EvidenceEntry { layer: LayerId::K3, key: f.column.to_string(), statement });
    }
    if let Some(s) = kb.k4_columns.get(table, column) {
        out.push(EvidenceEntry {
            layer: LayerId::K4,
            key: s.column.to_string(),
            statement: format!("{}: allowed operations: {}", s.column, ops_list(s)),
        });
    }
    out
}

fn ops_list(s: &super::ColumnSemantics) -> String {
    let v: Vec<&str> = s.allowed_operations.iter().map(|o| o.as_str()).collect();
    v.join(", ")
}
