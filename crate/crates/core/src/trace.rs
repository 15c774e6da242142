//! Generation specs, rationale traces and triples.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diagnose::DetectedError;
use crate::names;
use crate::schema::DatabaseSchema;
use crate::sql::Level;

/// Scenario plus target level for one draft.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub domain_context: String,
    pub task_type: String,
    pub level: Level,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Draft,
    Verified,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub main_scenario: String,
    pub sub_scenario: String,
    #[serde(serialize_with = "level_number", deserialize_with = "level_lenient")]
    pub complexity_level: Level,
    pub use_case: String,
}

fn level_number<S: Serializer>(l: &Level, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(l.number())
}

/// Accepts `1`, `"1"` or `"L1"`; models are not consistent about which.
fn level_lenient<'de, D: Deserializer<'de>>(d: D) -> Result<Level, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        N(u64),
        S(String),
    }
    match Raw::deserialize(d)? {
        Raw::N(n) => u8::try_from(n)
            .ok()
            .and_then(Level::from_number)
            .ok_or_else(|| serde::de::Error::custom(format!("complexity level {n} out of range"))),
        Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSelection {
    pub tables_used: Vec<String>,
    #[serde(default)]
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnUse {
    pub name: String,
    #[serde(rename = "type", default)]
    pub data_type: String,
    #[serde(default)]
    pub operation: String,
    #[serde(default)]
    pub purpose: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSelection {
    pub columns_used: Vec<ColumnUse>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SqlStrategy {
    #[serde(default)]
    pub operations: Vec<String>,
    #[serde(default)]
    pub approach: String,
    #[serde(default)]
    pub no_need: Vec<String>,
}

/// One correction round recorded in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementEntry {
    pub iteration: u32,
    pub errors: Vec<DetectedError>,
    pub corrections: Vec<String>,
}

/// The `think` block of a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleTrace {
    pub focus: String,
    pub metadata: TraceMetadata,
    pub table_selection: TableSelection,
    pub column_selection: ColumnSelection,
    #[serde(default)]
    pub sql_strategy: SqlStrategy,
    #[serde(default)]
    pub expected_output: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refinement_log: Vec<RefinementEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceViolation {
    #[error("trace lists no tables")]
    NoTables,
    #[error("table `{table}` is not in the schema")]
    UnknownTable { table: String },
    #[error("column `{column}` does not resolve in the selected tables")]
    UnknownColumn { column: String },
    #[error("trace declares level {declared} but the target is {expected}")]
    LevelMismatch { declared: Level, expected: Level },
}

impl RationaleTrace {
    /// Checks referential closure against `schema` and level agreement with
    /// `expected`. Returns every violation found.
    pub fn validate(&self, schema: &DatabaseSchema, expected: Level) -> Result<(), Vec<TraceViolation>> {
        let mut v = Vec::new();
        if self.table_selection.tables_used.is_empty() {
            v.push(TraceViolation::NoTables);
        }
        for t in &self.table_selection.tables_used {
            if schema.table(t).is_none() {
                v.push(TraceViolation::UnknownTable { table: t.clone() });
            }
        }
        for c in &self.column_selection.columns_used {
            if !self.column_resolves(schema, &c.name) {
                v.push(TraceViolation::UnknownColumn { column: c.name.clone() });
            }
        }
        if self.metadata.complexity_level != expected {
            v.push(TraceViolation::LevelMismatch { declared: self.metadata.complexity_level, expected });
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    fn column_resolves(&self, schema: &DatabaseSchema, name: &str) -> bool {
        if name == "*" {
            return true;
        }
        let used = &self.table_selection.tables_used;
        match names::split_qualified(name) {
            (Some(t), c) => used.iter().any(|u| names::same(u, t)) && (c == "*" || schema.has_column(t, c)),
            (None, c) => used.iter().any(|u| schema.has_column(u, c)),
        }
    }

    /// Index of the first `columns_used` entry naming `column` (bare or
    /// qualified by `table`).
    pub fn column_position(&self, table: Option<&str>, column: &str) -> Option<usize> {
        self.column_selection.columns_used.iter().position(|c| match names::split_qualified(&c.name) {
            (Some(t), n) => names::same(n, column) && table.is_none_or(|tb| names::same(t, tb)),
            (None, n) => names::same(n, column),
        })
    }

    pub fn table_position(&self, table: &str) -> Option<usize> {
        self.table_selection.tables_used.iter().position(|t| names::same(t, table))
    }

    /// `tables_used` as lowercase keys.
    pub fn table_keys(&self) -> BTreeSet<String> {
        self.table_selection.tables_used.iter().map(|t| names::key(t)).collect()
    }
}

/// A (question, sql, rationale) sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub sample_id: String,
    pub question: String,
    pub sql: String,
    pub rationale: RationaleTrace,
    pub status: Status,
}

/// Exported line shape: `question`, `think`, `answer`, in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub question: String,
    pub think: RationaleTrace,
    pub answer: String,
}

impl From<&Triple> for ExportRecord {
    fn from(t: &Triple) -> Self {
        ExportRecord { question: t.question.clone(), think: t.rationale.clone(), answer: t.sql.clone() }
    }
}
