//! SQL understanding: fact extraction and structural complexity levels.

mod complexity;
mod facts;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use complexity::classify_complexity;
pub use complexity::WIDE_QUERY_TABLES;
pub use facts::{extract_facts, statement_is_select};

/// Structural feature flags observed anywhere in a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Where,
    OrderBy,
    Limit,
    Distinct,
    GroupBy,
    Having,
    Join,
    Subquery,
    CorrelatedSubquery,
    CaseWhen,
    /// Any compound SELECT (`UNION`, `INTERSECT`, `EXCEPT`).
    Union,
    WindowFunction,
    Cte,
    RecursiveCte,
}

impl Feature {
    pub const ALL: [Feature; 14] = [
        Feature::Where,
        Feature::OrderBy,
        Feature::Limit,
        Feature::Distinct,
        Feature::GroupBy,
        Feature::Having,
        Feature::Join,
        Feature::Subquery,
        Feature::CorrelatedSubquery,
        Feature::CaseWhen,
        Feature::Union,
        Feature::WindowFunction,
        Feature::Cte,
        Feature::RecursiveCte,
    ];
}

/// A column attributed to a base table (or to an unknown table named in FROM).
///
/// Serialized as the string `table.column`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef { table: table.into(), column: column.into() }
    }
}

impl core::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

impl From<ColumnRef> for String {
    fn from(c: ColumnRef) -> String {
        alloc::format!("{c}")
    }
}

impl TryFrom<String> for ColumnRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match crate::names::split_qualified(&s) {
            (Some(t), c) => Ok(ColumnRef::new(t, c)),
            (None, _) => Err(alloc::format!("expected `table.column`, got `{s}`")),
        }
    }
}

/// A column reference that could not be attributed to any source in scope.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnresolvedRef {
    pub qualifier: Option<String>,
    pub column: String,
}

impl core::fmt::Display for UnresolvedRef {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinCondition {
    pub left: ColumnRef,
    pub right: ColumnRef,
    pub op: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggArg {
    Star,
    Column(ColumnRef),
    /// Anything other than a bare column, e.g. `SUM(a * b)`.
    Expression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregation {
    /// Upper-cased function name.
    pub function: String,
    pub arg: AggArg,
    /// Whether the call carries an `OVER` clause.
    pub windowed: bool,
}

/// Everything the verifier and classifier need to know about one query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlFacts {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<ColumnRef>,
    pub unresolved: Vec<UnresolvedRef>,
    pub join_conditions: Vec<JoinCondition>,
    pub aggregations: Vec<Aggregation>,
    pub features: BTreeSet<Feature>,
}

impl SqlFacts {
    pub fn has(&self, f: Feature) -> bool {
        self.features.contains(&f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
    L4,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L1, Level::L2, Level::L3, Level::L4];

    pub fn number(self) -> u8 {
        match self {
            Level::L1 => 1,
            Level::L2 => 2,
            Level::L3 => 3,
            Level::L4 => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Level> {
        Level::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }
}

impl core::fmt::Display for Level {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "L{}", self.number())
    }
}

impl core::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches(['L', 'l']);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Level::from_number)
            .ok_or_else(|| alloc::format!("unknown complexity level `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityLevel {
    pub level: Level,
    pub matched_features: BTreeSet<Feature>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("empty SQL text")]
    Empty,
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { message: String, line: u64, column: u64 },
    #[error("unsupported statement: {0}")]
    UnsupportedDialect(String),
}
