//! Relational schema and instance-sample model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::names;

/// Rows per table taken by instance sampling unless configured otherwise.
pub const DEFAULT_SAMPLE_ROWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("duplicate table name `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{column}` in table `{table}`")]
    DuplicateColumn { table: String, column: String },
    #[error("empty column name in table `{0}`")]
    EmptyColumnName(String),
    #[error("primary key column `{column}` is not declared in table `{table}`")]
    UnknownPrimaryKey { table: String, column: String },
    #[error("foreign key {0} references an unknown table or column")]
    DanglingForeignKey(String),
    #[error("foreign key {0} points a column at itself")]
    SelfLoop(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    /// Declared storage type exactly as written in the DDL (may be empty).
    pub declared_type: String,
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub primary_key: Vec<String>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| names::same(&c.name, name))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKeyDef {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

impl core::fmt::Display for ForeignKeyDef {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}.{} -> {}.{}", self.from_table, self.from_column, self.to_table, self.to_column)
    }
}

impl ForeignKeyDef {
    /// True when the pair `(a, b)` is this key in either orientation.
    pub fn connects(&self, a: (&str, &str), b: (&str, &str)) -> bool {
        let from = (self.from_table.as_str(), self.from_column.as_str());
        let to = (self.to_table.as_str(), self.to_column.as_str());
        (pair_eq(from, a) && pair_eq(to, b)) || (pair_eq(from, b) && pair_eq(to, a))
    }
}

fn pair_eq(x: (&str, &str), y: (&str, &str)) -> bool {
    names::same(x.0, y.0) && names::same(x.1, y.1)
}

/// Schema `S` of a database. Construct through [`DatabaseSchema::new`] so the
/// structural invariants hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatabaseSchema {
    pub db_name: String,
    pub tables: Vec<TableDef>,
    pub foreign_keys: Vec<ForeignKeyDef>,
}

impl<'de> Deserialize<'de> for DatabaseSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            db_name: String,
            tables: Vec<TableDef>,
            #[serde(default)]
            foreign_keys: Vec<ForeignKeyDef>,
        }
        let raw = Raw::deserialize(d)?;
        DatabaseSchema::new(raw.db_name, raw.tables, raw.foreign_keys).map_err(serde::de::Error::custom)
    }
}

impl DatabaseSchema {
    pub fn new(
        db_name: impl Into<String>,
        tables: Vec<TableDef>,
        foreign_keys: Vec<ForeignKeyDef>,
    ) -> Result<Self, SchemaError> {
        let mut seen = BTreeSet::new();
        for t in &tables {
            if !seen.insert(names::key(&t.name)) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if c.name.is_empty() {
                    return Err(SchemaError::EmptyColumnName(t.name.clone()));
                }
                if !cols.insert(names::key(&c.name)) {
                    return Err(SchemaError::DuplicateColumn { table: t.name.clone(), column: c.name.clone() });
                }
            }
            for pk in &t.primary_key {
                if !t.has_column(pk) {
                    return Err(SchemaError::UnknownPrimaryKey { table: t.name.clone(), column: pk.clone() });
                }
            }
        }
        let schema = DatabaseSchema { db_name: db_name.into(), tables, foreign_keys: Vec::new() };
        for fk in &foreign_keys {
            schema.check_foreign_key(fk)?;
        }
        Ok(DatabaseSchema { foreign_keys, ..schema })
    }

    /// Validates one foreign key against the tables of this schema.
    pub fn check_foreign_key(&self, fk: &ForeignKeyDef) -> Result<(), SchemaError> {
        if names::same(&fk.from_table, &fk.to_table) && names::same(&fk.from_column, &fk.to_column) {
            return Err(SchemaError::SelfLoop(fk.to_string()));
        }
        if !self.has_column(&fk.from_table, &fk.from_column) || !self.has_column(&fk.to_table, &fk.to_column) {
            return Err(SchemaError::DanglingForeignKey(fk.to_string()));
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| names::same(&t.name, name))
    }

    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.table(table).is_some_and(|t| t.has_column(column))
    }

    /// Canonical spelling of a table name, if it exists.
    pub fn canonical_table(&self, name: &str) -> Option<&str> {
        self.table(name).map(|t| t.name.as_str())
    }

    /// Canonical `(table, column)` spelling, if both exist.
    pub fn canonical_column(&self, table: &str, column: &str) -> Option<(&str, &str)> {
        let t = self.table(table)?;
        let c = t.column(column)?;
        Some((t.name.as_str(), c.name.as_str()))
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Compact DDL-like rendering used inside prompts.
    pub fn to_ddl(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let _ = write!(out, "CREATE TABLE {} (", t.name);
            for (i, c) in t.columns.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&c.name);
                if !c.declared_type.is_empty() {
                    out.push(' ');
                    out.push_str(&c.declared_type);
                }
                if !c.nullable {
                    out.push_str(" NOT NULL");
                }
            }
            if !t.primary_key.is_empty() {
                let _ = write!(out, ", PRIMARY KEY ({})", t.primary_key.join(", "));
            }
            for fk in self.foreign_keys.iter().filter(|fk| names::same(&fk.from_table, &t.name)) {
                let _ = write!(out, ", FOREIGN KEY ({}) REFERENCES {}({})", fk.from_column, fk.to_table, fk.to_column);
            }
            out.push_str(");\n");
        }
        out
    }
}

/// A single sampled cell. Blobs are replaced by a content digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CellValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    BlobDigest(String),
}

impl core::fmt::Display for CellValue {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CellValue::Null => f.write_str("NULL"),
            CellValue::Integer(v) => write!(f, "{v}"),
            CellValue::Real(v) => write!(f, "{v}"),
            CellValue::Text(s) => write!(f, "{s:?}"),
            CellValue::BlobDigest(d) => write!(f, "<blob {d}>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSample {
    pub table: String,
    /// Total rows in the table at sampling time.
    pub row_count: u64,
    pub rows: Vec<Vec<CellValue>>,
}

/// `I_sample`: a deterministic per-table row sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSample {
    pub rows_per_table: usize,
    pub seed: u64,
    pub tables: Vec<TableSample>,
}

impl InstanceSample {
    pub fn table(&self, name: &str) -> Option<&TableSample> {
        self.tables.iter().find(|t| names::same(&t.table, name))
    }

    /// Checks arity and cap against the schema.
    pub fn check(&self, schema: &DatabaseSchema) -> Result<(), String> {
        for ts in &self.tables {
            let Some(def) = schema.table(&ts.table) else {
                return Err(format!("sampled table `{}` is not in the schema", ts.table));
            };
            if ts.rows.len() > self.rows_per_table {
                return Err(format!(
                    "table `{}` has {} sampled rows, cap is {}",
                    ts.table,
                    ts.rows.len(),
                    self.rows_per_table
                ));
            }
            if let Some(row) = ts.rows.iter().find(|r| r.len() != def.columns.len()) {
                return Err(format!(
                    "table `{}` row arity {} differs from column count {}",
                    ts.table,
                    row.len(),
                    def.columns.len()
                ));
            }
        }
        Ok(())
    }

    /// Distinct non-null example values of one column, in sample order.
    pub fn column_values(&self, schema: &DatabaseSchema, table: &str, column: &str, limit: usize) -> Vec<String> {
        let (Some(def), Some(ts)) = (schema.table(table), self.table(table)) else {
            return Vec::new();
        };
        let Some(idx) = def.columns.iter().position(|c| names::same(&c.name, column)) else {
            return Vec::new();
        };
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for row in &ts.rows {
            let v = &row[idx];
            if matches!(v, CellValue::Null) {
                continue;
            }
            let s = match v {
                CellValue::Text(s) => s.clone(),
                other => other.to_string(),
            };
            if seen.insert(s.clone()) {
                out.push(s);
                if out.len() == limit {
                    break;
                }
            }
        }
        out
    }

    /// Row counts keyed by lowercased table name.
    pub fn row_counts(&self) -> BTreeMap<String, u64> {
        self.tables.iter().map(|t| (names::key(&t.table), t.row_count)).collect()
    }
}

/// Stride of the sampling walk: `ceil(population / cap)`, at least 1.
pub fn sample_stride(population: u64, cap: usize) -> u64 {
    let cap = cap.max(1) as u64;
    population.div_ceil(cap).max(1)
}

/// Zero-based row positions (in rowid order) picked by the stride sampler.
///
/// Positions start at `seed % stride` and advance by `stride`, stopping at
/// the population end or after `cap` rows.
pub fn sample_positions(population: u64, cap: usize, seed: u64) -> impl Iterator<Item = u64> {
    let stride = sample_stride(population, cap);
    let offset = seed % stride;
    (0..cap as u64).map(move |i| offset + i * stride).take_while(move |&p| p < population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn col(name: &str, ty: &str) -> ColumnDef {
        ColumnDef { name: name.into(), declared_type: ty.into(), nullable: true }
    }

    fn two_tables() -> Vec<TableDef> {
        vec![
            TableDef {
                name: "schools".into(),
                columns: vec![col("CDSCode", "TEXT"), col("County", "TEXT")],
                primary_key: vec!["CDSCode".into()],
            },
            TableDef {
                name: "satscores".into(),
                columns: vec![col("cds", "TEXT"), col("sname", "TEXT"), col("AvgScrMath", "INTEGER")],
                primary_key: vec![],
            },
        ]
    }

    fn fk() -> ForeignKeyDef {
        ForeignKeyDef {
            from_table: "satscores".into(),
            from_column: "cds".into(),
            to_table: "schools".into(),
            to_column: "CDSCode".into(),
        }
    }

    #[test]
    fn valid_schema_builds() {
        let s = DatabaseSchema::new("db", two_tables(), vec![fk()]).unwrap();
        assert_eq!(s.canonical_column("SATSCORES", "avgscrmath"), Some(("satscores", "AvgScrMath")));
        assert!(s.foreign_keys[0].connects(("schools", "cdscode"), ("satscores", "cds")));
        assert!(s.to_ddl().contains("FOREIGN KEY (cds) REFERENCES schools(CDSCode)"));
    }

    #[test]
    fn duplicate_table_rejected_case_insensitively() {
        let mut t = two_tables();
        t[1].name = "Schools".into();
        assert_eq!(DatabaseSchema::new("db", t, vec![]), Err(SchemaError::DuplicateTable("Schools".into())));
    }

    #[test]
    fn dangling_and_self_loop_keys_rejected() {
        let mut bad = fk();
        bad.to_column = "nope".into();
        assert!(matches!(DatabaseSchema::new("db", two_tables(), vec![bad]), Err(SchemaError::DanglingForeignKey(_))));
        let lp = ForeignKeyDef {
            from_table: "schools".into(),
            from_column: "CDSCode".into(),
            to_table: "schools".into(),
            to_column: "CDSCode".into(),
        };
        assert!(matches!(DatabaseSchema::new("db", two_tables(), vec![lp]), Err(SchemaError::SelfLoop(_))));
    }

    #[test]
    fn primary_key_must_be_declared() {
        let mut t = two_tables();
        t[0].primary_key = vec!["id".into()];
        assert!(matches!(DatabaseSchema::new("db", t, vec![]), Err(SchemaError::UnknownPrimaryKey { .. })));
    }

    #[test]
    fn stride_positions() {
        let p: Vec<u64> = sample_positions(3, 20, 9).collect();
        assert_eq!(p, vec![0, 1, 2]);
        let p: Vec<u64> = sample_positions(1000, 20, 7).collect();
        assert_eq!(p.len(), 20);
        assert_eq!(p[0], 7);
        assert_eq!(p[19], 957);
        assert_eq!(sample_positions(0, 20, 3).count(), 0);
    }
}
