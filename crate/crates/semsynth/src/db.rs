//! SQLite access: schema introspection, row sampling and guarded execution.
//!
//! Every connection is opened read-only; nothing here writes to the source
//! database.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use sha2::{Digest, Sha256};

use semsynth_core::schema::{sample_positions, SchemaError, TableSample};
use semsynth_core::{CellValue, ColumnDef, DatabaseSchema, ExecutionOutcome, ForeignKeyDef, InstanceSample, TableDef};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("database file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path} is not a SQLite database: {message}")]
    NotADatabase { path: PathBuf, message: String },
    #[error("database has no user tables")]
    EmptySchema,
    #[error("query failed: {0}")]
    QueryFailure(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

impl From<rusqlite::Error> for DbError {
    fn from(e: rusqlite::Error) -> Self {
        DbError::QueryFailure(e.to_string())
    }
}

/// Opens `path` read-only. Fails early on a missing or non-SQLite file.
pub fn open_read_only(path: &Path) -> Result<Connection, DbError> {
    if !path.is_file() {
        return Err(DbError::FileNotFound(path.to_path_buf()));
    }
    let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI;
    let not_db = |e: rusqlite::Error| DbError::NotADatabase { path: path.to_path_buf(), message: e.to_string() };
    let conn = Connection::open_with_flags(path, flags).map_err(not_db)?;
    // The header is only read on first access.
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0)).map_err(not_db)?;
    conn.pragma_update(None, "query_only", true)?;
    Ok(conn)
}

fn db_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

/// Reads every base table (views and `sqlite_` internals excluded), its
/// columns, primary key and foreign keys.
pub fn introspect(path: &Path) -> Result<DatabaseSchema, DbError> {
    let conn = open_read_only(path)?;
    let mut stmt = conn
        .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid")?;
    let names: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
    if names.is_empty() {
        return Err(DbError::EmptySchema);
    }
    let mut tables = Vec::new();
    for name in &names {
        let mut info = conn.prepare(&format!("PRAGMA table_info({})", quote(name)))?;
        let mut pk: Vec<(i64, String)> = Vec::new();
        let columns = info
            .query_map([], |r| {
                let col: String = r.get(1)?;
                let ty: Option<String> = r.get(2)?;
                let notnull: i64 = r.get(3)?;
                let pk_pos: i64 = r.get(5)?;
                Ok((ColumnDef { name: col, declared_type: ty.unwrap_or_default(), nullable: notnull == 0 }, pk_pos))
            })?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|(c, pos)| {
                if pos > 0 {
                    pk.push((pos, c.name.clone()));
                }
                c
            })
            .collect();
        pk.sort();
        tables.push(TableDef { name: name.clone(), columns, primary_key: pk.into_iter().map(|(_, c)| c).collect() });
    }
    let mut foreign_keys = Vec::new();
    for t in &tables {
        let mut fk = conn.prepare(&format!("PRAGMA foreign_key_list({})", quote(&t.name)))?;
        let rows: Vec<(i64, i64, String, String, Option<String>)> = fk
            .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)))?
            .collect::<Result<_, _>>()?;
        for (_, seq, to_table, from, to) in rows {
            // A missing target column means the target's primary key.
            let to_column = match to {
                Some(c) => c,
                None => tables
                    .iter()
                    .find(|x| x.name.eq_ignore_ascii_case(&to_table))
                    .and_then(|x| x.primary_key.get(seq as usize).cloned())
                    .ok_or_else(|| {
                        DbError::QueryFailure(format!("cannot resolve foreign key {}.{from} -> {to_table}", t.name))
                    })?,
            };
            foreign_keys.push(ForeignKeyDef { from_table: t.name.clone(), from_column: from, to_table, to_column });
        }
    }
    Ok(DatabaseSchema::new(db_name(path), tables, foreign_keys)?)
}

fn cell(v: ValueRef<'_>) -> CellValue {
    match v {
        ValueRef::Null => CellValue::Null,
        ValueRef::Integer(i) => CellValue::Integer(i),
        ValueRef::Real(f) => CellValue::Real(f),
        ValueRef::Text(t) => CellValue::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => CellValue::BlobDigest(hex::encode(Sha256::digest(b))),
    }
}

/// Stride sample of every table: rows in rowid order (primary key order for
/// tables without rowid), every `ceil(N/cap)`-th row from `seed % stride`.
pub fn sample_instances(
    schema: &DatabaseSchema,
    path: &Path,
    rows_per_table: usize,
    seed: u64,
) -> Result<InstanceSample, DbError> {
    let conn = open_read_only(path)?;
    let mut tables = Vec::new();
    for t in &schema.tables {
        let qt = quote(&t.name);
        let population: i64 = conn.query_row(&format!("SELECT count(*) FROM {qt}"), [], |r| r.get(0))?;
        let population = population.max(0) as u64;
        let wanted: std::collections::BTreeSet<u64> = sample_positions(population, rows_per_table, seed).collect();
        let cols: Vec<String> = t.columns.iter().map(|c| quote(&c.name)).collect();
        let select = cols.join(", ");
        let mut stmt = match conn.prepare(&format!("SELECT {select} FROM {qt} ORDER BY rowid")) {
            Ok(s) => s,
            Err(_) => {
                let order = if t.primary_key.is_empty() {
                    "1".to_string()
                } else {
                    t.primary_key.iter().map(|c| quote(c)).collect::<Vec<_>>().join(", ")
                };
                conn.prepare(&format!("SELECT {select} FROM {qt} ORDER BY {order}"))?
            }
        };
        let mut rows = stmt.query([])?;
        let mut picked = Vec::new();
        let mut pos = 0u64;
        let last = wanted.iter().next_back().copied();
        while let Some(row) = rows.next()? {
            if wanted.contains(&pos) {
                picked.push((0..t.columns.len()).map(|i| row.get_ref(i).map(cell)).collect::<Result<Vec<_>, _>>()?);
            }
            if Some(pos) >= last {
                break;
            }
            pos += 1;
        }
        tables.push(TableSample { table: t.name.clone(), row_count: population, rows: picked });
    }
    Ok(InstanceSample { rows_per_table, seed, tables })
}

/// Read-only statement runner with a wall-clock limit per statement.
pub struct Executor {
    conn: Connection,
    timeout: Duration,
}

impl Executor {
    pub fn open(path: &Path, timeout: Duration) -> Result<Self, DbError> {
        Ok(Executor { conn: open_read_only(path)?, timeout })
    }

    /// Runs `sql` to completion and counts its rows. Engine errors, write
    /// attempts and timeouts come back as a failed outcome, not an `Err`.
    pub fn execute(&self, sql: &str) -> ExecutionOutcome {
        let deadline = Instant::now() + self.timeout;
        self.conn.progress_handler(1000, Some(move || Instant::now() > deadline));
        let out = self.run(sql);
        self.conn.progress_handler(0, None::<fn() -> bool>);
        match out {
            Ok(n) => ExecutionOutcome::ok(n),
            Err(e) if Instant::now() > deadline => {
                log::debug!("statement interrupted: {e}");
                ExecutionOutcome::failed(format!("statement timed out after {:?}", self.timeout))
            }
            Err(e) => ExecutionOutcome::failed(e.to_string()),
        }
    }

    fn run(&self, sql: &str) -> rusqlite::Result<u64> {
        let mut stmt = self.conn.prepare(sql)?;
        if !stmt.readonly() {
            return Err(rusqlite::Error::InvalidQuery);
        }
        let mut rows = stmt.query([])?;
        let mut n = 0;
        while rows.next()?.is_some() {
            n += 1;
        }
        Ok(n)
    }
}
