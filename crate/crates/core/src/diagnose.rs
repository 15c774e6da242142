//! Rule-based diagnosis of a triple against the schema and knowledge base.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::kb::{EvidenceQuery, KnowledgeBase, Operation};
use crate::names;
use crate::schema::DatabaseSchema;
use crate::sql::{extract_facts, AggArg, ColumnRef, SqlFacts};
use crate::trace::RationaleTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    NotExecutable,
    InvalidColumn,
    InvalidTable,
    AggregationTypeMismatch,
    JoinInconsistency,
    TraceSqlDivergence,
}

impl ErrorType {
    pub const ALL: [ErrorType; 6] = [
        ErrorType::NotExecutable,
        ErrorType::InvalidColumn,
        ErrorType::InvalidTable,
        ErrorType::AggregationTypeMismatch,
        ErrorType::JoinInconsistency,
        ErrorType::TraceSqlDivergence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::NotExecutable => "not_executable",
            ErrorType::InvalidColumn => "invalid_column",
            ErrorType::InvalidTable => "invalid_table",
            ErrorType::AggregationTypeMismatch => "aggregation_type_mismatch",
            ErrorType::JoinInconsistency => "join_inconsistency",
            ErrorType::TraceSqlDivergence => "trace_sql_divergence",
        }
    }

    /// Errors whose repair may legitimately change the question text.
    pub fn permits_question_edit(self) -> bool {
        matches!(self, ErrorType::AggregationTypeMismatch | ErrorType::TraceSqlDivergence)
    }
}

impl core::fmt::Display for ErrorType {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where an error sits: a path into the trace, or the SQL text itself.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum TraceLocation {
    Trace(String),
    Sql,
}

impl From<TraceLocation> for String {
    fn from(l: TraceLocation) -> String {
        match l {
            TraceLocation::Trace(p) => p,
            TraceLocation::Sql => "sql".into(),
        }
    }
}

impl From<String> for TraceLocation {
    fn from(s: String) -> Self {
        if s == "sql" {
            TraceLocation::Sql
        } else {
            TraceLocation::Trace(s)
        }
    }
}

impl core::fmt::Display for TraceLocation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TraceLocation::Trace(p) => f.write_str(p),
            TraceLocation::Sql => f.write_str("sql"),
        }
    }
}

impl TraceLocation {
    pub fn column(i: usize) -> Self {
        TraceLocation::Trace(format!("column_selection.columns_used[{i}]"))
    }

    pub fn table(i: usize) -> Self {
        TraceLocation::Trace(format!("table_selection.tables_used[{i}]"))
    }

    /// Whether the path points at something that exists in `trace`.
    pub fn resolves_in(&self, trace: &RationaleTrace) -> bool {
        let TraceLocation::Trace(p) = self else { return true };
        let index = |prefix: &str| -> Option<usize> { p.strip_prefix(prefix)?.strip_suffix(']')?.parse().ok() };
        if let Some(i) = index("column_selection.columns_used[") {
            return i < trace.column_selection.columns_used.len();
        }
        if let Some(i) = index("table_selection.tables_used[") {
            return i < trace.table_selection.tables_used.len();
        }
        matches!(
            p.as_str(),
            "focus"
                | "metadata"
                | "table_selection"
                | "table_selection.tables_used"
                | "column_selection"
                | "sql_strategy"
                | "expected_output"
        )
    }
}

/// What an error is about, used to build its evidence query.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Subject {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<String>,
}

impl Subject {
    fn is_empty(&self) -> bool {
        self.table.is_none() && self.column.is_none() && self.tables.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedError {
    pub error_type: ErrorType,
    pub detail: String,
    pub trace_location: TraceLocation,
    #[serde(default, skip_serializing_if = "Subject::is_empty")]
    pub subject: Subject,
}

impl DetectedError {
    pub fn evidence_query(&self) -> EvidenceQuery {
        EvidenceQuery {
            error_type: self.error_type,
            table: self.subject.table.clone(),
            column: self.subject.column.clone(),
            tables: self.subject.tables.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExecutionOutcome {
    pub fn ok(rows: u64) -> Self {
        ExecutionOutcome { success: true, row_count: Some(rows), error: None }
    }

    pub fn failed(error: impl Into<String>) -> Self {
        ExecutionOutcome { success: false, row_count: None, error: Some(error.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub errors: Vec<DetectedError>,
    /// Non-fatal findings, e.g. joins backed only by an inferred K6 edge.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub execution: ExecutionOutcome,
}

impl DiagnosisReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.execution.success
    }

    pub fn has(&self, t: ErrorType) -> bool {
        self.errors.iter().any(|e| e.error_type == t)
    }

    /// Error types present, in a stable order.
    pub fn signature(&self) -> BTreeSet<(ErrorType, String)> {
        self.errors.iter().map(|e| (e.error_type, e.detail.clone())).collect()
    }
}

/// Checks `sql` and its trace in a fixed order: parse, table and column
/// existence, join conditions against K6, execution through `exec`,
/// aggregation compatibility against K3/K4, and trace/SQL table agreement.
///
/// SQL that fails to parse is reported as not executable and is not run.
pub fn diagnose(
    sql: &str,
    trace: &RationaleTrace,
    kb: &KnowledgeBase,
    schema: &DatabaseSchema,
    exec: impl FnOnce(&str) -> ExecutionOutcome,
) -> DiagnosisReport {
    let mut report = DiagnosisReport::default();
    let facts = match extract_facts(sql, schema) {
        Ok(f) => f,
        Err(e) => {
            let detail = e.to_string();
            report.errors.push(DetectedError {
                error_type: ErrorType::NotExecutable,
                detail: detail.clone(),
                trace_location: TraceLocation::Sql,
                subject: Subject::default(),
            });
            report.execution = ExecutionOutcome::failed(detail);
            return report;
        }
    };
    let known_tables: Vec<String> = facts.tables.iter().filter(|t| schema.table(t).is_some()).cloned().collect();

    existence(&facts, trace, schema, &known_tables, &mut report);
    joins(&facts, trace, kb, schema, &mut report);

    report.execution = exec(sql);
    if !report.execution.success {
        report.errors.push(DetectedError {
            error_type: ErrorType::NotExecutable,
            detail: report.execution.error.clone().unwrap_or_else(|| "execution failed".into()),
            trace_location: TraceLocation::Sql,
            subject: Subject { tables: known_tables.clone(), ..Subject::default() },
        });
    }

    aggregations(&facts, trace, kb, schema, &mut report);
    divergence(&facts, trace, &mut report);
    report
}

fn column_location(trace: &RationaleTrace, c: &ColumnRef) -> TraceLocation {
    trace.column_position(Some(&c.table), &c.column).map(TraceLocation::column).unwrap_or(TraceLocation::Sql)
}

fn existence(
    facts: &SqlFacts,
    trace: &RationaleTrace,
    schema: &DatabaseSchema,
    known: &[String],
    r: &mut DiagnosisReport,
) {
    for t in &facts.tables {
        if schema.table(t).is_none() {
            r.errors.push(DetectedError {
                error_type: ErrorType::InvalidTable,
                detail: format!("no such table: {t}"),
                trace_location: trace.table_position(t).map(TraceLocation::table).unwrap_or(TraceLocation::Sql),
                subject: Subject { table: Some(t.clone()), column: None, tables: known.to_vec() },
            });
        }
    }
    for c in &facts.columns {
        if schema.table(&c.table).is_some() && !schema.has_column(&c.table, &c.column) {
            r.errors.push(DetectedError {
                error_type: ErrorType::InvalidColumn,
                detail: format!("no such column: {c}"),
                trace_location: column_location(trace, c),
                subject: Subject {
                    table: Some(c.table.clone()),
                    column: Some(c.column.clone()),
                    tables: known.to_vec(),
                },
            });
        }
    }
    for u in &facts.unresolved {
        let location = trace.column_position(None, &u.column).map(TraceLocation::column).unwrap_or(TraceLocation::Sql);
        r.errors.push(DetectedError {
            error_type: ErrorType::InvalidColumn,
            detail: format!("column {u} does not resolve to any table in scope"),
            trace_location: location,
            subject: Subject { table: None, column: Some(u.column.clone()), tables: known.to_vec() },
        });
    }
}

fn joins(
    facts: &SqlFacts,
    trace: &RationaleTrace,
    kb: &KnowledgeBase,
    schema: &DatabaseSchema,
    r: &mut DiagnosisReport,
) {
    for jc in &facts.join_conditions {
        let exists = |c: &ColumnRef| schema.has_column(&c.table, &c.column);
        if !exists(&jc.left) || !exists(&jc.right) {
            continue;
        }
        let mut authoritative = false;
        let mut inferred = false;
        for e in kb.edges_between(&jc.left, &jc.right) {
            if e.inferred {
                inferred = true;
            } else {
                authoritative = true;
            }
        }
        if authoritative {
            continue;
        }
        if inferred {
            r.warnings.push(format!("join {} {} {} is backed only by an inferred relation", jc.left, jc.op, jc.right));
            continue;
        }
        let location = match column_location(trace, &jc.left) {
            TraceLocation::Sql => column_location(trace, &jc.right),
            l => l,
        };
        r.errors.push(DetectedError {
            error_type: ErrorType::JoinInconsistency,
            detail: format!("join condition {} {} {} matches no foreign-key relation", jc.left, jc.op, jc.right),
            trace_location: location,
            subject: Subject {
                table: None,
                column: None,
                tables: alloc::vec![jc.left.table.clone(), jc.right.table.clone()],
            },
        });
    }
}

fn aggregations(
    facts: &SqlFacts,
    trace: &RationaleTrace,
    kb: &KnowledgeBase,
    schema: &DatabaseSchema,
    r: &mut DiagnosisReport,
) {
    for agg in &facts.aggregations {
        let AggArg::Column(c) = &agg.arg else { continue };
        let Some(op) = Operation::of_aggregate(&agg.function) else { continue };
        if op == Operation::Count || !schema.has_column(&c.table, &c.column) {
            continue;
        }
        let category = kb.category(&c.table, &c.column);
        let type_ok = category.is_none_or(|cat| op.compatible_with(cat));
        let allowed = kb.allowed_operations(&c.table, &c.column).is_none_or(|ops| ops.contains(&op));
        if type_ok && allowed {
            continue;
        }
        let why = match category {
            Some(cat) if !type_ok => format!("{c} is {cat}"),
            _ => format!("{op} is not among the allowed operations of {c}"),
        };
        r.errors.push(DetectedError {
            error_type: ErrorType::AggregationTypeMismatch,
            detail: format!("{}({c}): {why}", agg.function),
            trace_location: column_location(trace, c),
            subject: Subject { table: Some(c.table.clone()), column: Some(c.column.clone()), tables: Vec::new() },
        });
    }
}

fn divergence(facts: &SqlFacts, trace: &RationaleTrace, r: &mut DiagnosisReport) {
    let in_trace = trace.table_keys();
    let in_sql: BTreeSet<String> = facts.tables.iter().map(|t| names::key(t)).collect();
    if in_trace == in_sql {
        return;
    }
    let only_trace: Vec<&str> = in_trace.difference(&in_sql).map(String::as_str).collect();
    let only_sql: Vec<&str> = in_sql.difference(&in_trace).map(String::as_str).collect();
    let mut detail = String::from("tables_used disagrees with the SQL");
    if !only_trace.is_empty() {
        detail.push_str(&format!("; only in trace: {}", only_trace.join(", ")));
    }
    if !only_sql.is_empty() {
        detail.push_str(&format!("; only in SQL: {}", only_sql.join(", ")));
    }
    r.errors.push(DetectedError {
        error_type: ErrorType::TraceSqlDivergence,
        detail,
        trace_location: TraceLocation::Trace("table_selection.tables_used".into()),
        subject: Subject { table: None, column: None, tables: in_trace.union(&in_sql).cloned().collect() },
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;

    fn run(sql: &str) -> DiagnosisReport {
        diagnose(sql, &fixture::worked_trace(), &fixture::kb(), &fixture::schema(), |_| ExecutionOutcome::ok(1))
    }

    #[test]
    fn worked_example_is_clean() {
        let r = run("SELECT sname FROM satscores ORDER BY AvgScrMath DESC LIMIT 1;");
        assert!(r.is_clean(), "{r:?}");
    }

    #[test]
    fn misspelled_column() {
        let r = run("SELECT sname FROM satscores ORDER BY AvgScrMth DESC LIMIT 1");
        assert_eq!(r.errors.len(), 1);
        let e = &r.errors[0];
        assert_eq!(e.error_type, ErrorType::InvalidColumn);
        assert_eq!(e.evidence_query().column.as_deref(), Some("AvgScrMth"));
    }

    #[test]
    fn unknown_table_located_in_trace() {
        let mut trace = fixture::worked_trace();
        trace.table_selection.tables_used = alloc::vec!["satscore".into()];
        let r = diagnose("SELECT sname FROM satscore", &trace, &fixture::kb(), &fixture::schema(), |_| {
            ExecutionOutcome::failed("no such table: satscore")
        });
        assert!(r.has(ErrorType::InvalidTable));
        assert_eq!(r.errors[0].trace_location, TraceLocation::table(0));
        assert!(r.has(ErrorType::NotExecutable));
    }

    #[test]
    fn join_without_relation() {
        let mut trace = fixture::worked_trace();
        trace.table_selection.tables_used = alloc::vec!["satscores".into(), "schools".into()];
        let r = diagnose(
            "SELECT s.sname FROM satscores s JOIN schools c ON s.sname = c.County",
            &trace,
            &fixture::kb(),
            &fixture::schema(),
            |_| ExecutionOutcome::ok(0),
        );
        assert_eq!(r.errors.len(), 1, "{r:?}");
        assert_eq!(r.errors[0].error_type, ErrorType::JoinInconsistency);
        let ok = diagnose(
            "SELECT s.sname FROM satscores s JOIN schools c ON s.cds = c.CDSCode",
            &trace,
            &fixture::kb(),
            &fixture::schema(),
            |_| ExecutionOutcome::ok(0),
        );
        assert!(ok.is_clean(), "{ok:?}");
    }

    #[test]
    fn average_of_categorical() {
        let mut trace = fixture::worked_trace();
        trace.table_selection.tables_used = alloc::vec!["schools".into()];
        let r = diagnose("SELECT AVG(County) FROM schools", &trace, &fixture::kb(), &fixture::schema(), |_| {
            ExecutionOutcome::ok(1)
        });
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].error_type, ErrorType::AggregationTypeMismatch);
        let r = diagnose("SELECT COUNT(County) FROM schools", &trace, &fixture::kb(), &fixture::schema(), |_| {
            ExecutionOutcome::ok(1)
        });
        assert!(r.is_clean());
    }

    #[test]
    fn trace_sql_divergence() {
        let r = run("SELECT County FROM schools");
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].error_type, ErrorType::TraceSqlDivergence);
        assert!(r.errors[0].trace_location.resolves_in(&fixture::worked_trace()));
    }

    #[test]
    fn parse_failure_skips_execution() {
        let mut called = false;
        let r = diagnose("SELEC sname FROM", &fixture::worked_trace(), &fixture::kb(), &fixture::schema(), |_| {
            called = true;
            ExecutionOutcome::ok(0)
        });
        assert!(!called);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].error_type, ErrorType::NotExecutable);
    }

    #[test]
    fn location_serializes_as_path() {
        assert_eq!(serde_json::to_string(&TraceLocation::column(1)).unwrap(), "\"column_selection.columns_used[1]\"");
        assert_eq!(serde_json::to_string(&TraceLocation::Sql).unwrap(), "\"sql\"");
        let back: TraceLocation = serde_json::from_str("\"table_selection.tables_used[0]\"").unwrap();
        assert_eq!(back, TraceLocation::table(0));
    }
}
