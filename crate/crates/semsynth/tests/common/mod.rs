//! Shared fixtures: a two-table SQLite database, the KB a mock model should
//! produce for it, and a rule-based mock that answers every pipeline call.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use semsynth::llm::{ChatRequest, ChatResponse, FnProvider, Gateway, LlmError};
use semsynth_core::kb::*;
use semsynth_core::sql::ColumnRef;
use semsynth_core::{DatabaseSchema, KnowledgeBase, RationaleTrace};

pub const WORKED_QUESTION: &str = "Which school has the highest average SAT math score?";
pub const WORKED_SQL: &str = "SELECT sname FROM satscores ORDER BY AvgScrMath DESC LIMIT 1;";
pub const WORKED_TRACE: &str = r#"{
  "focus": "Identify single school with MAX(AvgScrMath)",
  "metadata": {"main_scenario": "ranking_query", "sub_scenario": "max_min_query", "complexity_level": 1, "use_case": "ranking_analysis"},
  "table_selection": {"tables_used": ["satscores"], "reasoning": "Contains SAT columns for extreme value. Single-table compliant with Level 1"},
  "column_selection": {"columns_used": [
    {"name": "sname", "type": "TEXT", "operation": "SELECT", "purpose": "Identify school with extreme score"},
    {"name": "AvgScrMath", "type": "INTEGER", "operation": "ORDER BY DESC", "purpose": "Find maximum via sorting"}]},
  "sql_strategy": {"operations": ["SELECT", "ORDER BY DESC", "LIMIT"], "approach": "ORDER BY + LIMIT for extreme value, no aggregation", "no_need": ["JOIN", "GROUP BY", "MAX()"]},
  "expected_output": "Single row: school name with highest AvgScrMath"
}"#;

/// The worked example exactly as it should appear in an export.
pub fn worked_export() -> Value {
    json!({
        "question": WORKED_QUESTION,
        "think": serde_json::from_str::<Value>(WORKED_TRACE).unwrap(),
        "answer": WORKED_SQL,
    })
}

pub fn worked_trace() -> RationaleTrace {
    serde_json::from_str(WORKED_TRACE).unwrap()
}

pub const L2_QUESTION: &str = "How many schools in each county report SAT scores?";
pub const L2_SQL: &str =
    "SELECT s.County, COUNT(t.cds) FROM satscores t JOIN schools s ON t.cds = s.CDSCode GROUP BY s.County;";
pub const L2_TRACE: &str = r#"{
  "focus": "Count schools with SAT results per county",
  "metadata": {"main_scenario": "aggregation_query", "sub_scenario": "group_count", "complexity_level": 2, "use_case": "coverage_analysis"},
  "table_selection": {"tables_used": ["satscores", "schools"], "reasoning": "County lives in schools, scores in satscores; join on the school code"},
  "column_selection": {"columns_used": [
    {"name": "County", "type": "TEXT", "operation": "GROUP BY", "purpose": "One row per county"},
    {"name": "cds", "type": "TEXT", "operation": "COUNT", "purpose": "Count reporting schools"},
    {"name": "CDSCode", "type": "TEXT", "operation": "JOIN", "purpose": "Join key"}]},
  "sql_strategy": {"operations": ["SELECT", "JOIN", "GROUP BY", "COUNT"], "approach": "Join then group by county", "no_need": ["ORDER BY"]},
  "expected_output": "One row per county with a count"
}"#;

/// Creates `california_schools.sqlite` in `dir`.
pub fn fixture_db(dir: &Path) -> PathBuf {
    let path = dir.join("california_schools.sqlite");
    let conn = rusqlite::Connection::open(&path).unwrap();
    conn.execute_batch(
        "CREATE TABLE schools (CDSCode TEXT PRIMARY KEY, County TEXT);
         CREATE TABLE satscores (cds TEXT REFERENCES schools(CDSCode), sname TEXT, AvgScrMath INTEGER);
         INSERT INTO schools VALUES ('01100170109835', 'Alameda'), ('19647331932094', 'Los Angeles');
         INSERT INTO satscores VALUES ('01100170109835', 'FAME Public Charter', 418), ('19647331932094', 'Lincoln High', 561);",
    )
    .unwrap();
    path
}

pub fn fixture_schema(dir: &Path) -> (PathBuf, DatabaseSchema) {
    let db = fixture_db(dir);
    let schema = semsynth::db::introspect(&db).unwrap();
    (db, schema)
}

/// Model replies for the six KB stages, in stage order.
pub fn kb_replies() -> Vec<Value> {
    vec![
        json!({"tables": [
            {"name": "schools", "description": "One row per school", "columns": [
                {"name": "CDSCode", "description": "State school code"},
                {"name": "County", "description": "County name"}]},
            {"name": "satscores", "description": "SAT results per school", "columns": [
                {"name": "cds", "description": "School code"},
                {"name": "sname", "description": "School name"},
                {"name": "AvgScrMath", "description": "Average SAT math score"}]}]}),
        json!({"domain_name": "education", "business_rules": [
            {"rule_id": "R1", "statement": "Scores are averaged per school", "affected_tables": ["satscores"], "affected_columns": ["satscores.AvgScrMath"]}]}),
        json!({"columns": [
            {"column": "schools.CDSCode", "semantic_category": "identifier", "example_values": ["01100170109835"]},
            {"column": "schools.County", "semantic_category": "categorical", "example_values": ["Alameda"]},
            {"column": "satscores.cds", "semantic_category": "identifier"},
            {"column": "satscores.sname", "semantic_category": "free_text"},
            {"column": "satscores.AvgScrMath", "semantic_category": "quantitative", "unit": "points", "value_range": {"min": 200, "max": 800}}]}),
        json!({"columns": [
            {"column": "schools.CDSCode", "meaning": "school key", "allowed_operations": ["select", "filter", "count"]},
            {"column": "schools.County", "meaning": "county", "allowed_operations": ["select", "filter", "group", "count"]},
            {"column": "satscores.cds", "meaning": "school key", "allowed_operations": ["select", "filter", "count"]},
            {"column": "satscores.sname", "meaning": "school name", "allowed_operations": ["select", "filter", "count"]},
            {"column": "satscores.AvgScrMath", "meaning": "mean math score", "allowed_operations": ["select", "filter", "order", "sum", "avg", "min", "max", "count"]}]}),
        json!({"tables": [
            {"table": "schools", "role": "primary_entity"},
            {"table": "satscores", "role": "domain_attribute", "constraints": [{"statement": "AvgScrMath lies in 200..800", "columns": ["AvgScrMath"]}]}]}),
        json!({"join_edges": [
            {"from": "satscores.cds", "to": "schools.CDSCode", "cardinality": "1:N", "label": "scores of a school"}]}),
    ]
}

fn cr(t: &str, c: &str) -> ColumnRef {
    ColumnRef::new(t, c)
}

fn ops(list: &[Operation]) -> BTreeSet<Operation> {
    list.iter().copied().collect()
}

/// The KB the fixture replies must validate into, written out by hand.
pub fn expected_kb() -> KnowledgeBase {
    use Operation::*;
    let meta = |name: &str, description: &str| ColumnMeta { name: name.into(), description: description.into() };
    let ft = |t: &str, c: &str, cat: SemanticCategory, examples: &[&str]| FieldType {
        column: cr(t, c),
        semantic_category: cat,
        unit: None,
        value_range: None,
        example_values: examples.iter().map(|s| s.to_string()).collect(),
    };
    let cs = |t: &str, c: &str, meaning: &str, allowed: &[Operation]| ColumnSemantics {
        column: cr(t, c),
        meaning: meaning.into(),
        allowed_operations: ops(allowed),
        nullability_note: String::new(),
    };
    KnowledgeBase {
        k1_metadata: MetadataLayer {
            tables: vec![
                TableMeta {
                    name: "schools".into(),
                    description: "One row per school".into(),
                    row_count: 2,
                    columns: vec![meta("CDSCode", "State school code"), meta("County", "County name")],
                },
                TableMeta {
                    name: "satscores".into(),
                    description: "SAT results per school".into(),
                    row_count: 2,
                    columns: vec![
                        meta("cds", "School code"),
                        meta("sname", "School name"),
                        meta("AvgScrMath", "Average SAT math score"),
                    ],
                },
            ],
        },
        k2_domain: DomainConstraintLayer {
            domain_name: "education".into(),
            business_rules: vec![BusinessRule {
                rule_id: "R1".into(),
                statement: "Scores are averaged per school".into(),
                affected_tables: vec!["satscores".into()],
                affected_columns: vec![cr("satscores", "AvgScrMath")],
            }],
        },
        k3_field_types: FieldTypeLayer {
            columns: vec![
                ft("schools", "CDSCode", SemanticCategory::Identifier, &["01100170109835"]),
                ft("schools", "County", SemanticCategory::Categorical, &["Alameda"]),
                ft("satscores", "cds", SemanticCategory::Identifier, &[]),
                ft("satscores", "sname", SemanticCategory::FreeText, &[]),
                FieldType {
                    unit: Some("points".into()),
                    value_range: Some(ValueRange { min: "200".into(), max: "800".into() }),
                    ..ft("satscores", "AvgScrMath", SemanticCategory::Quantitative, &[])
                },
            ],
        },
        k4_columns: ColumnSemanticsLayer {
            columns: vec![
                cs("schools", "CDSCode", "school key", &[Select, Filter, Count]),
                cs("schools", "County", "county", &[Select, Filter, Group, Count]),
                cs("satscores", "cds", "school key", &[Select, Filter, Count]),
                cs("satscores", "sname", "school name", &[Select, Filter, Count]),
                cs("satscores", "AvgScrMath", "mean math score", &[Select, Filter, Order, Sum, Avg, Min, Max, Count]),
            ],
        },
        k5_tables: TableConstraintLayer {
            tables: vec![
                TableConstraints { table: "schools".into(), role: EntityRole::PrimaryEntity, constraints: vec![] },
                TableConstraints {
                    table: "satscores".into(),
                    role: EntityRole::DomainAttribute,
                    constraints: vec![IntraTableConstraint {
                        statement: "AvgScrMath lies in 200..800".into(),
                        columns: vec!["AvgScrMath".into()],
                    }],
                },
            ],
        },
        k6_relations: RelationLayer {
            join_edges: vec![JoinEdge {
                from: cr("satscores", "cds"),
                to: cr("schools", "CDSCode"),
                cardinality: Cardinality::OneToMany,
                label: "scores of a school".into(),
                inferred: false,
            }],
            derived_dependencies: vec![],
        },
        provenance: BTreeMap::new(),
    }
}

/// A question, its trace and SQL.
#[derive(Clone)]
pub struct Draft {
    pub question: String,
    pub trace: Value,
    pub sql: String,
}

impl Draft {
    pub fn new(question: &str, trace: &str, sql: &str) -> Self {
        Draft { question: question.into(), trace: serde_json::from_str(trace).unwrap(), sql: sql.into() }
    }

    pub fn worked() -> Self {
        Draft::new(WORKED_QUESTION, WORKED_TRACE, WORKED_SQL)
    }

    pub fn l2() -> Self {
        Draft::new(L2_QUESTION, L2_TRACE, L2_SQL)
    }
}

/// Rule-based stand-in for the model. Replies depend only on the request,
/// so runs are reproducible whatever the call order.
#[derive(Clone, Default)]
pub struct Mock {
    /// Question and trace per target level (1..=4).
    pub by_level: BTreeMap<u8, Draft>,
    /// SQL returned for a question.
    pub sql_for: BTreeMap<String, String>,
    /// Correction reply keyed by the SQL being corrected.
    pub fixes: BTreeMap<String, Draft>,
    /// Consistency label per SQL; 1 when absent.
    pub judge: BTreeMap<String, u8>,
    /// Reply to every correction request, with the iteration number
    /// substituted for `{n}`; used when `fixes` has no entry.
    pub fallback_fix: Option<String>,
    pub calls: Arc<Mutex<Vec<String>>>,
}

impl Mock {
    /// Answers L1 requests with the worked example and L2 with the join query.
    pub fn standard() -> Self {
        let mut m = Mock::default();
        m.add(1, Draft::worked());
        m.add(2, Draft::l2());
        m
    }

    pub fn add(&mut self, level: u8, d: Draft) {
        self.sql_for.insert(d.question.clone(), d.sql.clone());
        self.by_level.insert(level, d);
    }

    /// Purposes of every call so far, in order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }

    pub fn count(&self, purpose: &str) -> usize {
        self.calls().iter().filter(|p| *p == purpose).count()
    }

    pub fn reply(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let purpose = req.purpose.clone();
        let n = {
            let mut c = self.calls.lock().unwrap();
            c.push(purpose.clone());
            c.iter().filter(|p| **p == purpose).count()
        };
        let user = &req.user_text;
        if let Some(stage) = purpose.strip_prefix("kb stage ") {
            let i: usize = stage.split(' ').next().unwrap().parse().unwrap();
            return Ok(kb_replies()[i - 1].to_string());
        }
        match purpose.as_str() {
            "question" => {
                let level = between(user, "Set complexity_level to ", ".").parse::<u8>().unwrap();
                let d = self.by_level.get(&level).ok_or_else(|| unscripted(req))?;
                Ok(json!({"question": d.question, "think": d.trace}).to_string())
            }
            "sql" => {
                let q = between(user, "Question: ", "\n");
                self.sql_for.get(q).map(|s| format!("```sql\n{s}\n```")).ok_or_else(|| unscripted(req))
            }
            "correct" => {
                let sql = between(user, "SQL: ", "\n");
                if let Some(d) = self.fixes.get(sql) {
                    return Ok(
                        json!({"question": d.question, "think": d.trace, "answer": d.sql, "corrections": ["fixed"]})
                            .to_string(),
                    );
                }
                match &self.fallback_fix {
                    Some(t) => Ok(t.replace("{n}", &n.to_string())),
                    None => Err(unscripted(req)),
                }
            }
            "judge consistency" => {
                let sql = user.rsplit("SQL Query:\n").next().unwrap_or_default().trim();
                let label = self.judge.get(sql).copied().unwrap_or(1);
                Ok(json!({"label": label, "reasoning": "checked"}).to_string())
            }
            _ => Err(unscripted(req)),
        }
    }

    pub fn provider(&self) -> FnProvider {
        let me = self.clone();
        FnProvider::new("mock", move |req| me.reply(req).map(ChatResponse::stop))
    }

    pub fn gateway(&self, cap: usize) -> Gateway {
        Gateway::new(self.provider(), cap, 0).with_backoff(std::time::Duration::ZERO)
    }
}

fn unscripted(req: &ChatRequest) -> LlmError {
    LlmError::Unscripted { fingerprint: req.fingerprint(), purpose: req.purpose.clone() }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let Some(i) = text.find(start) else { return "" };
    let rest = &text[i + start.len()..];
    &rest[..rest.find(end).unwrap_or(rest.len())]
}
