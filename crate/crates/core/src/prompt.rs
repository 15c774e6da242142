//! Prompt templates for every model-backed step.
//!
//! All builders are deterministic: the same inputs give byte-identical text,
//! which keeps request fingerprints stable across runs.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::diagnose::DiagnosisReport;
use crate::kb::{Evidence, KnowledgeBase, LayerId, Stage, StageView};
use crate::names;
use crate::schema::{DatabaseSchema, InstanceSample};
use crate::sql::Level;
use crate::trace::{GenerationSpec, RationaleTrace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

const KB_SYSTEM: &str = "You are a database analyst building a semantic knowledge base for a relational database. \
Answer with a single JSON object and nothing else.";

const GEN_SYSTEM: &str =
    "You write natural-language questions over a relational database together with a structured reasoning trace. \
Answer with a single JSON object and nothing else.";

const SQL_SYSTEM: &str =
    "You write a single SQLite SELECT statement that answers a question, following a given reasoning trace. \
Answer with the SQL only.";

const FIX_SYSTEM: &str = "You repair text-to-SQL samples using diagnostics and knowledge-base evidence. \
Answer with a single JSON object and nothing else.";

fn render_sample(out: &mut String, sample: &InstanceSample, schema: Option<&DatabaseSchema>) {
    for ts in &sample.tables {
        let _ = writeln!(out, "-- {} ({} rows, {} sampled)", ts.table, ts.row_count, ts.rows.len());
        if let Some(def) = schema.and_then(|s| s.table(&ts.table)) {
            let cols: Vec<&str> = def.columns.iter().map(|c| c.name.as_str()).collect();
            let _ = writeln!(out, "{}", cols.join(" | "));
        }
        for row in &ts.rows {
            let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "{}", cells.join(" | "));
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

fn stage_contract(stage: Stage) -> &'static str {
    match stage.output() {
        LayerId::K1 => {
            r#"Describe every table and every column.
Output: {"tables": [{"name": "<table>", "description": "<what one row is>", "columns": [{"name": "<column>", "description": "<meaning>"}]}]}"#
        }
        LayerId::K2 => {
            r#"Name the business domain and list business rules that queries over this data must respect. Reference columns as table.column.
Output: {"domain_name": "<domain>", "business_rules": [{"rule_id": "R1", "statement": "<rule>", "affected_tables": ["<table>"], "affected_columns": ["<table>.<column>"]}]}"#
        }
        LayerId::K3 => {
            r#"Assign every column exactly one semantic_category from: identifier, categorical, quantitative, temporal, free_text. Give value_range only for quantitative or temporal columns, a unit where one applies, and at most 5 example_values taken from the sample.
Output: {"columns": [{"column": "<table>.<column>", "semantic_category": "<category>", "unit": null, "value_range": {"min": "<v>", "max": "<v>"}, "example_values": ["<v>"]}]}"#
        }
        LayerId::K4 => {
            r#"For every column state its meaning, the operations that make sense on it, and what NULL means. allowed_operations is a subset of: select, filter, group, order, sum, avg, min, max, count. sum and avg require a quantitative column; min and max require a quantitative or temporal column.
Output: {"columns": [{"column": "<table>.<column>", "meaning": "<meaning>", "allowed_operations": ["select"], "nullability_note": "<note>"}]}"#
        }
        LayerId::K5 => {
            r#"Give every table its entity role, one of: primary_entity, domain_attribute, metadata_entity. List intra-table constraints such as value dependencies between columns.
Output: {"tables": [{"table": "<table>", "role": "<role>", "constraints": [{"statement": "<constraint>", "columns": ["<column>"]}]}]}"#
        }
        LayerId::K6 => {
            r#"List the join paths between tables with their cardinality (1:1, 1:N or N:M) and a short semantic label, plus cross-table dependencies.
Output: {"join_edges": [{"from": "<table>.<column>", "to": "<table>.<column>", "cardinality": "1:N", "label": "<label>"}], "derived_dependencies": [{"statement": "<dependency>", "tables": ["<table>"]}]}"#
        }
    }
}

/// Prompt for one extraction stage, embedding exactly the inputs in `view`.
pub fn stage_prompt(view: &StageView<'_>) -> Prompt {
    let stage = view.stage;
    let mut user = format!("Stage {}: {}.\n\n", stage.index(), stage.name());
    if let Some(schema) = view.schema {
        let _ = write!(user, "Database `{}` schema:\n{}\n", schema.db_name, schema.to_ddl());
    }
    let tables = view.k1.map(|k| &k.tables);
    if let Some(sample) = view.sample {
        user.push_str("Sampled rows:\n");
        render_sample(&mut user, sample, view.schema);
        user.push('\n');
        if view.schema.is_none() {
            if let Some(tables) = tables {
                user.push_str("Column order per table: ");
                let orders: Vec<String> = tables
                    .iter()
                    .map(|t| {
                        let cols: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
                        format!("{}({})", t.name, cols.join(", "))
                    })
                    .collect();
                user.push_str(&orders.join("; "));
                user.push_str("\n\n");
            }
        }
    }
    let layers: [(&str, Option<String>); 5] = [
        ("K1 metadata", view.k1.map(json)),
        ("K2 domain constraints", view.k2.map(json)),
        ("K3 field types", view.k3.map(json)),
        ("K4 column semantics", view.k4.map(json)),
        ("K5 table constraints", view.k5.map(json)),
    ];
    for (label, body) in layers {
        if let Some(b) = body {
            let _ = write!(user, "{label}:\n{b}\n\n");
        }
    }
    user.push_str(stage_contract(stage));
    Prompt { system: KB_SYSTEM.into(), user }
}

/// Follow-up text asking the model to fix a rejected layer.
pub fn repair_request(original: &Prompt, problems: &[String]) -> Prompt {
    let mut user = original.user.clone();
    user.push_str("\n\nYour previous answer was rejected:\n");
    for p in problems {
        let _ = writeln!(user, "- {p}");
    }
    user.push_str("Return the corrected JSON object.");
    Prompt { system: original.system.clone(), user }
}

/// Follow-up text after a reply that could not be parsed.
pub fn parse_retry(original_user: &str, error: &str) -> String {
    format!(
        "{original_user}\n\nYour previous reply could not be parsed: {error}\nReply with one valid JSON object only."
    )
}

fn level_rule(level: Level) -> &'static str {
    match level {
        Level::L1 => "Level 1 (simple): single table, basic filtering and sorting (WHERE, ORDER BY, LIMIT, DISTINCT). No joins, subqueries, CASE, set operations, window functions or CTEs.",
        Level::L2 => "Level 2 (moderate): joins over at most 3 tables combined with aggregation (GROUP BY, HAVING, COUNT/SUM/AVG). No subqueries, CASE, set operations, window functions or CTEs.",
        Level::L3 => "Level 3 (complex): subqueries (IN, EXISTS, correlated), CASE WHEN, UNION, or 4 or more tables. No window functions or CTEs.",
        Level::L4 => "Level 4 (expert): must use a window function (ROW_NUMBER, RANK, LAG, LEAD), a CTE (WITH), or a recursive query.",
    }
}

fn kb_overview(kb: &KnowledgeBase, tables: Option<&[String]>) -> String {
    let mut out = String::new();
    let keep = |t: &str| tables.is_none_or(|ts| ts.iter().any(|x| names::same(x, t)));
    for t in kb.k1_metadata.tables.iter().filter(|t| keep(&t.name)) {
        let role =
            kb.k5_tables.tables.iter().find(|r| names::same(&r.table, &t.name)).map(|r| r.role.as_str()).unwrap_or("");
        let _ = writeln!(out, "Table {} [{role}, {} rows]: {}", t.name, t.row_count, t.description);
        for c in &t.columns {
            let cat = kb.category(&t.name, &c.name).map(|c| c.as_str()).unwrap_or("");
            let ops: Vec<&str> = kb
                .allowed_operations(&t.name, &c.name)
                .map(|o| o.iter().map(|x| x.as_str()).collect())
                .unwrap_or_default();
            let _ = writeln!(out, "  {}.{} ({cat}; allowed: {}): {}", t.name, c.name, ops.join(", "), c.description);
        }
    }
    let edges: Vec<String> = kb
        .k6_relations
        .join_edges
        .iter()
        .filter(|e| keep(&e.from.table) && keep(&e.to.table))
        .map(|e| format!("  {e} ({}){}", e.cardinality.as_str(), if e.inferred { " [inferred]" } else { "" }))
        .collect();
    if !edges.is_empty() {
        out.push_str("Join paths:\n");
        out.push_str(&edges.join("\n"));
        out.push('\n');
    }
    out
}

fn relevant_rules(kb: &KnowledgeBase, domain: &str) -> Vec<String> {
    let rules = &kb.k2_domain.business_rules;
    let d = names::key(domain);
    let matching: Vec<_> = rules.iter().filter(|r| names::key(&r.statement).contains(&d)).collect();
    let chosen: Vec<_> = if matching.is_empty() { rules.iter().collect() } else { matching };
    chosen.into_iter().map(|r| format!("{}: {}", r.rule_id, r.statement)).collect()
}

const TRACE_SHAPE: &str = r#"{"question": "<question>", "think": {"focus": "<what the query must find>", "metadata": {"main_scenario": "<scenario>", "sub_scenario": "<sub scenario>", "complexity_level": <level number>, "use_case": "<use case>"}, "table_selection": {"tables_used": ["<table>"], "reasoning": "<why>"}, "column_selection": {"columns_used": [{"name": "<column>", "type": "<declared type>", "operation": "<SQL role>", "purpose": "<why>"}]}, "sql_strategy": {"operations": ["<clause>"], "approach": "<plan>", "no_need": ["<construct not needed>"]}, "expected_output": "<result shape>"}}"#;

/// Question and rationale generation for one spec.
pub fn question_prompt(kb: &KnowledgeBase, spec: &GenerationSpec) -> Prompt {
    let mut user = format!(
        "Database domain: {}\nScenario: domain context `{}`, task type `{}`.\nTarget complexity: {}\n\n",
        kb.k2_domain.domain_name,
        spec.domain_context,
        spec.task_type,
        level_rule(spec.level)
    );
    user.push_str("Knowledge base (only use operations listed as allowed for each column):\n");
    user.push_str(&kb_overview(kb, None));
    let rules = relevant_rules(kb, &spec.domain_context);
    if !rules.is_empty() {
        user.push_str("\nDomain rules to enforce:\n");
        for r in rules {
            let _ = writeln!(user, "- {r}");
        }
    }
    let _ = write!(
        user,
        "\nWrite one question a user would ask for this scenario and the reasoning trace that leads to its SQL. \
Set complexity_level to {}. Reference only tables and columns listed above. Sample seed: {}.\nOutput: {TRACE_SHAPE}",
        spec.level.number(),
        spec.seed
    );
    Prompt { system: GEN_SYSTEM.into(), user }
}

/// SQL generation from a validated question and trace.
pub fn sql_prompt(question: &str, trace: &RationaleTrace, spec: &GenerationSpec, kb: &KnowledgeBase) -> Prompt {
    let mut user = format!(
        "Question: {question}\nScenario: domain context `{}`, task type `{}`.\nTarget complexity: {}\n\nReasoning trace:\n{}\n\n",
        spec.domain_context,
        spec.task_type,
        level_rule(spec.level),
        json(trace)
    );
    user.push_str("Knowledge base for the selected tables:\n");
    user.push_str(&kb_overview(kb, Some(&trace.table_selection.tables_used)));
    user.push_str("\nWrite one SQLite SELECT statement that answers the question by following the trace.");
    Prompt { system: SQL_SYSTEM.into(), user }
}

/// Correction request for a triple with detected errors.
pub fn correction_prompt(
    question: &str,
    sql: &str,
    trace: &RationaleTrace,
    report: &DiagnosisReport,
    evidence: &Evidence,
    question_editable: bool,
) -> Prompt {
    let mut user = format!("Question: {question}\nSQL: {sql}\nReasoning trace:\n{}\n\nDetected errors:\n", json(trace));
    for e in &report.errors {
        let _ = writeln!(user, "- [{}] at {}: {}", e.error_type, e.trace_location, e.detail);
    }
    if let Some(err) = &report.execution.error {
        let _ = writeln!(user, "Execution error: {err}");
    }
    if evidence.is_empty() {
        user.push_str("\nThe knowledge base holds no direct evidence for these errors; reformulate the query rather than patching names.\n");
    } else {
        user.push_str("\nEvidence:\n");
        for e in &evidence.entries {
            let _ = writeln!(user, "- {} {}: {}", e.layer, e.key, e.statement);
        }
    }
    if question_editable {
        user.push_str("\nYou may reformulate the question if the original intent cannot be answered soundly.\n");
    } else {
        user.push_str("\nKeep the question text unchanged; fix the SQL and the trace only.\n");
    }
    user.push_str(
        r#"Output: {"question": "<question>", "think": <corrected trace, same shape as above>, "answer": "<corrected SQL>", "corrections": ["<what you changed>"]}"#,
    );
    Prompt { system: FIX_SYSTEM.into(), user }
}

/// Question/SQL semantic consistency judge.
pub fn consistency_prompt(schema: &str, question: &str, sql: &str) -> Prompt {
    let user = format!(
        "You are a semantic consistency evaluator. Determine whether the given SQL query correctly answers the natural language question based on the provided database schema. Output 1 if consistent, 0 if inconsistent.

Evaluation Criteria:
Consistent (1): The SQL query accurately retrieves the information requested in the question, using correct tables, columns, joins, filters, and aggregations according to the schema.

Inconsistent (0): The SQL query has one or more issues:
- Targets wrong tables or columns
- Uses incorrect join conditions or missing necessary joins
- Applies wrong filters, aggregations, or ordering
- Returns irrelevant or incomplete data for the question

Verification Steps:
1. Parse the question to identify required information
2. Check if SQL uses correct tables/columns from schema
3. Verify joins, filters, and aggregations match the question intent
4. Confirm the output answers the question completely

Output: {{\"label\": 0 or 1, \"reasoning\": brief explanation}}

Database Schema:
{schema}

Natural Language Question:
{question}

SQL Query:
{sql}"
    );
    Prompt { system: String::new(), user }
}

/// Model-side complexity classification, used to cross-check the rule.
pub fn complexity_prompt(sql: &str) -> Prompt {
    let user = format!(
        "You are an SQL complexity evaluator. Classify the given SQL query into one of four levels based on the following criteria. Output only the level number and reasoning.

Classification Criteria:

Level 1: Simple
Single table, basic filtering and sorting (WHERE, ORDER BY, LIMIT, DISTINCT)

Level 2: Moderate
Multi-table joins (max 3 tables, 2 JOINs) with aggregation (GROUP BY, HAVING, COUNT/SUM/AVG)

Level 3: Complex
Advanced logic: subqueries (IN, EXISTS, correlated), CASE WHEN, UNION, or 4+ tables

Level 4: Expert
Must use: Window functions (ROW_NUMBER, RANK, LAG, LEAD), CTEs (WITH), or recursive queries

Decision Rule:
Check Level 4 features first -> Level 3 -> Level 2 -> else Level 1

Output JSON:
{{\"level\": \"number\", \"reasoning\": \"brief explanation\"}}

SQL Query:
{sql}"
    );
    Prompt { system: String::new(), user }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{PartialKb, Stage};
    use crate::schema::{CellValue, ColumnDef, TableDef, TableSample};
    use alloc::vec;

    #[test]
    fn stage_prompt_shows_only_declared_inputs() {
        let schema = DatabaseSchema::new(
            "db",
            vec![TableDef {
                name: "schools".into(),
                columns: vec![ColumnDef { name: "CDSCode".into(), declared_type: "TEXT".into(), nullable: false }],
                primary_key: vec!["CDSCode".into()],
            }],
            vec![],
        )
        .unwrap();
        let sample = InstanceSample {
            rows_per_table: 20,
            seed: 0,
            tables: vec![TableSample {
                table: "schools".into(),
                row_count: 1,
                rows: vec![vec![CellValue::Text("01100170109835".into())]],
            }],
        };
        let kb = PartialKb::default();
        let p1 = stage_prompt(&kb.inputs_for(Stage::new(1).unwrap(), &schema, &sample).unwrap());
        assert!(p1.user.contains("CREATE TABLE schools"));
        assert!(p1.user.contains("01100170109835"));
        let mut kb = kb;
        kb.k1 = Some(crate::kb::MetadataLayer::default());
        let p3 = stage_prompt(&kb.inputs_for(Stage::new(3).unwrap(), &schema, &sample).unwrap());
        assert!(!p3.user.contains("CREATE TABLE"));
        assert!(p3.user.contains("K1 metadata"));
        assert_eq!(p3, stage_prompt(&kb.inputs_for(Stage::new(3).unwrap(), &schema, &sample).unwrap()));
    }

    #[test]
    fn judge_prompts_fill_slots() {
        let p = consistency_prompt("CREATE TABLE t (a);", "How many?", "SELECT COUNT(*) FROM t");
        assert!(p.user.starts_with("You are a semantic consistency evaluator."));
        assert!(p.user.contains("{\"label\": 0 or 1, \"reasoning\": brief explanation}"));
        assert!(p.user.ends_with("SELECT COUNT(*) FROM t"));
        let p = complexity_prompt("SELECT 1");
        assert!(p.user.contains("{\"level\": \"number\""));
    }
}
