//! Small two-table database shared by the unit tests.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde_json::{json, Value};

use crate::kb::{validate_layer, KnowledgeBase, PartialKb, Provenance, Stage};
use crate::schema::{CellValue, ColumnDef, DatabaseSchema, ForeignKeyDef, InstanceSample, TableDef, TableSample};
use crate::trace::RationaleTrace;

const WORKED_TRACE: &str = r#"{
  "focus": "Identify single school with MAX(AvgScrMath)",
  "metadata": {"main_scenario": "ranking_query", "sub_scenario": "max_min_query", "complexity_level": 1, "use_case": "ranking_analysis"},
  "table_selection": {"tables_used": ["satscores"], "reasoning": "Contains SAT columns for extreme value. Single-table compliant with Level 1"},
  "column_selection": {"columns_used": [
    {"name": "sname", "type": "TEXT", "operation": "SELECT", "purpose": "Identify school with extreme score"},
    {"name": "AvgScrMath", "type": "INTEGER", "operation": "ORDER BY DESC", "purpose": "Find maximum via sorting"}]},
  "sql_strategy": {"operations": ["SELECT", "ORDER BY DESC", "LIMIT"], "approach": "ORDER BY + LIMIT for extreme value, no aggregation", "no_need": ["JOIN", "GROUP BY", "MAX()"]},
  "expected_output": "Single row: school name with highest AvgScrMath"
}"#;

fn col(name: &str, ty: &str) -> ColumnDef {
    ColumnDef { name: name.into(), declared_type: ty.into(), nullable: true }
}

pub fn schema() -> DatabaseSchema {
    DatabaseSchema::new(
        "california_schools",
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
        ],
        vec![ForeignKeyDef {
            from_table: "satscores".into(),
            from_column: "cds".into(),
            to_table: "schools".into(),
            to_column: "CDSCode".into(),
        }],
    )
    .unwrap()
}

pub fn sample() -> InstanceSample {
    let t = |s: &str| CellValue::Text(s.into());
    InstanceSample {
        rows_per_table: 20,
        seed: 7,
        tables: vec![
            TableSample {
                table: "schools".into(),
                row_count: 2,
                rows: vec![vec![t("01100170109835"), t("Alameda")], vec![t("19647331932094"), t("Los Angeles")]],
            },
            TableSample {
                table: "satscores".into(),
                row_count: 2,
                rows: vec![
                    vec![t("01100170109835"), t("FAME Public Charter"), CellValue::Integer(418)],
                    vec![t("19647331932094"), t("Lincoln High"), CellValue::Integer(561)],
                ],
            },
        ],
    }
}

/// Model replies for the six stages, in stage order.
pub fn replies() -> Vec<Value> {
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

pub fn kb() -> KnowledgeBase {
    let schema = schema();
    let sample = sample();
    let mut partial = PartialKb::default();
    for (stage, raw) in Stage::ALL.into_iter().zip(replies()) {
        let v = validate_layer(stage, &raw, &schema, &sample, &partial).unwrap();
        let prov = Provenance {
            stage: stage.index(),
            prompt_fingerprint: "fp".to_string(),
            model_id: "test".into(),
            timestamp: 0,
        };
        partial.insert(v.layer, prov);
    }
    partial.complete().unwrap()
}

pub fn worked_trace() -> RationaleTrace {
    serde_json::from_str(WORKED_TRACE).unwrap()
}
