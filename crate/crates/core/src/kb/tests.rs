use alloc::string::ToString;
use alloc::vec;

use serde_json::json;

use super::*;
use crate::diagnose::ErrorType;
use crate::fixture;

#[test]
fn stage_inputs_follow_the_table() {
    use LayerId::*;
    let req = |t: u8| Stage::new(t).unwrap().required_layers().collect::<Vec<_>>();
    assert_eq!(req(1), vec![]);
    assert_eq!(req(2), vec![K1]);
    assert_eq!(req(3), vec![K1]);
    assert_eq!(req(4), vec![K1, K2, K3]);
    assert_eq!(req(5), vec![K1, K2, K3, K4]);
    assert_eq!(req(6), vec![K3, K4, K5]);
    assert!(Stage::new(0).is_none());
    assert!(Stage::new(7).is_none());
}

#[test]
fn missing_prior_layer_is_reported() {
    let (schema, sample) = (fixture::schema(), fixture::sample());
    let mut kb = PartialKb::default();
    let full = fixture::kb();
    kb.k1 = Some(full.k1_metadata.clone());
    kb.k2 = Some(full.k2_domain.clone());
    let err = kb.inputs_for(Stage::new(4).unwrap(), &schema, &sample).unwrap_err();
    assert_eq!(err, KbError::MissingPriorLayer { stage: Stage::new(4).unwrap(), missing: vec![LayerId::K3] });
}

#[test]
fn views_withhold_undeclared_layers() {
    let (schema, sample) = (fixture::schema(), fixture::sample());
    let full = fixture::kb();
    // Every layer present, including ones later than the stage.
    let kb = PartialKb {
        k1: Some(full.k1_metadata.clone()),
        k2: Some(full.k2_domain.clone()),
        k3: Some(full.k3_field_types.clone()),
        k4: Some(full.k4_columns.clone()),
        k5: Some(full.k5_tables.clone()),
        k6: Some(full.k6_relations.clone()),
        provenance: BTreeMap::new(),
    };
    let v = kb.inputs_for(Stage::new(3).unwrap(), &schema, &sample).unwrap();
    assert!(v.schema.is_none() && v.sample.is_some() && v.k1.is_some());
    assert!(v.k2.is_none() && v.k3.is_none() && v.k4.is_none() && v.k5.is_none());
    let v = kb.inputs_for(Stage::new(6).unwrap(), &schema, &sample).unwrap();
    assert!(v.schema.is_none() && v.sample.is_none() && v.k1.is_none() && v.k2.is_none());
    assert!(v.k3.is_some() && v.k4.is_some() && v.k5.is_some());
    let v = kb.inputs_for(Stage::new(2).unwrap(), &schema, &sample).unwrap();
    assert!(v.schema.is_some() && v.sample.is_none() && v.k1.is_some() && v.k3.is_none());
}

#[test]
fn fixture_kb_is_clean() {
    let kb = fixture::kb();
    assert!(kb.dangling_references().is_empty());
    assert_eq!(kb.k1_metadata.tables[1].row_count, 2);
    let edge = &kb.k6_relations.join_edges[0];
    assert!(!edge.inferred);
    assert_eq!(edge.cardinality, Cardinality::OneToMany);
    assert_eq!(kb.category("SATSCORES", "avgscrmath"), Some(SemanticCategory::Quantitative));
}

#[test]
fn truncate_drops_later_layers() {
    let full = fixture::kb();
    let mut kb = PartialKb { k1: Some(full.k1_metadata), k2: Some(full.k2_domain), ..PartialKb::default() };
    kb.truncate_from(LayerId::K2);
    assert_eq!(kb.missing(), vec![LayerId::K2, LayerId::K3, LayerId::K4, LayerId::K5, LayerId::K6]);
}

fn validate(t: u8, raw: serde_json::Value) -> Result<Validated, StageFailure> {
    let mut prior = PartialKb::default();
    let full = fixture::kb();
    prior.k1 = Some(full.k1_metadata);
    prior.k3 = Some(full.k3_field_types);
    validate_layer(Stage::new(t).unwrap(), &raw, &fixture::schema(), &fixture::sample(), &prior)
}

#[test]
fn bad_role_names_the_table() {
    let err = validate(
        5,
        json!({"tables": [{"table": "schools", "role": "hub"}, {"table": "satscores", "role": "domain_attribute"}]}),
    )
    .unwrap_err();
    assert!(err.problems[0].contains("`schools`"), "{err}");
}

#[test]
fn missing_category_fails_and_range_on_categorical_is_dropped() {
    let err = validate(3, json!({"columns": [{"column": "schools.County", "semantic_category": "categorical"}]}))
        .unwrap_err();
    assert!(err.problems.iter().any(|p| p.contains("satscores.AvgScrMath")));
    let mut reply = fixture::replies()[2].clone();
    reply["columns"][1]["value_range"] = json!({"min": "A", "max": "Z"});
    let v = validate(3, reply).unwrap();
    let Layer::K3(k3) = v.layer else { panic!() };
    assert!(k3.get("schools", "County").unwrap().value_range.is_none());
    assert_eq!(v.repairs.len(), 1);
}

#[test]
fn k4_strips_incompatible_operations() {
    let v = validate(
        4,
        json!({"columns": [{"column": "schools.County", "meaning": "county", "allowed_operations": ["avg", "group"]}]}),
    )
    .unwrap();
    let Layer::K4(k4) = v.layer else { panic!() };
    let ops = &k4.get("schools", "County").unwrap().allowed_operations;
    assert!(ops.contains(&Operation::Group) && !ops.contains(&Operation::Avg));
    // Remaining columns are filled with defaults.
    assert_eq!(k4.columns.len(), 5);
}

#[test]
fn foreign_keys_are_forced_authoritative() {
    let v = validate(
        6,
        json!({"join_edges": [
        {"from": "schools.County", "to": "satscores.sname", "cardinality": "N:M", "label": "guess"}]}),
    )
    .unwrap();
    let Layer::K6(k6) = v.layer else { panic!() };
    assert_eq!(k6.join_edges.len(), 2);
    assert_eq!(k6.join_edges[0].to_string(), "satscores.cds -> schools.CDSCode");
    assert!(!k6.join_edges[0].inferred);
    assert!(k6.join_edges[1].inferred);
    let err =
        validate(6, json!({"join_edges": [{"from": "satscores.cds", "to": "schools.CDSCode", "cardinality": "many"}]}))
            .unwrap_err();
    assert!(err.problems[0].contains("cardinality"));
}

#[test]
fn unknown_names_are_dropped_not_fatal() {
    let mut reply = fixture::replies()[1].clone();
    reply["business_rules"][0]["affected_columns"] = json!(["satscores.AvgScrMath", "satscores.Nope", "teachers.x"]);
    let v = validate(2, reply).unwrap();
    let Layer::K2(k2) = v.layer else { panic!() };
    assert_eq!(k2.business_rules[0].affected_columns.len(), 1);
    assert_eq!(v.repairs.len(), 2);
}

#[test]
fn retrieval_finds_near_column() {
    let kb = fixture::kb();
    let q = EvidenceQuery {
        error_type: ErrorType::InvalidColumn,
        table: Some("satscores".into()),
        column: Some("AvgScrMth".into()),
        tables: vec![],
    };
    let ev = retrieve(&kb, &q).unwrap();
    assert_eq!(ev.entries[0].key, "satscores.AvgScrMath");
    assert!(ev.entries.iter().any(|e| e.layer == LayerId::K4));
}

#[test]
fn retrieval_for_joins_and_aggregates() {
    let kb = fixture::kb();
    let q = EvidenceQuery {
        error_type: ErrorType::JoinInconsistency,
        table: None,
        column: None,
        tables: vec!["satscores".into(), "schools".into()],
    };
    let ev = retrieve(&kb, &q).unwrap();
    assert!(ev.entries[0].statement.contains("satscores.cds -> schools.CDSCode"));
    let q = EvidenceQuery {
        error_type: ErrorType::AggregationTypeMismatch,
        table: Some("schools".into()),
        column: Some("County".into()),
        tables: vec![],
    };
    let ev = retrieve(&kb, &q).unwrap();
    assert_eq!(ev.entries.len(), 2);
    assert!(ev.entries[0].statement.contains("categorical"));
    let q = EvidenceQuery { error_type: ErrorType::NotExecutable, table: None, column: None, tables: vec![] };
    assert_eq!(retrieve(&kb, &q), Err(RetrieveError::UnknownErrorType(ErrorType::NotExecutable)));
    let q = EvidenceQuery {
        error_type: ErrorType::InvalidTable,
        table: Some("zzzzzzzz".into()),
        column: None,
        tables: vec![],
    };
    assert_eq!(retrieve(&kb, &q), Err(RetrieveError::EmptyEvidence));
}

#[test]
fn near_names_orders_by_distance_then_prefix() {
    let pool = ["AvgScrRead", "AvgScrMath", "AvgScrMathematics", "sname"];
    let got = retrieve::near_names("AvgScrMth", pool.iter().copied());
    assert_eq!(got, vec!["AvgScrMath"]);
    let got = retrieve::near_names("AvgScr", pool.iter().copied());
    assert_eq!(got, vec!["AvgScrMath", "AvgScrMathematics", "AvgScrRead"]);
}
