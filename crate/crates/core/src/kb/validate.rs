//! Turning a model's layer reply into a validated layer.
//!
//! Problems fall in two groups. Unresolvable names and out-of-contract
//! details are repaired in place and reported as [`Repair`]s. Anything that
//! cannot be fixed without guessing (a missing column category, a role
//! outside the vocabulary) becomes a [`StageFailure`], which the caller may
//! send back to the model once.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Deserialize;
use serde_json::Value;

use super::*;
use crate::schema::DatabaseSchema;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repair(pub String);

impl core::fmt::Display for Repair {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Validated {
    pub layer: Layer,
    pub repairs: Vec<Repair>,
}

/// Problems that need the model to try again.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}", problems.join("; "))]
pub struct StageFailure {
    pub problems: Vec<String>,
}

/// Validates the reply for `stage` against the schema and the layers in `prior`.
pub fn validate_layer(
    stage: Stage,
    raw: &Value,
    schema: &DatabaseSchema,
    sample: &InstanceSample,
    prior: &PartialKb,
) -> Result<Validated, StageFailure> {
    let mut cx = Cx { schema, repairs: Vec::new(), problems: Vec::new() };
    let layer = match stage.output() {
        LayerId::K1 => Layer::K1(cx.k1(parse(raw)?, sample)),
        LayerId::K2 => Layer::K2(cx.k2(parse(raw)?)),
        LayerId::K3 => Layer::K3(cx.k3(parse(raw)?)),
        LayerId::K4 => {
            let k3 = prior.k3.as_ref().ok_or_else(|| fail("K3 is required to check column operations"))?;
            Layer::K4(cx.k4(parse(raw)?, k3, prior.k1.as_ref()))
        }
        LayerId::K5 => Layer::K5(cx.k5(parse(raw)?)),
        LayerId::K6 => Layer::K6(cx.k6(parse(raw)?)),
    };
    if cx.problems.is_empty() {
        Ok(Validated { layer, repairs: cx.repairs })
    } else {
        Err(StageFailure { problems: cx.problems })
    }
}

fn fail(msg: &str) -> StageFailure {
    StageFailure { problems: alloc::vec![msg.to_string()] }
}

fn parse<T: for<'de> Deserialize<'de>>(raw: &Value) -> Result<T, StageFailure> {
    T::deserialize(raw)
        .map_err(|e| StageFailure { problems: alloc::vec![format!("reply does not match the layer shape: {e}")] })
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Deserialize)]
struct RawColumnMeta {
    name: String,
    #[serde(default)]
    description: String,
}

#[derive(Deserialize)]
struct RawTableMeta {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    columns: Vec<RawColumnMeta>,
}

#[derive(Deserialize)]
struct RawK1 {
    tables: Vec<RawTableMeta>,
}

#[derive(Deserialize)]
struct RawRule {
    #[serde(default)]
    rule_id: String,
    #[serde(default)]
    statement: String,
    #[serde(default)]
    affected_tables: Vec<String>,
    #[serde(default)]
    affected_columns: Vec<String>,
}

#[derive(Deserialize)]
struct RawK2 {
    #[serde(default)]
    domain_name: String,
    #[serde(default)]
    business_rules: Vec<RawRule>,
}

#[derive(Deserialize)]
struct RawRange {
    min: Value,
    max: Value,
}

#[derive(Deserialize)]
struct RawFieldType {
    column: String,
    #[serde(default)]
    semantic_category: String,
    #[serde(default)]
    unit: Option<String>,
    #[serde(default)]
    value_range: Option<RawRange>,
    #[serde(default)]
    example_values: Vec<Value>,
}

#[derive(Deserialize)]
struct RawK3 {
    columns: Vec<RawFieldType>,
}

#[derive(Deserialize)]
struct RawSemantics {
    column: String,
    #[serde(default)]
    meaning: String,
    #[serde(default)]
    allowed_operations: Vec<String>,
    #[serde(default)]
    nullability_note: String,
}

#[derive(Deserialize)]
struct RawK4 {
    columns: Vec<RawSemantics>,
}

#[derive(Deserialize)]
struct RawConstraint {
    statement: String,
    #[serde(default)]
    columns: Vec<String>,
}

#[derive(Deserialize)]
struct RawTableConstraints {
    table: String,
    #[serde(default)]
    role: String,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
}

#[derive(Deserialize)]
struct RawK5 {
    tables: Vec<RawTableConstraints>,
}

#[derive(Deserialize)]
struct RawEdge {
    from: String,
    to: String,
    #[serde(default)]
    cardinality: String,
    #[serde(default)]
    label: String,
}

#[derive(Deserialize)]
struct RawDependency {
    statement: String,
    #[serde(default)]
    tables: Vec<String>,
}

#[derive(Deserialize)]
struct RawK6 {
    #[serde(default)]
    join_edges: Vec<RawEdge>,
    #[serde(default)]
    derived_dependencies: Vec<RawDependency>,
}

struct Cx<'a> {
    schema: &'a DatabaseSchema,
    repairs: Vec<Repair>,
    problems: Vec<String>,
}

impl Cx<'_> {
    fn repair(&mut self, msg: String) {
        log::info!("knowledge base repair: {msg}");
        self.repairs.push(Repair(msg));
    }

    fn table(&mut self, name: &str, what: &str) -> Option<String> {
        match self.schema.canonical_table(name) {
            Some(t) => Some(t.to_string()),
            None => {
                self.repair(format!("dropped unknown table `{name}` in {what}"));
                None
            }
        }
    }

    /// Resolves `table.column`, or a bare column name that exactly one table has.
    fn column(&mut self, name: &str, what: &str) -> Option<ColumnRef> {
        let found = match names::split_qualified(name) {
            (Some(t), c) => self.schema.canonical_column(t, c),
            (None, c) => {
                let mut hits = self.schema.tables.iter().filter(|t| t.has_column(c));
                match (hits.next(), hits.next()) {
                    (Some(t), None) => self.schema.canonical_column(&t.name, c),
                    _ => None,
                }
            }
        };
        match found {
            Some((t, c)) => Some(ColumnRef::new(t, c)),
            None => {
                self.repair(format!("dropped unresolvable column `{name}` in {what}"));
                None
            }
        }
    }

    fn all_columns(&self) -> Vec<ColumnRef> {
        self.schema
            .tables
            .iter()
            .flat_map(|t| t.columns.iter().map(move |c| ColumnRef::new(t.name.clone(), c.name.clone())))
            .collect()
    }

    fn k1(&mut self, raw: RawK1, sample: &InstanceSample) -> MetadataLayer {
        let mut by_table: BTreeMap<String, RawTableMeta> = BTreeMap::new();
        for t in raw.tables {
            if let Some(name) = self.table(&t.name, "K1") {
                by_table.entry(names::key(&name)).or_insert(t);
            }
        }
        let mut tables = Vec::new();
        let schema = self.schema;
        for def in &schema.tables {
            let raw = by_table.remove(&names::key(&def.name));
            let mut described: BTreeMap<String, String> = BTreeMap::new();
            let mut table_description = String::new();
            if let Some(raw) = raw {
                table_description = raw.description;
                for c in raw.columns {
                    if def.has_column(&c.name) {
                        described.entry(names::key(&c.name)).or_insert(c.description);
                    } else {
                        self.repair(format!("dropped unknown column `{}.{}` in K1", def.name, c.name));
                    }
                }
            }
            if table_description.trim().is_empty() {
                self.repair(format!("filled missing K1 description for table `{}`", def.name));
                table_description = format!("Table {}", def.name);
            }
            let mut columns = Vec::new();
            for c in &def.columns {
                let d = described.remove(&names::key(&c.name)).unwrap_or_default();
                let description = if d.trim().is_empty() {
                    self.repair(format!("filled missing K1 description for `{}.{}`", def.name, c.name));
                    if c.declared_type.is_empty() {
                        c.name.clone()
                    } else {
                        format!("{} ({})", c.name, c.declared_type)
                    }
                } else {
                    d
                };
                columns.push(ColumnMeta { name: c.name.clone(), description });
            }
            let row_count = sample.table(&def.name).map(|s| s.row_count).unwrap_or(0);
            tables.push(TableMeta { name: def.name.clone(), description: table_description, row_count, columns });
        }
        MetadataLayer { tables }
    }

    fn k2(&mut self, raw: RawK2) -> DomainConstraintLayer {
        if raw.domain_name.trim().is_empty() {
            self.problems.push("domain_name is empty".into());
        }
        let mut seen = BTreeSet::new();
        let mut rules = Vec::new();
        for r in raw.business_rules {
            if r.rule_id.trim().is_empty() {
                self.problems.push(format!("business rule `{}` has no rule_id", r.statement));
                continue;
            }
            if !seen.insert(r.rule_id.clone()) {
                self.problems.push(format!("rule_id `{}` is used more than once", r.rule_id));
                continue;
            }
            if r.statement.trim().is_empty() {
                self.repair(format!("dropped rule `{}` with an empty statement", r.rule_id));
                continue;
            }
            let what = format!("K2 rule {}", r.rule_id);
            let affected_tables = r.affected_tables.iter().filter_map(|t| self.table(t, &what)).collect();
            let affected_columns = r.affected_columns.iter().filter_map(|c| self.column(c, &what)).collect();
            rules.push(BusinessRule { rule_id: r.rule_id, statement: r.statement, affected_tables, affected_columns });
        }
        DomainConstraintLayer { domain_name: raw.domain_name, business_rules: rules }
    }

    fn k3(&mut self, raw: RawK3) -> FieldTypeLayer {
        let mut by_col: BTreeMap<ColumnRef, FieldType> = BTreeMap::new();
        for f in raw.columns {
            let Some(col) = self.column(&f.column, "K3") else { continue };
            let Some(category) = SemanticCategory::parse(&f.semantic_category) else {
                self.problems.push(format!(
                    "column `{col}`: semantic_category `{}` is not one of identifier, categorical, quantitative, temporal, free_text",
                    f.semantic_category
                ));
                continue;
            };
            if by_col.contains_key(&col) {
                self.repair(format!("ignored repeated K3 entry for `{col}`"));
                continue;
            }
            let mut value_range = f.value_range.map(|r| ValueRange { min: text(&r.min), max: text(&r.max) });
            if value_range.is_some() && !category.ranged() {
                self.repair(format!("dropped value_range on {category} column `{col}`"));
                value_range = None;
            }
            let mut examples: Vec<String> = f.example_values.iter().map(text).collect();
            if examples.len() > MAX_EXAMPLE_VALUES {
                self.repair(format!("kept the first {MAX_EXAMPLE_VALUES} example values of `{col}`"));
                examples.truncate(MAX_EXAMPLE_VALUES);
            }
            let unit = f.unit.filter(|u| !u.trim().is_empty());
            by_col.insert(
                col.clone(),
                FieldType { column: col, semantic_category: category, unit, value_range, example_values: examples },
            );
        }
        let mut columns = Vec::new();
        for c in self.all_columns() {
            match by_col.remove(&c) {
                Some(f) => columns.push(f),
                None => self.problems.push(format!("column `{c}` has no semantic_category")),
            }
        }
        FieldTypeLayer { columns }
    }

    fn k4(&mut self, raw: RawK4, k3: &FieldTypeLayer, k1: Option<&MetadataLayer>) -> ColumnSemanticsLayer {
        let mut by_col: BTreeMap<ColumnRef, ColumnSemantics> = BTreeMap::new();
        for s in raw.columns {
            let Some(col) = self.column(&s.column, "K4") else { continue };
            if by_col.contains_key(&col) {
                self.repair(format!("ignored repeated K4 entry for `{col}`"));
                continue;
            }
            let category = k3.get(&col.table, &col.column).map(|f| f.semantic_category);
            let mut ops = BTreeSet::new();
            for o in &s.allowed_operations {
                match Operation::parse(o) {
                    Some(op) if category.is_none_or(|c| op.compatible_with(c)) => {
                        ops.insert(op);
                    }
                    Some(op) => self.repair(format!(
                        "removed `{op}` from `{col}`: not valid on a {} column",
                        category.map(|c| c.as_str()).unwrap_or("")
                    )),
                    None => self.repair(format!("dropped unknown operation `{o}` on `{col}`")),
                }
            }
            by_col.insert(
                col.clone(),
                ColumnSemantics {
                    column: col,
                    meaning: s.meaning,
                    allowed_operations: ops,
                    nullability_note: s.nullability_note,
                },
            );
        }
        let mut columns = Vec::new();
        for c in self.all_columns() {
            let entry = match by_col.remove(&c) {
                Some(e) => e,
                None => {
                    self.repair(format!("filled default K4 entry for `{c}`"));
                    let category = k3.get(&c.table, &c.column).map(|f| f.semantic_category);
                    let meaning = k1
                        .and_then(|k| k.column(&c.table, &c.column))
                        .map(|m| m.description.clone())
                        .unwrap_or_default();
                    ColumnSemantics {
                        allowed_operations: Operation::ALL
                            .into_iter()
                            .filter(|o| category.is_none_or(|cat| o.compatible_with(cat)))
                            .collect(),
                        column: c,
                        meaning,
                        nullability_note: String::new(),
                    }
                }
            };
            columns.push(entry);
        }
        ColumnSemanticsLayer { columns }
    }

    fn k5(&mut self, raw: RawK5) -> TableConstraintLayer {
        let mut by_table: BTreeMap<String, TableConstraints> = BTreeMap::new();
        for t in raw.tables {
            let Some(table) = self.table(&t.table, "K5") else { continue };
            let Some(role) = EntityRole::parse(&t.role) else {
                self.problems.push(format!(
                    "table `{table}`: role `{}` is not one of primary_entity, domain_attribute, metadata_entity",
                    t.role
                ));
                continue;
            };
            let mut constraints = Vec::new();
            for c in t.constraints {
                let mut cols = Vec::new();
                for name in &c.columns {
                    let bare = match names::split_qualified(name) {
                        (Some(q), c) if names::same(q, &table) => c,
                        (Some(_), _) => "",
                        (None, c) => c,
                    };
                    match self.schema.canonical_column(&table, bare) {
                        Some((_, canon)) => cols.push(canon.to_string()),
                        None => self.repair(format!("dropped unresolvable column `{name}` in K5 table {table}")),
                    }
                }
                constraints.push(IntraTableConstraint { statement: c.statement, columns: cols });
            }
            by_table.entry(names::key(&table)).or_insert(TableConstraints { table, role, constraints });
        }
        let mut tables = Vec::new();
        for def in &self.schema.tables {
            match by_table.remove(&names::key(&def.name)) {
                Some(t) => tables.push(t),
                None => self.problems.push(format!("table `{}` has no role", def.name)),
            }
        }
        TableConstraintLayer { tables }
    }

    fn k6(&mut self, raw: RawK6) -> RelationLayer {
        let mut proposed: Vec<JoinEdge> = Vec::new();
        for e in raw.join_edges {
            let (Some(from), Some(to)) = (self.column(&e.from, "K6"), self.column(&e.to, "K6")) else { continue };
            let cardinality = match Cardinality::parse(&e.cardinality) {
                Some(c) => c,
                None => {
                    self.problems.push(format!(
                        "edge `{from} -> {to}`: cardinality `{}` is not one of 1:1, 1:N, N:M",
                        e.cardinality
                    ));
                    continue;
                }
            };
            if proposed.iter().any(|p| p.connects(&from, &to)) {
                self.repair(format!("ignored repeated edge `{from} -> {to}`"));
                continue;
            }
            proposed.push(JoinEdge { from, to, cardinality, label: e.label, inferred: true });
        }
        let mut edges = Vec::new();
        for fk in &self.schema.foreign_keys {
            let from = ColumnRef::new(fk.from_table.clone(), fk.from_column.clone());
            let to = ColumnRef::new(fk.to_table.clone(), fk.to_column.clone());
            let edge = match proposed.iter().position(|p| p.connects(&from, &to)) {
                Some(i) => {
                    let p = proposed.remove(i);
                    JoinEdge { from, to, cardinality: p.cardinality, label: p.label, inferred: false }
                }
                None => {
                    self.repair(format!("added declared foreign key `{fk}` to K6"));
                    let cardinality = if self.sole_primary_key(&fk.from_table, &fk.from_column) {
                        Cardinality::OneToOne
                    } else {
                        Cardinality::OneToMany
                    };
                    JoinEdge { from, to, cardinality, label: "foreign key".into(), inferred: false }
                }
            };
            edges.push(edge);
        }
        edges.extend(proposed);
        let mut deps = Vec::new();
        for d in raw.derived_dependencies {
            let tables = d.tables.iter().filter_map(|t| self.table(t, "K6 dependency")).collect();
            deps.push(DerivedDependency { statement: d.statement, tables });
        }
        RelationLayer { join_edges: edges, derived_dependencies: deps }
    }

    fn sole_primary_key(&self, table: &str, column: &str) -> bool {
        self.schema.table(table).is_some_and(|t| t.primary_key.len() == 1 && names::same(&t.primary_key[0], column))
    }
}
