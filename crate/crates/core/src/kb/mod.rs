//! The six-layer semantic knowledge base.
//!
//! Layers are produced one stage at a time. Each stage sees only its declared
//! inputs (see [`Stage::inputs`]); [`PartialKb::inputs_for`] enforces that by
//! handing out a view with every other layer withheld.

mod retrieve;
mod validate;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::names;
use crate::schema::{DatabaseSchema, InstanceSample};
use crate::sql::ColumnRef;

pub use retrieve::{retrieve, Evidence, EvidenceEntry, EvidenceQuery, RetrieveError, MAX_CANDIDATES};
pub use validate::{validate_layer, Repair, StageFailure, Validated};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerId {
    K1,
    K2,
    K3,
    K4,
    K5,
    K6,
}

impl LayerId {
    pub const ALL: [LayerId; 6] = [LayerId::K1, LayerId::K2, LayerId::K3, LayerId::K4, LayerId::K5, LayerId::K6];

    pub fn index(self) -> u8 {
        self as u8 + 1
    }

    /// File stem used when the layer is persisted.
    pub fn file_stem(self) -> &'static str {
        match self {
            LayerId::K1 => "k1_metadata",
            LayerId::K2 => "k2_domain",
            LayerId::K3 => "k3_field_types",
            LayerId::K4 => "k4_columns",
            LayerId::K5 => "k5_tables",
            LayerId::K6 => "k6_relations",
        }
    }
}

impl core::fmt::Display for LayerId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "K{}", self.index())
    }
}

/// Extraction stage `t`, producing layer `K_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stage(LayerId);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageInput {
    Schema,
    Sample,
    Layer(LayerId),
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage(LayerId::K1),
        Stage(LayerId::K2),
        Stage(LayerId::K3),
        Stage(LayerId::K4),
        Stage(LayerId::K5),
        Stage(LayerId::K6),
    ];

    pub fn new(t: u8) -> Option<Stage> {
        Stage::ALL.get(usize::from(t).checked_sub(1)?).copied()
    }

    pub fn index(self) -> u8 {
        self.0.index()
    }

    pub fn output(self) -> LayerId {
        self.0
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            LayerId::K1 => "schema extraction",
            LayerId::K2 => "domain analysis",
            LayerId::K3 => "field type analysis",
            LayerId::K4 => "column analysis",
            LayerId::K5 => "table analysis",
            LayerId::K6 => "relation analysis",
        }
    }

    /// Input context for this stage.
    pub fn inputs(self) -> &'static [StageInput] {
        use LayerId::*;
        use StageInput::*;
        match self.0 {
            K1 => &[Schema, Sample],
            K2 => &[Schema, Layer(K1)],
            K3 => &[Layer(K1), Sample],
            K4 => &[Layer(K1), Layer(K2), Layer(K3)],
            K5 => &[Layer(K1), Layer(K2), Layer(K3), Layer(K4)],
            K6 => &[Layer(K3), Layer(K4), Layer(K5)],
        }
    }

    pub fn required_layers(self) -> impl Iterator<Item = LayerId> {
        self.inputs().iter().filter_map(|i| match i {
            StageInput::Layer(l) => Some(*l),
            _ => None,
        })
    }
}

impl core::fmt::Display for Stage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "stage {} ({})", self.index(), self.name())
    }
}

// K1

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub description: String,
    pub row_count: u64,
    pub columns: Vec<ColumnMeta>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetadataLayer {
    pub tables: Vec<TableMeta>,
}

impl MetadataLayer {
    pub fn table(&self, name: &str) -> Option<&TableMeta> {
        self.tables.iter().find(|t| names::same(&t.name, name))
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnMeta> {
        self.table(table)?.columns.iter().find(|c| names::same(&c.name, column))
    }

    pub fn resolves(&self, c: &ColumnRef) -> bool {
        self.column(&c.table, &c.column).is_some()
    }
}

// K2

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusinessRule {
    pub rule_id: String,
    pub statement: String,
    #[serde(default)]
    pub affected_tables: Vec<String>,
    #[serde(default)]
    pub affected_columns: Vec<ColumnRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DomainConstraintLayer {
    pub domain_name: String,
    pub business_rules: Vec<BusinessRule>,
}

// K3

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticCategory {
    Identifier,
    Categorical,
    Quantitative,
    Temporal,
    FreeText,
}

impl SemanticCategory {
    pub const ALL: [SemanticCategory; 5] = [
        SemanticCategory::Identifier,
        SemanticCategory::Categorical,
        SemanticCategory::Quantitative,
        SemanticCategory::Temporal,
        SemanticCategory::FreeText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticCategory::Identifier => "identifier",
            SemanticCategory::Categorical => "categorical",
            SemanticCategory::Quantitative => "quantitative",
            SemanticCategory::Temporal => "temporal",
            SemanticCategory::FreeText => "free_text",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let k = names::key(s.trim()).replace([' ', '-'], "_");
        SemanticCategory::ALL.into_iter().find(|c| c.as_str() == k)
    }

    /// Whether a value range is meaningful for this category.
    pub fn ranged(self) -> bool {
        matches!(self, SemanticCategory::Quantitative | SemanticCategory::Temporal)
    }
}

impl core::fmt::Display for SemanticCategory {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: String,
    pub max: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldType {
    pub column: ColumnRef,
    pub semantic_category: SemanticCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_range: Option<ValueRange>,
    #[serde(default)]
    pub example_values: Vec<String>,
}

pub const MAX_EXAMPLE_VALUES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FieldTypeLayer {
    pub columns: Vec<FieldType>,
}

impl FieldTypeLayer {
    pub fn get(&self, table: &str, column: &str) -> Option<&FieldType> {
        self.columns.iter().find(|f| names::same(&f.column.table, table) && names::same(&f.column.column, column))
    }
}

// K4

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Select,
    Filter,
    Group,
    Order,
    Sum,
    Avg,
    Min,
    Max,
    Count,
}

impl Operation {
    pub const ALL: [Operation; 9] = [
        Operation::Select,
        Operation::Filter,
        Operation::Group,
        Operation::Order,
        Operation::Sum,
        Operation::Avg,
        Operation::Min,
        Operation::Max,
        Operation::Count,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Select => "select",
            Operation::Filter => "filter",
            Operation::Group => "group",
            Operation::Order => "order",
            Operation::Sum => "sum",
            Operation::Avg => "avg",
            Operation::Min => "min",
            Operation::Max => "max",
            Operation::Count => "count",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let k = names::key(s.trim());
        Operation::ALL.into_iter().find(|o| o.as_str() == k)
    }

    /// The operation an aggregate function performs, if it is one of ours.
    pub fn of_aggregate(function: &str) -> Option<Self> {
        match function.to_ascii_uppercase().as_str() {
            "SUM" | "TOTAL" => Some(Operation::Sum),
            "AVG" => Some(Operation::Avg),
            "MIN" => Some(Operation::Min),
            "MAX" => Some(Operation::Max),
            "COUNT" => Some(Operation::Count),
            _ => None,
        }
    }

    /// Aggregation compatibility: SUM and AVG need quantitative columns,
    /// MIN and MAX need quantitative or temporal ones; everything else is
    /// allowed on any category.
    pub fn compatible_with(self, c: SemanticCategory) -> bool {
        match self {
            Operation::Sum | Operation::Avg => c == SemanticCategory::Quantitative,
            Operation::Min | Operation::Max => c.ranged(),
            _ => true,
        }
    }
}

impl core::fmt::Display for Operation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSemantics {
    pub column: ColumnRef,
    pub meaning: String,
    pub allowed_operations: BTreeSet<Operation>,
    #[serde(default)]
    pub nullability_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ColumnSemanticsLayer {
    pub columns: Vec<ColumnSemantics>,
}

impl ColumnSemanticsLayer {
    pub fn get(&self, table: &str, column: &str) -> Option<&ColumnSemantics> {
        self.columns.iter().find(|f| names::same(&f.column.table, table) && names::same(&f.column.column, column))
    }
}

// K5

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityRole {
    PrimaryEntity,
    DomainAttribute,
    MetadataEntity,
}

impl EntityRole {
    pub const ALL: [EntityRole; 3] =
        [EntityRole::PrimaryEntity, EntityRole::DomainAttribute, EntityRole::MetadataEntity];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityRole::PrimaryEntity => "primary_entity",
            EntityRole::DomainAttribute => "domain_attribute",
            EntityRole::MetadataEntity => "metadata_entity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let k = names::key(s.trim()).replace([' ', '-'], "_");
        EntityRole::ALL.into_iter().find(|r| r.as_str() == k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntraTableConstraint {
    pub statement: String,
    #[serde(default)]
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableConstraints {
    pub table: String,
    pub role: EntityRole,
    #[serde(default)]
    pub constraints: Vec<IntraTableConstraint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TableConstraintLayer {
    pub tables: Vec<TableConstraints>,
}

// K6

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cardinality {
    #[serde(rename = "1:1")]
    OneToOne,
    #[serde(rename = "1:N")]
    OneToMany,
    #[serde(rename = "N:M")]
    ManyToMany,
}

impl Cardinality {
    pub fn as_str(self) -> &'static str {
        match self {
            Cardinality::OneToOne => "1:1",
            Cardinality::OneToMany => "1:N",
            Cardinality::ManyToMany => "N:M",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().replace(' ', "").as_str() {
            "1:1" => Some(Cardinality::OneToOne),
            "1:N" | "N:1" | "1:M" | "M:1" => Some(Cardinality::OneToMany),
            "N:M" | "M:N" | "N:N" => Some(Cardinality::ManyToMany),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub from: ColumnRef,
    pub to: ColumnRef,
    pub cardinality: Cardinality,
    #[serde(default)]
    pub label: String,
    /// False for edges backed by a declared foreign key.
    pub inferred: bool,
}

impl JoinEdge {
    pub fn connects(&self, a: &ColumnRef, b: &ColumnRef) -> bool {
        let eq = |x: &ColumnRef, y: &ColumnRef| names::same(&x.table, &y.table) && names::same(&x.column, &y.column);
        (eq(&self.from, a) && eq(&self.to, b)) || (eq(&self.from, b) && eq(&self.to, a))
    }

    pub fn touches(&self, table: &str) -> bool {
        names::same(&self.from.table, table) || names::same(&self.to.table, table)
    }
}

impl core::fmt::Display for JoinEdge {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedDependency {
    pub statement: String,
    #[serde(default)]
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationLayer {
    pub join_edges: Vec<JoinEdge>,
    #[serde(default)]
    pub derived_dependencies: Vec<DerivedDependency>,
}

/// A validated layer of any stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Layer {
    K1(MetadataLayer),
    K2(DomainConstraintLayer),
    K3(FieldTypeLayer),
    K4(ColumnSemanticsLayer),
    K5(TableConstraintLayer),
    K6(RelationLayer),
}

impl Layer {
    pub fn id(&self) -> LayerId {
        match self {
            Layer::K1(_) => LayerId::K1,
            Layer::K2(_) => LayerId::K2,
            Layer::K3(_) => LayerId::K3,
            Layer::K4(_) => LayerId::K4,
            Layer::K5(_) => LayerId::K5,
            Layer::K6(_) => LayerId::K6,
        }
    }

    /// Reads a persisted layer back from its JSON value.
    pub fn from_value(id: LayerId, v: serde_json::Value) -> Result<Layer, serde_json::Error> {
        Ok(match id {
            LayerId::K1 => Layer::K1(serde_json::from_value(v)?),
            LayerId::K2 => Layer::K2(serde_json::from_value(v)?),
            LayerId::K3 => Layer::K3(serde_json::from_value(v)?),
            LayerId::K4 => Layer::K4(serde_json::from_value(v)?),
            LayerId::K5 => Layer::K5(serde_json::from_value(v)?),
            LayerId::K6 => Layer::K6(serde_json::from_value(v)?),
        })
    }
}

/// Where a layer came from. Excluded from KB equality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: u8,
    pub prompt_fingerprint: String,
    pub model_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KbError {
    #[error("{stage} needs {missing:?}, which are not built yet")]
    MissingPriorLayer { stage: Stage, missing: Vec<LayerId> },
    #[error("knowledge base is incomplete: missing {0:?}")]
    Incomplete(Vec<LayerId>),
}

/// Layers built so far.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PartialKb {
    pub k1: Option<MetadataLayer>,
    pub k2: Option<DomainConstraintLayer>,
    pub k3: Option<FieldTypeLayer>,
    pub k4: Option<ColumnSemanticsLayer>,
    pub k5: Option<TableConstraintLayer>,
    pub k6: Option<RelationLayer>,
    #[serde(default)]
    pub provenance: BTreeMap<LayerId, Provenance>,
}

/// The context a stage is allowed to see. Fields outside the stage's inputs
/// are always `None`.
#[derive(Debug, Clone, Copy)]
pub struct StageView<'a> {
    pub stage: Stage,
    pub schema: Option<&'a DatabaseSchema>,
    pub sample: Option<&'a InstanceSample>,
    pub k1: Option<&'a MetadataLayer>,
    pub k2: Option<&'a DomainConstraintLayer>,
    pub k3: Option<&'a FieldTypeLayer>,
    pub k4: Option<&'a ColumnSemanticsLayer>,
    pub k5: Option<&'a TableConstraintLayer>,
}

impl PartialKb {
    pub fn has(&self, id: LayerId) -> bool {
        match id {
            LayerId::K1 => self.k1.is_some(),
            LayerId::K2 => self.k2.is_some(),
            LayerId::K3 => self.k3.is_some(),
            LayerId::K4 => self.k4.is_some(),
            LayerId::K5 => self.k5.is_some(),
            LayerId::K6 => self.k6.is_some(),
        }
    }

    pub fn missing(&self) -> Vec<LayerId> {
        LayerId::ALL.into_iter().filter(|l| !self.has(*l)).collect()
    }

    pub fn insert(&mut self, layer: Layer, provenance: Provenance) {
        self.provenance.insert(layer.id(), provenance);
        match layer {
            Layer::K1(l) => self.k1 = Some(l),
            Layer::K2(l) => self.k2 = Some(l),
            Layer::K3(l) => self.k3 = Some(l),
            Layer::K4(l) => self.k4 = Some(l),
            Layer::K5(l) => self.k5 = Some(l),
            Layer::K6(l) => self.k6 = Some(l),
        }
    }

    pub fn layer(&self, id: LayerId) -> Option<Layer> {
        Some(match id {
            LayerId::K1 => Layer::K1(self.k1.clone()?),
            LayerId::K2 => Layer::K2(self.k2.clone()?),
            LayerId::K3 => Layer::K3(self.k3.clone()?),
            LayerId::K4 => Layer::K4(self.k4.clone()?),
            LayerId::K5 => Layer::K5(self.k5.clone()?),
            LayerId::K6 => Layer::K6(self.k6.clone()?),
        })
    }

    /// Drops `id` and every layer after it, e.g. before rebuilding a stage.
    pub fn truncate_from(&mut self, id: LayerId) {
        for l in LayerId::ALL.into_iter().filter(|l| *l >= id) {
            self.provenance.remove(&l);
            match l {
                LayerId::K1 => self.k1 = None,
                LayerId::K2 => self.k2 = None,
                LayerId::K3 => self.k3 = None,
                LayerId::K4 => self.k4 = None,
                LayerId::K5 => self.k5 = None,
                LayerId::K6 => self.k6 = None,
            }
        }
    }

    /// Builds the restricted view for `stage`, failing when a declared input
    /// layer is absent.
    pub fn inputs_for<'a>(
        &'a self,
        stage: Stage,
        schema: &'a DatabaseSchema,
        sample: &'a InstanceSample,
    ) -> Result<StageView<'a>, KbError> {
        let missing: Vec<LayerId> = stage.required_layers().filter(|l| !self.has(*l)).collect();
        if !missing.is_empty() {
            return Err(KbError::MissingPriorLayer { stage, missing });
        }
        let wants = |i: StageInput| stage.inputs().contains(&i);
        let layer = |id: LayerId| wants(StageInput::Layer(id));
        Ok(StageView {
            stage,
            schema: wants(StageInput::Schema).then_some(schema),
            sample: wants(StageInput::Sample).then_some(sample),
            k1: self.k1.as_ref().filter(|_| layer(LayerId::K1)),
            k2: self.k2.as_ref().filter(|_| layer(LayerId::K2)),
            k3: self.k3.as_ref().filter(|_| layer(LayerId::K3)),
            k4: self.k4.as_ref().filter(|_| layer(LayerId::K4)),
            k5: self.k5.as_ref().filter(|_| layer(LayerId::K5)),
        })
    }

    pub fn complete(self) -> Result<KnowledgeBase, KbError> {
        let missing = self.missing();
        match (self.k1, self.k2, self.k3, self.k4, self.k5, self.k6) {
            (Some(k1), Some(k2), Some(k3), Some(k4), Some(k5), Some(k6)) => Ok(KnowledgeBase {
                k1_metadata: k1,
                k2_domain: k2,
                k3_field_types: k3,
                k4_columns: k4,
                k5_tables: k5,
                k6_relations: k6,
                provenance: self.provenance,
            }),
            _ => Err(KbError::Incomplete(missing)),
        }
    }
}

/// A complete knowledge base. Equality ignores provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub k1_metadata: MetadataLayer,
    pub k2_domain: DomainConstraintLayer,
    pub k3_field_types: FieldTypeLayer,
    pub k4_columns: ColumnSemanticsLayer,
    pub k5_tables: TableConstraintLayer,
    pub k6_relations: RelationLayer,
    #[serde(default)]
    pub provenance: BTreeMap<LayerId, Provenance>,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, o: &Self) -> bool {
        self.k1_metadata == o.k1_metadata
            && self.k2_domain == o.k2_domain
            && self.k3_field_types == o.k3_field_types
            && self.k4_columns == o.k4_columns
            && self.k5_tables == o.k5_tables
            && self.k6_relations == o.k6_relations
    }
}

impl Eq for KnowledgeBase {}

impl KnowledgeBase {
    pub fn category(&self, table: &str, column: &str) -> Option<SemanticCategory> {
        self.k3_field_types.get(table, column).map(|f| f.semantic_category)
    }

    pub fn allowed_operations(&self, table: &str, column: &str) -> Option<&BTreeSet<Operation>> {
        self.k4_columns.get(table, column).map(|c| &c.allowed_operations)
    }

    pub fn edges_between<'a>(&'a self, a: &'a ColumnRef, b: &'a ColumnRef) -> impl Iterator<Item = &'a JoinEdge> + 'a {
        self.k6_relations.join_edges.iter().filter(move |e| e.connects(a, b))
    }

    /// Every (table, column) named in K2 through K6 that K1 does not know.
    /// Empty for a KB that came out of validation.
    pub fn dangling_references(&self) -> Vec<String> {
        let k1 = &self.k1_metadata;
        let mut out = Vec::new();
        let mut col = |c: &ColumnRef| {
            if !k1.resolves(c) {
                out.push(alloc::format!("{c}"));
            }
        };
        for r in &self.k2_domain.business_rules {
            r.affected_columns.iter().for_each(&mut col);
        }
        self.k3_field_types.columns.iter().for_each(|f| col(&f.column));
        self.k4_columns.columns.iter().for_each(|f| col(&f.column));
        for e in &self.k6_relations.join_edges {
            col(&e.from);
            col(&e.to);
        }
        let mut tables: Vec<&str> = self.k5_tables.tables.iter().map(|t| t.table.as_str()).collect();
        for r in &self.k2_domain.business_rules {
            tables.extend(r.affected_tables.iter().map(String::as_str));
        }
        for d in &self.k6_relations.derived_dependencies {
            tables.extend(d.tables.iter().map(String::as_str));
        }
        for t in &self.k5_tables.tables {
            for c in &t.constraints {
                for name in &c.columns {
                    if k1.column(&t.table, name).is_none() {
                        out.push(alloc::format!("{}.{name}", t.table));
                    }
                }
            }
        }
        out.extend(tables.into_iter().filter(|t| k1.table(t).is_none()).map(String::from));
        out
    }
}

#[cfg(test)]
mod tests;
