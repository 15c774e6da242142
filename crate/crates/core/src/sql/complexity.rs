use alloc::collections::BTreeSet;

use super::{ComplexityLevel, Feature, Level, SqlFacts};

const L4: [Feature; 3] = [Feature::WindowFunction, Feature::Cte, Feature::RecursiveCte];
const L3: [Feature; 4] = [Feature::Subquery, Feature::CorrelatedSubquery, Feature::CaseWhen, Feature::Union];
const L2_AGG: [Feature; 2] = [Feature::GroupBy, Feature::Having];
const L1: [Feature; 6] =
    [Feature::Where, Feature::OrderBy, Feature::Limit, Feature::Distinct, Feature::GroupBy, Feature::Having];

/// Tables at or above this count push a query to L3 on their own.
pub const WIDE_QUERY_TABLES: usize = 4;

/// Assigns a complexity level by checking L4 features first, then L3, then L2,
/// falling back to L1.
///
/// L2 requires a join together with aggregation (`GROUP BY`, `HAVING` or an
/// aggregate call), so a plain join with neither lands in L1.
pub fn classify_complexity(facts: &SqlFacts) -> ComplexityLevel {
    let present = |set: &[Feature]| -> BTreeSet<Feature> { set.iter().copied().filter(|f| facts.has(*f)).collect() };

    let l4 = present(&L4);
    if !l4.is_empty() {
        return ComplexityLevel { level: Level::L4, matched_features: l4 };
    }
    let mut l3 = present(&L3);
    let table_count = facts.tables.len();
    if table_count >= WIDE_QUERY_TABLES {
        l3.insert(Feature::Join);
    }
    if !l3.is_empty() {
        return ComplexityLevel { level: Level::L3, matched_features: l3 };
    }
    let aggregated = facts.has(Feature::GroupBy) || facts.has(Feature::Having) || !facts.aggregations.is_empty();
    if facts.has(Feature::Join) && aggregated {
        let mut m = present(&L2_AGG);
        m.insert(Feature::Join);
        return ComplexityLevel { level: Level::L2, matched_features: m };
    }
    ComplexityLevel { level: Level::L1, matched_features: present(&L1) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnDef, DatabaseSchema, TableDef};
    use crate::sql::{extract_facts, AggArg, Aggregation};
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn schema() -> DatabaseSchema {
        let t = |name: &str, cols: &[&str]| TableDef {
            name: name.into(),
            columns: cols
                .iter()
                .map(|c| ColumnDef { name: c.to_string(), declared_type: "TEXT".into(), nullable: true })
                .collect(),
            primary_key: vec![],
        };
        DatabaseSchema::new("t", vec![t("a", &["id", "c"]), t("b", &["aid", "v"])], vec![]).unwrap()
    }

    fn level(sql: &str) -> Level {
        classify_complexity(&extract_facts(sql, &schema()).unwrap()).level
    }

    #[test]
    fn anchor_queries() {
        assert_eq!(level("WITH x AS (SELECT 1) SELECT * FROM x;"), Level::L4);
        assert_eq!(level("SELECT a.c, COUNT(*) FROM a JOIN b ON a.id=b.aid GROUP BY a.c;"), Level::L2);
        assert_eq!(level("SELECT * FROM a WHERE id IN (SELECT aid FROM b);"), Level::L3);
        assert_eq!(level("SELECT a.c FROM a JOIN b ON a.id = b.aid"), Level::L1);
    }

    #[test]
    fn l2_carries_join_justification() {
        let c =
            classify_complexity(&extract_facts("SELECT SUM(b.v) FROM a JOIN b ON a.id = b.aid", &schema()).unwrap());
        assert_eq!(c.level, Level::L2);
        assert!(c.matched_features.contains(&Feature::Join));
    }

    fn arb_facts() -> impl Strategy<Value = SqlFacts> {
        (
            proptest::collection::btree_set(proptest::sample::select(Feature::ALL.to_vec()), 0..8),
            0usize..6,
            any::<bool>(),
        )
            .prop_map(|(mut features, tables, agg)| {
                if features.contains(&Feature::RecursiveCte) {
                    features.insert(Feature::Cte);
                }
                let mut f = SqlFacts { features, ..SqlFacts::default() };
                for i in 0..tables {
                    f.tables.insert(alloc::format!("t{i}"));
                }
                if agg {
                    f.aggregations.push(Aggregation { function: "COUNT".into(), arg: AggArg::Star, windowed: false });
                }
                f
            })
    }

    proptest! {
        #[test]
        fn window_flag_forces_l4(mut f in arb_facts()) {
            f.features.insert(Feature::WindowFunction);
            prop_assert_eq!(classify_complexity(&f).level, Level::L4);
        }

        #[test]
        fn matched_features_justify_level(f in arb_facts()) {
            let c = classify_complexity(&f);
            if c.level != Level::L1 {
                prop_assert!(!c.matched_features.is_empty());
            }
            let allowed: Vec<Feature> = match c.level {
                Level::L4 => L4.to_vec(),
                Level::L3 => { let mut v = L3.to_vec(); v.push(Feature::Join); v }
                Level::L2 => vec![Feature::Join, Feature::GroupBy, Feature::Having],
                Level::L1 => L1.to_vec(),
            };
            for m in &c.matched_features {
                prop_assert!(allowed.contains(m));
                prop_assert!(f.has(*m) || (*m == Feature::Join && f.tables.len() >= WIDE_QUERY_TABLES));
            }
        }

        #[test]
        fn level_is_highest_satisfied_rule(f in arb_facts()) {
            let c = classify_complexity(&f);
            let l4 = L4.iter().any(|x| f.has(*x));
            let l3 = L3.iter().any(|x| f.has(*x)) || f.tables.len() >= 4;
            let l2 = f.has(Feature::Join) && (f.has(Feature::GroupBy) || f.has(Feature::Having) || !f.aggregations.is_empty());
            let expect = if l4 { Level::L4 } else if l3 { Level::L3 } else if l2 { Level::L2 } else { Level::L1 };
            prop_assert_eq!(c.level, expect);
        }
    }
}
