use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sqlparser::ast::{
    BinaryOperator, Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr, Ident, JoinConstraint,
    JoinOperator, LimitClause, ObjectName, ObjectNamePart, OrderBy, OrderByKind, Query, Select, SelectItem,
    SelectItemQualifiedWildcardKind, SetExpr, Statement, TableFactor, TableWithJoins, WindowType,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::{Parser, ParserError};

use super::{AggArg, Aggregation, AnalysisError, ColumnRef, Feature, JoinCondition, SqlFacts, UnresolvedRef};
use crate::names;
use crate::schema::DatabaseSchema;

const AGGREGATES: [&str; 7] = ["COUNT", "SUM", "AVG", "MIN", "MAX", "TOTAL", "GROUP_CONCAT"];

/// Parses `sql` as one SELECT statement and extracts its [`SqlFacts`].
///
/// Names are resolved against `schema` case-insensitively and reported in
/// their canonical spelling. Tables absent from the schema are still listed
/// so the verifier can flag them.
pub fn extract_facts(sql: &str, schema: &DatabaseSchema) -> Result<SqlFacts, AnalysisError> {
    let query = parse_query(sql)?;
    let mut w = Walker { schema, scopes: Vec::new(), ctes: Vec::new(), facts: SqlFacts::default(), unsupported: None };
    w.query(&query);
    if let Some(kind) = w.unsupported {
        return Err(AnalysisError::UnsupportedDialect(kind));
    }
    w.facts.unresolved.sort();
    w.facts.unresolved.dedup();
    Ok(w.facts)
}

/// Whether `sql` is a single SELECT (or WITH ... SELECT) statement.
///
/// Text the parser rejects is judged by its leading keyword so that SQLite
/// syntax outside the parser's grammar is not mistaken for DML.
pub fn statement_is_select(sql: &str) -> bool {
    match parse_query(sql) {
        Ok(_) => true,
        Err(AnalysisError::UnsupportedDialect(_)) | Err(AnalysisError::Empty) => false,
        Err(AnalysisError::Parse { .. }) => {
            let head: String = sql
                .trim_start()
                .chars()
                .take_while(|c| c.is_ascii_alphabetic())
                .collect::<String>()
                .to_ascii_uppercase();
            head == "SELECT" || head == "WITH"
        }
    }
}

fn parse_query(sql: &str) -> Result<Query, AnalysisError> {
    let trimmed = sql.trim().trim_end_matches(';').trim();
    if trimmed.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut statements = Parser::parse_sql(&SQLiteDialect {}, sql).map_err(parse_error)?;
    if statements.len() != 1 {
        return Err(AnalysisError::UnsupportedDialect(alloc::format!("{} statements, expected one", statements.len())));
    }
    match statements.remove(0) {
        Statement::Query(q) => {
            if let Some(kind) = dml_in_body(&q.body) {
                return Err(AnalysisError::UnsupportedDialect(kind.into()));
            }
            Ok(*q)
        }
        other => {
            let text = other.to_string();
            let kind = text.split_whitespace().next().unwrap_or("statement").to_ascii_uppercase();
            Err(AnalysisError::UnsupportedDialect(kind))
        }
    }
}

fn dml_in_body(body: &SetExpr) -> Option<&'static str> {
    match body {
        SetExpr::Insert(_) => Some("INSERT"),
        SetExpr::Update(_) => Some("UPDATE"),
        SetExpr::Delete(_) => Some("DELETE"),
        SetExpr::Merge(_) => Some("MERGE"),
        SetExpr::SetOperation { left, right, .. } => dml_in_body(left).or_else(|| dml_in_body(right)),
        _ => None,
    }
}

fn parse_error(e: ParserError) -> AnalysisError {
    let message = match e {
        ParserError::TokenizerError(m) | ParserError::ParserError(m) => m,
        ParserError::RecursionLimitExceeded => "recursion limit exceeded".into(),
    };
    let line = number_after(&message, "Line: ").unwrap_or(0);
    let column = number_after(&message, "Column: ").unwrap_or(0);
    AnalysisError::Parse { message, line, column }
}

fn number_after(text: &str, label: &str) -> Option<u64> {
    let rest = &text[text.rfind(label)? + label.len()..];
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

enum SourceKind {
    Base {
        table: String,
    },
    /// Subquery, CTE or table function; `None` when its columns are unknown.
    Derived {
        columns: Option<BTreeSet<String>>,
    },
}

struct Source {
    /// Lowercased alias, or table name when unaliased.
    name: String,
    kind: SourceKind,
}

#[derive(Default)]
struct Scope {
    sources: Vec<Source>,
    aliases: BTreeSet<String>,
}

enum Resolution {
    Base {
        col: ColumnRef,
        scope: usize,
        source: usize,
    },
    /// Derived-table column, projection alias, or a quoted string literal.
    Opaque {
        scope: usize,
    },
    Unresolved(UnresolvedRef),
}

struct Walker<'s> {
    schema: &'s DatabaseSchema,
    scopes: Vec<Scope>,
    ctes: Vec<BTreeMap<String, Option<BTreeSet<String>>>>,
    facts: SqlFacts,
    unsupported: Option<String>,
}

impl Walker<'_> {
    fn flag(&mut self, f: Feature) {
        self.facts.features.insert(f);
    }

    fn query(&mut self, q: &Query) {
        self.ctes.push(BTreeMap::new());
        if let Some(with) = &q.with {
            self.flag(Feature::Cte);
            if with.recursive {
                self.flag(Feature::RecursiveCte);
            }
            for cte in &with.cte_tables {
                let name = names::key(&cte.alias.name.value);
                if with.recursive {
                    self.ctes.last_mut().unwrap().insert(name.clone(), None);
                }
                self.query(&cte.query);
                let cols = if cte.alias.columns.is_empty() {
                    output_names(&cte.query)
                } else {
                    Some(cte.alias.columns.iter().map(|c| names::key(&c.name.value)).collect())
                };
                self.ctes.last_mut().unwrap().insert(name, cols);
            }
        }
        match q.body.as_ref() {
            SetExpr::Select(s) => self.select(s, q.order_by.as_ref(), q.limit_clause.as_ref()),
            body => {
                self.set_expr(body);
                if let Some(ob) = &q.order_by {
                    self.flag(Feature::OrderBy);
                    // Compound ORDER BY terms name result columns; only walk for nested features.
                    self.scopes.push(Scope::default());
                    self.order_by_features(ob);
                    self.scopes.pop();
                }
                if let Some(l) = &q.limit_clause {
                    self.limit(l);
                }
            }
        }
        self.ctes.pop();
    }

    fn order_by_features(&mut self, ob: &OrderBy) {
        if let OrderByKind::Expressions(exprs) = &ob.kind {
            for e in exprs {
                if !matches!(e.expr, Expr::Identifier(_) | Expr::CompoundIdentifier(_)) {
                    self.expr(&e.expr);
                }
            }
        }
    }

    fn limit(&mut self, l: &LimitClause) {
        self.flag(Feature::Limit);
        match l {
            LimitClause::LimitOffset { limit, offset, .. } => {
                if let Some(e) = limit {
                    self.expr(e);
                }
                if let Some(o) = offset {
                    self.expr(&o.value);
                }
            }
            LimitClause::OffsetCommaLimit { offset, limit } => {
                self.expr(offset);
                self.expr(limit);
            }
        }
    }

    fn set_expr(&mut self, e: &SetExpr) {
        match e {
            SetExpr::Select(s) => self.select(s, None, None),
            SetExpr::Query(q) => self.query(q),
            SetExpr::SetOperation { left, right, .. } => {
                self.flag(Feature::Union);
                self.set_expr(left);
                self.set_expr(right);
            }
            SetExpr::Values(v) => {
                for row in &v.rows {
                    for e in row {
                        self.expr(e);
                    }
                }
            }
            SetExpr::Table(t) => {
                if let Some(name) = &t.table_name {
                    self.add_table_name(name);
                }
            }
            SetExpr::Insert(_) | SetExpr::Update(_) | SetExpr::Delete(_) | SetExpr::Merge(_) => {
                self.unsupported.get_or_insert_with(|| "DML in query body".into());
            }
        }
    }

    fn add_table_name(&mut self, name: &str) {
        let t = self.schema.canonical_table(name).map(String::from).unwrap_or_else(|| name.into());
        self.facts.tables.insert(t);
    }

    fn select(&mut self, s: &Select, order_by: Option<&OrderBy>, limit: Option<&LimitClause>) {
        self.scopes.push(Scope::default());
        if s.from.len() > 1 {
            self.flag(Feature::Join);
        }
        for twj in &s.from {
            self.table_with_joins(twj);
        }
        for item in &s.projection {
            if let SelectItem::ExprWithAlias { alias, .. } = item {
                self.scopes.last_mut().unwrap().aliases.insert(names::key(&alias.value));
            }
        }
        for item in &s.projection {
            match item {
                SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => self.expr(e),
                SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::ObjectName(name), _) => {
                    if let Some(q) = last_ident(name) {
                        let q = q.clone();
                        self.qualified_wildcard(&q);
                    }
                }
                SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::Expr(e), _) => self.expr(e),
                SelectItem::Wildcard(_) => {}
            }
        }
        if s.distinct.is_some() {
            self.flag(Feature::Distinct);
        }
        if let Some(w) = &s.selection {
            self.flag(Feature::Where);
            self.expr(w);
            if s.from.len() > 1 {
                self.join_conditions(w);
            }
        }
        match &s.group_by {
            GroupByExpr::All(_) => self.flag(Feature::GroupBy),
            GroupByExpr::Expressions(exprs, _) => {
                if !exprs.is_empty() {
                    self.flag(Feature::GroupBy);
                }
                for e in exprs {
                    self.expr(e);
                }
            }
        }
        if let Some(h) = &s.having {
            self.flag(Feature::Having);
            self.expr(h);
        }
        if !s.named_window.is_empty() {
            self.flag(Feature::WindowFunction);
        }
        if let Some(q) = &s.qualify {
            self.expr(q);
        }
        if let Some(ob) = order_by {
            self.flag(Feature::OrderBy);
            if let OrderByKind::Expressions(exprs) = &ob.kind {
                for e in exprs {
                    self.expr(&e.expr);
                }
            }
        }
        if let Some(l) = limit {
            self.limit(l);
        }
        self.scopes.pop();
    }

    fn qualified_wildcard(&mut self, qualifier: &Ident) {
        let key = names::key(&qualifier.value);
        let found = self.scopes.iter().rev().any(|s| s.sources.iter().any(|src| src.name == key));
        if !found {
            self.facts.unresolved.push(UnresolvedRef { qualifier: Some(qualifier.value.clone()), column: "*".into() });
        }
    }

    fn table_with_joins(&mut self, twj: &TableWithJoins) {
        self.table_factor(&twj.relation);
        for j in &twj.joins {
            self.flag(Feature::Join);
            self.table_factor(&j.relation);
            let constraint = match &j.join_operator {
                JoinOperator::Join(c)
                | JoinOperator::Inner(c)
                | JoinOperator::Left(c)
                | JoinOperator::LeftOuter(c)
                | JoinOperator::Right(c)
                | JoinOperator::RightOuter(c)
                | JoinOperator::FullOuter(c)
                | JoinOperator::CrossJoin(c)
                | JoinOperator::Semi(c)
                | JoinOperator::LeftSemi(c)
                | JoinOperator::RightSemi(c)
                | JoinOperator::Anti(c)
                | JoinOperator::LeftAnti(c)
                | JoinOperator::RightAnti(c)
                | JoinOperator::StraightJoin(c) => Some(c),
                JoinOperator::AsOf { constraint, .. } => Some(constraint),
                JoinOperator::CrossApply | JoinOperator::OuterApply => None,
            };
            match constraint {
                Some(JoinConstraint::On(e)) => {
                    self.expr(e);
                    self.join_conditions(e);
                }
                Some(JoinConstraint::Using(cols)) => {
                    for c in cols {
                        if let Some(id) = last_ident(c) {
                            let id = id.clone();
                            self.using_condition(&id);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// `USING (c)` joins the newest source with the nearest earlier base source holding `c`.
    fn using_condition(&mut self, col: &Ident) {
        let scope = self.scopes.last().unwrap();
        let Some((right, earlier)) = scope.sources.split_last() else { return };
        let SourceKind::Base { table: rt } = &right.kind else { return };
        let Some(left_table) = earlier.iter().rev().find_map(|s| match &s.kind {
            SourceKind::Base { table } if self.schema.has_column(table, &col.value) => Some(table.clone()),
            _ => None,
        }) else {
            self.facts.unresolved.push(UnresolvedRef { qualifier: None, column: col.value.clone() });
            return;
        };
        let left = self.column_ref(&left_table, &col.value);
        let right = self.column_ref(rt, &col.value);
        self.facts.columns.insert(left.clone());
        self.facts.columns.insert(right.clone());
        self.facts.join_conditions.push(JoinCondition { left, right, op: "=".into() });
    }

    fn table_factor(&mut self, tf: &TableFactor) {
        match tf {
            TableFactor::Table { name, alias, .. } => {
                let Some(tname) = last_ident(name).map(|i| i.value.clone()) else { return };
                let source_name =
                    alias.as_ref().map(|a| names::key(&a.name.value)).unwrap_or_else(|| names::key(&tname));
                let cte = self.ctes.iter().rev().find_map(|frame| frame.get(&names::key(&tname)));
                let kind = match cte {
                    Some(cols) => SourceKind::Derived { columns: cols.clone() },
                    None => {
                        self.add_table_name(&tname);
                        let table = self.schema.canonical_table(&tname).map(String::from).unwrap_or(tname);
                        SourceKind::Base { table }
                    }
                };
                self.scopes.last_mut().unwrap().sources.push(Source { name: source_name, kind });
            }
            TableFactor::Derived { subquery, alias, .. } => {
                self.flag(Feature::Subquery);
                self.query(subquery);
                let columns = match alias {
                    Some(a) if !a.columns.is_empty() => {
                        Some(a.columns.iter().map(|c| names::key(&c.name.value)).collect())
                    }
                    _ => output_names(subquery),
                };
                let name = alias.as_ref().map(|a| names::key(&a.name.value)).unwrap_or_default();
                self.scopes.last_mut().unwrap().sources.push(Source { name, kind: SourceKind::Derived { columns } });
            }
            TableFactor::NestedJoin { table_with_joins, .. } => self.table_with_joins(table_with_joins),
            TableFactor::Function { name, args, alias, .. } => {
                for a in args {
                    self.function_arg(a);
                }
                let name = alias
                    .as_ref()
                    .map(|a| names::key(&a.name.value))
                    .or_else(|| last_ident(name).map(|i| names::key(&i.value)))
                    .unwrap_or_default();
                self.scopes
                    .last_mut()
                    .unwrap()
                    .sources
                    .push(Source { name, kind: SourceKind::Derived { columns: None } });
            }
            TableFactor::TableFunction { expr, alias } => {
                self.expr(expr);
                let name = alias.as_ref().map(|a| names::key(&a.name.value)).unwrap_or_default();
                self.scopes
                    .last_mut()
                    .unwrap()
                    .sources
                    .push(Source { name, kind: SourceKind::Derived { columns: None } });
            }
            _ => {
                self.unsupported.get_or_insert_with(|| "table factor outside the SQLite grammar".into());
            }
        }
    }

    fn column_ref(&self, table: &str, column: &str) -> ColumnRef {
        match self.schema.canonical_column(table, column) {
            Some((t, c)) => ColumnRef::new(t, c),
            None => ColumnRef::new(table, column),
        }
    }

    fn resolve(&self, qualifier: Option<&Ident>, col: &Ident) -> Resolution {
        let column = col.value.as_str();
        let top = self.scopes.len().saturating_sub(1);
        if let Some(q) = qualifier {
            let key = names::key(&q.value);
            for (si, scope) in self.scopes.iter().enumerate().rev() {
                if let Some((pos, src)) = scope.sources.iter().enumerate().rev().find(|(_, s)| s.name == key) {
                    return match &src.kind {
                        SourceKind::Base { table } => {
                            Resolution::Base { col: self.column_ref(table, column), scope: si, source: pos }
                        }
                        SourceKind::Derived { .. } => Resolution::Opaque { scope: si },
                    };
                }
            }
            return Resolution::Unresolved(UnresolvedRef { qualifier: Some(q.value.clone()), column: column.into() });
        }
        if is_rowid(column) {
            return Resolution::Opaque { scope: top };
        }
        let key = names::key(column);
        for (si, scope) in self.scopes.iter().enumerate().rev() {
            let hit = scope.sources.iter().enumerate().find(|(_, s)| match &s.kind {
                SourceKind::Base { table } => self.schema.has_column(table, column),
                SourceKind::Derived { .. } => false,
            });
            if let Some((pos, Source { kind: SourceKind::Base { table }, .. })) = hit {
                return Resolution::Base { col: self.column_ref(table, column), scope: si, source: pos };
            }
            let derived = scope.sources.iter().any(|s| match &s.kind {
                SourceKind::Derived { columns: None } => true,
                SourceKind::Derived { columns: Some(cols) } => cols.contains(&key),
                SourceKind::Base { .. } => false,
            });
            if derived || scope.aliases.contains(&key) {
                return Resolution::Opaque { scope: si };
            }
        }
        // SQLite reads an unresolvable double-quoted identifier as a string literal.
        if col.quote_style.is_some_and(|c| c == '"' || c == '\'') {
            return Resolution::Opaque { scope: top };
        }
        if let Some(scope) = self.scopes.last() {
            let mut bases = scope.sources.iter().enumerate().filter_map(|(i, s)| match &s.kind {
                SourceKind::Base { table } => Some((i, table)),
                SourceKind::Derived { .. } => None,
            });
            if let (Some((pos, table)), None) = (bases.next(), bases.next()) {
                return Resolution::Base { col: ColumnRef::new(table.clone(), column), scope: top, source: pos };
            }
        }
        Resolution::Unresolved(UnresolvedRef { qualifier: None, column: column.into() })
    }

    fn column(&mut self, qualifier: Option<&Ident>, col: &Ident) -> Option<ColumnRef> {
        let top = self.scopes.len().saturating_sub(1);
        match self.resolve(qualifier, col) {
            Resolution::Base { col, scope, .. } => {
                if scope < top {
                    self.flag(Feature::CorrelatedSubquery);
                }
                self.facts.columns.insert(col.clone());
                Some(col)
            }
            Resolution::Opaque { scope } => {
                if scope < top && qualifier.is_some() {
                    self.flag(Feature::CorrelatedSubquery);
                }
                None
            }
            Resolution::Unresolved(u) => {
                self.facts.unresolved.push(u);
                None
            }
        }
    }

    fn join_conditions(&mut self, e: &Expr) {
        match e {
            Expr::Nested(inner) => self.join_conditions(inner),
            Expr::BinaryOp { left, op: BinaryOperator::And, right } => {
                self.join_conditions(left);
                self.join_conditions(right);
            }
            Expr::BinaryOp { left, op, right } if is_comparison(op) => {
                let (Some(l), Some(r)) = (self.plain_column(left), self.plain_column(right)) else { return };
                let top = self.scopes.len().saturating_sub(1);
                if let (
                    Resolution::Base { col: lc, scope: ls, source: lsrc },
                    Resolution::Base { col: rc, scope: rs, source: rsrc },
                ) = (self.resolve(l.0.as_ref(), &l.1), self.resolve(r.0.as_ref(), &r.1))
                {
                    if ls == top && rs == top && lsrc != rsrc {
                        self.facts.join_conditions.push(JoinCondition { left: lc, right: rc, op: op.to_string() });
                    }
                }
            }
            _ => {}
        }
    }

    fn plain_column(&self, e: &Expr) -> Option<(Option<Ident>, Ident)> {
        match e {
            Expr::Nested(inner) => self.plain_column(inner),
            Expr::Identifier(id) => Some((None, id.clone())),
            Expr::CompoundIdentifier(ids) if ids.len() >= 2 => {
                Some((Some(ids[ids.len() - 2].clone()), ids[ids.len() - 1].clone()))
            }
            _ => None,
        }
    }

    fn subquery(&mut self, q: &Query) {
        self.flag(Feature::Subquery);
        self.query(q);
    }

    fn function_arg(&mut self, a: &FunctionArg) {
        let arg = match a {
            FunctionArg::Named { arg, .. } | FunctionArg::ExprNamed { arg, .. } | FunctionArg::Unnamed(arg) => arg,
        };
        if let FunctionArgExpr::Expr(e) = arg {
            self.expr(e);
        }
    }

    fn function(&mut self, f: &sqlparser::ast::Function) {
        let name = last_ident(&f.name).map(|i| i.value.to_ascii_uppercase()).unwrap_or_default();
        let windowed = f.over.is_some();
        if let Some(over) = &f.over {
            self.flag(Feature::WindowFunction);
            if let WindowType::WindowSpec(spec) = over {
                for e in &spec.partition_by {
                    self.expr(e);
                }
                for e in &spec.order_by {
                    self.expr(&e.expr);
                }
            }
        }
        let args: &[FunctionArg] = match &f.args {
            FunctionArguments::List(list) => &list.args,
            FunctionArguments::Subquery(q) => {
                self.subquery(q);
                &[]
            }
            FunctionArguments::None => &[],
        };
        let is_aggregate =
            AGGREGATES.contains(&name.as_str()) && (args.len() == 1 || (name == "GROUP_CONCAT" && args.len() == 2));
        let mut agg_arg = AggArg::Expression;
        for (i, a) in args.iter().enumerate() {
            let inner = match a {
                FunctionArg::Named { arg, .. } | FunctionArg::ExprNamed { arg, .. } | FunctionArg::Unnamed(arg) => arg,
            };
            match inner {
                FunctionArgExpr::Expr(e) => {
                    let bare = self.plain_column(e);
                    match bare {
                        Some((q, c)) if i == 0 => {
                            if let Some(col) = self.column(q.as_ref(), &c) {
                                agg_arg = AggArg::Column(col);
                            }
                        }
                        _ => self.expr(e),
                    }
                }
                FunctionArgExpr::Wildcard if i == 0 => agg_arg = AggArg::Star,
                FunctionArgExpr::QualifiedWildcard(_) | FunctionArgExpr::Wildcard => {}
            }
        }
        if let Some(filter) = &f.filter {
            self.expr(filter);
        }
        if is_aggregate {
            self.facts.aggregations.push(Aggregation { function: name, arg: agg_arg, windowed });
        }
    }

    fn exprs(&mut self, es: &[Expr]) {
        for e in es {
            self.expr(e);
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Identifier(id) => {
                self.column(None, id);
            }
            Expr::CompoundIdentifier(ids) => {
                if ids.len() >= 2 {
                    self.column(Some(&ids[ids.len() - 2]), &ids[ids.len() - 1]);
                }
            }
            Expr::Function(f) => self.function(f),
            Expr::Case { operand, conditions, else_result, .. } => {
                self.flag(Feature::CaseWhen);
                if let Some(o) = operand {
                    self.expr(o);
                }
                for cw in conditions {
                    self.expr(&cw.condition);
                    self.expr(&cw.result);
                }
                if let Some(x) = else_result {
                    self.expr(x);
                }
            }
            Expr::Subquery(q) => self.subquery(q),
            Expr::Exists { subquery, .. } => self.subquery(subquery),
            Expr::InSubquery { expr, subquery, .. } => {
                self.expr(expr);
                self.subquery(subquery);
            }
            Expr::BinaryOp { left, right, .. }
            | Expr::IsDistinctFrom(left, right)
            | Expr::IsNotDistinctFrom(left, right)
            | Expr::AnyOp { left, right, .. }
            | Expr::AllOp { left, right, .. } => {
                self.expr(left);
                self.expr(right);
            }
            Expr::UnaryOp { expr, .. }
            | Expr::Nested(expr)
            | Expr::IsNull(expr)
            | Expr::IsNotNull(expr)
            | Expr::IsTrue(expr)
            | Expr::IsNotTrue(expr)
            | Expr::IsFalse(expr)
            | Expr::IsNotFalse(expr)
            | Expr::IsUnknown(expr)
            | Expr::IsNotUnknown(expr)
            | Expr::Cast { expr, .. }
            | Expr::Collate { expr, .. }
            | Expr::Extract { expr, .. }
            | Expr::Ceil { expr, .. }
            | Expr::Floor { expr, .. }
            | Expr::Named { expr, .. }
            | Expr::IsNormalized { expr, .. }
            | Expr::OuterJoin(expr)
            | Expr::Prior(expr) => self.expr(expr),
            Expr::InList { expr, list, .. } => {
                self.expr(expr);
                self.exprs(list);
            }
            Expr::InUnnest { expr, array_expr, .. } => {
                self.expr(expr);
                self.expr(array_expr);
            }
            Expr::Between { expr, low, high, .. } => {
                self.expr(expr);
                self.expr(low);
                self.expr(high);
            }
            Expr::Like { expr, pattern, .. }
            | Expr::ILike { expr, pattern, .. }
            | Expr::SimilarTo { expr, pattern, .. }
            | Expr::RLike { expr, pattern, .. } => {
                self.expr(expr);
                self.expr(pattern);
            }
            Expr::Convert { expr, styles, .. } => {
                self.expr(expr);
                self.exprs(styles);
            }
            Expr::AtTimeZone { timestamp, time_zone } => {
                self.expr(timestamp);
                self.expr(time_zone);
            }
            Expr::Position { expr, r#in } => {
                self.expr(expr);
                self.expr(r#in);
            }
            Expr::Substring { expr, substring_from, substring_for, .. } => {
                self.expr(expr);
                for x in [substring_from, substring_for].into_iter().flatten() {
                    self.expr(x);
                }
            }
            Expr::Trim { expr, trim_what, trim_characters, .. } => {
                self.expr(expr);
                if let Some(w) = trim_what {
                    self.expr(w);
                }
                if let Some(cs) = trim_characters {
                    self.exprs(cs);
                }
            }
            Expr::Overlay { expr, overlay_what, overlay_from, overlay_for } => {
                self.expr(expr);
                self.expr(overlay_what);
                self.expr(overlay_from);
                if let Some(x) = overlay_for {
                    self.expr(x);
                }
            }
            Expr::Tuple(es) => self.exprs(es),
            Expr::GroupingSets(sets) | Expr::Cube(sets) | Expr::Rollup(sets) => {
                for s in sets {
                    self.exprs(s);
                }
            }
            Expr::CompoundFieldAccess { root, .. } => self.expr(root),
            Expr::JsonAccess { value, .. } => self.expr(value),
            Expr::Interval(i) => self.expr(&i.value),
            _ => {}
        }
    }
}

fn is_comparison(op: &BinaryOperator) -> bool {
    matches!(
        op,
        BinaryOperator::Eq
            | BinaryOperator::NotEq
            | BinaryOperator::Lt
            | BinaryOperator::LtEq
            | BinaryOperator::Gt
            | BinaryOperator::GtEq
    )
}

fn is_rowid(name: &str) -> bool {
    ["rowid", "_rowid_", "oid"].iter().any(|r| names::same(r, name))
}

fn last_ident(name: &ObjectName) -> Option<&Ident> {
    name.0.iter().rev().find_map(|p| match p {
        ObjectNamePart::Identifier(id) => Some(id),
        ObjectNamePart::Function(_) => None,
    })
}

/// Lowercased result-column names of a query, or `None` when a wildcard
/// makes them unknowable without expansion.
fn output_names(q: &Query) -> Option<BTreeSet<String>> {
    fn of_set(e: &SetExpr) -> Option<BTreeSet<String>> {
        match e {
            SetExpr::Select(s) => {
                let mut out = BTreeSet::new();
                for item in &s.projection {
                    match item {
                        SelectItem::ExprWithAlias { alias, .. } => {
                            out.insert(names::key(&alias.value));
                        }
                        SelectItem::UnnamedExpr(Expr::Identifier(id)) => {
                            out.insert(names::key(&id.value));
                        }
                        SelectItem::UnnamedExpr(Expr::CompoundIdentifier(ids)) => {
                            out.insert(names::key(&ids.last()?.value));
                        }
                        SelectItem::UnnamedExpr(other) => {
                            out.insert(names::key(&other.to_string()));
                        }
                        SelectItem::Wildcard(_) | SelectItem::QualifiedWildcard(..) => return None,
                    }
                }
                Some(out)
            }
            SetExpr::Query(q) => of_set(&q.body),
            SetExpr::SetOperation { left, .. } => of_set(left),
            _ => None,
        }
    }
    of_set(&q.body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnDef, TableDef};
    use alloc::vec;

    pub(crate) fn schema() -> DatabaseSchema {
        let col = |n: &str, t: &str| ColumnDef { name: n.into(), declared_type: t.into(), nullable: true };
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
            vec![],
        )
        .unwrap()
    }

    fn cr(t: &str, c: &str) -> ColumnRef {
        ColumnRef::new(t, c)
    }

    #[test]
    fn worked_example_facts() {
        let f = extract_facts("SELECT sname FROM satscores ORDER BY AvgScrMath DESC LIMIT 1;", &schema()).unwrap();
        assert_eq!(f.tables, ["satscores".to_string()].into_iter().collect());
        assert_eq!(f.columns, [cr("satscores", "sname"), cr("satscores", "AvgScrMath")].into_iter().collect());
        assert_eq!(f.features, [Feature::OrderBy, Feature::Limit].into_iter().collect());
        assert!(f.unresolved.is_empty());
    }

    #[test]
    fn constant_query_is_empty() {
        let f = extract_facts("SELECT 1;", &schema()).unwrap();
        assert!(f.tables.is_empty() && f.columns.is_empty() && f.features.is_empty());
    }

    #[test]
    fn aggregation_over_identifier() {
        let f = extract_facts("SELECT AVG(CDSCode) FROM schools;", &schema()).unwrap();
        assert_eq!(
            f.aggregations,
            vec![Aggregation {
                function: "AVG".into(),
                arg: AggArg::Column(cr("schools", "CDSCode")),
                windowed: false
            }]
        );
    }

    #[test]
    fn aliases_resolve_and_joins_are_recorded() {
        let f = extract_facts(
            "SELECT T1.County, COUNT(*) AS n FROM schools AS T1 JOIN satscores AS T2 ON T1.CDSCode = T2.cds GROUP BY T1.County ORDER BY n DESC",
            &schema(),
        )
        .unwrap();
        assert_eq!(f.join_conditions.len(), 1);
        assert_eq!(f.join_conditions[0].left, cr("schools", "CDSCode"));
        assert_eq!(f.join_conditions[0].right, cr("satscores", "cds"));
        assert!(f.unresolved.is_empty(), "{:?}", f.unresolved);
        assert!(f.has(Feature::Join) && f.has(Feature::GroupBy) && f.has(Feature::OrderBy));
        assert_eq!(f.aggregations[0].arg, AggArg::Star);
    }

    #[test]
    fn unknown_names_surface() {
        let f = extract_facts("SELECT nope FROM satscores", &schema()).unwrap();
        assert!(f.columns.contains(&cr("satscores", "nope")));
        let f = extract_facts("SELECT x.sname FROM satscores s", &schema()).unwrap();
        assert_eq!(f.unresolved, vec![UnresolvedRef { qualifier: Some("x".into()), column: "sname".into() }]);
        let f = extract_facts("SELECT a FROM teachers", &schema()).unwrap();
        assert!(f.tables.contains("teachers"));
    }

    #[test]
    fn correlated_subquery_detected() {
        let f = extract_facts(
            "SELECT s.sname FROM satscores s WHERE s.AvgScrMath > (SELECT AVG(t.AvgScrMath) FROM satscores t WHERE t.cds = s.cds)",
            &schema(),
        )
        .unwrap();
        assert!(f.has(Feature::Subquery) && f.has(Feature::CorrelatedSubquery));
        let f =
            extract_facts("SELECT sname FROM satscores WHERE cds IN (SELECT CDSCode FROM schools)", &schema()).unwrap();
        assert!(f.has(Feature::Subquery) && !f.has(Feature::CorrelatedSubquery));
    }

    #[test]
    fn cte_columns_do_not_leak_as_unresolved() {
        let f = extract_facts(
            "WITH top AS (SELECT cds, AvgScrMath AS m FROM satscores) SELECT m FROM top ORDER BY m",
            &schema(),
        )
        .unwrap();
        assert!(f.has(Feature::Cte));
        assert!(f.unresolved.is_empty());
        assert_eq!(f.tables, ["satscores".to_string()].into_iter().collect());
    }

    #[test]
    fn double_quoted_string_is_literal() {
        let f = extract_facts("SELECT CDSCode FROM schools WHERE County = \"Alameda\"", &schema()).unwrap();
        assert!(f.unresolved.is_empty());
        assert!(!f.columns.iter().any(|c| c.column == "Alameda"));
    }

    #[test]
    fn comma_join_conditions_from_where() {
        let f = extract_facts(
            "SELECT s.County FROM schools s, satscores t WHERE s.CDSCode = t.cds AND t.AvgScrMath > 500",
            &schema(),
        )
        .unwrap();
        assert!(f.has(Feature::Join));
        assert_eq!(f.join_conditions.len(), 1);
    }

    #[test]
    fn window_and_scalar_minmax() {
        let f =
            extract_facts("SELECT sname, RANK() OVER (ORDER BY AvgScrMath DESC) FROM satscores", &schema()).unwrap();
        assert!(f.has(Feature::WindowFunction));
        let f = extract_facts("SELECT MAX(AvgScrMath, 0) FROM satscores", &schema()).unwrap();
        assert!(f.aggregations.is_empty());
    }

    #[test]
    fn rejects_non_select() {
        assert!(
            matches!(extract_facts("DROP TABLE schools;", &schema()), Err(AnalysisError::UnsupportedDialect(k)) if k == "DROP")
        );
        assert!(matches!(extract_facts("SELECT 1; SELECT 2;", &schema()), Err(AnalysisError::UnsupportedDialect(_))));
        assert_eq!(extract_facts("  ", &schema()), Err(AnalysisError::Empty));
        match extract_facts("SELECT FROM WHERE", &schema()) {
            Err(AnalysisError::Parse { line, column, .. }) => assert!(line >= 1 && column >= 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(!statement_is_select("DELETE FROM schools"));
        assert!(statement_is_select("select 1"));
    }
}
