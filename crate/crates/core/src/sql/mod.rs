//! SQL query template IR: a restricted single-SELECT grammar with ordinal
//! parameters, canonical rendering, and shape fingerprints.

mod lexer;
mod log;
mod parser;
mod render;

pub use log::{parse_log_line, LogRecord};
pub use parser::{parse_template, ParseError};
pub use render::fingerprint;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::constraints::Schema;
use crate::value::{ColumnType, Value};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColRef {
    pub table: Option<String>,
    pub column: String,
}

impl ColRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> ColRef {
        ColRef {
            table: Some(table.into()),
            column: column.into(),
        }
    }

    pub fn bare(column: impl Into<String>) -> ColRef {
        ColRef {
            table: None,
            column: column.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn flip(&self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Eq,
            CmpOp::Ne => CmpOp::Ne,
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
        }
    }

    pub fn negate(&self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Col(ColRef),
    Lit(Value),
    Param(u32),
    /// LENGTH(col); appears in checker statements.
    Length(ColRef),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    Cmp {
        left: Operand,
        op: CmpOp,
        right: Operand,
    },
    InList {
        col: ColRef,
        items: Vec<Operand>,
        negated: bool,
    },
    /// `col [NOT] IN (SELECT column FROM table)`; appears in FK checkers.
    InSubquery {
        col: ColRef,
        table: String,
        column: String,
        negated: bool,
    },
    IsNull {
        col: ColRef,
        negated: bool,
    },
    /// POSIX regex match: `col ~ 'p'` (negated: `!~`).
    Regex {
        col: ColRef,
        pattern: String,
        case_insensitive: bool,
        negated: bool,
    },
    Const(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pred {
    And(Vec<Pred>),
    Or(Vec<Pred>),
    Not(Box<Pred>),
    Atom(Atom),
}

impl Pred {
    pub const TRUE: Pred = Pred::Atom(Atom::Const(true));
    pub const FALSE: Pred = Pred::Atom(Atom::Const(false));

    pub fn is_const(&self, b: bool) -> bool {
        matches!(self, Pred::Atom(Atom::Const(x)) if *x == b)
    }

    /// Flatten nested conjunctions/disjunctions and fold constants.
    pub fn simplify(&self) -> Pred {
        match self {
            Pred::Atom(a) => Pred::Atom(a.clone()),
            Pred::Not(inner) => {
                let s = inner.simplify();
                match s {
                    Pred::Atom(Atom::Const(b)) => Pred::Atom(Atom::Const(!b)),
                    other => Pred::Not(Box::new(other)),
                }
            }
            Pred::And(children) => {
                let mut flat = Vec::new();
                for c in children {
                    match c.simplify() {
                        Pred::Atom(Atom::Const(true)) => {}
                        Pred::Atom(Atom::Const(false)) => return Pred::FALSE,
                        Pred::And(inner) => flat.extend(inner),
                        other => flat.push(other),
                    }
                }
                match flat.len() {
                    0 => Pred::TRUE,
                    1 => flat.pop().unwrap(),
                    _ => Pred::And(flat),
                }
            }
            Pred::Or(children) => {
                let mut flat = Vec::new();
                for c in children {
                    match c.simplify() {
                        Pred::Atom(Atom::Const(false)) => {}
                        Pred::Atom(Atom::Const(true)) => return Pred::TRUE,
                        Pred::Or(inner) => flat.extend(inner),
                        other => flat.push(other),
                    }
                }
                match flat.len() {
                    0 => Pred::FALSE,
                    1 => flat.pop().unwrap(),
                    _ => Pred::Or(flat),
                }
            }
        }
    }

    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.walk_atoms(&mut |a| out.push(a));
        out
    }

    fn walk_atoms<'a>(&'a self, f: &mut impl FnMut(&'a Atom)) {
        match self {
            Pred::Atom(a) => f(a),
            Pred::Not(p) => p.walk_atoms(f),
            Pred::And(cs) | Pred::Or(cs) => {
                for c in cs {
                    c.walk_atoms(f);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Star,
    TableStar(String),
    Col(ColRef),
    CountStar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub table: String,
    pub left: ColRef,
    pub right: ColRef,
}

/// HAVING COUNT(*) op n — the only aggregate filter in the grammar.
#[derive(Debug, Clone, PartialEq)]
pub struct Having {
    pub op: CmpOp,
    pub count: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryTemplate {
    pub distinct: bool,
    pub projections: Vec<Projection>,
    pub from: String,
    pub joins: Vec<Join>,
    pub predicate: Pred,
    pub group_by: Vec<ColRef>,
    pub having: Option<Having>,
    pub order_by: Vec<(ColRef, bool)>,
    pub limit: Option<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unresolved table {0}")]
    UnknownTable(String),
    #[error("unresolved column {0}")]
    UnknownColumn(String),
    #[error("ambiguous column {0}")]
    AmbiguousColumn(String),
    #[error("parameter ${0} has no value (arity mismatch)")]
    MissingParam(u32),
    #[error("{0} parameter values supplied but template has {1} placeholders")]
    ExtraParams(usize, usize),
    #[error("template still contains parameter ${0}")]
    Unbound(u32),
}

impl QueryTemplate {
    /// Tables in scope: FROM table then JOIN tables, in order.
    pub fn tables(&self) -> Vec<&str> {
        let mut ts = vec![self.from.as_str()];
        ts.extend(self.joins.iter().map(|j| j.table.as_str()));
        ts
    }

    /// Highest parameter ordinal (parameters are dense from 1).
    pub fn param_count(&self) -> u32 {
        let mut max = 0;
        self.visit_operands(&mut |op| {
            if let Operand::Param(n) = op {
                max = max.max(*n);
            }
        });
        max
    }

    fn visit_operands(&self, f: &mut impl FnMut(&Operand)) {
        fn walk_pred(p: &Pred, f: &mut impl FnMut(&Operand)) {
            match p {
                Pred::Atom(a) => match a {
                    Atom::Cmp { left, right, .. } => {
                        f(left);
                        f(right);
                    }
                    Atom::InList { items, .. } => {
                        for i in items {
                            f(i);
                        }
                    }
                    _ => {}
                },
                Pred::Not(inner) => walk_pred(inner, f),
                Pred::And(cs) | Pred::Or(cs) => {
                    for c in cs {
                        walk_pred(c, f);
                    }
                }
            }
        }
        walk_pred(&self.predicate, f);
    }

    fn map_operands(&mut self, f: &mut impl FnMut(&mut Operand)) {
        fn walk_pred(p: &mut Pred, f: &mut impl FnMut(&mut Operand)) {
            match p {
                Pred::Atom(a) => match a {
                    Atom::Cmp { left, right, .. } => {
                        f(left);
                        f(right);
                    }
                    Atom::InList { items, .. } => {
                        for i in items {
                            f(i);
                        }
                    }
                    _ => {}
                },
                Pred::Not(inner) => walk_pred(inner, f),
                Pred::And(cs) | Pred::Or(cs) => {
                    for c in cs {
                        walk_pred(c, f);
                    }
                }
            }
        }
        walk_pred(&mut self.predicate, f);
    }

    /// Rewrite the template into fully parameterized form: every literal in
    /// the predicate becomes a fresh ordinal parameter, ordinals renumbered
    /// left to right in canonical traversal order, and the merged value
    /// vector (extracted literals plus the supplied parameter values) is
    /// returned alongside.
    pub fn parameterize(&self, params: &[Value]) -> Result<(QueryTemplate, Vec<Value>), TemplateError> {
        let declared = self.param_count() as usize;
        if params.len() != declared {
            return Err(if params.len() < declared {
                TemplateError::MissingParam(params.len() as u32 + 1)
            } else {
                TemplateError::ExtraParams(params.len(), declared)
            });
        }
        let mut out = self.clone();
        let mut values = Vec::new();
        let mut next = 0u32;
        out.map_operands(&mut |op| {
            match op {
                Operand::Lit(v) => {
                    next += 1;
                    values.push(v.clone());
                    *op = Operand::Param(next);
                }
                Operand::Param(n) => {
                    values.push(params[*n as usize - 1].clone());
                    next += 1;
                    *op = Operand::Param(next);
                }
                _ => {}
            };
        });
        Ok((out, values))
    }

    /// Substitute parameter values for placeholders, producing a ground query.
    pub fn instantiate(&self, params: &[Value]) -> Result<QueryTemplate, TemplateError> {
        let declared = self.param_count() as usize;
        if params.len() < declared {
            return Err(TemplateError::MissingParam(params.len() as u32 + 1));
        }
        if params.len() > declared {
            return Err(TemplateError::ExtraParams(params.len(), declared));
        }
        let mut out = self.clone();
        out.map_operands(&mut |op| {
            if let Operand::Param(n) = op {
                *op = Operand::Lit(params[*n as usize - 1].clone());
            }
        });
        Ok(out)
    }

    /// Qualify every column reference against the schema and verify that all
    /// tables/columns exist. Unqualified names must be unambiguous.
    pub fn resolve(&self, schema: &Schema) -> Result<QueryTemplate, TemplateError> {
        let mut out = self.clone();
        for t in out.tables() {
            if schema.table(t).is_none() {
                return Err(TemplateError::UnknownTable(t.to_string()));
            }
        }
        let scope: Vec<String> = out.tables().iter().map(|s| s.to_string()).collect();

        let resolve_col = |c: &ColRef| -> Result<ColRef, TemplateError> {
            match &c.table {
                Some(t) => {
                    if !scope.contains(t) {
                        return Err(TemplateError::UnknownTable(t.clone()));
                    }
                    if schema.column(t, &c.column).is_none() {
                        return Err(TemplateError::UnknownColumn(format!("{t}.{}", c.column)));
                    }
                    Ok(c.clone())
                }
                None => {
                    let homes: Vec<&String> = scope
                        .iter()
                        .filter(|t| schema.column(t, &c.column).is_some())
                        .collect();
                    match homes.len() {
                        0 => Err(TemplateError::UnknownColumn(c.column.clone())),
                        1 => Ok(ColRef::new(homes[0].clone(), c.column.clone())),
                        _ => Err(TemplateError::AmbiguousColumn(c.column.clone())),
                    }
                }
            }
        };

        for p in &mut out.projections {
            match p {
                Projection::TableStar(t) => {
                    if !scope.contains(t) {
                        return Err(TemplateError::UnknownTable(t.clone()));
                    }
                }
                Projection::Col(c) => *c = resolve_col(c)?,
                _ => {}
            }
        }
        for j in &mut out.joins {
            j.left = resolve_col(&j.left)?;
            j.right = resolve_col(&j.right)?;
        }
        fn resolve_pred(
            p: &mut Pred,
            resolve_col: &impl Fn(&ColRef) -> Result<ColRef, TemplateError>,
            schema: &Schema,
        ) -> Result<(), TemplateError> {
            match p {
                Pred::Atom(a) => {
                    match a {
                        Atom::Cmp { left, right, .. } => {
                            for o in [left, right] {
                                match o {
                                    Operand::Col(c) | Operand::Length(c) => *c = resolve_col(c)?,
                                    _ => {}
                                }
                            }
                        }
                        Atom::InList { col, .. }
                        | Atom::IsNull { col, .. }
                        | Atom::Regex { col, .. } => *col = resolve_col(col)?,
                        Atom::InSubquery { col, table, column, .. } => {
                            *col = resolve_col(col)?;
                            if schema.table(table).is_none() {
                                return Err(TemplateError::UnknownTable(table.clone()));
                            }
                            if schema.column(table, column).is_none() {
                                return Err(TemplateError::UnknownColumn(format!("{table}.{column}")));
                            }
                        }
                        Atom::Const(_) => {}
                    }
                    Ok(())
                }
                Pred::Not(inner) => resolve_pred(inner, resolve_col, schema),
                Pred::And(cs) | Pred::Or(cs) => {
                    for c in cs {
                        resolve_pred(c, resolve_col, schema)?;
                    }
                    Ok(())
                }
            }
        }
        resolve_pred(&mut out.predicate, &resolve_col, schema)?;
        for c in &mut out.group_by {
            *c = resolve_col(c)?;
        }
        for (c, _) in &mut out.order_by {
            *c = resolve_col(c)?;
        }
        Ok(out)
    }

    /// All (table, column) pairs the query reads. Star projections expand via
    /// the schema. The template must be resolved first.
    pub fn used_fields(&self, schema: &Schema) -> BTreeSet<(String, String)> {
        fn add_col(used: &mut BTreeSet<(String, String)>, c: &ColRef) {
            if let Some(t) = &c.table {
                used.insert((t.clone(), c.column.clone()));
            }
        }
        let mut used = BTreeSet::new();
        for p in &self.projections {
            match p {
                Projection::Star => {
                    for t in self.tables() {
                        if let Some(td) = schema.table(t) {
                            for c in &td.columns {
                                used.insert((t.to_string(), c.name.clone()));
                            }
                        }
                    }
                }
                Projection::TableStar(t) => {
                    if let Some(td) = schema.table(t) {
                        for c in &td.columns {
                            used.insert((t.clone(), c.name.clone()));
                        }
                    }
                }
                Projection::Col(c) => add_col(&mut used, c),
                Projection::CountStar => {}
            }
        }
        for j in &self.joins {
            add_col(&mut used, &j.left);
            add_col(&mut used, &j.right);
        }
        for a in self.predicate.atoms() {
            match a {
                Atom::Cmp { left, right, .. } => {
                    for o in [left, right] {
                        if let Operand::Col(c) | Operand::Length(c) = o {
                            add_col(&mut used, c);
                        }
                    }
                }
                Atom::InList { col, .. } | Atom::IsNull { col, .. } | Atom::Regex { col, .. } => {
                    add_col(&mut used, col)
                }
                Atom::InSubquery { col, table, column, .. } => {
                    add_col(&mut used, col);
                    used.insert((table.clone(), column.clone()));
                }
                Atom::Const(_) => {}
            }
        }
        for c in &self.group_by {
            add_col(&mut used, c);
        }
        for (c, _) in &self.order_by {
            add_col(&mut used, c);
        }
        used
    }

    /// Expected column type per parameter ordinal, from the columns each
    /// parameter is compared against. First inference wins.
    pub fn infer_param_types(&self, schema: &Schema) -> Vec<Option<ColumnType>> {
        let n = self.param_count() as usize;
        let mut types: Vec<Option<ColumnType>> = vec![None; n];
        let mut note = |ordinal: u32, ty: Option<ColumnType>| {
            let slot = &mut types[ordinal as usize - 1];
            if slot.is_none() {
                *slot = ty;
            }
        };
        for a in self.predicate.atoms() {
            match a {
                Atom::Cmp { left, op: _, right } => {
                    let col_ty = |o: &Operand| -> Option<ColumnType> {
                        match o {
                            Operand::Col(c) => c
                                .table
                                .as_ref()
                                .and_then(|t| schema.column(t, &c.column))
                                .map(|cd| cd.ty.clone()),
                            Operand::Length(_) => Some(ColumnType::Integer),
                            _ => None,
                        }
                    };
                    if let Operand::Param(n) = right {
                        note(*n, col_ty(left));
                    }
                    if let Operand::Param(n) = left {
                        note(*n, col_ty(right));
                    }
                }
                Atom::InList { col, items, .. } => {
                    let ty = col
                        .table
                        .as_ref()
                        .and_then(|t| schema.column(t, &col.column))
                        .map(|cd| cd.ty.clone());
                    for i in items {
                        if let Operand::Param(n) = i {
                            note(*n, ty.clone());
                        }
                    }
                }
                _ => {}
            }
        }
        types
    }

    /// Canonical text rendering: uppercase keywords, single spaces,
    /// deterministic parenthesization.
    pub fn render(&self) -> String {
        render::render(self)
    }

    /// Shape fingerprint: canonical rendering with literals abstracted to
    /// typed placeholders, hashed. Stable across runs and platforms.
    pub fn fingerprint(&self) -> String {
        render::fingerprint(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REDMINE: &str = "SELECT DISTINCT users.* FROM users INNER JOIN members ON members.user_id = users.id WHERE users.status = 'active' AND (members.project_id = 2)";

    fn schema() -> Schema {
        Schema::from_json(
            r#"{"tables":[
                {"name":"users","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"status","type":"text","nullable":false}]},
                {"name":"members","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"user_id","type":"integer","nullable":false},
                    {"name":"project_id","type":"integer","nullable":false}]}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parameterize_lifts_literals_in_order() {
        let t = parse_template(REDMINE).unwrap();
        let (p, values) = t.parameterize(&[]).unwrap();
        assert_eq!(
            p.render(),
            "SELECT DISTINCT users.* FROM users INNER JOIN members ON members.user_id = users.id WHERE users.status = $1 AND members.project_id = $2"
        );
        assert_eq!(values, vec![Value::Text("active".into()), Value::Int(2)]);
    }

    #[test]
    fn parameterize_merges_existing_params() {
        let t = parse_template("SELECT * FROM users WHERE status = $1 AND age > 30 AND id = $2")
            .unwrap();
        let (p, values) = t
            .parameterize(&[Value::Text("active".into()), Value::Int(7)])
            .unwrap();
        assert_eq!(
            p.render(),
            "SELECT * FROM users WHERE status = $1 AND age > $2 AND id = $3"
        );
        assert_eq!(
            values,
            vec![Value::Text("active".into()), Value::Int(30), Value::Int(7)]
        );
    }

    #[test]
    fn instantiate_reports_missing_ordinal() {
        let t = parse_template("SELECT * FROM users WHERE status = $1 AND id = $2").unwrap();
        let err = t.instantiate(&[Value::Text("active".into())]).unwrap_err();
        assert_eq!(err, TemplateError::MissingParam(2));
    }

    #[test]
    fn instantiate_round_trips_parameterize() {
        let t = parse_template(REDMINE).unwrap();
        let (p, values) = t.parameterize(&[]).unwrap();
        let ground = p.instantiate(&values).unwrap();
        assert_eq!(ground.render(), parse_template(REDMINE).unwrap().render());
    }

    #[test]
    fn resolve_qualifies_and_validates() {
        let t = parse_template("SELECT id FROM users WHERE status = $1").unwrap();
        let r = t.resolve(&schema()).unwrap();
        assert_eq!(
            r.projections,
            vec![Projection::Col(ColRef::new("users", "id"))]
        );
        let bad = parse_template("SELECT nope FROM users").unwrap();
        assert_eq!(
            bad.resolve(&schema()).unwrap_err(),
            TemplateError::UnknownColumn("nope".into())
        );
        let ambiguous = parse_template("SELECT id FROM users INNER JOIN members ON members.user_id = users.id").unwrap();
        assert_eq!(
            ambiguous.resolve(&schema()).unwrap_err(),
            TemplateError::AmbiguousColumn("id".into())
        );
    }

    #[test]
    fn used_fields_expands_stars_and_covers_all_clauses() {
        let t = parse_template(REDMINE).unwrap().resolve(&schema()).unwrap();
        let used = t.used_fields(&schema());
        let expect: BTreeSet<(String, String)> = [
            ("users", "id"),
            ("users", "status"),
            ("members", "user_id"),
            ("members", "project_id"),
        ]
        .iter()
        .map(|(t, c)| (t.to_string(), c.to_string()))
        .collect();
        assert_eq!(used, expect);
    }

    #[test]
    fn used_fields_survive_render_round_trip() {
        let t = parse_template(REDMINE).unwrap().resolve(&schema()).unwrap();
        let reparsed = parse_template(&t.render())
            .unwrap()
            .resolve(&schema())
            .unwrap();
        assert_eq!(t.used_fields(&schema()), reparsed.used_fields(&schema()));
    }

    #[test]
    fn param_types_inferred_from_compared_columns() {
        let t = parse_template("SELECT * FROM users WHERE status = $1 AND id > $2")
            .unwrap()
            .resolve(&schema())
            .unwrap();
        let types = t.infer_param_types(&schema());
        assert_eq!(types[0], Some(ColumnType::Text));
        assert_eq!(types[1], Some(ColumnType::Integer));
    }

    #[test]
    fn simplify_folds_constants() {
        let p = Pred::And(vec![
            Pred::TRUE,
            Pred::Or(vec![Pred::FALSE, Pred::Atom(Atom::Const(true))]),
        ]);
        assert!(p.simplify().is_const(true));
        let q = Pred::And(vec![Pred::FALSE, Pred::TRUE]);
        assert!(q.simplify().is_const(false));
    }
}
