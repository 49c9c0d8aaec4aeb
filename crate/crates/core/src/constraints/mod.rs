//! Constraint data model, cross-application merging, and checker-SQL emission.

mod schema;

pub use schema::{ColumnDef, Schema, SchemaError, TableDef};

use std::collections::BTreeMap;
use std::fmt;

use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::value::Value;

/// Inclusive/exclusive numeric bound.
#[derive(Debug, Clone, PartialEq)]
pub struct NumBound {
    pub value: Value,
    pub inclusive: bool,
}

impl NumBound {
    pub fn new(value: Value, inclusive: bool) -> Self {
        NumBound { value, inclusive }
    }

    pub fn as_f64(&self) -> f64 {
        self.value.as_f64().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormatPattern {
    pub pattern: String,
    pub case_insensitive: bool,
}

/// Qualifier on a Uniqueness constraint extracted from a has_one association
/// with a where-lambda: uniqueness holds among rows satisfying the predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopePredicate {
    pub column: String,
    pub op: String, // one of =, <>, >, >=, <, <=
    pub value: Value,
}

impl ScopePredicate {
    /// SQL-style comparison of a row value against the predicate. NULL
    /// never matches, mirroring three-valued logic.
    pub fn matches(&self, v: &Value) -> bool {
        let Some(ord) = v.sql_cmp(&self.value) else { return false };
        match self.op.as_str() {
            "=" => ord.is_eq(),
            "<>" => ord.is_ne(),
            "<" => ord.is_lt(),
            "<=" => ord.is_le(),
            ">" => ord.is_gt(),
            ">=" => ord.is_ge(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    Inclusion {
        values: Vec<Value>,
    },
    Presence,
    Uniqueness {
        scope: Vec<String>,
        predicate: Option<ScopePredicate>,
    },
    Length {
        min: Option<u64>,
        max: Option<u64>,
    },
    Format {
        patterns: Vec<FormatPattern>,
    },
    Numerical {
        lower: Option<NumBound>,
        upper: Option<NumBound>,
        equal: Option<Value>,
    },
    ForeignKey {
        ref_table: String,
        ref_column: String,
    },
}

impl ConstraintKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::Inclusion { .. } => "inclusion",
            ConstraintKind::Presence => "presence",
            ConstraintKind::Uniqueness { .. } => "uniqueness",
            ConstraintKind::Length { .. } => "length",
            ConstraintKind::Format { .. } => "format",
            ConstraintKind::Numerical { .. } => "numerical",
            ConstraintKind::ForeignKey { .. } => "foreign-key",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSource {
    BuiltinValidation,
    CustomValidation,
    Inheritance,
    Polymorphic,
    HasOne,
    StateMachine,
    DbDeclared,
    Merged,
}

impl ConstraintSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintSource::BuiltinValidation => "builtin-validation",
            ConstraintSource::CustomValidation => "custom-validation",
            ConstraintSource::Inheritance => "inheritance",
            ConstraintSource::Polymorphic => "polymorphic",
            ConstraintSource::HasOne => "has-one",
            ConstraintSource::StateMachine => "state-machine",
            ConstraintSource::DbDeclared => "db-declared",
            ConstraintSource::Merged => "merged",
        }
    }

    pub fn parse(s: &str) -> Option<ConstraintSource> {
        Some(match s {
            "builtin-validation" => ConstraintSource::BuiltinValidation,
            "custom-validation" => ConstraintSource::CustomValidation,
            "inheritance" => ConstraintSource::Inheritance,
            "polymorphic" => ConstraintSource::Polymorphic,
            "has-one" => ConstraintSource::HasOne,
            "state-machine" => ConstraintSource::StateMachine,
            "db-declared" => ConstraintSource::DbDeclared,
            "merged" => ConstraintSource::Merged,
            _ => return None,
        })
    }
}

impl fmt::Display for ConstraintSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub table: String,
    pub columns: Vec<String>,
    pub kind: ConstraintKind,
    pub source: ConstraintSource,
    /// Set when a merge produced an empty intersection. Reported, not dropped:
    /// downstream empty-set detection can exploit it.
    pub unsatisfiable: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("invalid constraint JSON: {0}")]
    Json(String),
    #[error("constraint on {0}: {1}")]
    Invalid(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolutionError {
    UnresolvedTable(String),
    UnresolvedColumn(String, String),
}

impl fmt::Display for ResolutionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResolutionError::UnresolvedTable(t) => write!(f, "unresolved-table({t})"),
            ResolutionError::UnresolvedColumn(t, c) => write!(f, "unresolved-column({t}.{c})"),
        }
    }
}

impl Constraint {
    pub fn new(
        table: impl Into<String>,
        columns: Vec<String>,
        kind: ConstraintKind,
        source: ConstraintSource,
    ) -> Constraint {
        Constraint {
            table: table.into(),
            columns,
            kind,
            source,
            unsatisfiable: false,
        }
    }

    /// Column set that must be jointly unique (field columns plus scope).
    pub fn unique_key(&self) -> Vec<String> {
        match &self.kind {
            ConstraintKind::Uniqueness { scope, .. } => {
                let mut key = self.columns.clone();
                key.extend(scope.iter().cloned());
                key
            }
            _ => self.columns.clone(),
        }
    }

    /// All columns the constraint reads on its own table.
    pub fn referenced_columns(&self) -> Vec<String> {
        let mut cols = self.unique_key();
        if let ConstraintKind::Uniqueness {
            predicate: Some(p), ..
        } = &self.kind
        {
            if !cols.contains(&p.column) {
                cols.push(p.column.clone());
            }
        }
        cols
    }

    pub fn check_invariants(&self) -> Result<(), ConstraintError> {
        let at = || format!("{}({})", self.table, self.columns.join(","));
        if self.columns.is_empty() {
            return Err(ConstraintError::Invalid(at(), "empty column list".into()));
        }
        match &self.kind {
            ConstraintKind::Inclusion { values } => {
                let uniq: std::collections::HashSet<_> = values.iter().collect();
                if uniq.len() != values.len() {
                    return Err(ConstraintError::Invalid(at(), "duplicate inclusion values".into()));
                }
                if values.is_empty() && !self.unsatisfiable {
                    return Err(ConstraintError::Invalid(
                        at(),
                        "empty inclusion values without unsatisfiable flag".into(),
                    ));
                }
            }
            ConstraintKind::Uniqueness { .. } => {
                let key = self.unique_key();
                let uniq: std::collections::HashSet<_> = key.iter().collect();
                if uniq.len() != key.len() {
                    return Err(ConstraintError::Invalid(at(), "duplicate uniqueness columns".into()));
                }
            }
            ConstraintKind::Length { min, max } => {
                if let (Some(lo), Some(hi)) = (min, max) {
                    if lo > hi && !self.unsatisfiable {
                        return Err(ConstraintError::Invalid(at(), "length min > max".into()));
                    }
                }
                if min.is_none() && max.is_none() {
                    return Err(ConstraintError::Invalid(at(), "length without bounds".into()));
                }
            }
            ConstraintKind::Numerical { lower, upper, equal } => {
                if lower.is_none() && upper.is_none() && equal.is_none() {
                    return Err(ConstraintError::Invalid(at(), "numerical without bounds".into()));
                }
                if let (Some(lo), Some(hi)) = (lower, upper) {
                    let (l, h) = (lo.as_f64(), hi.as_f64());
                    let empty = l > h || (l == h && !(lo.inclusive && hi.inclusive));
                    if empty && !self.unsatisfiable {
                        return Err(ConstraintError::Invalid(at(), "empty numerical range".into()));
                    }
                }
            }
            ConstraintKind::Format { patterns } => {
                if patterns.is_empty() {
                    return Err(ConstraintError::Invalid(at(), "format without patterns".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Identity used for normalization and cross-set merging.
    fn identity(&self) -> (String, &'static str, String) {
        let payload = match &self.kind {
            ConstraintKind::Uniqueness { predicate, .. } => {
                let mut key = self.unique_key();
                key.sort();
                let pred = predicate
                    .as_ref()
                    .map(|p| format!("|{} {} {}", p.column, p.op, p.value.render_sql()))
                    .unwrap_or_default();
                format!("{}{}", key.join(","), pred)
            }
            ConstraintKind::ForeignKey { ref_table, ref_column } => {
                format!("{}->{}.{}", self.columns.join(","), ref_table, ref_column)
            }
            _ => self.columns.join(","),
        };
        (self.table.clone(), self.kind.name(), payload)
    }

    fn sort_key(&self) -> (String, String, &'static str, String) {
        (
            self.table.clone(),
            self.columns.join(","),
            self.kind.name(),
            serde_json::to_string(&self.params_json()).unwrap_or_default(),
        )
    }

    fn params_json(&self) -> Json {
        let mut params = serde_json::Map::new();
        match &self.kind {
            ConstraintKind::Inclusion { values } => {
                params.insert(
                    "values".into(),
                    Json::Array(values.iter().map(|v| v.to_json()).collect()),
                );
            }
            ConstraintKind::Presence => {}
            ConstraintKind::Uniqueness { scope, predicate } => {
                params.insert(
                    "scope".into(),
                    Json::Array(scope.iter().map(|s| json!(s)).collect()),
                );
                if let Some(p) = predicate {
                    params.insert(
                        "predicate".into(),
                        json!({"column": p.column, "op": p.op, "value": p.value.to_json()}),
                    );
                }
            }
            ConstraintKind::Length { min, max } => {
                if let Some(m) = min {
                    params.insert("min".into(), json!(m));
                }
                if let Some(m) = max {
                    params.insert("max".into(), json!(m));
                }
            }
            ConstraintKind::Format { patterns } => {
                params.insert(
                    "patterns".into(),
                    Json::Array(
                        patterns
                            .iter()
                            .map(|p| json!({"case_insensitive": p.case_insensitive, "pattern": p.pattern}))
                            .collect(),
                    ),
                );
            }
            ConstraintKind::Numerical { lower, upper, equal } => {
                if let Some(b) = lower {
                    params.insert(
                        "lower".into(),
                        json!({"inclusive": b.inclusive, "value": b.value.to_json()}),
                    );
                }
                if let Some(b) = upper {
                    params.insert(
                        "upper".into(),
                        json!({"inclusive": b.inclusive, "value": b.value.to_json()}),
                    );
                }
                if let Some(v) = equal {
                    params.insert("equal".into(), v.to_json());
                }
            }
            ConstraintKind::ForeignKey { ref_table, ref_column } => {
                params.insert(
                    "references".into(),
                    json!({"column": ref_column, "table": ref_table}),
                );
            }
        }
        if self.unsatisfiable {
            params.insert("unsatisfiable".into(), json!(true));
        }
        Json::Object(params)
    }

    pub fn to_json(&self) -> Json {
        json!({
            "columns": self.columns,
            "kind": self.kind.name(),
            "params": self.params_json(),
            "source": self.source.as_str(),
            "table": self.table,
        })
    }

    pub fn from_json(v: &Json) -> Result<Constraint, ConstraintError> {
        let err = |m: &str| ConstraintError::Json(m.to_string());
        let obj = v.as_object().ok_or_else(|| err("constraint must be an object"))?;
        let table = obj
            .get("table")
            .and_then(Json::as_str)
            .ok_or_else(|| err("missing table"))?
            .to_string();
        let columns: Vec<String> = obj
            .get("columns")
            .and_then(Json::as_array)
            .ok_or_else(|| err("missing columns"))?
            .iter()
            .map(|c| c.as_str().map(str::to_string).ok_or_else(|| err("column must be a string")))
            .collect::<Result<_, _>>()?;
        let kind_name = obj
            .get("kind")
            .and_then(Json::as_str)
            .ok_or_else(|| err("missing kind"))?;
        let source = obj
            .get("source")
            .and_then(Json::as_str)
            .and_then(ConstraintSource::parse)
            .ok_or_else(|| err("missing or unknown source"))?;
        let empty = serde_json::Map::new();
        let params = obj.get("params").and_then(Json::as_object).unwrap_or(&empty);
        let unsatisfiable = params
            .get("unsatisfiable")
            .and_then(Json::as_bool)
            .unwrap_or(false);

        let parse_value = |v: &Json| Value::from_json(v, None).map_err(|e| err(&e));
        let kind = match kind_name {
            "inclusion" => ConstraintKind::Inclusion {
                values: params
                    .get("values")
                    .and_then(Json::as_array)
                    .ok_or_else(|| err("inclusion requires values"))?
                    .iter()
                    .map(parse_value)
                    .collect::<Result<_, _>>()?,
            },
            "presence" => ConstraintKind::Presence,
            "uniqueness" => {
                let scope = params
                    .get("scope")
                    .and_then(Json::as_array)
                    .map(|a| {
                        a.iter()
                            .map(|s| {
                                s.as_str()
                                    .map(str::to_string)
                                    .ok_or_else(|| err("scope column must be a string"))
                            })
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .transpose()?
                    .unwrap_or_default();
                let predicate = params
                    .get("predicate")
                    .map(|p| -> Result<ScopePredicate, ConstraintError> {
                        let o = p.as_object().ok_or_else(|| err("predicate must be an object"))?;
                        Ok(ScopePredicate {
                            column: o
                                .get("column")
                                .and_then(Json::as_str)
                                .ok_or_else(|| err("predicate column"))?
                                .to_string(),
                            op: o
                                .get("op")
                                .and_then(Json::as_str)
                                .ok_or_else(|| err("predicate op"))?
                                .to_string(),
                            value: parse_value(o.get("value").ok_or_else(|| err("predicate value"))?)?,
                        })
                    })
                    .transpose()?;
                ConstraintKind::Uniqueness { scope, predicate }
            }
            "length" => ConstraintKind::Length {
                min: params.get("min").and_then(Json::as_u64),
                max: params.get("max").and_then(Json::as_u64),
            },
            "format" => ConstraintKind::Format {
                patterns: params
                    .get("patterns")
                    .and_then(Json::as_array)
                    .ok_or_else(|| err("format requires patterns"))?
                    .iter()
                    .map(|p| -> Result<FormatPattern, ConstraintError> {
                        let o = p.as_object().ok_or_else(|| err("pattern must be an object"))?;
                        Ok(FormatPattern {
                            pattern: o
                                .get("pattern")
                                .and_then(Json::as_str)
                                .ok_or_else(|| err("pattern text"))?
                                .to_string(),
                            case_insensitive: o
                                .get("case_insensitive")
                                .and_then(Json::as_bool)
                                .unwrap_or(false),
                        })
                    })
                    .collect::<Result<_, _>>()?,
            },
            "numerical" => {
                let bound = |key: &str| -> Result<Option<NumBound>, ConstraintError> {
                    params
                        .get(key)
                        .map(|b| -> Result<NumBound, ConstraintError> {
                            let o = b.as_object().ok_or_else(|| err("bound must be an object"))?;
                            Ok(NumBound {
                                value: parse_value(o.get("value").ok_or_else(|| err("bound value"))?)?,
                                inclusive: o
                                    .get("inclusive")
                                    .and_then(Json::as_bool)
                                    .ok_or_else(|| err("bound inclusive flag"))?,
                            })
                        })
                        .transpose()
                };
                ConstraintKind::Numerical {
                    lower: bound("lower")?,
                    upper: bound("upper")?,
                    equal: params.get("equal").map(parse_value).transpose()?,
                }
            }
            "foreign-key" => {
                let refs = params
                    .get("references")
                    .and_then(Json::as_object)
                    .ok_or_else(|| err("foreign-key requires references"))?;
                ConstraintKind::ForeignKey {
                    ref_table: refs
                        .get("table")
                        .and_then(Json::as_str)
                        .ok_or_else(|| err("references.table"))?
                        .to_string(),
                    ref_column: refs
                        .get("column")
                        .and_then(Json::as_str)
                        .ok_or_else(|| err("references.column"))?
                        .to_string(),
                }
            }
            other => return Err(err(&format!("unknown kind {other}"))),
        };
        let c = Constraint {
            table,
            columns,
            kind,
            source,
            unsatisfiable,
        };
        c.check_invariants()?;
        Ok(c)
    }
}

/// A collection of constraints for one application (or a merged collection).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<Constraint>) -> ConstraintSet {
        ConstraintSet { constraints }
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter()
    }

    /// Canonical JSON file: array of constraint objects, keys sorted,
    /// 2-space indentation, newline-terminated. Byte-stable.
    pub fn to_canonical_json(&self) -> String {
        let mut sorted = self.constraints.clone();
        sorted.sort_by_key(Constraint::sort_key);
        let arr = Json::Array(sorted.iter().map(Constraint::to_json).collect());
        let mut text = serde_json::to_string_pretty(&arr).expect("constraints serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<ConstraintSet, ConstraintError> {
        let v: Json =
            serde_json::from_str(text).map_err(|e| ConstraintError::Json(e.to_string()))?;
        let arr = v
            .as_array()
            .ok_or_else(|| ConstraintError::Json("constraint file must be a JSON array".into()))?;
        let constraints = arr.iter().map(Constraint::from_json).collect::<Result<_, _>>()?;
        Ok(ConstraintSet { constraints })
    }

    /// Collapse to at most one constraint per identity by conjoining params.
    /// Within one application two constraints on the same target both hold,
    /// so value kinds intersect and unanimity kinds deduplicate.
    pub fn normalize(&self) -> ConstraintSet {
        let mut groups: BTreeMap<(String, &'static str, String), Vec<&Constraint>> = BTreeMap::new();
        let mut order: Vec<(String, &'static str, String)> = Vec::new();
        for c in &self.constraints {
            let id = c.identity();
            if !groups.contains_key(&id) {
                order.push(id.clone());
            }
            groups.entry(id).or_default().push(c);
        }
        let mut out = Vec::new();
        for id in order {
            let members = &groups[&id];
            let mut acc = members[0].clone();
            for m in &members[1..] {
                acc = conjoin(&acc, m, acc.source);
            }
            out.push(acc);
        }
        ConstraintSet::new(out)
    }

    pub fn validate_against_schema(&self, schema: &Schema) -> Vec<ResolutionError> {
        let mut errors = Vec::new();
        for c in &self.constraints {
            match schema.table(&c.table) {
                None => errors.push(ResolutionError::UnresolvedTable(c.table.clone())),
                Some(table) => {
                    for col in c.referenced_columns() {
                        if table.column(&col).is_none() {
                            errors.push(ResolutionError::UnresolvedColumn(c.table.clone(), col));
                        }
                    }
                }
            }
            if let ConstraintKind::ForeignKey { ref_table, ref_column } = &c.kind {
                match schema.table(ref_table) {
                    None => errors.push(ResolutionError::UnresolvedTable(ref_table.clone())),
                    Some(t) => {
                        if t.column(ref_column).is_none() {
                            errors.push(ResolutionError::UnresolvedColumn(
                                ref_table.clone(),
                                ref_column.clone(),
                            ));
                        }
                    }
                }
            }
        }
        errors
    }

    /// One SELECT per constraint returning violating rows; empty result means
    /// the constraint holds. Statements sorted by (table, column, kind).
    /// Format patterns inexpressible in the dialect come out as comments
    /// flagged UNCHECKABLE.
    pub fn emit_checker_sql(&self) -> Vec<String> {
        let mut sorted = self.constraints.clone();
        sorted.sort_by_key(Constraint::sort_key);
        sorted.iter().map(checker_statement).collect()
    }
}

/// Conjoin two constraints with the same identity (both hold on the data).
fn conjoin(a: &Constraint, b: &Constraint, source_if_same: ConstraintSource) -> Constraint {
    let mut out = a.clone();
    let mut changed = false;
    match (&mut out.kind, &b.kind) {
        (ConstraintKind::Inclusion { values: va }, ConstraintKind::Inclusion { values: vb }) => {
            let kept: Vec<Value> = va.iter().filter(|v| vb.contains(v)).cloned().collect();
            if kept.len() != va.len() {
                changed = true;
            }
            if kept.is_empty() {
                out.unsatisfiable = true;
            }
            *va = kept;
        }
        (ConstraintKind::Format { patterns: pa }, ConstraintKind::Format { patterns: pb }) => {
            for p in pb {
                if !pa.contains(p) {
                    pa.push(p.clone());
                    changed = true;
                }
            }
        }
        (
            ConstraintKind::Length { min: min_a, max: max_a },
            ConstraintKind::Length { min: min_b, max: max_b },
        ) => {
            let new_min = match (*min_a, *min_b) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            };
            let new_max = match (*max_a, *max_b) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (x, y) => x.or(y),
            };
            changed = new_min != *min_a || new_max != *max_a;
            *min_a = new_min;
            *max_a = new_max;
            if let (Some(lo), Some(hi)) = (new_min, new_max) {
                if lo > hi {
                    out.unsatisfiable = true;
                }
            }
        }
        (ka @ ConstraintKind::Numerical { .. }, ConstraintKind::Numerical { .. }) => {
            let (lo_a, hi_a) = numeric_range(ka);
            let (lo_b, hi_b) = numeric_range(&b.kind);
            let lower = tighter_lower(lo_a, lo_b);
            let upper = tighter_upper(hi_a, hi_b);
            let empty = match (&lower, &upper) {
                (Some(lo), Some(hi)) => {
                    let (l, h) = (lo.as_f64(), hi.as_f64());
                    l > h || (l == h && !(lo.inclusive && hi.inclusive))
                }
                _ => false,
            };
            let equal = match (&lower, &upper) {
                (Some(lo), Some(hi))
                    if !empty && lo.inclusive && hi.inclusive && lo.as_f64() == hi.as_f64() =>
                {
                    Some(lo.value.clone())
                }
                _ => None,
            };
            changed = true;
            if empty {
                out.unsatisfiable = true;
            }
            *ka = if let Some(v) = equal {
                ConstraintKind::Numerical { lower: None, upper: None, equal: Some(v) }
            } else {
                ConstraintKind::Numerical { lower, upper, equal: None }
            };
        }
        // Identical identity for unanimity kinds: nothing to combine.
        _ => {}
    }
    out.unsatisfiable |= b.unsatisfiable;
    if changed {
        out.source = ConstraintSource::Merged;
    } else {
        out.source = source_if_same;
    }
    out
}

pub fn numeric_range(kind: &ConstraintKind) -> (Option<NumBound>, Option<NumBound>) {
    match kind {
        ConstraintKind::Numerical { lower, upper, equal } => match equal {
            Some(v) => (
                Some(NumBound::new(v.clone(), true)),
                Some(NumBound::new(v.clone(), true)),
            ),
            None => (lower.clone(), upper.clone()),
        },
        _ => (None, None),
    }
}

fn tighter_lower(a: Option<NumBound>, b: Option<NumBound>) -> Option<NumBound> {
    match (a, b) {
        (Some(x), Some(y)) => {
            let (fx, fy) = (x.as_f64(), y.as_f64());
            Some(if fx > fy || (fx == fy && !x.inclusive) { x } else { y })
        }
        (x, y) => x.or(y),
    }
}

fn tighter_upper(a: Option<NumBound>, b: Option<NumBound>) -> Option<NumBound> {
    match (a, b) {
        (Some(x), Some(y)) => {
            let (fx, fy) = (x.as_f64(), y.as_f64());
            Some(if fx < fy || (fx == fy && !x.inclusive) { x } else { y })
        }
        (x, y) => x.or(y),
    }
}

/// Merge constraint sets from several applications: a constraint survives only
/// when every application guarantees it, with value parameters intersected.
pub fn merge_constraint_sets(sets: &[ConstraintSet]) -> Result<ConstraintSet, ConstraintError> {
    if sets.is_empty() {
        return Err(ConstraintError::Json("merge requires at least one set".into()));
    }
    if sets.len() == 1 {
        return Ok(sets[0].clone());
    }
    let normalized: Vec<ConstraintSet> = sets.iter().map(ConstraintSet::normalize).collect();
    let mut result = Vec::new();
    let first = &normalized[0];
    for c in &first.constraints {
        let id = c.identity();
        let mut acc = c.clone();
        let mut present_everywhere = true;
        for other in &normalized[1..] {
            match other.constraints.iter().find(|o| o.identity() == id) {
                Some(o) => acc = conjoin(&acc, o, ConstraintSource::Merged),
                None => {
                    present_everywhere = false;
                    break;
                }
            }
        }
        if present_everywhere {
            acc.source = ConstraintSource::Merged;
            result.push(acc);
        }
    }
    result.sort_by_key(Constraint::sort_key);
    Ok(ConstraintSet::new(result))
}

/// Database-declared constraints implied by the schema itself: raw entries
/// from the schema file plus Uniqueness on primary keys and Presence on every
/// NOT NULL column.
pub fn declared_constraints(schema: &Schema) -> Result<Vec<Constraint>, ConstraintError> {
    let mut out = Vec::new();
    for raw in &schema.constraints {
        let mut c = Constraint::from_json(raw)?;
        c.source = ConstraintSource::DbDeclared;
        out.push(c);
    }
    for t in &schema.tables {
        for col in &t.columns {
            if col.primary_key {
                out.push(Constraint::new(
                    t.name.clone(),
                    vec![col.name.clone()],
                    ConstraintKind::Uniqueness { scope: vec![], predicate: None },
                    ConstraintSource::DbDeclared,
                ));
            }
            if !col.nullable {
                out.push(Constraint::new(
                    t.name.clone(),
                    vec![col.name.clone()],
                    ConstraintKind::Presence,
                    ConstraintSource::DbDeclared,
                ));
            }
        }
    }
    Ok(out)
}

/// Translate a model-file regex to the checker dialect (PostgreSQL POSIX):
/// \A becomes ^, \z and \Z become $. Lookaround has no POSIX equivalent.
pub fn dialect_pattern(pattern: &str) -> Option<String> {
    if pattern.contains("(?=") || pattern.contains("(?!") || pattern.contains("(?<") {
        return None;
    }
    Some(
        pattern
            .replace("\\A", "^")
            .replace("\\z", "$")
            .replace("\\Z", "$"),
    )
}

fn sql_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn checker_statement(c: &Constraint) -> String {
    let table = &c.table;
    let col = &c.columns[0];
    match &c.kind {
        ConstraintKind::Presence => {
            format!("SELECT * FROM {table} WHERE {col} IS NULL;")
        }
        ConstraintKind::Inclusion { values } => {
            if values.is_empty() {
                format!("SELECT * FROM {table} WHERE {col} IS NOT NULL;")
            } else {
                let list = values
                    .iter()
                    .map(Value::render_sql)
                    .collect::<Vec<_>>()
                    .join(", ");
                format!("SELECT * FROM {table} WHERE {col} NOT IN ({list});")
            }
        }
        ConstraintKind::Uniqueness { predicate, .. } => {
            let key = c.unique_key().join(", ");
            let filter = predicate
                .as_ref()
                .map(|p| format!(" WHERE {} {} {}", p.column, p.op, p.value.render_sql()))
                .unwrap_or_default();
            format!(
                "SELECT {key} FROM {table}{filter} GROUP BY {key} HAVING COUNT(*) > 1;"
            )
        }
        ConstraintKind::Length { min, max } => {
            if c.unsatisfiable {
                return format!("SELECT * FROM {table} WHERE {col} IS NOT NULL;");
            }
            let cond = match (min, max) {
                (Some(lo), Some(hi)) => {
                    format!("LENGTH({col}) >= {lo} AND LENGTH({col}) <= {hi}")
                }
                (Some(lo), None) => format!("LENGTH({col}) >= {lo}"),
                (None, Some(hi)) => format!("LENGTH({col}) <= {hi}"),
                (None, None) => "TRUE".to_string(),
            };
            format!("SELECT * FROM {table} WHERE NOT ({cond});")
        }
        ConstraintKind::Numerical { lower, upper, equal } => {
            if c.unsatisfiable {
                return format!("SELECT * FROM {table} WHERE {col} IS NOT NULL;");
            }
            let cond = if let Some(v) = equal {
                format!("{col} = {}", v.render_sql())
            } else {
                let mut parts = Vec::new();
                if let Some(lo) = lower {
                    let op = if lo.inclusive { ">=" } else { ">" };
                    parts.push(format!("{col} {op} {}", lo.value.render_sql()));
                }
                if let Some(hi) = upper {
                    let op = if hi.inclusive { "<=" } else { "<" };
                    parts.push(format!("{col} {op} {}", hi.value.render_sql()));
                }
                parts.join(" AND ")
            };
            format!("SELECT * FROM {table} WHERE NOT ({cond});")
        }
        ConstraintKind::Format { patterns } => {
            let mut parts = Vec::new();
            for p in patterns {
                match dialect_pattern(&p.pattern) {
                    Some(translated) => {
                        let op = if p.case_insensitive { "!~*" } else { "!~" };
                        parts.push(format!("{col} {op} {}", sql_quote(&translated)));
                    }
                    None => {
                        return format!(
                            "-- UNCHECKABLE format on {table}.{col}: {}",
                            p.pattern
                        );
                    }
                }
            }
            format!("SELECT * FROM {table} WHERE {};", parts.join(" OR "))
        }
        ConstraintKind::ForeignKey { ref_table, ref_column } => {
            format!(
                "SELECT * FROM {table} WHERE {col} IS NOT NULL AND {col} NOT IN (SELECT {ref_column} FROM {ref_table});"
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inclusion(table: &str, col: &str, values: &[&str]) -> Constraint {
        Constraint::new(
            table,
            vec![col.into()],
            ConstraintKind::Inclusion {
                values: values.iter().map(|v| Value::Text(v.to_string())).collect(),
            },
            ConstraintSource::BuiltinValidation,
        )
    }

    fn numerical(table: &str, col: &str, lo: i64, hi: i64) -> Constraint {
        Constraint::new(
            table,
            vec![col.into()],
            ConstraintKind::Numerical {
                lower: Some(NumBound::new(Value::Int(lo), true)),
                upper: Some(NumBound::new(Value::Int(hi), true)),
                equal: None,
            },
            ConstraintSource::BuiltinValidation,
        )
    }

    #[test]
    fn inclusion_merge_intersects_values() {
        let s1 = ConstraintSet::new(vec![inclusion("t", "f", &["A", "B", "C"])]);
        let s2 = ConstraintSet::new(vec![inclusion("t", "f", &["B", "C", "D"])]);
        let merged = merge_constraint_sets(&[s1, s2]).unwrap();
        assert_eq!(merged.len(), 1);
        match &merged.constraints[0].kind {
            ConstraintKind::Inclusion { values } => {
                assert_eq!(values, &vec![Value::Text("B".into()), Value::Text("C".into())]);
            }
            other => panic!("unexpected kind {other:?}"),
        }
        assert_eq!(merged.constraints[0].source, ConstraintSource::Merged);
    }

    #[test]
    fn numerical_merge_intersects_ranges() {
        let s1 = ConstraintSet::new(vec![numerical("t", "f", 1, 10)]);
        let s2 = ConstraintSet::new(vec![numerical("t", "f", 0, 5)]);
        let merged = merge_constraint_sets(&[s1, s2]).unwrap();
        let (lo, hi) = numeric_range(&merged.constraints[0].kind);
        assert_eq!(lo.unwrap().value, Value::Int(1));
        assert_eq!(hi.unwrap().value, Value::Int(5));
    }

    #[test]
    fn unanimity_drops_one_sided_uniqueness() {
        let uniq = Constraint::new(
            "members",
            vec!["user_id".into()],
            ConstraintKind::Uniqueness { scope: vec!["project_id".into()], predicate: None },
            ConstraintSource::BuiltinValidation,
        );
        let s1 = ConstraintSet::new(vec![uniq, inclusion("t", "f", &["A"])]);
        let s2 = ConstraintSet::new(vec![inclusion("t", "f", &["A"])]);
        let merged = merge_constraint_sets(&[s1, s2]).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.constraints[0].kind.name(), "inclusion");
    }

    #[test]
    fn empty_intersection_is_flagged_not_dropped() {
        let s1 = ConstraintSet::new(vec![inclusion("t", "f", &["A"])]);
        let s2 = ConstraintSet::new(vec![inclusion("t", "f", &["B"])]);
        let merged = merge_constraint_sets(&[s1, s2]).unwrap();
        assert_eq!(merged.len(), 1);
        assert!(merged.constraints[0].unsatisfiable);
        match &merged.constraints[0].kind {
            ConstraintKind::Inclusion { values } => assert!(values.is_empty()),
            other => panic!("unexpected kind {other:?}"),
        }
    }

    #[test]
    fn single_set_merge_is_identity() {
        let s = ConstraintSet::new(vec![inclusion("t", "f", &["A", "B"])]);
        let merged = merge_constraint_sets(&[s.clone()]).unwrap();
        assert_eq!(merged, s);
    }

    #[test]
    fn checker_sql_matches_expected_forms() {
        let presence = Constraint::new(
            "users",
            vec!["email".into()],
            ConstraintKind::Presence,
            ConstraintSource::BuiltinValidation,
        );
        assert_eq!(
            checker_statement(&presence),
            "SELECT * FROM users WHERE email IS NULL;"
        );

        let uniq = Constraint::new(
            "members",
            vec!["user_id".into()],
            ConstraintKind::Uniqueness { scope: vec!["project_id".into()], predicate: None },
            ConstraintSource::BuiltinValidation,
        );
        assert_eq!(
            checker_statement(&uniq),
            "SELECT user_id, project_id FROM members GROUP BY user_id, project_id HAVING COUNT(*) > 1;"
        );

        let num = Constraint::new(
            "users",
            vec!["age".into()],
            ConstraintKind::Numerical {
                lower: Some(NumBound::new(Value::Int(0), true)),
                upper: None,
                equal: None,
            },
            ConstraintSource::BuiltinValidation,
        );
        assert_eq!(
            checker_statement(&num),
            "SELECT * FROM users WHERE NOT (age >= 0);"
        );
    }

    #[test]
    fn uncheckable_format_becomes_comment() {
        let fmt = Constraint::new(
            "users",
            vec!["email".into()],
            ConstraintKind::Format {
                patterns: vec![FormatPattern {
                    pattern: r"\A(?=x)y\z".into(),
                    case_insensitive: false,
                }],
            },
            ConstraintSource::BuiltinValidation,
        );
        let stmt = checker_statement(&fmt);
        assert!(stmt.starts_with("-- UNCHECKABLE format on users.email:"), "{stmt}");
    }

    #[test]
    fn canonical_json_round_trips_and_is_stable() {
        let set = ConstraintSet::new(vec![
            numerical("users", "age", 0, 120),
            inclusion("users", "status", &["active", "locked"]),
        ]);
        let text = set.to_canonical_json();
        assert!(text.ends_with('\n'));
        let parsed = ConstraintSet::from_json(&text).unwrap();
        assert_eq!(parsed.to_canonical_json(), text);
        // Sorted output: age before status.
        let idx_age = text.find("age").unwrap();
        let idx_status = text.find("status").unwrap();
        assert!(idx_age < idx_status);
    }

    #[test]
    fn resolution_errors_name_the_target() {
        let schema = Schema::from_json(
            r#"{"tables":[{"name":"users","columns":[{"name":"name","type":"text"}]}]}"#,
        )
        .unwrap();
        let set = ConstraintSet::new(vec![
            Constraint::new(
                "users",
                vec!["name".into()],
                ConstraintKind::Presence,
                ConstraintSource::BuiltinValidation,
            ),
            Constraint::new(
                "users",
                vec!["nickname".into()],
                ConstraintKind::Presence,
                ConstraintSource::BuiltinValidation,
            ),
            Constraint::new(
                "wikipages",
                vec!["project_id".into()],
                ConstraintKind::ForeignKey {
                    ref_table: "projects".into(),
                    ref_column: "id".into(),
                },
                ConstraintSource::DbDeclared,
            ),
        ]);
        let errs = set.validate_against_schema(&schema);
        let rendered: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        assert!(rendered.contains(&"unresolved-column(users.nickname)".to_string()));
        assert!(rendered.contains(&"unresolved-table(wikipages)".to_string()));
        assert!(rendered.contains(&"unresolved-table(projects)".to_string()));
        assert!(!rendered.iter().any(|e| e.contains("users.name")));
    }
}
