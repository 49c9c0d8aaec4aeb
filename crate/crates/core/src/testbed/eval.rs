//! Bag-semantics evaluation of ground query templates.
//!
//! Pipeline: FROM × INNER JOINs (nested loop, equi only) → WHERE under
//! three-valued logic (only TRUE rows survive) → GROUP BY + COUNT(*) →
//! HAVING → projection → DISTINCT (first occurrence kept) → ORDER BY
//! (stable; ASC puts NULLs last, DESC first) → LIMIT. Without ORDER BY,
//! LIMIT takes the insertion-order prefix.

use std::collections::BTreeMap;

use thiserror::Error;

use super::Database;
use crate::constraints::Schema;
use crate::sql::{Atom, CmpOp, ColRef, Operand, Pred, Projection, QueryTemplate};
use crate::value::Value;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}.{1}")]
    UnknownColumn(String, String),
    #[error("unqualified column {0}; resolve the template first")]
    Unqualified(String),
    #[error("unbound parameter ${0}; instantiate the template first")]
    UnboundParam(u32),
    #[error("LENGTH applied to non-text value in {0}.{1}")]
    LengthOnNonText(String, String),
    #[error("regex applied to non-text value in {0}.{1}")]
    RegexOnNonText(String, String),
    #[error("invalid regex pattern {0:?}: {1}")]
    BadRegex(String, String),
    #[error("projection {0} is not in GROUP BY")]
    ProjectionOutsideGroup(String),
    #[error("COUNT(*) cannot mix with column projections without GROUP BY")]
    MixedAggregate,
    #[error("star projection is not allowed with GROUP BY")]
    StarWithGroup,
    #[error("HAVING requires GROUP BY")]
    HavingWithoutGroup,
    #[error("ORDER BY column {0} is not available in the output")]
    OrderByOutsideOutput(String),
}

/// Evaluation result: labeled columns plus a bag of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Work counts gathered during evaluation; the cost model prices these.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalCounters {
    pub scanned_rows: u64,
    pub join_pairs: u64,
    pub distinct_input_rows: u64,
    pub predicate_atom_evals: u64,
    pub pre_limit_rows: u64,
    pub output_rows: u64,
}

#[derive(Clone, Copy, PartialEq)]
enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    fn from_bool(b: bool) -> Truth {
        if b {
            Truth::True
        } else {
            Truth::False
        }
    }

    fn and(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, Truth::True) => Truth::True,
            _ => Truth::Unknown,
        }
    }

    fn or(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::True, _) | (_, Truth::True) => Truth::True,
            (Truth::False, Truth::False) => Truth::False,
            _ => Truth::Unknown,
        }
    }

    fn not(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Unknown => Truth::Unknown,
        }
    }
}

/// Maps qualified column references to offsets in the concatenated row.
struct Layout {
    offsets: BTreeMap<(String, String), usize>,
    table_spans: Vec<(String, usize, usize)>,
}

impl Layout {
    fn build(q: &QueryTemplate, schema: &Schema) -> Result<Layout, EvalError> {
        let mut offsets = BTreeMap::new();
        let mut table_spans = Vec::new();
        let mut offset = 0;
        for name in q.tables() {
            let table = schema
                .table(name)
                .ok_or_else(|| EvalError::UnknownTable(name.to_string()))?;
            table_spans.push((name.to_string(), offset, table.columns.len()));
            for (i, c) in table.columns.iter().enumerate() {
                offsets.insert((name.to_string(), c.name.clone()), offset + i);
            }
            offset += table.columns.len();
        }
        Ok(Layout { offsets, table_spans })
    }

    fn col(&self, c: &ColRef) -> Result<usize, EvalError> {
        let table = c
            .table
            .as_ref()
            .ok_or_else(|| EvalError::Unqualified(c.column.clone()))?;
        if !self.table_spans.iter().any(|(t, _, _)| t == table) {
            return Err(EvalError::UnknownTable(table.clone()));
        }
        self.offsets
            .get(&(table.clone(), c.column.clone()))
            .copied()
            .ok_or_else(|| EvalError::UnknownColumn(table.clone(), c.column.clone()))
    }

    fn span(&self, table: &str) -> Option<(usize, usize)> {
        self.table_spans
            .iter()
            .find(|(t, _, _)| t == table)
            .map(|(_, o, l)| (*o, *l))
    }
}

/// Per-query evaluation state: compiled regexes and materialized subquery
/// value sets, both computed once rather than per row.
struct Prepared {
    regexes: BTreeMap<(String, bool), regex::Regex>,
    subqueries: BTreeMap<(String, String), (Vec<Value>, bool)>,
}

impl Prepared {
    fn build(q: &QueryTemplate, db: &Database, schema: &Schema, counters: &mut EvalCounters) -> Result<Prepared, EvalError> {
        let mut regexes = BTreeMap::new();
        let mut subqueries = BTreeMap::new();
        for a in q.predicate.atoms() {
            match a {
                Atom::Regex { pattern, case_insensitive, .. } => {
                    let key = (pattern.clone(), *case_insensitive);
                    if !regexes.contains_key(&key) {
                        let built = regex::RegexBuilder::new(pattern)
                            .case_insensitive(*case_insensitive)
                            .build()
                            .map_err(|e| EvalError::BadRegex(pattern.clone(), e.to_string()))?;
                        regexes.insert(key, built);
                    }
                }
                Atom::InSubquery { table, column, .. } => {
                    let key = (table.clone(), column.clone());
                    if subqueries.contains_key(&key) {
                        continue;
                    }
                    let td = schema
                        .table(table)
                        .ok_or_else(|| EvalError::UnknownTable(table.clone()))?;
                    let idx = td
                        .columns
                        .iter()
                        .position(|c| c.name == *column)
                        .ok_or_else(|| EvalError::UnknownColumn(table.clone(), column.clone()))?;
                    let mut vals = Vec::new();
                    let mut has_null = false;
                    for row in db.rows(table) {
                        counters.scanned_rows += 1;
                        if row[idx].is_null() {
                            has_null = true;
                        } else {
                            vals.push(row[idx].clone());
                        }
                    }
                    subqueries.insert(key, (vals, has_null));
                }
                _ => {}
            }
        }
        Ok(Prepared { regexes, subqueries })
    }
}

fn eval_operand(o: &Operand, row: &[Value], layout: &Layout) -> Result<Value, EvalError> {
    Ok(match o {
        Operand::Lit(v) => v.clone(),
        Operand::Param(n) => return Err(EvalError::UnboundParam(*n)),
        Operand::Col(c) => row[layout.col(c)?].clone(),
        Operand::Length(c) => {
            let v = &row[layout.col(c)?];
            match v {
                Value::Null => Value::Null,
                Value::Text(s) => Value::Int(s.chars().count() as i64),
                _ => {
                    return Err(EvalError::LengthOnNonText(
                        c.table.clone().unwrap_or_default(),
                        c.column.clone(),
                    ))
                }
            }
        }
    })
}

fn eval_cmp(left: &Value, op: CmpOp, right: &Value) -> Truth {
    match left.sql_cmp(right) {
        None => Truth::Unknown,
        Some(ord) => Truth::from_bool(match op {
            CmpOp::Eq => ord.is_eq(),
            CmpOp::Ne => ord.is_ne(),
            CmpOp::Lt => ord.is_lt(),
            CmpOp::Le => ord.is_le(),
            CmpOp::Gt => ord.is_gt(),
            CmpOp::Ge => ord.is_ge(),
        }),
    }
}

/// SQL IN over a value list: TRUE on a match, UNKNOWN if the probe is NULL
/// or the list holds a NULL and nothing matched, FALSE otherwise.
fn eval_in(probe: &Value, items: &[Value], has_extra_null: bool) -> Truth {
    if probe.is_null() {
        return Truth::Unknown;
    }
    let mut saw_null = has_extra_null;
    for item in items {
        if item.is_null() {
            saw_null = true;
        } else if probe.sql_eq(item) == Some(true) {
            return Truth::True;
        }
    }
    if saw_null {
        Truth::Unknown
    } else {
        Truth::False
    }
}

fn eval_atom(
    a: &Atom,
    row: &[Value],
    layout: &Layout,
    prep: &Prepared,
    counters: &mut EvalCounters,
) -> Result<Truth, EvalError> {
    counters.predicate_atom_evals += 1;
    Ok(match a {
        Atom::Const(b) => Truth::from_bool(*b),
        Atom::Cmp { left, op, right } => {
            let l = eval_operand(left, row, layout)?;
            let r = eval_operand(right, row, layout)?;
            eval_cmp(&l, *op, &r)
        }
        Atom::IsNull { col, negated } => {
            let v = &row[layout.col(col)?];
            Truth::from_bool(v.is_null() != *negated)
        }
        Atom::InList { col, items, negated } => {
            let probe = row[layout.col(col)?].clone();
            let vals = items
                .iter()
                .map(|o| eval_operand(o, row, layout))
                .collect::<Result<Vec<_>, _>>()?;
            let t = eval_in(&probe, &vals, false);
            if *negated {
                t.not()
            } else {
                t
            }
        }
        Atom::InSubquery { col, table, column, negated } => {
            let probe = &row[layout.col(col)?];
            let (vals, has_null) = &prep.subqueries[&(table.clone(), column.clone())];
            let t = eval_in(probe, vals, *has_null);
            if *negated {
                t.not()
            } else {
                t
            }
        }
        Atom::Regex { col, pattern, case_insensitive, negated } => {
            let v = &row[layout.col(col)?];
            match v {
                Value::Null => Truth::Unknown,
                Value::Text(s) => {
                    let re = &prep.regexes[&(pattern.clone(), *case_insensitive)];
                    Truth::from_bool(re.is_match(s) != *negated)
                }
                _ => {
                    return Err(EvalError::RegexOnNonText(
                        col.table.clone().unwrap_or_default(),
                        col.column.clone(),
                    ))
                }
            }
        }
    })
}

fn eval_pred(
    p: &Pred,
    row: &[Value],
    layout: &Layout,
    prep: &Prepared,
    counters: &mut EvalCounters,
) -> Result<Truth, EvalError> {
    Ok(match p {
        Pred::Atom(a) => eval_atom(a, row, layout, prep, counters)?,
        Pred::Not(inner) => eval_pred(inner, row, layout, prep, counters)?.not(),
        Pred::And(cs) => {
            let mut acc = Truth::True;
            for c in cs {
                acc = acc.and(eval_pred(c, row, layout, prep, counters)?);
            }
            acc
        }
        Pred::Or(cs) => {
            let mut acc = Truth::False;
            for c in cs {
                acc = acc.or(eval_pred(c, row, layout, prep, counters)?);
            }
            acc
        }
    })
}

/// NULLs sort after everything ascending, before everything descending.
fn order_cmp(a: &Value, b: &Value, asc: bool) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let base = match (a.is_null(), b.is_null()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => a.sql_cmp(b).unwrap_or_else(|| a.cmp(b)),
    };
    if asc {
        base
    } else {
        base.reverse()
    }
}

pub fn evaluate(q: &QueryTemplate, db: &Database, schema: &Schema) -> Result<Relation, EvalError> {
    evaluate_counted(q, db, schema).map(|(rel, _)| rel)
}

pub fn evaluate_counted(
    q: &QueryTemplate,
    db: &Database,
    schema: &Schema,
) -> Result<(Relation, EvalCounters), EvalError> {
    let mut counters = EvalCounters::default();
    let layout = Layout::build(q, schema)?;
    let prep = Prepared::build(q, db, schema, &mut counters)?;

    // FROM and JOINs, skipping all scans when WHERE is constant FALSE.
    let mut working: Vec<Vec<Value>> = Vec::new();
    if !q.predicate.is_const(false) {
        for row in db.rows(&q.from) {
            counters.scanned_rows += 1;
            working.push(row.clone());
        }
        for j in &q.joins {
            counters.scanned_rows += db.rows(&j.table).len() as u64;
            let li = layout.col(&j.left)?;
            let ri = layout.col(&j.right)?;
            let mut joined = Vec::new();
            for acc in &working {
                for row in db.rows(&j.table) {
                    counters.join_pairs += 1;
                    let mut candidate = acc.clone();
                    candidate.extend(row.iter().cloned());
                    if candidate[li].sql_eq(&candidate[ri]) == Some(true) {
                        joined.push(candidate);
                    }
                }
            }
            working = joined;
        }
        if !q.predicate.is_const(true) {
            let mut filtered = Vec::with_capacity(working.len());
            for row in working {
                if eval_pred(&q.predicate, &row, &layout, &prep, &mut counters)? == Truth::True {
                    filtered.push(row);
                }
            }
            working = filtered;
        }
    }

    // Grouping and projection.
    let grouped = !q.group_by.is_empty();
    if q.having.is_some() && !grouped {
        return Err(EvalError::HavingWithoutGroup);
    }
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Value>>;
    if grouped {
        let key_idx: Vec<usize> = q
            .group_by
            .iter()
            .map(|c| layout.col(c))
            .collect::<Result<_, _>>()?;
        let mut order: Vec<Vec<Value>> = Vec::new();
        let mut counts: BTreeMap<Vec<Value>, u64> = BTreeMap::new();
        for row in &working {
            let key: Vec<Value> = key_idx.iter().map(|i| row[*i].clone()).collect();
            if !counts.contains_key(&key) {
                order.push(key.clone());
            }
            *counts.entry(key).or_insert(0) += 1;
        }
        let mut groups: Vec<(Vec<Value>, u64)> = order
            .into_iter()
            .map(|k| {
                let n = counts[&k];
                (k, n)
            })
            .collect();
        if let Some(h) = &q.having {
            groups.retain(|(_, n)| eval_cmp(&Value::Int(*n as i64), h.op, &Value::Int(h.count)) == Truth::True);
        }
        // Each projection must be a group key or COUNT(*).
        let mut plan: Vec<Result<usize, ()>> = Vec::new();
        for p in &q.projections {
            match p {
                Projection::Col(c) => {
                    let pos = q
                        .group_by
                        .iter()
                        .position(|g| g == c || (g.column == c.column && c.table.is_none()))
                        .ok_or_else(|| EvalError::ProjectionOutsideGroup(c.column.clone()))?;
                    columns.push(match &c.table {
                        Some(t) => format!("{t}.{}", c.column),
                        None => c.column.clone(),
                    });
                    plan.push(Ok(pos));
                }
                Projection::CountStar => {
                    columns.push("count".into());
                    plan.push(Err(()));
                }
                Projection::Star | Projection::TableStar(_) => return Err(EvalError::StarWithGroup),
            }
        }
        rows = groups
            .into_iter()
            .map(|(key, n)| {
                plan.iter()
                    .map(|step| match step {
                        Ok(pos) => key[*pos].clone(),
                        Err(()) => Value::Int(n as i64),
                    })
                    .collect()
            })
            .collect();
    } else if q.projections.contains(&Projection::CountStar) {
        if q.projections.len() != 1 {
            return Err(EvalError::MixedAggregate);
        }
        columns.push("count".into());
        rows = vec![vec![Value::Int(working.len() as i64)]];
    } else {
        let mut plan: Vec<usize> = Vec::new();
        for p in &q.projections {
            match p {
                Projection::Star => {
                    for (t, off, len) in &layout.table_spans {
                        let table = schema.table(t).expect("layout built from schema");
                        for (i, c) in table.columns.iter().enumerate().take(*len) {
                            columns.push(format!("{t}.{}", c.name));
                            plan.push(off + i);
                        }
                    }
                }
                Projection::TableStar(t) => {
                    let (off, len) = layout
                        .span(t)
                        .ok_or_else(|| EvalError::UnknownTable(t.clone()))?;
                    let table = schema.table(t).expect("layout built from schema");
                    for (i, c) in table.columns.iter().enumerate().take(len) {
                        columns.push(format!("{t}.{}", c.name));
                        plan.push(off + i);
                    }
                }
                Projection::Col(c) => {
                    columns.push(match &c.table {
                        Some(t) => format!("{t}.{}", c.column),
                        None => c.column.clone(),
                    });
                    plan.push(layout.col(c)?);
                }
                Projection::CountStar => unreachable!("handled above"),
            }
        }
        rows = working
            .iter()
            .map(|row| plan.iter().map(|i| row[*i].clone()).collect())
            .collect();
    }

    // DISTINCT keeps the first occurrence of each row.
    if q.distinct {
        counters.distinct_input_rows += rows.len() as u64;
        let mut seen: std::collections::BTreeSet<Vec<Value>> = std::collections::BTreeSet::new();
        rows.retain(|r| seen.insert(r.clone()));
    }

    // ORDER BY over output columns, stable.
    if !q.order_by.is_empty() {
        let mut keys = Vec::with_capacity(q.order_by.len());
        for (c, asc) in &q.order_by {
            let label_full = match &c.table {
                Some(t) => format!("{t}.{}", c.column),
                None => c.column.clone(),
            };
            let idx = columns
                .iter()
                .position(|l| *l == label_full || l.ends_with(&format!(".{}", c.column)) || *l == c.column)
                .ok_or(EvalError::OrderByOutsideOutput(label_full))?;
            keys.push((idx, *asc));
        }
        rows.sort_by(|a, b| {
            for (idx, asc) in &keys {
                let ord = order_cmp(&a[*idx], &b[*idx], *asc);
                if ord != std::cmp::Ordering::Equal {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        });
    }

    counters.pre_limit_rows = rows.len() as u64;
    if let Some(l) = q.limit {
        rows.truncate(l as usize);
    }
    counters.output_rows = rows.len() as u64;

    Ok((Relation { columns, rows }, counters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_template;

    fn schema() -> Schema {
        Schema::from_json(
            r#"{"tables":[
                {"name":"users","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"status","type":"text"}]},
                {"name":"members","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"user_id","type":"integer"},
                    {"name":"project_id","type":"integer"}]}]}"#,
        )
        .unwrap()
    }

    fn db() -> Database {
        let mut db = Database::new();
        db.tables.insert(
            "users".into(),
            vec![
                vec![Value::Int(5), Value::Text("active".into())],
                vec![Value::Int(6), Value::Text("locked".into())],
            ],
        );
        db.tables.insert(
            "members".into(),
            vec![
                vec![Value::Int(1), Value::Int(5), Value::Int(2)],
                vec![Value::Int(2), Value::Int(5), Value::Int(2)],
                vec![Value::Int(3), Value::Int(6), Value::Int(2)],
                vec![Value::Int(4), Value::Null, Value::Int(2)],
            ],
        );
        db
    }

    fn run(sql: &str) -> Relation {
        let t = parse_template(sql).unwrap().resolve(&schema()).unwrap();
        evaluate(&t, &db(), &schema()).unwrap()
    }

    #[test]
    fn distinct_collapses_duplicate_join_hits() {
        // User 5 has two member rows for project 2; DISTINCT keeps one copy.
        let with = run(
            "SELECT DISTINCT users.* FROM users INNER JOIN members ON members.user_id = users.id WHERE users.status = 'active' AND members.project_id = 2",
        );
        assert_eq!(with.rows, vec![vec![Value::Int(5), Value::Text("active".into())]]);
        let without = run(
            "SELECT users.* FROM users INNER JOIN members ON members.user_id = users.id WHERE users.status = 'active' AND members.project_id = 2",
        );
        assert_eq!(without.rows.len(), 2);
    }

    #[test]
    fn null_join_keys_never_match() {
        let rel = run("SELECT members.id FROM members INNER JOIN users ON members.user_id = users.id");
        assert_eq!(rel.rows.len(), 3);
    }

    #[test]
    fn where_three_valued_logic_filters_unknown() {
        let rel = run("SELECT members.id FROM members WHERE members.user_id <> 5");
        // NULL <> 5 is unknown, filtered.
        assert_eq!(rel.rows, vec![vec![Value::Int(3)]]);
        let not_in = run("SELECT members.id FROM members WHERE members.user_id NOT IN (5, 6)");
        assert!(not_in.rows.is_empty());
    }

    #[test]
    fn group_count_and_having() {
        let rel = run(
            "SELECT members.user_id, members.project_id FROM members WHERE members.user_id IS NOT NULL GROUP BY members.user_id, members.project_id HAVING COUNT(*) > 1",
        );
        assert_eq!(rel.rows, vec![vec![Value::Int(5), Value::Int(2)]]);
        let counts = run("SELECT COUNT(*) FROM members WHERE members.project_id = 2");
        assert_eq!(counts.rows, vec![vec![Value::Int(4)]]);
        let zero = run("SELECT COUNT(*) FROM members WHERE FALSE");
        assert_eq!(zero.rows, vec![vec![Value::Int(0)]]);
    }

    #[test]
    fn order_by_places_nulls_last_asc_first_desc() {
        let asc = run("SELECT members.user_id FROM members ORDER BY members.user_id ASC");
        assert_eq!(asc.rows.last().unwrap(), &vec![Value::Null]);
        let desc = run("SELECT members.user_id FROM members ORDER BY members.user_id DESC");
        assert_eq!(desc.rows.first().unwrap(), &vec![Value::Null]);
        assert_eq!(desc.rows[1], vec![Value::Int(6)]);
    }

    #[test]
    fn limit_without_order_takes_insertion_prefix() {
        let rel = run("SELECT members.id FROM members LIMIT 2");
        assert_eq!(rel.rows, vec![vec![Value::Int(1)], vec![Value::Int(2)]]);
    }

    #[test]
    fn subquery_membership_and_null_handling() {
        let rel = run(
            "SELECT members.id FROM members WHERE members.user_id IS NOT NULL AND members.user_id NOT IN (SELECT id FROM users)",
        );
        assert!(rel.rows.is_empty());
    }

    #[test]
    fn counters_track_work() {
        let t = parse_template("SELECT users.id FROM users INNER JOIN members ON members.user_id = users.id WHERE users.status = 'active'")
            .unwrap()
            .resolve(&schema())
            .unwrap();
        let (_, c) = evaluate_counted(&t, &db(), &schema()).unwrap();
        assert_eq!(c.scanned_rows, 6);
        assert_eq!(c.join_pairs, 8);
        assert_eq!(c.predicate_atom_evals, 3);
        let f = parse_template("SELECT users.id FROM users WHERE FALSE")
            .unwrap()
            .resolve(&schema())
            .unwrap();
        let (rel, cf) = evaluate_counted(&f, &db(), &schema()).unwrap();
        assert!(rel.rows.is_empty());
        assert_eq!(cf.scanned_rows, 0);
    }

    #[test]
    fn rejects_unresolved_and_grouped_star() {
        let bare = parse_template("SELECT id FROM users WHERE status = 'x'").unwrap();
        assert!(matches!(
            evaluate(&bare, &db(), &schema()),
            Err(EvalError::Unqualified(_))
        ));
        let star = parse_template("SELECT * FROM members GROUP BY members.user_id")
            .unwrap()
            .resolve(&schema())
            .unwrap();
        assert!(matches!(
            evaluate(&star, &db(), &schema()),
            Err(EvalError::StarWithGroup)
        ));
    }
}
