//! Constraint-driven rewrite enumeration.
//!
//! Six rule kinds, each fired only when a matching constraint touches a
//! field the query uses. Enumeration is breadth-first: every layer applies
//! one rule kind to everything found so far, so multi-rule combinations
//! like "drop DISTINCT, then add LIMIT 1" fall out naturally. Candidates
//! are deduplicated by fingerprint and capped by a threshold; they are
//! *suggestions* only, and the test/verify stages downstream decide which
//! ones actually preserve semantics.

mod interval;

pub use interval::{
    branch_context, branch_empty, constraint_facts, to_dnf, Bound, Branch, Context, Interval,
    Node, MAX_DNF_BRANCHES,
};

use std::collections::{BTreeMap, BTreeSet};

use crate::constraints::{ConstraintKind, ConstraintSet, Schema};
use crate::sql::{Atom, CmpOp, ColRef, Operand, Pred, Projection, QueryTemplate};
use crate::value::Value;

/// Default cap on enumerated candidates per query.
pub const DEFAULT_THRESHOLD: usize = 200;

/// Most atoms a single introduction candidate may add.
pub const MAX_INTRODUCED_ATOMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RuleKind {
    RemoveDistinct,
    AddLimitOne,
    PredicateElimination,
    PredicateIntroduction,
    JoinElimination,
    EmptySetDetection,
}

impl RuleKind {
    pub const ALL: [RuleKind; 6] = [
        RuleKind::RemoveDistinct,
        RuleKind::AddLimitOne,
        RuleKind::PredicateElimination,
        RuleKind::PredicateIntroduction,
        RuleKind::JoinElimination,
        RuleKind::EmptySetDetection,
    ];

    pub fn abbrev(&self) -> &'static str {
        match self {
            RuleKind::RemoveDistinct => "RD",
            RuleKind::AddLimitOne => "AL",
            RuleKind::PredicateElimination => "PE",
            RuleKind::PredicateIntroduction => "PI",
            RuleKind::JoinElimination => "JE",
            RuleKind::EmptySetDetection => "ES",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::RemoveDistinct => "remove-distinct",
            RuleKind::AddLimitOne => "add-limit-one",
            RuleKind::PredicateElimination => "predicate-elimination",
            RuleKind::PredicateIntroduction => "predicate-introduction",
            RuleKind::JoinElimination => "join-elimination",
            RuleKind::EmptySetDetection => "empty-set-detection",
        }
    }
}

/// A rule kind together with the constraints that made it applicable.
#[derive(Debug, Clone)]
pub struct RewriteRule {
    pub kind: RuleKind,
    /// Human-readable identities of the triggering constraints.
    pub triggers: Vec<String>,
}

/// One rewritten template plus the ordered rule kinds that produced it.
#[derive(Debug, Clone)]
pub struct RewriteCandidate {
    pub template: QueryTemplate,
    pub trace: Vec<RuleKind>,
    pub est_cost: Option<f64>,
}

impl RewriteCandidate {
    pub fn trace_string(&self) -> String {
        self.trace
            .iter()
            .map(RuleKind::abbrev)
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug)]
pub struct Enumeration {
    pub candidates: Vec<RewriteCandidate>,
    /// A discovered candidate was dropped because the threshold was full.
    pub truncated: bool,
    /// The predicate exceeded the DNF branch cap, so the predicate-shaped
    /// rules (elimination, introduction, empty-set) were skipped.
    pub predicate_rules_skipped: bool,
}

fn trigger_id(c: &crate::constraints::Constraint) -> String {
    let cols: Vec<String> = c
        .columns
        .iter()
        .map(|col| format!("{}.{}", c.table, col))
        .collect();
    format!("{}({})", c.kind.name(), cols.join(","))
}

/// Rules whose triggering constraint categories intersect the constraints
/// on the query's used fields.
///
/// Uniqueness enables remove-distinct and add-limit-one; Numerical enables
/// the predicate rules; Presence enables elimination and empty-set; a
/// ForeignKey paired with a Presence on the same column enables
/// join-elimination. An unsatisfiable inclusion also enables empty-set,
/// since it can only ever prove emptiness.
pub fn applicable_rules(
    t: &QueryTemplate,
    cs: &ConstraintSet,
    schema: &Schema,
) -> Vec<RewriteRule> {
    let used = t.used_fields(schema);
    let mut triggers: BTreeMap<RuleKind, BTreeSet<String>> = BTreeMap::new();
    let mut add = |kind: RuleKind, c: &crate::constraints::Constraint| {
        triggers.entry(kind).or_default().insert(trigger_id(c));
    };
    for c in cs.iter() {
        let on_used = c
            .referenced_columns()
            .iter()
            .any(|col| used.contains(&(c.table.clone(), col.clone())));
        if !on_used {
            continue;
        }
        match &c.kind {
            ConstraintKind::Uniqueness { .. } => {
                add(RuleKind::RemoveDistinct, c);
                add(RuleKind::AddLimitOne, c);
            }
            ConstraintKind::Numerical { .. } => {
                add(RuleKind::PredicateElimination, c);
                add(RuleKind::PredicateIntroduction, c);
                add(RuleKind::EmptySetDetection, c);
            }
            ConstraintKind::Presence => {
                add(RuleKind::PredicateElimination, c);
                add(RuleKind::EmptySetDetection, c);
            }
            ConstraintKind::ForeignKey { .. } => {
                let guarded = cs.iter().any(|p| {
                    matches!(p.kind, ConstraintKind::Presence)
                        && p.table == c.table
                        && p.columns == c.columns
                }) || schema_not_null(schema, &c.table, &c.columns);
                if guarded {
                    add(RuleKind::JoinElimination, c);
                }
            }
            ConstraintKind::Inclusion { values } => {
                if c.unsatisfiable || values.is_empty() {
                    add(RuleKind::EmptySetDetection, c);
                }
            }
            ConstraintKind::Length { .. } | ConstraintKind::Format { .. } => {}
        }
    }
    RuleKind::ALL
        .iter()
        .filter_map(|k| {
            triggers.get(k).map(|t| RewriteRule {
                kind: *k,
                triggers: t.iter().cloned().collect(),
            })
        })
        .collect()
}

fn schema_not_null(schema: &Schema, table: &str, columns: &[String]) -> bool {
    columns.iter().all(|col| {
        schema
            .column(table, col)
            .map(|c| !c.nullable)
            .unwrap_or(false)
    })
}

/// The DNF view of a template's predicate plus the constraint facts all
/// branches share.
pub struct DerivedIntervals {
    pub base: Context,
    pub branches: Vec<Branch>,
}

/// Build per-branch interval contexts. `None` when the predicate blows past
/// the DNF branch cap; callers then skip the predicate-shaped rules.
pub fn derive_intervals(
    t: &QueryTemplate,
    cs: &ConstraintSet,
    schema: &Schema,
) -> Option<DerivedIntervals> {
    let branches = to_dnf(&t.predicate)?;
    Some(DerivedIntervals {
        base: constraint_facts(t, cs, schema),
        branches,
    })
}

pub fn apply_remove_distinct(t: &QueryTemplate) -> Vec<QueryTemplate> {
    if !t.distinct {
        return Vec::new();
    }
    let mut out = t.clone();
    out.distinct = false;
    vec![out]
}

pub fn apply_add_limit_one(t: &QueryTemplate) -> Vec<QueryTemplate> {
    if t.limit.is_some() {
        return Vec::new();
    }
    let mut out = t.clone();
    out.limit = Some(1);
    vec![out]
}

/// True when the constraint-only context already guarantees the atom.
fn implied(ctx: &Context, a: &Atom) -> bool {
    match a {
        Atom::Const(b) => *b,
        Atom::IsNull { col, negated } => {
            let iv = col_interval(ctx, col);
            if *negated {
                iv.not_null
            } else {
                iv.must_null
            }
        }
        Atom::Cmp { left, op, right } => match (left, right) {
            (Operand::Col(c), Operand::Lit(v)) => {
                let iv = col_interval(ctx, c);
                iv.not_null && iv.always_satisfies(*op, v)
            }
            (Operand::Lit(v), Operand::Col(c)) => {
                let iv = col_interval(ctx, c);
                iv.not_null && iv.always_satisfies(op.flip(), v)
            }
            _ => false,
        },
        Atom::InList { col, items, negated } => {
            let iv = col_interval(ctx, col);
            if !iv.not_null {
                return false;
            }
            let lits: Vec<&Value> = items
                .iter()
                .filter_map(|o| match o {
                    Operand::Lit(v) => Some(v),
                    _ => None,
                })
                .collect();
            if lits.len() != items.len() {
                return false;
            }
            if *negated {
                lits.iter().all(|v| iv.always_satisfies(CmpOp::Ne, v))
            } else {
                match iv.feasible() {
                    Some(f) if !f.is_empty() => {
                        f.iter().all(|x| lits.iter().any(|v| *v == x))
                    }
                    _ => false,
                }
            }
        }
        Atom::InSubquery { .. } | Atom::Regex { .. } => false,
    }
}

fn col_interval(ctx: &Context, c: &ColRef) -> Interval {
    match &c.table {
        Some(t) => ctx.col_interval(t, &c.column),
        None => Interval::default(),
    }
}

/// One candidate per atom that the constraints guarantee on every branch
/// containing it. The atom is replaced by a constant and the tree folded.
pub fn apply_predicate_elimination(
    t: &QueryTemplate,
    iv: &DerivedIntervals,
) -> Vec<QueryTemplate> {
    // site -> (effective atom, negated, branch indexes)
    let mut sites: BTreeMap<usize, (Atom, bool, Vec<usize>)> = BTreeMap::new();
    for (bi, branch) in iv.branches.iter().enumerate() {
        for sa in branch {
            sites
                .entry(sa.site)
                .or_insert_with(|| (sa.atom.clone(), sa.negated_site, Vec::new()))
                .2
                .push(bi);
        }
    }
    let mut out = Vec::new();
    for (site, (atom, negated, in_branches)) in &sites {
        if matches!(atom, Atom::Const(_)) || is_equality_link(atom) {
            continue;
        }
        let everywhere = in_branches.iter().all(|bi| {
            let ctx = branch_context(&iv.base, t, &iv.branches[*bi], false, Some(*site));
            implied(&ctx, atom)
        });
        if !everywhere {
            continue;
        }
        let pred = interval::replace_site(&t.predicate, *site, !negated);
        let mut cand = t.clone();
        cand.predicate = pred;
        out.push(cand);
    }
    out
}

/// Column-column and column-parameter equalities knit the interval graph
/// together; eliminating them is out of scope.
fn is_equality_link(a: &Atom) -> bool {
    match a {
        Atom::Cmp { left, op, right } if *op == CmpOp::Eq => !matches!(
            (left, right),
            (Operand::Col(_), Operand::Lit(_)) | (Operand::Lit(_), Operand::Col(_))
        ),
        _ => false,
    }
}

fn hull_lo(acc: Option<Option<Bound>>, b: Option<Bound>) -> Option<Option<Bound>> {
    // Hull across branches: keep the weaker (smaller) lower bound.
    match acc {
        None => Some(b),
        Some(None) => Some(None),
        Some(Some(cur)) => Some(match b {
            None => None,
            Some(nb) => {
                let (cf, nf) = (cur.value.as_f64(), nb.value.as_f64());
                match (cf, nf) {
                    (Some(c), Some(n)) => {
                        if n < c || (n == c && nb.inclusive && !cur.inclusive) {
                            Some(nb)
                        } else {
                            Some(cur)
                        }
                    }
                    _ => None,
                }
            }
        }),
    }
}

fn hull_hi(acc: Option<Option<Bound>>, b: Option<Bound>) -> Option<Option<Bound>> {
    match acc {
        None => Some(b),
        Some(None) => Some(None),
        Some(Some(cur)) => Some(match b {
            None => None,
            Some(nb) => {
                let (cf, nf) = (cur.value.as_f64(), nb.value.as_f64());
                match (cf, nf) {
                    (Some(c), Some(n)) => {
                        if n > c || (n == c && nb.inclusive && !cur.inclusive) {
                            Some(nb)
                        } else {
                            Some(cur)
                        }
                    }
                    _ => None,
                }
            }
        }),
    }
}

fn lo_strictly_tighter(derived: &Option<Bound>, existing: &Option<Bound>) -> bool {
    match (derived, existing) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(d), Some(e)) => match (d.value.as_f64(), e.value.as_f64()) {
            (Some(df), Some(ef)) => df > ef || (df == ef && !d.inclusive && e.inclusive),
            _ => false,
        },
    }
}

fn hi_strictly_tighter(derived: &Option<Bound>, existing: &Option<Bound>) -> bool {
    match (derived, existing) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(d), Some(e)) => match (d.value.as_f64(), e.value.as_f64()) {
            (Some(df), Some(ef)) => df < ef || (df == ef && !d.inclusive && e.inclusive),
            _ => false,
        },
    }
}

/// Bounds the branch's own value atoms place on a column, without any
/// constraint or propagation input.
fn atom_bounds(branch: &Branch, table: &str, column: &str) -> (Option<Bound>, Option<Bound>) {
    let mut iv = Interval::default();
    for sa in branch {
        if let Atom::Cmp { left, op, right } = &sa.atom {
            let (col, op, v) = match (left, right) {
                (Operand::Col(c), Operand::Lit(v)) => (c, *op, v),
                (Operand::Lit(v), Operand::Col(c)) => (c, op.flip(), v),
                _ => continue,
            };
            if col.table.as_deref() != Some(table) || col.column != column {
                continue;
            }
            match op {
                CmpOp::Gt => iv.narrow_lo(v.clone(), false),
                CmpOp::Ge => iv.narrow_lo(v.clone(), true),
                CmpOp::Lt => iv.narrow_hi(v.clone(), false),
                CmpOp::Le => iv.narrow_hi(v.clone(), true),
                CmpOp::Eq => {
                    iv.narrow_lo(v.clone(), true);
                    iv.narrow_hi(v.clone(), true);
                }
                CmpOp::Ne => {}
            }
        }
    }
    (iv.lo, iv.hi)
}

/// One candidate per used column whose constraint-derived interval is
/// strictly tighter than what the predicate already says, adding the
/// tightest range atoms at the top level.
pub fn apply_predicate_introduction(
    t: &QueryTemplate,
    iv: &DerivedIntervals,
    schema: &Schema,
) -> Vec<QueryTemplate> {
    let mut out = Vec::new();
    for (table, column) in t.used_fields(schema) {
        // Hull across branches: a bound must hold on every branch to be
        // sound as a top-level conjunct.
        let mut d_lo: Option<Option<Bound>> = None;
        let mut d_hi: Option<Option<Bound>> = None;
        let mut e_lo: Option<Option<Bound>> = None;
        let mut e_hi: Option<Option<Bound>> = None;
        for branch in &iv.branches {
            let ctx = branch_context(&iv.base, t, branch, false, None);
            let derived = ctx.col_interval(&table, &column);
            d_lo = hull_lo(d_lo, derived.lo);
            d_hi = hull_hi(d_hi, derived.hi);
            let (alo, ahi) = atom_bounds(branch, &table, &column);
            e_lo = hull_lo(e_lo, alo);
            e_hi = hull_hi(e_hi, ahi);
        }
        let (d_lo, d_hi) = (d_lo.flatten(), d_hi.flatten());
        let (e_lo, e_hi) = (e_lo.flatten(), e_hi.flatten());
        let add_lo = lo_strictly_tighter(&d_lo, &e_lo);
        let add_hi = hi_strictly_tighter(&d_hi, &e_hi);
        if !add_lo && !add_hi {
            continue;
        }
        let col = ColRef::new(table.clone(), column.clone());
        let mut atoms: Vec<Atom> = Vec::new();
        match (&d_lo, &d_hi) {
            (Some(lo), Some(hi))
                if add_lo
                    && add_hi
                    && lo.inclusive
                    && hi.inclusive
                    && lo.value == hi.value =>
            {
                atoms.push(Atom::Cmp {
                    left: Operand::Col(col.clone()),
                    op: CmpOp::Eq,
                    right: Operand::Lit(lo.value.clone()),
                });
            }
            _ => {
                if add_lo {
                    let lo = d_lo.clone().expect("tighter lower bound exists");
                    atoms.push(Atom::Cmp {
                        left: Operand::Col(col.clone()),
                        op: if lo.inclusive { CmpOp::Ge } else { CmpOp::Gt },
                        right: Operand::Lit(lo.value),
                    });
                }
                if add_hi {
                    let hi = d_hi.clone().expect("tighter upper bound exists");
                    atoms.push(Atom::Cmp {
                        left: Operand::Col(col.clone()),
                        op: if hi.inclusive { CmpOp::Le } else { CmpOp::Lt },
                        right: Operand::Lit(hi.value),
                    });
                }
            }
        }
        atoms.retain(|a| !pred_contains_atom(&t.predicate, a));
        if atoms.is_empty() || atoms.len() > MAX_INTRODUCED_ATOMS {
            continue;
        }
        let mut parts = vec![t.predicate.clone()];
        parts.extend(atoms.into_iter().map(Pred::Atom));
        let mut cand = t.clone();
        cand.predicate = Pred::And(parts).simplify();
        out.push(cand);
    }
    out
}

fn pred_contains_atom(p: &Pred, a: &Atom) -> bool {
    match p {
        Pred::Atom(x) => x == a,
        Pred::Not(inner) => pred_contains_atom(inner, a),
        Pred::And(cs) | Pred::Or(cs) => cs.iter().any(|c| pred_contains_atom(c, a)),
    }
}

/// Drop an inner join `R.fk = S.pk` when a foreign key covers it, the fk
/// column cannot be NULL, and no other part of the query reads S.
pub fn apply_join_elimination(
    t: &QueryTemplate,
    cs: &ConstraintSet,
    schema: &Schema,
) -> Vec<QueryTemplate> {
    let mut out = Vec::new();
    for (idx, j) in t.joins.iter().enumerate() {
        let (s_col, r_col) = if j.left.table.as_deref() == Some(j.table.as_str()) {
            (&j.left, &j.right)
        } else if j.right.table.as_deref() == Some(j.table.as_str()) {
            (&j.right, &j.left)
        } else {
            continue;
        };
        let Some(r_table) = r_col.table.as_deref() else { continue };
        let fk_matches = cs.iter().any(|c| {
            matches!(
                &c.kind,
                ConstraintKind::ForeignKey { ref_table, ref_column }
                    if *ref_table == j.table && *ref_column == s_col.column
            ) && c.table == r_table
                && c.columns.len() == 1
                && c.columns[0] == r_col.column
        });
        if !fk_matches {
            continue;
        }
        let guarded = cs.iter().any(|c| {
            matches!(c.kind, ConstraintKind::Presence)
                && c.table == r_table
                && c.columns.len() == 1
                && c.columns[0] == r_col.column
        }) || schema_not_null(schema, r_table, std::slice::from_ref(&r_col.column));
        if !guarded {
            continue;
        }
        if table_used_elsewhere(t, idx, &j.table) {
            continue;
        }
        let mut cand = t.clone();
        cand.joins.remove(idx);
        out.push(cand);
    }
    out
}

fn table_used_elsewhere(t: &QueryTemplate, join_idx: usize, table: &str) -> bool {
    let col_hits = |c: &ColRef| c.table.as_deref() == Some(table);
    for p in &t.projections {
        match p {
            Projection::Star => return true,
            Projection::TableStar(tb) if tb == table => return true,
            Projection::Col(c) if col_hits(c) => return true,
            _ => {}
        }
    }
    for (i, j) in t.joins.iter().enumerate() {
        if i == join_idx {
            continue;
        }
        if j.table == table || col_hits(&j.left) || col_hits(&j.right) {
            return true;
        }
    }
    if pred_uses_table(&t.predicate, table) {
        return true;
    }
    t.group_by.iter().any(|c| col_hits(c)) || t.order_by.iter().any(|(c, _)| col_hits(c))
}

fn pred_uses_table(p: &Pred, table: &str) -> bool {
    fn operand_hits(o: &Operand, table: &str) -> bool {
        match o {
            Operand::Col(c) | Operand::Length(c) => c.table.as_deref() == Some(table),
            _ => false,
        }
    }
    match p {
        Pred::Atom(a) => match a {
            Atom::Cmp { left, right, .. } => {
                operand_hits(left, table) || operand_hits(right, table)
            }
            Atom::InList { col, items, .. } => {
                col.table.as_deref() == Some(table)
                    || items.iter().any(|o| operand_hits(o, table))
            }
            Atom::InSubquery { col, .. }
            | Atom::IsNull { col, .. }
            | Atom::Regex { col, .. } => col.table.as_deref() == Some(table),
            Atom::Const(_) => false,
        },
        Pred::Not(inner) => pred_uses_table(inner, table),
        Pred::And(cs) | Pred::Or(cs) => cs.iter().any(|c| pred_uses_table(c, table)),
    }
}

/// Replace the whole predicate with FALSE when no branch can ever be TRUE.
pub fn apply_empty_set_detection(
    t: &QueryTemplate,
    iv: &DerivedIntervals,
) -> Vec<QueryTemplate> {
    if t.predicate.is_const(false) {
        return Vec::new();
    }
    let all_dead = iv
        .branches
        .iter()
        .all(|b| branch_empty(&iv.base, t, b));
    if !all_dead {
        return Vec::new();
    }
    let mut cand = t.clone();
    cand.predicate = Pred::FALSE;
    vec![cand]
}

fn apply_rule(
    kind: RuleKind,
    t: &QueryTemplate,
    cs: &ConstraintSet,
    schema: &Schema,
    skipped: &mut bool,
) -> Vec<QueryTemplate> {
    match kind {
        RuleKind::RemoveDistinct => apply_remove_distinct(t),
        RuleKind::AddLimitOne => apply_add_limit_one(t),
        RuleKind::JoinElimination => apply_join_elimination(t, cs, schema),
        RuleKind::PredicateElimination
        | RuleKind::PredicateIntroduction
        | RuleKind::EmptySetDetection => match derive_intervals(t, cs, schema) {
            None => {
                *skipped = true;
                Vec::new()
            }
            Some(iv) => match kind {
                RuleKind::PredicateElimination => apply_predicate_elimination(t, &iv),
                RuleKind::PredicateIntroduction => apply_predicate_introduction(t, &iv, schema),
                _ => apply_empty_set_detection(t, &iv),
            },
        },
    }
}

/// Breadth-first enumeration: one layer per applicable rule kind, each
/// layer feeding on the original plus everything accumulated so far.
/// Candidates never include the original; order is layer order, then
/// fingerprint within a layer.
pub fn enumerate_rewrites(
    t: &QueryTemplate,
    cs: &ConstraintSet,
    schema: &Schema,
    threshold: usize,
) -> Enumeration {
    let rules = applicable_rules(t, cs, schema);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(t.fingerprint());
    let mut out: Vec<RewriteCandidate> = Vec::new();
    let mut truncated = false;
    let mut skipped = false;
    'layers: for rule in &rules {
        let mut layer: Vec<RewriteCandidate> = Vec::new();
        let original = RewriteCandidate {
            template: t.clone(),
            trace: Vec::new(),
            est_cost: None,
        };
        for base in std::iter::once(&original).chain(out.iter()) {
            for rewritten in apply_rule(rule.kind, &base.template, cs, schema, &mut skipped) {
                let fp = rewritten.fingerprint();
                if seen.contains(&fp) || layer.iter().any(|c| c.template.fingerprint() == fp) {
                    continue;
                }
                if out.len() + layer.len() >= threshold {
                    truncated = true;
                    break 'layers;
                }
                seen.insert(fp);
                let mut trace = base.trace.clone();
                trace.push(rule.kind);
                layer.push(RewriteCandidate {
                    template: rewritten,
                    trace,
                    est_cost: None,
                });
            }
        }
        layer.sort_by_key(|c| c.template.fingerprint());
        out.extend(layer);
    }
    Enumeration {
        candidates: out,
        truncated,
        predicate_rules_skipped: skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{Constraint, ConstraintSource, NumBound};
    use crate::sql::parse_template;

    fn schema() -> Schema {
        Schema::from_json(
            r#"{"tables":[
                {"name":"users","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"status","type":"integer","nullable":false},
                    {"name":"email","type":"text"},
                    {"name":"login","type":"text"}]},
                {"name":"members","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"user_id","type":"integer","nullable":false},
                    {"name":"project_id","type":"integer","nullable":false}]},
                {"name":"wikipages","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"project_id","type":"integer","nullable":false},
                    {"name":"title","type":"text","nullable":false}]},
                {"name":"projects","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"name","type":"text"}]},
                {"name":"items","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"qty","type":"integer","nullable":false},
                    {"name":"grade","type":"integer"},
                    {"name":"tag","type":"text"}]}]}"#,
        )
        .unwrap()
    }

    fn uniq(table: &str, cols: &[&str]) -> Constraint {
        Constraint::new(
            table,
            cols.iter().map(|s| s.to_string()).collect(),
            ConstraintKind::Uniqueness {
                scope: vec![],
                predicate: None,
            },
            ConstraintSource::BuiltinValidation,
        )
    }

    fn numeric(table: &str, col: &str, lo: Option<(i64, bool)>, hi: Option<(i64, bool)>) -> Constraint {
        Constraint::new(
            table,
            vec![col.to_string()],
            ConstraintKind::Numerical {
                lower: lo.map(|(v, i)| NumBound::new(Value::Int(v), i)),
                upper: hi.map(|(v, i)| NumBound::new(Value::Int(v), i)),
                equal: None,
            },
            ConstraintSource::BuiltinValidation,
        )
    }

    fn presence(table: &str, col: &str) -> Constraint {
        Constraint::new(
            table,
            vec![col.to_string()],
            ConstraintKind::Presence,
            ConstraintSource::BuiltinValidation,
        )
    }

    fn fk(table: &str, col: &str, ref_table: &str, ref_col: &str) -> Constraint {
        Constraint::new(
            table,
            vec![col.to_string()],
            ConstraintKind::ForeignKey {
                ref_table: ref_table.to_string(),
                ref_column: ref_col.to_string(),
            },
            ConstraintSource::DbDeclared,
        )
    }

    fn resolved(sql: &str) -> QueryTemplate {
        parse_template(sql).unwrap().resolve(&schema()).unwrap()
    }

    fn membership_query() -> QueryTemplate {
        resolved(
            "SELECT DISTINCT users.* FROM users \
             INNER JOIN members ON members.user_id = users.id \
             WHERE users.status = $1 AND members.project_id = $2",
        )
    }

    fn membership_cs() -> ConstraintSet {
        ConstraintSet::new(vec![
            uniq("users", &["id"]),
            uniq("members", &["user_id", "project_id"]),
        ])
    }

    #[test]
    fn distinct_membership_lookup_yields_three_candidates() {
        let t = membership_query();
        let e = enumerate_rewrites(&t, &membership_cs(), &schema(), DEFAULT_THRESHOLD);
        assert!(!e.truncated);
        let traces: Vec<String> = e.candidates.iter().map(|c| c.trace_string()).collect();
        assert_eq!(e.candidates.len(), 3, "traces: {traces:?}");
        assert_eq!(traces[0], "RD");
        let mut rest = vec![traces[1].clone(), traces[2].clone()];
        rest.sort();
        assert_eq!(rest, vec!["AL", "RD+AL"]);
        assert!(!e.candidates[0].template.distinct);
        assert!(e
            .candidates
            .iter()
            .all(|c| c.template.fingerprint() != t.fingerprint()));
    }

    #[test]
    fn threshold_one_truncates() {
        let t = membership_query();
        let e = enumerate_rewrites(&t, &membership_cs(), &schema(), 1);
        assert_eq!(e.candidates.len(), 1);
        assert!(e.truncated);
    }

    #[test]
    fn unconstrained_query_has_no_rules_or_candidates() {
        let t = membership_query();
        let none = ConstraintSet::new(vec![]);
        assert!(applicable_rules(&t, &none, &schema()).is_empty());
        let e = enumerate_rewrites(&t, &none, &schema(), DEFAULT_THRESHOLD);
        assert!(e.candidates.is_empty());
        assert!(!e.truncated);
    }

    #[test]
    fn rules_respect_trigger_categories() {
        let t = resolved("SELECT items.id FROM items WHERE items.qty > 0");
        let cs = ConstraintSet::new(vec![numeric("items", "qty", Some((1, true)), None)]);
        let kinds: Vec<RuleKind> = applicable_rules(&t, &cs, &schema())
            .iter()
            .map(|r| r.kind)
            .collect();
        assert_eq!(
            kinds,
            vec![
                RuleKind::PredicateElimination,
                RuleKind::PredicateIntroduction,
                RuleKind::EmptySetDetection
            ]
        );
        // Constraint on a column the query never touches: nothing fires.
        let off = ConstraintSet::new(vec![numeric("items", "grade", Some((1, true)), None)]);
        assert!(applicable_rules(&t, &off, &schema()).is_empty());
    }

    #[test]
    fn eliminates_atom_guaranteed_by_range_constraint() {
        let t = resolved("SELECT items.id FROM items WHERE items.qty > 0 AND items.tag = $1");
        let cs = ConstraintSet::new(vec![numeric("items", "qty", Some((1, true)), None)]);
        let iv = derive_intervals(&t, &cs, &schema()).unwrap();
        let cands = apply_predicate_elimination(&t, &iv);
        assert_eq!(cands.len(), 1);
        assert_eq!(
            cands[0].render(),
            "SELECT items.id FROM items WHERE items.tag = $1"
        );
    }

    #[test]
    fn eliminates_not_null_check_under_presence() {
        let t = resolved("SELECT users.id FROM users WHERE users.email IS NOT NULL");
        let cs = ConstraintSet::new(vec![presence("users", "email")]);
        let iv = derive_intervals(&t, &cs, &schema()).unwrap();
        let cands = apply_predicate_elimination(&t, &iv);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].render(), "SELECT users.id FROM users");
    }

    #[test]
    fn no_elimination_when_column_may_be_null() {
        // grade is nullable and has no presence constraint: dropping the
        // range check would admit NULL rows that 3VL currently filters.
        let t = resolved("SELECT items.id FROM items WHERE items.grade >= 0");
        let cs = ConstraintSet::new(vec![numeric("items", "grade", Some((0, true)), None)]);
        let iv = derive_intervals(&t, &cs, &schema()).unwrap();
        assert!(apply_predicate_elimination(&t, &iv).is_empty());
    }

    #[test]
    fn elimination_respects_every_branch() {
        // qty >= 1 implies qty > 0 in its branch, and the other branch does
        // not contain that site at all, so removal is still sound.
        let t = resolved(
            "SELECT items.id FROM items WHERE items.qty > 0 OR items.tag = 'x'",
        );
        let cs = ConstraintSet::new(vec![numeric("items", "qty", Some((1, true)), None)]);
        let iv = derive_intervals(&t, &cs, &schema()).unwrap();
        let cands = apply_predicate_elimination(&t, &iv);
        assert_eq!(cands.len(), 1);
        // TRUE OR x folds to no WHERE clause at all.
        assert_eq!(cands[0].render(), "SELECT items.id FROM items");
    }

    #[test]
    fn introduces_bounds_propagated_through_join_equality() {
        let t = resolved(
            "SELECT items.id FROM items \
             INNER JOIN members ON items.qty = members.project_id \
             WHERE items.tag = $1",
        );
        let cs = ConstraintSet::new(vec![numeric(
            "items",
            "qty",
            Some((1, true)),
            Some((10, true)),
        )]);
        let iv = derive_intervals(&t, &cs, &schema()).unwrap();
        let cands = apply_predicate_introduction(&t, &iv, &schema());
        let rendered: Vec<String> = cands.iter().map(|c| c.render()).collect();
        assert!(
            rendered.iter().any(|s| s.contains(
                "members.project_id >= 1 AND members.project_id <= 10"
            )),
            "{rendered:?}"
        );
        assert!(
            rendered
                .iter()
                .any(|s| s.contains("items.qty >= 1 AND items.qty <= 10")),
            "{rendered:?}"
        );
    }

    #[test]
    fn introduction_skips_bounds_already_written() {
        let t = resolved("SELECT items.id FROM items WHERE items.qty >= 1 AND items.qty <= 10");
        let cs = ConstraintSet::new(vec![numeric(
            "items",
            "qty",
            Some((1, true)),
            Some((10, true)),
        )]);
        let iv = derive_intervals(&t, &cs, &schema()).unwrap();
        assert!(apply_predicate_introduction(&t, &iv, &schema()).is_empty());
    }

    #[test]
    fn removes_join_nothing_else_reads() {
        let t = resolved(
            "SELECT wikipages.* FROM wikipages \
             INNER JOIN projects ON wikipages.project_id = projects.id \
             WHERE wikipages.title = $1",
        );
        let cs = ConstraintSet::new(vec![
            fk("wikipages", "project_id", "projects", "id"),
            presence("wikipages", "project_id"),
        ]);
        let cands = apply_join_elimination(&t, &cs, &schema());
        assert_eq!(cands.len(), 1);
        assert_eq!(
            cands[0].render(),
            "SELECT wikipages.* FROM wikipages WHERE wikipages.title = $1"
        );
    }

    #[test]
    fn join_kept_when_its_columns_are_read() {
        let t = resolved(
            "SELECT wikipages.id, projects.name FROM wikipages \
             INNER JOIN projects ON wikipages.project_id = projects.id",
        );
        let cs = ConstraintSet::new(vec![
            fk("wikipages", "project_id", "projects", "id"),
            presence("wikipages", "project_id"),
        ]);
        assert!(apply_join_elimination(&t, &cs, &schema()).is_empty());
    }

    #[test]
    fn join_kept_without_presence_guarantee() {
        let t = resolved(
            "SELECT items.id FROM items \
             INNER JOIN projects ON items.grade = projects.id",
        );
        let cs = ConstraintSet::new(vec![fk("items", "grade", "projects", "id")]);
        assert!(apply_join_elimination(&t, &cs, &schema()).is_empty());
    }

    #[test]
    fn detects_predicate_outside_constraint_range() {
        let t = resolved("SELECT items.id FROM items WHERE items.qty > 200");
        let cs = ConstraintSet::new(vec![numeric(
            "items",
            "qty",
            Some((1, true)),
            Some((10, true)),
        )]);
        let iv = derive_intervals(&t, &cs, &schema()).unwrap();
        let cands = apply_empty_set_detection(&t, &iv);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].render(), "SELECT items.id FROM items WHERE FALSE");
        // One live branch keeps the query alive.
        let t2 = resolved("SELECT items.id FROM items WHERE items.qty > 200 OR items.qty < 5");
        let iv2 = derive_intervals(&t2, &cs, &schema()).unwrap();
        assert!(apply_empty_set_detection(&t2, &iv2).is_empty());
    }

    #[test]
    fn enumeration_covers_all_single_rule_candidates() {
        let t = resolved(
            "SELECT DISTINCT items.id FROM items WHERE items.qty > 0 AND items.tag = $1",
        );
        let cs = ConstraintSet::new(vec![
            uniq("items", &["id"]),
            numeric("items", "qty", Some((1, true)), Some((10, true))),
        ]);
        let e = enumerate_rewrites(&t, &cs, &schema(), DEFAULT_THRESHOLD);
        let singles: BTreeSet<String> = e
            .candidates
            .iter()
            .filter(|c| c.trace.len() == 1)
            .map(|c| c.template.fingerprint())
            .collect();
        let iv = derive_intervals(&t, &cs, &schema()).unwrap();
        let mut expected: Vec<QueryTemplate> = Vec::new();
        expected.extend(apply_remove_distinct(&t));
        expected.extend(apply_add_limit_one(&t));
        expected.extend(apply_predicate_elimination(&t, &iv));
        expected.extend(apply_predicate_introduction(&t, &iv, &schema()));
        expected.extend(apply_join_elimination(&t, &cs, &schema()));
        expected.extend(apply_empty_set_detection(&t, &iv));
        assert!(!expected.is_empty());
        for q in expected {
            assert!(
                singles.contains(&q.fingerprint()),
                "missing single-rule candidate {}",
                q.render()
            );
        }
    }

    #[test]
    fn interval_derivation_is_monotone_in_constraints() {
        let t = resolved("SELECT items.id FROM items WHERE items.qty > 3 AND items.tag = $1");
        let weak = ConstraintSet::new(vec![numeric("items", "qty", Some((1, true)), None)]);
        let strong = ConstraintSet::new(vec![
            numeric("items", "qty", Some((1, true)), None),
            numeric("items", "qty", None, Some((8, true))),
        ]);
        let sch = schema();
        let ivw = derive_intervals(&t, &weak, &sch).unwrap();
        let ivs = derive_intervals(&t, &strong, &sch).unwrap();
        for (bw, bs) in ivw.branches.iter().zip(ivs.branches.iter()) {
            let cw = branch_context(&ivw.base, &t, bw, true, None).col_interval("items", "qty");
            let cs_ = branch_context(&ivs.base, &t, bs, true, None).col_interval("items", "qty");
            let wf = cw.hi.as_ref().map(|b| b.value.as_f64().unwrap());
            let sf = cs_.hi.as_ref().map(|b| b.value.as_f64().unwrap());
            match (wf, sf) {
                (None, _) => {}
                (Some(w), Some(s)) => assert!(s <= w),
                (Some(_), None) => panic!("adding a constraint widened the interval"),
            }
            assert!(cw.lo == cs_.lo || cs_.lo.as_ref().unwrap().value.as_f64() >= cw.lo.as_ref().unwrap().value.as_f64());
        }
    }

    #[test]
    fn trace_strings_join_abbreviations() {
        let c = RewriteCandidate {
            template: membership_query(),
            trace: vec![RuleKind::RemoveDistinct, RuleKind::AddLimitOne],
            est_cost: None,
        };
        assert_eq!(c.trace_string(), "RD+AL");
    }
}
