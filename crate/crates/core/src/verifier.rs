//! Bounded exhaustive equivalence certification.
//!
//! A candidate rewrite is certified against its original by enumerating
//! every database over a small symbolic value domain with at most `bound`
//! rows per referenced table that satisfies the constraint set, and every
//! parameter valuation over the same domains, then comparing result bags.
//! Verdicts are certificates only up to the bound: a pass means no small
//! counterexample exists, which is the working standard the rest of the
//! pipeline relies on (a false rejection merely loses an optimization).
//!
//! To keep the space tractable:
//! - columns not referenced by the query pair, nor pulled in by a
//!   constraint touching a referenced column, are pruned from enumeration
//!   and restored afterwards when a counterexample is materialized;
//! - columns linked by equality atoms or foreign keys share a value
//!   domain ("family"), seeded from constraint boundaries and literals
//!   appearing in either query;
//! - instances that differ only by renaming values of a family that no
//!   literal or value constraint can distinguish are enumerated once,
//!   by keeping the first-appearance-canonical representative.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::constraints::{
    numeric_range, Constraint, ConstraintKind, ConstraintSet, Schema, TableDef,
};
use crate::rewriter::{Bound, Node, RewriteCandidate, RuleKind};
use crate::sql::{Atom, ColRef, Operand, Pred, QueryTemplate};
use crate::testbed::{bag_equal, evaluate, Database};
use crate::value::{ColumnType, Value};

pub const DEFAULT_BOUND: usize = 3;
pub const DEFAULT_CEILING: f64 = 1e7;

/// Deterministic seed for the text samplers used in domain construction
/// and witness extension; verdicts must not vary across runs.
const DOMAIN_SEED: u64 = 0x5EED_D06E;

#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    /// Max rows per referenced table.
    pub bound: usize,
    /// Max raw (instance x valuation) combinations before filtering.
    pub ceiling: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            bound: DEFAULT_BOUND,
            ceiling: DEFAULT_CEILING,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Verdict {
    EquivalentUpToBound { bound: usize },
    NotEquivalent { instance: Database, params: Vec<Value> },
    Skipped { reason: String },
}

impl Verdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Verdict::EquivalentUpToBound { .. })
    }

    /// One-line description for reports.
    pub fn describe(&self) -> String {
        match self {
            Verdict::EquivalentUpToBound { bound } => {
                format!("equivalent-up-to-bound({bound})")
            }
            Verdict::NotEquivalent { instance, params } => {
                let rows: usize = instance.tables.values().map(Vec::len).sum();
                format!("not-equivalent (witness: {rows} rows, params {params:?})")
            }
            Verdict::Skipped { reason } => format!("skipped: {reason}"),
        }
    }
}

/// Everything needed to certify one candidate against its original.
pub struct VerificationTask<'a> {
    pub original: &'a QueryTemplate,
    pub candidate: &'a RewriteCandidate,
    pub cs: &'a ConstraintSet,
    pub schema: &'a Schema,
    pub config: VerifyConfig,
}

impl VerificationTask<'_> {
    pub fn run(&self) -> Verdict {
        verify_equivalence(self.original, self.candidate, self.cs, self.schema, &self.config)
    }
}

#[derive(Debug)]
pub struct BatchOutcome {
    /// Index into the input slice of the first certified candidate.
    pub winner: Option<usize>,
    /// (input index, verdict) for every candidate tried, in tried order.
    pub attempts: Vec<(usize, Verdict)>,
}

/// Try candidates cheapest-first and stop at the first certified one.
/// A skip counts as a failure for that candidate.
pub fn verify_batch(
    original: &QueryTemplate,
    candidates: &[RewriteCandidate],
    cs: &ConstraintSet,
    schema: &Schema,
    config: &VerifyConfig,
) -> BatchOutcome {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = candidates[a].est_cost.unwrap_or(f64::INFINITY);
        let cb = candidates[b].est_cost.unwrap_or(f64::INFINITY);
        ca.partial_cmp(&cb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                candidates[a]
                    .template
                    .fingerprint()
                    .cmp(&candidates[b].template.fingerprint())
            })
    });
    let mut attempts = Vec::new();
    for i in order {
        let verdict = verify_equivalence(original, &candidates[i], cs, schema, config);
        let won = verdict.is_equivalent();
        attempts.push((i, verdict));
        if won {
            return BatchOutcome { winner: Some(i), attempts };
        }
    }
    BatchOutcome { winner: None, attempts }
}

pub fn verify_equivalence(
    original: &QueryTemplate,
    candidate: &RewriteCandidate,
    cs: &ConstraintSet,
    schema: &Schema,
    config: &VerifyConfig,
) -> Verdict {
    if config.bound == 0 {
        return Verdict::Skipped { reason: "bound must be at least 1".into() };
    }
    if has_subquery(original) || has_subquery(&candidate.template) {
        return Verdict::Skipped { reason: "IN-subquery templates are not certified".into() };
    }
    if candidate.template.param_count() > original.param_count() {
        return Verdict::Skipped { reason: "candidate declares more parameters than the original".into() };
    }
    let plan = match Plan::build(original, candidate, cs, schema, config) {
        Ok(p) => p,
        Err(reason) => return Verdict::Skipped { reason },
    };
    match plan.search() {
        Ok(None) => Verdict::EquivalentUpToBound { bound: config.bound },
        Ok(Some((instance, params))) => match plan.extend_witness(&instance) {
            Ok(full) => Verdict::NotEquivalent { instance: full, params },
            Err(e) => Verdict::Skipped { reason: format!("witness extension failed: {e}") },
        },
        Err(reason) => Verdict::Skipped { reason },
    }
}

fn has_subquery(t: &QueryTemplate) -> bool {
    fn walk(p: &Pred) -> bool {
        match p {
            Pred::Atom(a) => matches!(a, Atom::InSubquery { .. }),
            Pred::Not(x) => walk(x),
            Pred::And(cs) | Pred::Or(cs) => cs.iter().any(walk),
        }
    }
    walk(&t.predicate)
}

/// Value restrictions one column carries (constraints plus column type).
#[derive(Debug, Clone, Default)]
struct Facts {
    include: Option<BTreeSet<Value>>,
    lo: Option<Bound>,
    hi: Option<Bound>,
    len_min: Option<u64>,
    len_max: Option<u64>,
    formats: Vec<(String, bool)>,
}

impl Facts {
    fn trivial(&self) -> bool {
        self.include.is_none()
            && self.lo.is_none()
            && self.hi.is_none()
            && self.len_min.is_none()
            && self.len_max.is_none()
            && self.formats.is_empty()
    }

    fn merge(&mut self, other: &Facts) {
        if let Some(set) = &other.include {
            self.include = Some(match self.include.take() {
                None => set.clone(),
                Some(cur) => cur.intersection(set).cloned().collect(),
            });
        }
        if let Some(b) = &other.lo {
            if self.lo.as_ref().map_or(true, |cur| bound_gt(b, cur)) {
                self.lo = Some(b.clone());
            }
        }
        if let Some(b) = &other.hi {
            if self.hi.as_ref().map_or(true, |cur| bound_lt(b, cur)) {
                self.hi = Some(b.clone());
            }
        }
        self.len_min = match (self.len_min, other.len_min) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        self.len_max = match (self.len_max, other.len_max) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        for f in &other.formats {
            if !self.formats.contains(f) {
                self.formats.push(f.clone());
            }
        }
    }

    fn allows(&self, v: &Value) -> bool {
        if v.is_null() {
            return true;
        }
        if let Some(set) = &self.include {
            if !set.contains(v) {
                return false;
            }
        }
        if let Some(b) = &self.lo {
            match v.sql_cmp(&b.value) {
                Some(o) if o.is_gt() || (o.is_eq() && b.inclusive) => {}
                _ => return false,
            }
        }
        if let Some(b) = &self.hi {
            match v.sql_cmp(&b.value) {
                Some(o) if o.is_lt() || (o.is_eq() && b.inclusive) => {}
                _ => return false,
            }
        }
        if self.len_min.is_some() || self.len_max.is_some() || !self.formats.is_empty() {
            let Value::Text(s) = v else { return false };
            let n = s.chars().count() as u64;
            if self.len_min.is_some_and(|m| n < m) || self.len_max.is_some_and(|m| n > m) {
                return false;
            }
            for (pattern, ci) in &self.formats {
                match regex::RegexBuilder::new(pattern).case_insensitive(*ci).build() {
                    Ok(re) if re.is_match(s) => {}
                    _ => return false,
                }
            }
        }
        true
    }
}

fn bound_gt(a: &Bound, b: &Bound) -> bool {
    let (x, y) = (a.value.as_f64(), b.value.as_f64());
    match (x, y) {
        (Some(x), Some(y)) => x > y || (x == y && !a.inclusive && b.inclusive),
        _ => false,
    }
}

fn bound_lt(a: &Bound, b: &Bound) -> bool {
    let (x, y) = (a.value.as_f64(), b.value.as_f64());
    match (x, y) {
        (Some(x), Some(y)) => x < y || (x == y && !a.inclusive && b.inclusive),
        _ => false,
    }
}

fn col_facts(table: &str, column: &str, cs: &[Constraint], schema: &Schema) -> Facts {
    let mut f = Facts::default();
    if let Some(ColumnType::Enum(vs)) = schema.column(table, column).map(|c| &c.ty) {
        f.include = Some(vs.iter().map(|s| Value::Text(s.clone())).collect());
    }
    for c in cs {
        if c.table != table || c.columns.len() != 1 || c.columns[0] != column {
            continue;
        }
        let mut add = Facts::default();
        match &c.kind {
            ConstraintKind::Inclusion { values } => {
                add.include = Some(values.iter().cloned().collect());
            }
            ConstraintKind::Numerical { .. } => {
                let (lo, hi) = numeric_range(&c.kind);
                add.lo = lo.map(|b| Bound { value: b.value, inclusive: b.inclusive });
                add.hi = hi.map(|b| Bound { value: b.value, inclusive: b.inclusive });
            }
            ConstraintKind::Length { min, max } => {
                add.len_min = *min;
                add.len_max = *max;
            }
            ConstraintKind::Format { patterns } => {
                add.formats = patterns
                    .iter()
                    .map(|p| (p.pattern.clone(), p.case_insensitive))
                    .collect();
            }
            _ => continue,
        }
        if c.unsatisfiable {
            add.include = Some(BTreeSet::new());
        }
        f.merge(&add);
    }
    f
}

/// Cast a domain value into a column's type where a lossless reading
/// exists; `None` drops the value from that column's options.
fn cast_for(v: &Value, ty: &ColumnType) -> Option<Value> {
    if v.fits(ty) {
        return Some(v.clone());
    }
    match (v, ty) {
        (Value::Int(i), ColumnType::Float) => Some(Value::Float(*i as f64)),
        (Value::Int(i), ColumnType::Timestamp) => Some(Value::Timestamp(*i)),
        (Value::Timestamp(t), ColumnType::Integer) => Some(Value::Int(*t)),
        (Value::Float(f), ColumnType::Integer) if f.fract() == 0.0 => Some(Value::Int(*f as i64)),
        _ => None,
    }
}

/// Up to three constraint-respecting values for a family, boundary-first.
fn seed_domain(ty: &ColumnType, facts: &Facts, rng: &mut ChaCha8Rng) -> Vec<Value> {
    if let Some(set) = &facts.include {
        return set.iter().filter(|v| facts.allows(v)).take(3).cloned().collect();
    }
    match ty {
        ColumnType::Integer | ColumnType::Timestamp => {
            let lo = facts.lo.as_ref().and_then(|b| {
                b.value.as_f64().map(|f| if b.inclusive { f.ceil() } else { f.floor() + 1.0 })
            });
            let hi = facts.hi.as_ref().and_then(|b| {
                b.value.as_f64().map(|f| if b.inclusive { f.floor() } else { f.ceil() - 1.0 })
            });
            let raw: Vec<i64> = match (lo, hi) {
                (None, None) => vec![1, 2, 3],
                (Some(l), None) => vec![l as i64, l as i64 + 1, l as i64 + 2],
                (None, Some(h)) => vec![h as i64 - 2, h as i64 - 1, h as i64],
                (Some(l), Some(h)) => vec![l as i64, l as i64 + 1, h as i64],
            };
            let mut out: Vec<i64> = raw
                .into_iter()
                .filter(|v| lo.map_or(true, |l| *v as f64 >= l) && hi.map_or(true, |h| *v as f64 <= h))
                .collect();
            out.sort_unstable();
            out.dedup();
            out.into_iter()
                .map(|v| match ty {
                    ColumnType::Timestamp => Value::Timestamp(v),
                    _ => Value::Int(v),
                })
                .take(3)
                .collect()
        }
        ColumnType::Float => {
            let lo = facts.lo.as_ref().and_then(|b| {
                b.value.as_f64().map(|f| if b.inclusive { f } else { f + 0.25 })
            });
            let hi = facts.hi.as_ref().and_then(|b| {
                b.value.as_f64().map(|f| if b.inclusive { f } else { f - 0.25 })
            });
            let raw = match (lo, hi) {
                (None, None) => vec![1.0, 2.0, 3.0],
                (Some(l), None) => vec![l, l + 1.0, l + 2.0],
                (None, Some(h)) => vec![h - 2.0, h - 1.0, h],
                (Some(l), Some(h)) => vec![l, (l + h) / 2.0, h],
            };
            let mut out: Vec<f64> = raw
                .into_iter()
                .filter(|v| lo.map_or(true, |l| *v >= l) && hi.map_or(true, |h| *v <= h))
                .collect();
            out.sort_by(f64::total_cmp);
            out.dedup_by(|a, b| a == b);
            out.into_iter().map(Value::Float).take(3).collect()
        }
        ColumnType::Boolean => vec![Value::Bool(false), Value::Bool(true)],
        ColumnType::Text | ColumnType::Enum(_) => {
            if !facts.formats.is_empty() {
                let mut seen = BTreeSet::new();
                for _ in 0..120 {
                    let Ok(s) = crate::testbed::sample_pattern(
                        &facts.formats[0].0,
                        facts.formats[0].1,
                        rng,
                    ) else {
                        break;
                    };
                    let v = Value::Text(s);
                    if facts.allows(&v) {
                        seen.insert(v);
                        if seen.len() == 3 {
                            break;
                        }
                    }
                }
                return seen.into_iter().collect();
            }
            let min = facts.len_min.unwrap_or(1).max(1) as usize;
            let max = facts.len_max.unwrap_or(min as u64 + 2) as usize;
            let mut out = Vec::new();
            for (i, suffix) in ['a', 'b', 'c'].into_iter().enumerate() {
                let len = (min + i).min(max.max(min));
                let mut s = "a".repeat(len.saturating_sub(1));
                s.push(suffix);
                let v = Value::Text(s);
                if facts.allows(&v) && !out.contains(&v) {
                    out.push(v);
                }
            }
            out
        }
    }
}

/// Literal values a query compares against columns, with integer/float
/// neighbors so range boundaries get probed.
fn literal_probes(t: &QueryTemplate, member: &BTreeSet<(String, String)>) -> Vec<Value> {
    let mut out = Vec::new();
    let mut on_member = |c: &ColRef| {
        c.table
            .as_ref()
            .map(|tb| member.contains(&(tb.clone(), c.column.clone())))
            .unwrap_or(false)
    };
    let mut add = |v: &Value, out: &mut Vec<Value>| {
        match v {
            Value::Int(i) => {
                out.push(Value::Int(i - 1));
                out.push(Value::Int(*i));
                out.push(Value::Int(i + 1));
            }
            Value::Float(f) => {
                out.push(Value::Float(f - 0.25));
                out.push(Value::Float(*f));
                out.push(Value::Float(f + 0.25));
            }
            other => out.push(other.clone()),
        }
    };
    fn walk(
        p: &Pred,
        on_member: &mut dyn FnMut(&ColRef) -> bool,
        add: &mut dyn FnMut(&Value, &mut Vec<Value>),
        out: &mut Vec<Value>,
    ) {
        match p {
            Pred::Atom(a) => match a {
                Atom::Cmp { left, right, .. } => match (left, right) {
                    (Operand::Col(c), Operand::Lit(v)) | (Operand::Lit(v), Operand::Col(c)) => {
                        if on_member(c) {
                            add(v, out);
                        }
                    }
                    _ => {}
                },
                Atom::InList { col, items, .. } => {
                    if on_member(col) {
                        for it in items {
                            if let Operand::Lit(v) = it {
                                add(v, out);
                            }
                        }
                    }
                }
                _ => {}
            },
            Pred::Not(x) => walk(x, on_member, add, out),
            Pred::And(cs) | Pred::Or(cs) => {
                for c in cs {
                    walk(c, on_member, add, out);
                }
            }
        }
    }
    walk(&t.predicate, &mut on_member, &mut add, &mut out);
    out
}

#[derive(Debug)]
struct Family {
    members: Vec<(String, String)>,
    domain: Vec<Value>,
    free: bool,
}

#[derive(Debug)]
struct Slot {
    name: String,
    ty: ColumnType,
    options: Vec<Value>,
}

struct Space {
    table: String,
    slots: Vec<Slot>,
    per_row: u64,
    total: u64,
    bound: usize,
}

impl Space {
    fn decode(&self, mut idx: u64) -> Vec<Vec<Value>> {
        let mut rows_n = 0;
        let mut block = 1u64;
        for r in 0..=self.bound {
            if idx < block {
                rows_n = r;
                break;
            }
            idx -= block;
            block = block.saturating_mul(self.per_row);
        }
        let mut rows = Vec::with_capacity(rows_n);
        for _ in 0..rows_n {
            let mut row = Vec::with_capacity(self.slots.len());
            for slot in &self.slots {
                let k = slot.options.len() as u64;
                row.push(slot.options[(idx % k) as usize].clone());
                idx /= k;
            }
            rows.push(row);
        }
        rows
    }
}

/// A uniqueness constraint resolved to slot indexes for the fast path.
struct UniqCheck {
    space: usize,
    key: Vec<usize>,
    predicate: Option<(usize, crate::constraints::ScopePredicate)>,
}

struct FkCheck {
    child_space: usize,
    child_slot: usize,
    parent_space: usize,
    parent_slot: usize,
}

struct Plan<'a> {
    original: &'a QueryTemplate,
    candidate: &'a RewriteCandidate,
    cs: &'a ConstraintSet,
    schema: &'a Schema,
    reduced: Schema,
    spaces: Vec<Space>,
    families: Vec<Family>,
    /// For each free family, its slot positions per space.
    free_positions: Vec<Vec<Vec<usize>>>,
    uniq_checks: Vec<UniqCheck>,
    fk_checks: Vec<FkCheck>,
    /// (child space, parent space): child rows require parent rows.
    card_implications: Vec<(usize, usize)>,
    param_domains: Vec<Vec<Value>>,
    kept: BTreeSet<(String, String)>,
}

impl<'a> Plan<'a> {
    fn build(
        original: &'a QueryTemplate,
        candidate: &'a RewriteCandidate,
        cs: &'a ConstraintSet,
        schema: &'a Schema,
        config: &VerifyConfig,
    ) -> Result<Plan<'a>, String> {
        let mut tables: BTreeSet<String> =
            original.tables().into_iter().map(str::to_string).collect();
        tables.extend(candidate.template.tables().into_iter().map(str::to_string));

        // Closure: query-pair columns, then everything any touching
        // constraint reads (scope columns, FK targets, ...).
        let mut kept: BTreeSet<(String, String)> = original.used_fields(schema);
        kept.extend(candidate.template.used_fields(schema));
        loop {
            let mut changed = false;
            for c in cs.iter() {
                if !tables.contains(&c.table) {
                    continue;
                }
                let refs: Vec<(String, String)> = c
                    .referenced_columns()
                    .into_iter()
                    .map(|col| (c.table.clone(), col))
                    .collect();
                if !refs.iter().any(|r| kept.contains(r)) {
                    continue;
                }
                for r in refs {
                    changed |= kept.insert(r);
                }
                if let ConstraintKind::ForeignKey { ref_table, ref_column } = &c.kind {
                    if tables.contains(ref_table) {
                        changed |= kept.insert((ref_table.clone(), ref_column.clone()));
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Union-find over kept columns and parameter ordinals.
        let mut nodes: Vec<Node> = kept
            .iter()
            .map(|(t, c)| Node::Col(t.clone(), c.clone()))
            .collect();
        for p in 1..=original.param_count() {
            nodes.push(Node::Param(p));
        }
        let index: BTreeMap<Node, usize> =
            nodes.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let union = |parent: &mut Vec<usize>, a: &Node, b: &Node| {
            if let (Some(&x), Some(&y)) = (index.get(a), index.get(b)) {
                let (rx, ry) = (find(parent, x), find(parent, y));
                if rx != ry {
                    parent[rx.max(ry)] = rx.min(ry);
                }
            }
        };
        let link_template = |parent: &mut Vec<usize>, t: &QueryTemplate| {
            for j in &t.joins {
                if let (Some(a), Some(b)) = (node_of(&j.left), node_of(&j.right)) {
                    union(parent, &a, &b);
                }
            }
            let mut pairs: Vec<(Node, Node)> = Vec::new();
            collect_links(&t.predicate, &mut pairs);
            for (a, b) in pairs {
                union(parent, &a, &b);
            }
        };
        link_template(&mut parent, original);
        link_template(&mut parent, &candidate.template);
        for c in cs.iter() {
            if let ConstraintKind::ForeignKey { ref_table, ref_column } = &c.kind {
                if c.columns.len() == 1 {
                    union(
                        &mut parent,
                        &Node::Col(c.table.clone(), c.columns[0].clone()),
                        &Node::Col(ref_table.clone(), ref_column.clone()),
                    );
                }
            }
        }

        // Group nodes into families.
        let mut groups: BTreeMap<usize, (Vec<(String, String)>, Vec<u32>)> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            let root = find(&mut parent, i);
            let entry = groups.entry(root).or_default();
            match n {
                Node::Col(t, c) => entry.0.push((t.clone(), c.clone())),
                Node::Param(p) => entry.1.push(*p),
            }
        }

        let constraints: Vec<Constraint> = cs.iter().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(DOMAIN_SEED);
        let mut families = Vec::new();
        let mut fam_of: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut fam_of_param: BTreeMap<u32, usize> = BTreeMap::new();
        let inferred = original.infer_param_types(schema);
        for (_, (members, params)) in groups {
            let id = families.len();
            for m in &members {
                fam_of.insert(m.clone(), id);
            }
            for p in &params {
                fam_of_param.insert(*p, id);
            }
            let mut facts = Facts::default();
            for (t, c) in &members {
                facts.merge(&col_facts(t, c, &constraints, schema));
            }
            let rep_ty = members
                .first()
                .and_then(|(t, c)| schema.column(t, c).map(|cd| cd.ty.clone()))
                .or_else(|| {
                    params
                        .first()
                        .and_then(|p| inferred.get(*p as usize - 1).cloned().flatten())
                })
                .unwrap_or(ColumnType::Integer);
            let mut domain = seed_domain(&rep_ty, &facts, &mut rng);
            let member_set: BTreeSet<(String, String)> = members.iter().cloned().collect();
            let mut probes = literal_probes(original, &member_set);
            probes.extend(literal_probes(&candidate.template, &member_set));
            let literal_touched = !probes.is_empty();
            for v in probes {
                if !v.is_null() && !domain.contains(&v) {
                    domain.push(v);
                }
            }
            domain.sort();
            domain.dedup();
            let free = !literal_touched
                && facts.trivial()
                && !ordered_under_limit(original, &candidate.template, &member_set)
                && members
                    .iter()
                    .all(|(t, c)| !matches!(schema.column(t, c).map(|cd| &cd.ty), Some(ColumnType::Enum(_))));
            families.push(Family { members, domain, free });
        }

        // Presence constraints suppress the NULL option outright.
        let presence: BTreeSet<(String, String)> = constraints
            .iter()
            .filter(|c| matches!(c.kind, ConstraintKind::Presence) && c.columns.len() == 1)
            .map(|c| (c.table.clone(), c.columns[0].clone()))
            .collect();

        // Per-table enumeration spaces over kept columns, sorted by name.
        let mut spaces = Vec::new();
        let mut reduced_tables = Vec::new();
        for tname in &tables {
            let Some(td) = schema.table(tname) else {
                return Err(format!("table {tname} missing from schema"));
            };
            let mut slots = Vec::new();
            let mut defs = Vec::new();
            for col in &td.columns {
                let key = (tname.clone(), col.name.clone());
                if !kept.contains(&key) {
                    continue;
                }
                let fam = fam_of[&key];
                let facts = col_facts(tname, &col.name, &constraints, schema);
                let mut options: Vec<Value> = families[fam]
                    .domain
                    .iter()
                    .filter(|v| facts.allows(v))
                    .filter_map(|v| cast_for(v, &col.ty))
                    .collect();
                options.dedup();
                if options.is_empty() && !col.nullable {
                    return Err(format!(
                        "no admissible values for NOT NULL column {tname}.{}",
                        col.name
                    ));
                }
                if col.nullable && !presence.contains(&key) {
                    options.push(Value::Null);
                }
                slots.push(Slot { name: col.name.clone(), ty: col.ty.clone(), options });
                defs.push(col.clone());
            }
            reduced_tables.push(TableDef { name: tname.clone(), columns: defs });
            let per_row: u64 = slots.iter().map(|s| s.options.len() as u64).product();
            spaces.push(Space { table: tname.clone(), slots, per_row, total: 0, bound: config.bound });
        }

        // Raw state-space estimate, before any filtering.
        let mut estimate = 1f64;
        for sp in &spaces {
            let d = sp.per_row as f64;
            let mut table_total = 0f64;
            let mut block = 1f64;
            for _ in 0..=config.bound {
                table_total += block;
                block *= d;
            }
            estimate *= table_total;
        }
        let mut param_domains = Vec::new();
        for p in 1..=original.param_count() {
            let mut dom = match fam_of_param.get(&p) {
                Some(&fid) => {
                    let mut d = families[fid].domain.clone();
                    let nullable_member = families[fid]
                        .members
                        .iter()
                        .any(|(t, c)| schema.column(t, c).map(|cd| cd.nullable).unwrap_or(false));
                    if nullable_member {
                        d.push(Value::Null);
                    }
                    d
                }
                None => type_default_domain(
                    inferred.get(p as usize - 1).cloned().flatten().as_ref(),
                ),
            };
            if dom.is_empty() {
                dom.push(Value::Null);
            }
            estimate *= dom.len() as f64;
            param_domains.push(dom);
        }
        if estimate > config.ceiling {
            return Err(format!(
                "state space is about {estimate:.3e} raw combinations, above the ceiling {:.1e}",
                config.ceiling
            ));
        }
        for sp in &mut spaces {
            let mut total = 0u64;
            let mut block = 1u64;
            for _ in 0..=config.bound {
                total += block;
                block = block.saturating_mul(sp.per_row.max(1));
            }
            sp.total = total;
        }

        // Resolve enforceable constraints against slot indexes.
        let space_idx: BTreeMap<&str, usize> = spaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.table.as_str(), i))
            .collect();
        let slot_idx = |si: usize, col: &str| -> Option<usize> {
            spaces[si].slots.iter().position(|s| s.name == col)
        };
        let mut uniq_checks = Vec::new();
        let mut fk_checks = Vec::new();
        let mut card_implications = Vec::new();
        for c in &constraints {
            let Some(&si) = space_idx.get(c.table.as_str()) else { continue };
            match &c.kind {
                ConstraintKind::Uniqueness { scope: _, predicate } => {
                    let key: Option<Vec<usize>> =
                        c.unique_key().iter().map(|col| slot_idx(si, col)).collect();
                    let Some(key) = key else { continue };
                    let predicate = match predicate {
                        None => None,
                        Some(p) => match slot_idx(si, &p.column) {
                            Some(pi) => Some((pi, p.clone())),
                            None => continue,
                        },
                    };
                    uniq_checks.push(UniqCheck { space: si, key, predicate });
                }
                ConstraintKind::ForeignKey { ref_table, ref_column } => {
                    if c.columns.len() != 1 {
                        continue;
                    }
                    let child_slot = slot_idx(si, &c.columns[0]);
                    let parent = space_idx.get(ref_table.as_str()).copied();
                    match (child_slot, parent) {
                        (Some(cslot), Some(pi)) => {
                            let Some(pslot) = slot_idx(pi, ref_column) else { continue };
                            fk_checks.push(FkCheck {
                                child_space: si,
                                child_slot: cslot,
                                parent_space: pi,
                                parent_slot: pslot,
                            });
                        }
                        (None, Some(pi)) => {
                            // Child column pruned: rows in the child table
                            // will need a parent value at extension time.
                            let non_null = presence
                                .contains(&(c.table.clone(), c.columns[0].clone()))
                                || schema
                                    .column(&c.table, &c.columns[0])
                                    .map(|cd| !cd.nullable)
                                    .unwrap_or(false);
                            if non_null {
                                card_implications.push((si, pi));
                            }
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }

        let free_positions = families
            .iter()
            .map(|f| {
                spaces
                    .iter()
                    .map(|sp| {
                        if !f.free {
                            return Vec::new();
                        }
                        sp.slots
                            .iter()
                            .enumerate()
                            .filter(|(_, s)| f.members.contains(&(sp.table.clone(), s.name.clone())))
                            .map(|(i, _)| i)
                            .collect()
                    })
                    .collect()
            })
            .collect();

        Ok(Plan {
            original,
            candidate,
            cs,
            schema,
            reduced: Schema { tables: reduced_tables, constraints: Vec::new() },
            spaces,
            families,
            free_positions,
            uniq_checks,
            fk_checks,
            card_implications,
            param_domains,
            kept,
        })
    }

    /// Per-table instances passing that table's uniqueness constraints.
    fn survivors(&self, si: usize) -> Vec<u64> {
        let sp = &self.spaces[si];
        let checks: Vec<&UniqCheck> = self.uniq_checks.iter().filter(|u| u.space == si).collect();
        let mut out = Vec::new();
        'outer: for idx in 0..sp.total {
            let rows = sp.decode(idx);
            for u in &checks {
                let mut seen = HashSet::new();
                for row in &rows {
                    if let Some((pi, pred)) = &u.predicate {
                        if !pred.matches(&row[*pi]) {
                            continue;
                        }
                    }
                    let key: Vec<&Value> = u.key.iter().map(|&k| &row[k]).collect();
                    if key.iter().any(|v| v.is_null()) {
                        continue;
                    }
                    if !seen.insert(key.iter().map(|v| (*v).clone()).collect::<Vec<_>>()) {
                        continue 'outer;
                    }
                }
            }
            out.push(idx);
        }
        out
    }

    fn canonical(&self, db: &Database) -> bool {
        for (fid, fam) in self.families.iter().enumerate() {
            if !fam.free || fam.domain.len() < 2 {
                continue;
            }
            let mut seen = vec![false; fam.domain.len()];
            let mut distinct = 0usize;
            for (si, sp) in self.spaces.iter().enumerate() {
                let positions = &self.free_positions[fid][si];
                if positions.is_empty() {
                    continue;
                }
                for row in db.rows(&sp.table) {
                    for &pi in positions {
                        let v = &row[pi];
                        if v.is_null() {
                            continue;
                        }
                        let Some(di) = fam.domain.iter().position(|d| {
                            d == v || cast_for(d, &sp.slots[pi].ty).as_ref() == Some(v)
                        }) else {
                            continue;
                        };
                        if !seen[di] {
                            if di != distinct {
                                return false;
                            }
                            seen[di] = true;
                            distinct += 1;
                        }
                    }
                }
            }
        }
        true
    }

    fn cross_ok(&self, db: &Database) -> bool {
        for (child, parent) in &self.card_implications {
            if !db.rows(&self.spaces[*child].table).is_empty()
                && db.rows(&self.spaces[*parent].table).is_empty()
            {
                return false;
            }
        }
        for fk in &self.fk_checks {
            let parents: HashSet<&Value> = db
                .rows(&self.spaces[fk.parent_space].table)
                .iter()
                .map(|r| &r[fk.parent_slot])
                .filter(|v| !v.is_null())
                .collect();
            for row in db.rows(&self.spaces[fk.child_space].table) {
                let v = &row[fk.child_slot];
                if !v.is_null() && !parents.contains(v) {
                    return false;
                }
            }
        }
        true
    }

    /// Exhaustive scan; `Ok(Some)` carries the first counterexample in
    /// enumeration order (kept columns only).
    fn search(&self) -> Result<Option<(Database, Vec<Value>)>, String> {
        let survivors: Vec<Vec<u64>> = (0..self.spaces.len()).map(|i| self.survivors(i)).collect();
        let mut db = Database::new();
        for sp in &self.spaces {
            db.tables.insert(sp.table.clone(), Vec::new());
        }
        self.rec(0, &survivors, &mut db)
    }

    fn rec(
        &self,
        k: usize,
        survivors: &[Vec<u64>],
        db: &mut Database,
    ) -> Result<Option<(Database, Vec<Value>)>, String> {
        if k == self.spaces.len() {
            if !self.canonical(db) || !self.cross_ok(db) {
                return Ok(None);
            }
            return self.check_instance(db);
        }
        for &idx in &survivors[k] {
            let rows = self.spaces[k].decode(idx);
            db.tables.insert(self.spaces[k].table.clone(), rows);
            if let Some(ce) = self.rec(k + 1, survivors, db)? {
                return Ok(Some(ce));
            }
        }
        db.tables.insert(self.spaces[k].table.clone(), Vec::new());
        Ok(None)
    }

    fn check_instance(&self, db: &Database) -> Result<Option<(Database, Vec<Value>)>, String> {
        let limit_rule = self.candidate.trace.contains(&RuleKind::AddLimitOne);
        let n_params = self.param_domains.len();
        let mut idxs = vec![0usize; n_params];
        loop {
            let params: Vec<Value> = idxs
                .iter()
                .zip(&self.param_domains)
                .map(|(&i, d)| d[i].clone())
                .collect();
            let mismatch = self.differ(db, &params, limit_rule)?;
            if mismatch {
                return Ok(Some((db.clone(), params)));
            }
            // Mixed-radix increment over parameter valuations.
            let mut pos = 0;
            loop {
                if pos == n_params {
                    return Ok(None);
                }
                idxs[pos] += 1;
                if idxs[pos] < self.param_domains[pos].len() {
                    break;
                }
                idxs[pos] = 0;
                pos += 1;
            }
        }
    }

    fn differ(&self, db: &Database, params: &[Value], limit_rule: bool) -> Result<bool, String> {
        let ground_orig = self
            .original
            .instantiate(params)
            .map_err(|e| format!("instantiating original: {e}"))?;
        let base = evaluate(&ground_orig, db, &self.reduced)
            .map_err(|e| format!("evaluating original: {e}"))?;
        let declared = self.candidate.template.param_count() as usize;
        let mut ground_cand = self
            .candidate
            .template
            .instantiate(&params[..declared])
            .map_err(|e| format!("instantiating candidate: {e}"))?;
        if limit_rule {
            if base.rows.len() > 1 {
                return Ok(true);
            }
            ground_cand.limit = None;
        }
        let out = evaluate(&ground_cand, db, &self.reduced)
            .map_err(|e| format!("evaluating candidate: {e}"))?;
        Ok(!bag_equal(&out.rows, &base.rows))
    }

    /// Rebuild a full-width database from a kept-column witness: restore
    /// pruned columns with constraint-respecting values and invent parent
    /// tables for foreign keys pointing outside the instance.
    fn extend_witness(&self, instance: &Database) -> Result<Database, String> {
        let constraints: Vec<Constraint> = self.cs.iter().cloned().collect();
        // Tables to materialize: the instance plus FK parents, transitively.
        let mut dump: BTreeSet<String> = instance.tables.keys().cloned().collect();
        loop {
            let mut added = Vec::new();
            for c in &constraints {
                if let ConstraintKind::ForeignKey { ref_table, .. } = &c.kind {
                    if dump.contains(&c.table) && !dump.contains(ref_table) {
                        added.push(ref_table.clone());
                    }
                }
            }
            if added.is_empty() {
                break;
            }
            dump.extend(added);
        }
        let order = fk_topo_order(&dump, &constraints)?;

        let mut rng = ChaCha8Rng::seed_from_u64(DOMAIN_SEED ^ 1);
        let mut full = Database::new();
        for tname in &order {
            let Some(td) = self.schema.table(tname) else {
                return Err(format!("table {tname} missing from schema"));
            };
            let kept_cols: Vec<&str> = td
                .columns
                .iter()
                .filter(|c| self.kept.contains(&(tname.clone(), c.name.clone())))
                .map(|c| c.name.as_str())
                .collect();
            // Demands from already-built children do not exist (parents come
            // first); demands from kept child columns are collected below.
            let mut rows: Vec<Vec<Value>> = Vec::new();
            if let Some(kept_rows) = instance.tables.get(tname) {
                for krow in kept_rows {
                    let mut row = vec![Value::Null; td.columns.len()];
                    for (ci, col) in td.columns.iter().enumerate() {
                        if let Some(ki) = kept_cols.iter().position(|k| *k == col.name) {
                            row[ci] = krow[ki].clone();
                        }
                    }
                    rows.push(row);
                }
            } else {
                // Invented parent: one row per value demanded by any child's
                // kept FK column already enumerated.
                let mut demanded: BTreeSet<Value> = BTreeSet::new();
                for c in &constraints {
                    let ConstraintKind::ForeignKey { ref_table, ref_column: _ } = &c.kind else {
                        continue;
                    };
                    if ref_table != tname || c.columns.len() != 1 {
                        continue;
                    }
                    if let Some(child_rows) = instance.tables.get(&c.table) {
                        let Some(si) = self.spaces.iter().position(|s| &s.table == &c.table)
                        else {
                            continue;
                        };
                        if let Some(slot) =
                            self.spaces[si].slots.iter().position(|s| s.name == c.columns[0])
                        {
                            for r in child_rows {
                                if !r[slot].is_null() {
                                    demanded.insert(r[slot].clone());
                                }
                            }
                        }
                    }
                    // Pruned child columns get matched to this parent later;
                    // make sure at least one row exists if any child row does.
                    if instance.tables.get(&c.table).is_some_and(|r| !r.is_empty())
                        && demanded.is_empty()
                    {
                        demanded.insert(Value::Int(1));
                    }
                }
                let ref_col_of: Option<String> = constraints.iter().find_map(|c| match &c.kind {
                    ConstraintKind::ForeignKey { ref_table, ref_column }
                        if ref_table == tname =>
                    {
                        Some(ref_column.clone())
                    }
                    _ => None,
                });
                if let Some(ref_col) = ref_col_of {
                    let ci = td
                        .columns
                        .iter()
                        .position(|c| c.name == ref_col)
                        .ok_or_else(|| format!("{tname}.{ref_col} missing"))?;
                    for v in demanded {
                        let mut row = vec![Value::Null; td.columns.len()];
                        row[ci] = cast_for(&v, &td.columns[ci].ty).unwrap_or(v);
                        rows.push(row);
                    }
                }
            }

            // Fill the still-NULL pruned cells column by column.
            for (ci, col) in td.columns.iter().enumerate() {
                let key = (tname.clone(), col.name.clone());
                let is_kept = self.kept.contains(&key) && instance.tables.contains_key(tname);
                let facts = col_facts(tname, &col.name, &constraints, self.schema);
                let must_fill = |v: &Value| v.is_null();
                let needs_value = !col.nullable
                    || constraints.iter().any(|c| {
                        matches!(c.kind, ConstraintKind::Presence)
                            && c.table == *tname
                            && c.columns == vec![col.name.clone()]
                    });
                // FK source values when this pruned column is a child key.
                let fk_pool: Option<Vec<Value>> = constraints.iter().find_map(|c| {
                    let ConstraintKind::ForeignKey { ref_table, ref_column } = &c.kind else {
                        return None;
                    };
                    if c.table != *tname || c.columns != vec![col.name.clone()] {
                        return None;
                    }
                    let parent = full.tables.get(ref_table)?;
                    let ptd = self.schema.table(ref_table)?;
                    let pci = ptd.columns.iter().position(|cc| cc.name == *ref_column)?;
                    Some(
                        parent
                            .iter()
                            .map(|r| r[pci].clone())
                            .filter(|v| !v.is_null())
                            .collect(),
                    )
                });
                let n_rows = rows.len();
                for ri in 0..n_rows {
                    if is_kept && !must_fill(&rows[ri][ci]) {
                        continue;
                    }
                    if is_kept && !needs_value {
                        // A kept NULL is part of the witness; leave it.
                        continue;
                    }
                    if !is_kept || must_fill(&rows[ri][ci]) {
                        if !needs_value && fk_pool.is_none() && is_kept {
                            continue;
                        }
                        let mut placed = false;
                        for k in 0..400 {
                            let cand = match &fk_pool {
                                Some(pool) if !pool.is_empty() => pool[(ri + k) % pool.len()].clone(),
                                Some(_) if !needs_value => Value::Null,
                                Some(_) => {
                                    return Err(format!(
                                        "foreign key {tname}.{} has no parent values",
                                        col.name
                                    ))
                                }
                                None => {
                                    if !needs_value && k == 0 && col.nullable && facts.trivial() {
                                        Value::Null
                                    } else {
                                        fresh_value(&col.ty, &facts, ri * 7 + k, &mut rng)
                                            .ok_or_else(|| {
                                                format!(
                                                    "no admissible fill value for {tname}.{}",
                                                    col.name
                                                )
                                            })?
                                    }
                                }
                            };
                            rows[ri][ci] = cand;
                            if row_unique_so_far(&rows, ri, ci, tname, td, &constraints) {
                                placed = true;
                                break;
                            }
                        }
                        if !placed {
                            return Err(format!(
                                "could not satisfy uniqueness while filling {tname}.{}",
                                col.name
                            ));
                        }
                    }
                }
            }
            full.tables.insert(tname.clone(), rows);
        }

        let relevant: Vec<Constraint> = constraints
            .into_iter()
            .filter(|c| {
                full.tables.contains_key(&c.table)
                    && match &c.kind {
                        ConstraintKind::ForeignKey { ref_table, .. } => {
                            full.tables.contains_key(ref_table)
                        }
                        _ => true,
                    }
            })
            .collect();
        database_satisfies(&full, &relevant, self.schema)
            .map_err(|e| format!("extended witness violates constraints: {e}"))?;
        Ok(full)
    }
}

/// After filling `rows[ri][ci]`, do all uniqueness keys through column `ci`
/// still hold for the prefix `rows[..=ri]`?
fn row_unique_so_far(
    rows: &[Vec<Value>],
    ri: usize,
    ci: usize,
    table: &str,
    td: &TableDef,
    constraints: &[Constraint],
) -> bool {
    for c in constraints {
        let ConstraintKind::Uniqueness { predicate, .. } = &c.kind else { continue };
        if c.table != table {
            continue;
        }
        let key_cols: Vec<usize> = match c
            .unique_key()
            .iter()
            .map(|k| td.columns.iter().position(|cc| cc.name == *k))
            .collect::<Option<Vec<_>>>()
        {
            Some(k) => k,
            None => continue,
        };
        if !key_cols.contains(&ci) {
            continue;
        }
        let pred_col = predicate
            .as_ref()
            .and_then(|p| td.columns.iter().position(|cc| cc.name == p.column));
        let mut seen: HashSet<Vec<Value>> = HashSet::new();
        for (i, row) in rows.iter().enumerate().take(ri + 1) {
            if let (Some(p), Some(pc)) = (predicate.as_ref(), pred_col) {
                if !p.matches(&row[pc]) {
                    continue;
                }
            }
            let key: Vec<Value> = key_cols.iter().map(|&k| row[k].clone()).collect();
            if key.iter().any(Value::is_null) {
                continue;
            }
            // Only keys already fully filled count; later rows still hold
            // placeholder NULLs in this column.
            if i > ri {
                continue;
            }
            if !seen.insert(key) {
                return false;
            }
        }
    }
    true
}

fn fresh_value(
    ty: &ColumnType,
    facts: &Facts,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Value> {
    if let Some(set) = &facts.include {
        let items: Vec<&Value> = set.iter().collect();
        if items.is_empty() {
            return None;
        }
        return Some(items[k % items.len()].clone());
    }
    let v = match ty {
        ColumnType::Integer | ColumnType::Timestamp => {
            let base = facts
                .lo
                .as_ref()
                .and_then(|b| b.value.as_f64())
                .map(|f| f.ceil() as i64)
                .unwrap_or(1);
            let v = base + k as i64;
            if let Some(hi) = facts.hi.as_ref().and_then(|b| b.value.as_f64()) {
                if (v as f64) > hi {
                    return None;
                }
            }
            match ty {
                ColumnType::Timestamp => Value::Timestamp(v),
                _ => Value::Int(v),
            }
        }
        ColumnType::Float => {
            let base = facts.lo.as_ref().and_then(|b| b.value.as_f64()).unwrap_or(1.0);
            Value::Float(base + k as f64 * 0.25)
        }
        ColumnType::Boolean => Value::Bool(k % 2 == 1),
        ColumnType::Text | ColumnType::Enum(_) => {
            if let Some((pattern, ci)) = facts.formats.first() {
                let s = crate::testbed::sample_pattern(pattern, *ci, rng).ok()?;
                Value::Text(s)
            } else {
                let min = facts.len_min.unwrap_or(1).max(1) as usize;
                let tag = format!("{k}");
                let pad = min.saturating_sub(tag.len());
                Value::Text(format!("{}{}", "x".repeat(pad.max(1)), tag))
            }
        }
    };
    if facts.allows(&v) {
        Some(v)
    } else {
        None
    }
}

/// Parents before children across the given tables; self-references are
/// ignored (they are filled with NULL or existing values).
fn fk_topo_order(tables: &BTreeSet<String>, constraints: &[Constraint]) -> Result<Vec<String>, String> {
    let mut deps: BTreeMap<&str, BTreeSet<&str>> = tables
        .iter()
        .map(|t| (t.as_str(), BTreeSet::new()))
        .collect();
    for c in constraints {
        if let ConstraintKind::ForeignKey { ref_table, .. } = &c.kind {
            if c.table != *ref_table
                && tables.contains(&c.table)
                && tables.contains(ref_table)
            {
                deps.get_mut(c.table.as_str())
                    .expect("child present")
                    .insert(ref_table.as_str());
            }
        }
    }
    let mut order = Vec::new();
    let mut placed: BTreeSet<&str> = BTreeSet::new();
    while order.len() < tables.len() {
        let ready: Vec<&str> = deps
            .iter()
            .filter(|(t, d)| !placed.contains(*t) && d.iter().all(|p| placed.contains(p)))
            .map(|(t, _)| *t)
            .collect();
        if ready.is_empty() {
            return Err("cyclic foreign keys between tables".into());
        }
        for t in ready {
            placed.insert(t);
            order.push(t.to_string());
        }
    }
    Ok(order)
}

fn node_of(c: &ColRef) -> Option<Node> {
    c.table.as_ref().map(|t| Node::Col(t.clone(), c.column.clone()))
}

fn operand_node(o: &Operand) -> Option<Node> {
    match o {
        Operand::Col(c) => node_of(c),
        Operand::Param(n) => Some(Node::Param(*n)),
        _ => None,
    }
}

fn collect_links(p: &Pred, out: &mut Vec<(Node, Node)>) {
    match p {
        Pred::Atom(a) => match a {
            Atom::Cmp { left, right, .. } => {
                if let (Some(x), Some(y)) = (operand_node(left), operand_node(right)) {
                    out.push((x, y));
                }
            }
            Atom::InList { col, items, .. } => {
                if let Some(cn) = node_of(col) {
                    for it in items {
                        if let Operand::Param(n) = it {
                            out.push((cn.clone(), Node::Param(*n)));
                        }
                    }
                }
            }
            _ => {}
        },
        Pred::Not(x) => collect_links(x, out),
        Pred::And(cs) | Pred::Or(cs) => {
            for c in cs {
                collect_links(c, out);
            }
        }
    }
}

/// Value renaming must not interact with an ORDER BY that feeds a LIMIT.
fn ordered_under_limit(
    a: &QueryTemplate,
    b: &QueryTemplate,
    members: &BTreeSet<(String, String)>,
) -> bool {
    let any_limit = a.limit.is_some() || b.limit.is_some();
    if !any_limit {
        return false;
    }
    let hits = |t: &QueryTemplate| {
        t.order_by.iter().any(|(c, _)| {
            c.table
                .as_ref()
                .map(|tb| members.contains(&(tb.clone(), c.column.clone())))
                .unwrap_or(false)
        })
    };
    hits(a) || hits(b)
}

fn type_default_domain(ty: Option<&ColumnType>) -> Vec<Value> {
    match ty {
        Some(ColumnType::Float) => vec![Value::Float(1.0), Value::Float(2.0), Value::Float(3.0)],
        Some(ColumnType::Boolean) => vec![Value::Bool(false), Value::Bool(true)],
        Some(ColumnType::Text) => vec![
            Value::Text("a".into()),
            Value::Text("b".into()),
            Value::Text("c".into()),
        ],
        Some(ColumnType::Timestamp) => vec![
            Value::Timestamp(86400),
            Value::Timestamp(172800),
            Value::Timestamp(259200),
        ],
        Some(ColumnType::Enum(vs)) => vs.iter().take(3).map(|s| Value::Text(s.clone())).collect(),
        _ => vec![Value::Int(1), Value::Int(2), Value::Int(3)],
    }
}

/// Direct constraint check of a materialized database. Returns the first
/// violation as an error message; used to audit witnesses and, in tests,
/// generated data.
pub fn database_satisfies(
    db: &Database,
    constraints: &[Constraint],
    schema: &Schema,
) -> Result<(), String> {
    let colpos = |table: &str, col: &str| -> Result<usize, String> {
        schema
            .table(table)
            .and_then(|td| td.columns.iter().position(|c| c.name == col))
            .ok_or_else(|| format!("unknown column {table}.{col}"))
    };
    for c in constraints {
        if !db.tables.contains_key(&c.table) {
            continue;
        }
        let rows = db.rows(&c.table);
        match &c.kind {
            ConstraintKind::Presence => {
                let ci = colpos(&c.table, &c.columns[0])?;
                if rows.iter().any(|r| r[ci].is_null()) {
                    return Err(format!("presence violated on {}.{}", c.table, c.columns[0]));
                }
            }
            ConstraintKind::Inclusion { values } => {
                let ci = colpos(&c.table, &c.columns[0])?;
                for r in rows {
                    if !r[ci].is_null() && !values.contains(&r[ci]) {
                        return Err(format!(
                            "inclusion violated on {}.{}: {:?}",
                            c.table, c.columns[0], r[ci]
                        ));
                    }
                }
            }
            ConstraintKind::Numerical { .. } => {
                let ci = colpos(&c.table, &c.columns[0])?;
                let (lo, hi) = numeric_range(&c.kind);
                for r in rows {
                    let v = &r[ci];
                    if v.is_null() {
                        continue;
                    }
                    let Some(f) = v.as_f64() else {
                        return Err(format!("non-numeric value in {}.{}", c.table, c.columns[0]));
                    };
                    if let Some(b) = &lo {
                        let l = b.as_f64();
                        if f < l || (f == l && !b.inclusive) {
                            return Err(format!(
                                "lower bound violated on {}.{}",
                                c.table, c.columns[0]
                            ));
                        }
                    }
                    if let Some(b) = &hi {
                        let h = b.as_f64();
                        if f > h || (f == h && !b.inclusive) {
                            return Err(format!(
                                "upper bound violated on {}.{}",
                                c.table, c.columns[0]
                            ));
                        }
                    }
                }
            }
            ConstraintKind::Length { min, max } => {
                let ci = colpos(&c.table, &c.columns[0])?;
                for r in rows {
                    match &r[ci] {
                        Value::Null => {}
                        Value::Text(s) => {
                            let n = s.chars().count() as u64;
                            if min.is_some_and(|m| n < m) || max.is_some_and(|m| n > m) {
                                return Err(format!(
                                    "length violated on {}.{}",
                                    c.table, c.columns[0]
                                ));
                            }
                        }
                        _ => {
                            return Err(format!(
                                "length check on non-text {}.{}",
                                c.table, c.columns[0]
                            ))
                        }
                    }
                }
            }
            ConstraintKind::Format { patterns } => {
                let ci = colpos(&c.table, &c.columns[0])?;
                for p in patterns {
                    let re = regex::RegexBuilder::new(&p.pattern)
                        .case_insensitive(p.case_insensitive)
                        .build()
                        .map_err(|e| format!("bad pattern on {}.{}: {e}", c.table, c.columns[0]))?;
                    for r in rows {
                        match &r[ci] {
                            Value::Null => {}
                            Value::Text(s) => {
                                if !re.is_match(s) {
                                    return Err(format!(
                                        "format violated on {}.{}: {s:?}",
                                        c.table, c.columns[0]
                                    ));
                                }
                            }
                            _ => {
                                return Err(format!(
                                    "format check on non-text {}.{}",
                                    c.table, c.columns[0]
                                ))
                            }
                        }
                    }
                }
            }
            ConstraintKind::Uniqueness { predicate, .. } => {
                let keys: Vec<usize> = c
                    .unique_key()
                    .iter()
                    .map(|k| colpos(&c.table, k))
                    .collect::<Result<_, _>>()?;
                let pred_ci = match predicate {
                    Some(p) => Some(colpos(&c.table, &p.column)?),
                    None => None,
                };
                let mut seen: HashSet<Vec<Value>> = HashSet::new();
                for r in rows {
                    if let (Some(p), Some(pc)) = (predicate, pred_ci) {
                        if !p.matches(&r[pc]) {
                            continue;
                        }
                    }
                    let key: Vec<Value> = keys.iter().map(|&k| r[k].clone()).collect();
                    if key.iter().any(Value::is_null) {
                        continue;
                    }
                    if !seen.insert(key) {
                        return Err(format!(
                            "uniqueness violated on {}({})",
                            c.table,
                            c.unique_key().join(",")
                        ));
                    }
                }
            }
            ConstraintKind::ForeignKey { ref_table, ref_column } => {
                if !db.tables.contains_key(ref_table) {
                    return Err(format!(
                        "foreign key target table {ref_table} missing from database"
                    ));
                }
                let ci = colpos(&c.table, &c.columns[0])?;
                let pi = colpos(ref_table, ref_column)?;
                let parents: HashSet<&Value> = db
                    .rows(ref_table)
                    .iter()
                    .map(|r| &r[pi])
                    .filter(|v| !v.is_null())
                    .collect();
                for r in rows {
                    if !r[ci].is_null() && !parents.contains(&r[ci]) {
                        return Err(format!(
                            "foreign key violated: {}.{} -> {ref_table}.{ref_column}",
                            c.table, c.columns[0]
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}
