//! Per-column interval reasoning over a DNF view of the predicate.
//!
//! Each DNF branch gets a context mapping column/parameter nodes (merged
//! across equality atoms by union-find) to an interval: numeric bounds,
//! null flags, and finite include/exclude value sets. Constraint facts are
//! NULL-permissive: Presence and schema NOT NULL set the non-null flag,
//! value constraints only restrict the non-null case. Sound but deliberately
//! incomplete; the verifier gates every conclusion.

use std::collections::{BTreeMap, BTreeSet};

use crate::constraints::{numeric_range, ConstraintKind, ConstraintSet};
use crate::sql::{Atom, CmpOp, ColRef, Operand, Pred, QueryTemplate};
use crate::value::{ColumnType, Value};

pub const MAX_DNF_BRANCHES: usize = 64;

/// One atom site in the predicate tree: stable id in depth-first order plus
/// the parity of enclosing NOTs.
#[derive(Debug, Clone)]
pub struct SiteAtom {
    pub site: usize,
    /// Atom with negation pushed in (what the branch actually asserts).
    pub atom: Atom,
    pub negated_site: bool,
}

/// A conjunction of asserted atoms.
pub type Branch = Vec<SiteAtom>;

fn negate_atom(a: &Atom) -> Atom {
    match a {
        Atom::Cmp { left, op, right } => Atom::Cmp {
            left: left.clone(),
            op: op.negate(),
            right: right.clone(),
        },
        Atom::InList { col, items, negated } => Atom::InList {
            col: col.clone(),
            items: items.clone(),
            negated: !negated,
        },
        Atom::InSubquery { col, table, column, negated } => Atom::InSubquery {
            col: col.clone(),
            table: table.clone(),
            column: column.clone(),
            negated: !negated,
        },
        Atom::IsNull { col, negated } => Atom::IsNull {
            col: col.clone(),
            negated: !negated,
        },
        Atom::Regex { col, pattern, case_insensitive, negated } => Atom::Regex {
            col: col.clone(),
            pattern: pattern.clone(),
            case_insensitive: *case_insensitive,
            negated: !negated,
        },
        Atom::Const(b) => Atom::Const(!b),
    }
}

/// Convert a predicate to DNF with site tracking. `None` when the branch
/// count would exceed [`MAX_DNF_BRANCHES`].
pub fn to_dnf(p: &Pred) -> Option<Vec<Branch>> {
    let mut counter = 0;
    walk(p, false, &mut counter)
}

fn walk(p: &Pred, negated: bool, counter: &mut usize) -> Option<Vec<Branch>> {
    match p {
        Pred::Atom(a) => {
            let site = *counter;
            *counter += 1;
            let atom = if negated { negate_atom(a) } else { a.clone() };
            Some(vec![vec![SiteAtom { site, atom, negated_site: negated }]])
        }
        Pred::Not(inner) => walk(inner, !negated, counter),
        Pred::And(cs) if !negated => conjoin_all(cs, negated, counter),
        Pred::Or(cs) if negated => conjoin_all(cs, negated, counter),
        Pred::Or(cs) | Pred::And(cs) => {
            let mut out = Vec::new();
            for c in cs {
                let mut branches = walk(c, negated, counter)?;
                out.append(&mut branches);
                if out.len() > MAX_DNF_BRANCHES {
                    return None;
                }
            }
            Some(out)
        }
    }
}

fn conjoin_all(cs: &[Pred], negated: bool, counter: &mut usize) -> Option<Vec<Branch>> {
    let mut acc: Vec<Branch> = vec![Vec::new()];
    for c in cs {
        let branches = walk(c, negated, counter)?;
        let mut next = Vec::with_capacity(acc.len() * branches.len());
        for a in &acc {
            for b in &branches {
                let mut merged = a.clone();
                merged.extend(b.iter().cloned());
                next.push(merged);
            }
        }
        if next.len() > MAX_DNF_BRANCHES {
            return None;
        }
        acc = next;
    }
    Some(acc)
}

/// Rebuild the predicate with one atom site replaced by a constant. The
/// constant is chosen so the branch view of that site becomes TRUE: a site
/// under an odd number of NOTs is replaced by FALSE.
pub fn replace_site(p: &Pred, target: usize, value: bool) -> Pred {
    let mut counter = 0;
    fn go(p: &Pred, target: usize, value: bool, counter: &mut usize) -> Pred {
        match p {
            Pred::Atom(_) => {
                let site = *counter;
                *counter += 1;
                if site == target {
                    Pred::Atom(Atom::Const(value))
                } else {
                    p.clone()
                }
            }
            Pred::Not(inner) => Pred::Not(Box::new(go(inner, target, value, counter))),
            Pred::And(cs) => Pred::And(cs.iter().map(|c| go(c, target, value, counter)).collect()),
            Pred::Or(cs) => Pred::Or(cs.iter().map(|c| go(c, target, value, counter)).collect()),
        }
    }
    go(p, target, value, &mut counter).simplify()
}

/// Inclusive/exclusive numeric bound carrying the original literal.
#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    pub value: Value,
    pub inclusive: bool,
}

impl Bound {
    fn f(&self) -> f64 {
        self.value.as_f64().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interval {
    pub lo: Option<Bound>,
    pub hi: Option<Bound>,
    pub not_null: bool,
    pub must_null: bool,
    /// Finite set of allowed values, when known (inclusion constraints,
    /// enum column types, equality atoms, IN lists).
    pub include: Option<BTreeSet<Value>>,
    pub exclude: BTreeSet<Value>,
    /// Some merged node contains an integer-typed column.
    pub integral: bool,
}

impl Interval {
    pub fn narrow_lo(&mut self, value: Value, inclusive: bool) {
        let cand = Bound { value, inclusive };
        if cand.f().is_nan() {
            return;
        }
        let tighter = match &self.lo {
            None => true,
            Some(cur) => cand.f() > cur.f() || (cand.f() == cur.f() && !cand.inclusive && cur.inclusive),
        };
        if tighter {
            self.lo = Some(cand);
        }
    }

    pub fn narrow_hi(&mut self, value: Value, inclusive: bool) {
        let cand = Bound { value, inclusive };
        if cand.f().is_nan() {
            return;
        }
        let tighter = match &self.hi {
            None => true,
            Some(cur) => cand.f() < cur.f() || (cand.f() == cur.f() && !cand.inclusive && cur.inclusive),
        };
        if tighter {
            self.hi = Some(cand);
        }
    }

    pub fn restrict_include(&mut self, allowed: impl IntoIterator<Item = Value>) {
        let set: BTreeSet<Value> = allowed.into_iter().collect();
        self.include = Some(match self.include.take() {
            None => set,
            Some(cur) => cur.intersection(&set).cloned().collect(),
        });
    }

    fn merge(&mut self, other: &Interval) {
        if let Some(b) = &other.lo {
            self.narrow_lo(b.value.clone(), b.inclusive);
        }
        if let Some(b) = &other.hi {
            self.narrow_hi(b.value.clone(), b.inclusive);
        }
        self.not_null |= other.not_null;
        self.must_null |= other.must_null;
        if let Some(set) = &other.include {
            self.restrict_include(set.iter().cloned());
        }
        self.exclude.extend(other.exclude.iter().cloned());
        self.integral |= other.integral;
    }

    fn in_bounds(&self, v: &Value) -> bool {
        if let Some(b) = &self.lo {
            match v.sql_cmp(&b.value) {
                Some(ord) if ord.is_gt() || (ord.is_eq() && b.inclusive) => {}
                Some(_) => return false,
                None => {}
            }
        }
        if let Some(b) = &self.hi {
            match v.sql_cmp(&b.value) {
                Some(ord) if ord.is_lt() || (ord.is_eq() && b.inclusive) => {}
                Some(_) => return false,
                None => {}
            }
        }
        true
    }

    /// Values that could still appear, when the include set is finite.
    pub fn feasible(&self) -> Option<Vec<Value>> {
        self.include.as_ref().map(|set| {
            set.iter()
                .filter(|v| !self.exclude.contains(*v) && self.in_bounds(v))
                .cloned()
                .collect()
        })
    }

    /// No non-null value can satisfy this interval.
    fn value_space_empty(&self) -> bool {
        if let Some(f) = self.feasible() {
            if f.is_empty() {
                return true;
            }
        }
        if let (Some(lo), Some(hi)) = (&self.lo, &self.hi) {
            let (l, h) = (lo.f(), hi.f());
            if l > h || (l == h && !(lo.inclusive && hi.inclusive)) {
                return true;
            }
            if self.integral {
                let li = if lo.inclusive { l.ceil() } else { l.floor() + 1.0 };
                let hi_ = if hi.inclusive { h.floor() } else { h.ceil() - 1.0 };
                if li > hi_ {
                    return true;
                }
                // A fully excluded finite integer range is empty too.
                if (hi_ - li) <= 64.0 {
                    let all_excluded = (li as i64..=hi_ as i64)
                        .all(|i| self.exclude.contains(&Value::Int(i)));
                    if all_excluded && !li.is_nan() {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// The branch asserting this interval can never be TRUE.
    pub fn is_empty(&self) -> bool {
        if self.must_null && self.not_null {
            return true;
        }
        // Value restrictions only bite when the branch needs a value.
        self.not_null && self.value_space_empty()
    }

    /// Every feasible value satisfies `x op v`. NULL handling is the
    /// caller's concern.
    pub fn always_satisfies(&self, op: CmpOp, v: &Value) -> bool {
        if let Some(f) = self.feasible() {
            if !f.is_empty() {
                return f.iter().all(|x| {
                    x.sql_cmp(v).is_some_and(|ord| match op {
                        CmpOp::Eq => ord.is_eq(),
                        CmpOp::Ne => ord.is_ne(),
                        CmpOp::Lt => ord.is_lt(),
                        CmpOp::Le => ord.is_le(),
                        CmpOp::Gt => ord.is_gt(),
                        CmpOp::Ge => ord.is_ge(),
                    })
                });
            }
        }
        let Some(target) = v.as_f64() else { return false };
        match op {
            CmpOp::Gt => self
                .lo
                .as_ref()
                .is_some_and(|b| b.f() > target || (b.f() == target && !b.inclusive)),
            CmpOp::Ge => self.lo.as_ref().is_some_and(|b| b.f() >= target),
            CmpOp::Lt => self
                .hi
                .as_ref()
                .is_some_and(|b| b.f() < target || (b.f() == target && !b.inclusive)),
            CmpOp::Le => self.hi.as_ref().is_some_and(|b| b.f() <= target),
            CmpOp::Eq => match (&self.lo, &self.hi) {
                (Some(lo), Some(hi)) => {
                    lo.inclusive && hi.inclusive && lo.f() == target && hi.f() == target
                }
                _ => false,
            },
            CmpOp::Ne => {
                self.exclude.contains(v)
                    || self
                        .lo
                        .as_ref()
                        .is_some_and(|b| b.f() > target || (b.f() == target && !b.inclusive))
                    || self
                        .hi
                        .as_ref()
                        .is_some_and(|b| b.f() < target || (b.f() == target && !b.inclusive))
            }
        }
    }
}

/// Union-find node: a column or a parameter ordinal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Node {
    Col(String, String),
    Param(u32),
}

impl Node {
    fn of_col(c: &ColRef) -> Option<Node> {
        c.table.as_ref().map(|t| Node::Col(t.clone(), c.column.clone()))
    }
}

/// Branch context: equality-merged nodes and their intervals.
pub struct Context {
    parent: BTreeMap<Node, Node>,
    intervals: BTreeMap<Node, Interval>,
}

impl Context {
    fn find(&self, n: &Node) -> Node {
        let mut cur = n.clone();
        while let Some(p) = self.parent.get(&cur) {
            if *p == cur {
                break;
            }
            cur = p.clone();
        }
        cur
    }

    fn ensure(&mut self, n: &Node) {
        if !self.parent.contains_key(n) {
            self.parent.insert(n.clone(), n.clone());
            self.intervals.insert(n.clone(), Interval::default());
        }
    }

    fn union(&mut self, a: &Node, b: &Node) {
        self.ensure(a);
        self.ensure(b);
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let merged = {
            let ia = self.intervals[&ra].clone();
            let mut ib = self.intervals[&rb].clone();
            ib.merge(&ia);
            ib
        };
        self.parent.insert(ra.clone(), rb.clone());
        self.intervals.remove(&ra);
        self.intervals.insert(rb, merged);
    }

    fn with(&mut self, n: &Node, f: impl FnOnce(&mut Interval)) {
        self.ensure(n);
        let root = self.find(n);
        f(self.intervals.get_mut(&root).expect("root interval"));
    }

    pub fn interval(&self, n: &Node) -> Interval {
        let root = self.find(n);
        self.intervals.get(&root).cloned().unwrap_or_default()
    }

    pub fn col_interval(&self, table: &str, column: &str) -> Interval {
        self.interval(&Node::Col(table.to_string(), column.to_string()))
    }

    pub fn any_empty(&self) -> bool {
        self.intervals.values().any(Interval::is_empty)
    }
}

/// Facts every branch starts from: schema types/nullability plus value
/// constraints on the query's tables.
pub fn constraint_facts(
    q: &QueryTemplate,
    cs: &ConstraintSet,
    schema: &crate::constraints::Schema,
) -> Context {
    let mut ctx = Context {
        parent: BTreeMap::new(),
        intervals: BTreeMap::new(),
    };
    for t in q.tables() {
        let Some(td) = schema.table(t) else { continue };
        for col in &td.columns {
            let node = Node::Col(t.to_string(), col.name.clone());
            ctx.ensure(&node);
            ctx.with(&node, |iv| {
                if !col.nullable {
                    iv.not_null = true;
                }
                match &col.ty {
                    ColumnType::Integer => iv.integral = true,
                    ColumnType::Enum(vs) => {
                        iv.restrict_include(vs.iter().map(|s| Value::Text(s.clone())))
                    }
                    _ => {}
                }
            });
        }
        for c in cs.iter().filter(|c| c.table == t) {
            if c.columns.len() != 1 {
                continue;
            }
            let node = Node::Col(t.to_string(), c.columns[0].clone());
            match &c.kind {
                ConstraintKind::Presence => ctx.with(&node, |iv| iv.not_null = true),
                ConstraintKind::Inclusion { values } => {
                    let vs = values.clone();
                    ctx.with(&node, |iv| iv.restrict_include(vs));
                }
                ConstraintKind::Numerical { .. } => {
                    let (lo, hi) = numeric_range(&c.kind);
                    ctx.with(&node, |iv| {
                        if let Some(b) = lo {
                            iv.narrow_lo(b.value, b.inclusive);
                        }
                        if let Some(b) = hi {
                            iv.narrow_hi(b.value, b.inclusive);
                        }
                    });
                }
                _ => {}
            }
            if c.unsatisfiable {
                ctx.with(&node, |iv| iv.restrict_include(Vec::<Value>::new()));
            }
        }
    }
    ctx
}

/// Extend constraint facts with a branch's atoms. Join equalities always
/// participate. With `value_atoms` false only equality atoms (column-column
/// and column-parameter) are folded in: the context then describes what the
/// constraints alone guarantee, which is what predicate elimination may rely
/// on. `skip_site` leaves one atom out so it cannot justify itself.
pub fn branch_context(
    base: &Context,
    q: &QueryTemplate,
    branch: &Branch,
    value_atoms: bool,
    skip_site: Option<usize>,
) -> Context {
    let mut ctx = Context {
        parent: base.parent.clone(),
        intervals: base.intervals.clone(),
    };
    for j in &q.joins {
        if let (Some(a), Some(b)) = (Node::of_col(&j.left), Node::of_col(&j.right)) {
            ctx.union(&a, &b);
            // An inner join only keeps rows where both sides are non-null.
            ctx.with(&a, |iv| iv.not_null = true);
        }
    }
    for sa in branch {
        if Some(sa.site) == skip_site {
            continue;
        }
        apply_atom(&mut ctx, &sa.atom, value_atoms);
    }
    ctx
}

fn apply_atom(ctx: &mut Context, a: &Atom, value_atoms: bool) {
    match a {
        Atom::Cmp { left, op, right } => {
            let lnode = operand_node(left);
            let rnode = operand_node(right);
            match (lnode, rnode, left, right) {
                (Some(l), Some(r), _, _) => {
                    if *op == CmpOp::Eq {
                        ctx.union(&l, &r);
                        ctx.with(&l, |iv| iv.not_null = true);
                    } else if value_atoms {
                        ctx.with(&l, |iv| iv.not_null = true);
                        ctx.with(&r, |iv| iv.not_null = true);
                    }
                }
                (Some(node), None, _, Operand::Lit(v)) if value_atoms => {
                    apply_value_cmp(ctx, &node, *op, v);
                }
                (None, Some(node), Operand::Lit(v), _) if value_atoms => {
                    apply_value_cmp(ctx, &node, op.flip(), v);
                }
                _ => {}
            }
        }
        Atom::InList { col, items, negated } if value_atoms => {
            let Some(node) = Node::of_col(col) else { return };
            let lits: Vec<Value> = items
                .iter()
                .filter_map(|o| match o {
                    Operand::Lit(v) => Some(v.clone()),
                    _ => None,
                })
                .collect();
            ctx.with(&node, |iv| iv.not_null = true);
            // Parameters in the list make the allowed set open-ended.
            if lits.len() == items.len() {
                if *negated {
                    ctx.with(&node, |iv| iv.exclude.extend(lits));
                } else {
                    ctx.with(&node, |iv| iv.restrict_include(lits));
                }
            }
        }
        Atom::IsNull { col, negated } => {
            let Some(node) = Node::of_col(col) else { return };
            if value_atoms {
                if *negated {
                    ctx.with(&node, |iv| iv.not_null = true);
                } else {
                    ctx.with(&node, |iv| iv.must_null = true);
                }
            }
        }
        Atom::Regex { col, .. } | Atom::InSubquery { col, .. } if value_atoms => {
            if let Some(node) = Node::of_col(col) {
                ctx.with(&node, |iv| iv.not_null = true);
            }
        }
        _ => {}
    }
}

fn operand_node(o: &Operand) -> Option<Node> {
    match o {
        Operand::Col(c) => Node::of_col(c),
        Operand::Param(n) => Some(Node::Param(*n)),
        _ => None,
    }
}

fn apply_value_cmp(ctx: &mut Context, node: &Node, op: CmpOp, v: &Value) {
    ctx.with(node, |iv| {
        iv.not_null = true;
        match op {
            CmpOp::Eq => iv.restrict_include([v.clone()]),
            CmpOp::Ne => {
                iv.exclude.insert(v.clone());
            }
            CmpOp::Gt => iv.narrow_lo(v.clone(), false),
            CmpOp::Ge => iv.narrow_lo(v.clone(), true),
            CmpOp::Lt => iv.narrow_hi(v.clone(), false),
            CmpOp::Le => iv.narrow_hi(v.clone(), true),
        }
    });
}

/// A branch can never evaluate TRUE: a constant FALSE atom or an empty
/// merged interval.
pub fn branch_empty(base: &Context, q: &QueryTemplate, branch: &Branch) -> bool {
    if branch
        .iter()
        .any(|sa| matches!(sa.atom, Atom::Const(false)))
    {
        return true;
    }
    branch_context(base, q, branch, true, None).any_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{Constraint, ConstraintSource, NumBound, Schema};
    use crate::sql::parse_template;

    fn schema() -> Schema {
        Schema::from_json(
            r#"{"tables":[
                {"name":"items","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"f","type":"integer","nullable":false},
                    {"name":"g","type":"integer"},
                    {"name":"status","type":"text"}]}]}"#,
        )
        .unwrap()
    }

    fn cs_f_1_10() -> ConstraintSet {
        ConstraintSet::new(vec![Constraint::new(
            "items",
            vec!["f".into()],
            ConstraintKind::Numerical {
                lower: Some(NumBound::new(Value::Int(1), true)),
                upper: Some(NumBound::new(Value::Int(10), true)),
                equal: None,
            },
            ConstraintSource::BuiltinValidation,
        )])
    }

    fn branches(sql: &str) -> (QueryTemplate, Vec<Branch>) {
        let t = parse_template(sql).unwrap().resolve(&schema()).unwrap();
        let b = to_dnf(&t.predicate).unwrap();
        (t, b)
    }

    #[test]
    fn disjoint_constraint_and_atom_empty_branch() {
        let (q, b) = branches("SELECT items.id FROM items WHERE items.f < 0");
        let base = constraint_facts(&q, &cs_f_1_10(), &schema());
        assert!(branch_empty(&base, &q, &b[0]));
    }

    #[test]
    fn live_branch_keeps_disjunction_alive() {
        let (q, b) = branches("SELECT items.id FROM items WHERE items.f > 200 OR items.f < 5");
        let base = constraint_facts(&q, &cs_f_1_10(), &schema());
        assert!(branch_empty(&base, &q, &b[0]));
        assert!(!branch_empty(&base, &q, &b[1]));
    }

    #[test]
    fn presence_with_is_null_is_empty() {
        let (q, b) = branches("SELECT items.id FROM items WHERE items.f IS NULL");
        let base = constraint_facts(&q, &cs_f_1_10(), &schema());
        assert!(branch_empty(&base, &q, &b[0]));
    }

    #[test]
    fn equality_propagates_bounds_to_peer() {
        let (q, b) = branches(
            "SELECT items.id FROM items WHERE items.f > 3 AND items.f = items.g",
        );
        let base = constraint_facts(&q, &cs_f_1_10(), &schema());
        let ctx = branch_context(&base, &q, &b[0], true, None);
        let g = ctx.col_interval("items", "g");
        assert_eq!(g.lo, Some(Bound { value: Value::Int(3), inclusive: false }));
        assert_eq!(g.hi, Some(Bound { value: Value::Int(10), inclusive: true }));
    }

    #[test]
    fn constraint_only_context_ignores_value_atoms() {
        let (q, b) = branches("SELECT items.id FROM items WHERE items.f > 3");
        let base = constraint_facts(&q, &cs_f_1_10(), &schema());
        let ctx = branch_context(&base, &q, &b[0], false, None);
        let f = ctx.col_interval("items", "f");
        assert_eq!(f.lo, Some(Bound { value: Value::Int(1), inclusive: true }));
        assert!(f.not_null, "schema NOT NULL carries over");
        assert!(f.always_satisfies(CmpOp::Gt, &Value::Int(0)));
        assert!(!f.always_satisfies(CmpOp::Gt, &Value::Int(3)));
    }

    #[test]
    fn integral_open_interval_is_empty() {
        let mut iv = Interval {
            integral: true,
            not_null: true,
            ..Interval::default()
        };
        iv.narrow_lo(Value::Int(3), false);
        iv.narrow_hi(Value::Int(4), false);
        assert!(iv.is_empty());
        let mut fl = Interval {
            not_null: true,
            ..Interval::default()
        };
        fl.narrow_lo(Value::Float(3.0), false);
        fl.narrow_hi(Value::Float(4.0), false);
        assert!(!fl.is_empty());
    }

    #[test]
    fn dnf_caps_branch_count() {
        // 2^7 = 128 branches exceeds the 64 cap.
        let clauses: Vec<String> = (0..7)
            .map(|i| format!("(items.f = {i} OR items.g = {i})"))
            .collect();
        let sql = format!("SELECT items.id FROM items WHERE {}", clauses.join(" AND "));
        let t = parse_template(&sql).unwrap();
        assert!(to_dnf(&t.predicate).is_none());
    }

    #[test]
    fn negation_flips_atoms_and_marks_sites() {
        let t = parse_template("SELECT items.id FROM items WHERE NOT (items.f > 5 AND items.status = 'a')").unwrap();
        let b = to_dnf(&t.predicate).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|br| br.len() == 1 && br[0].negated_site));
        match &b[0][0].atom {
            Atom::Cmp { op, .. } => assert_eq!(*op, CmpOp::Le),
            other => panic!("expected flipped comparison, got {other:?}"),
        }
        let rebuilt = replace_site(&t.predicate, b[0][0].site, false);
        // NOT((FALSE) AND x) == TRUE regardless of x.
        assert!(rebuilt.is_const(true), "{rebuilt:?}");
    }
}
