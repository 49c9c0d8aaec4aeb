//! Constraint-respecting synthetic data generation.
//!
//! Tables fill in foreign-key topological order. Unique keys are drawn by
//! permutation sampling over enumerable column domains (guaranteed distinct),
//! everything else by rejection sampling with a retry cap. Deterministic for
//! a given seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::Database;
use crate::constraints::{
    declared_constraints, numeric_range, Constraint, ConstraintKind, ConstraintSet, NumBound,
    Schema, ScopePredicate,
};
use crate::sql::{Atom, Operand, QueryTemplate};
use crate::value::{ColumnType, Value};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("foreign keys form a cycle: {}", .0.join(" -> "))]
    CyclicForeignKeys(Vec<String>),
    #[error("cannot populate {table}: {detail}")]
    Infeasible { table: String, detail: String },
    #[error("cannot sample {table}.{column} from pattern {pattern:?}: {reason}")]
    Unsampleable {
        table: String,
        column: String,
        pattern: String,
        reason: String,
    },
    #[error("no value satisfies the constraints on {table}.{column}")]
    Unsatisfiable { table: String, column: String },
}

const ROW_RETRIES: usize = 200;
const VALUE_RETRIES: usize = 100;
const MAX_PERMUTATION_SPACE: u64 = 1_000_000;
const NULL_PROB: f64 = 0.15;

/// Everything known about one column before sampling.
struct ColumnGen {
    ty: ColumnType,
    not_null: bool,
    fk_pool: Option<Vec<Value>>,
    inclusion: Option<Vec<Value>>,
    lower: Option<NumBound>,
    upper: Option<NumBound>,
    len_min: Option<u64>,
    len_max: Option<u64>,
    formats: Vec<(String, bool, regex::Regex)>,
    in_unique_key: bool,
}

impl ColumnGen {
    fn int_bounds(&self, default_lo: i64, default_hi: i64) -> (i64, i64) {
        let lo = match &self.lower {
            Some(b) => {
                let v = b.as_f64();
                if b.inclusive {
                    v.ceil() as i64
                } else {
                    v.floor() as i64 + 1
                }
            }
            None => default_lo,
        };
        let hi = match &self.upper {
            Some(b) => {
                let v = b.as_f64();
                if b.inclusive {
                    v.floor() as i64
                } else {
                    v.ceil() as i64 - 1
                }
            }
            None => default_hi,
        };
        (lo, hi)
    }

    /// Finite candidate list when one exists, for permutation sampling.
    fn enumerable(&self) -> Option<Vec<Value>> {
        if let Some(pool) = &self.fk_pool {
            return Some(pool.clone());
        }
        if let Some(vals) = &self.inclusion {
            return Some(vals.clone());
        }
        match &self.ty {
            ColumnType::Enum(vs) => Some(vs.iter().map(|s| Value::Text(s.clone())).collect()),
            ColumnType::Boolean => Some(vec![Value::Bool(false), Value::Bool(true)]),
            ColumnType::Integer => {
                let (lo, hi) = self.int_bounds(0, 99);
                if lo > hi || (hi - lo) as u64 >= MAX_PERMUTATION_SPACE {
                    return None;
                }
                Some((lo..=hi).map(Value::Int).collect())
            }
            _ => None,
        }
    }

    /// True when `v` satisfies every single-column value constraint.
    fn valid(&self, v: &Value) -> bool {
        if v.is_null() {
            return !self.not_null;
        }
        if !v.fits(&self.ty) {
            return false;
        }
        if let Some(vals) = &self.inclusion {
            if !vals.iter().any(|i| i == v) {
                return false;
            }
        }
        if let Some(pool) = &self.fk_pool {
            if !pool.iter().any(|p| p.sql_eq(v) == Some(true)) {
                return false;
            }
        }
        if self.lower.is_some() || self.upper.is_some() {
            let Some(x) = v.as_f64() else { return false };
            if let Some(b) = &self.lower {
                let l = b.as_f64();
                if if b.inclusive { x < l } else { x <= l } {
                    return false;
                }
            }
            if let Some(b) = &self.upper {
                let u = b.as_f64();
                if if b.inclusive { x > u } else { x >= u } {
                    return false;
                }
            }
        }
        if self.len_min.is_some() || self.len_max.is_some() || !self.formats.is_empty() {
            let Value::Text(s) = v else { return false };
            let n = s.chars().count() as u64;
            if self.len_min.is_some_and(|m| n < m) || self.len_max.is_some_and(|m| n > m) {
                return false;
            }
            if self.formats.iter().any(|(_, _, re)| !re.is_match(s)) {
                return false;
            }
        }
        true
    }
}

/// Population order: every foreign key's parent table before its child.
/// Ties break alphabetically so the order is stable.
fn topo_order(schema: &Schema, cs: &ConstraintSet) -> Result<Vec<String>, DatagenError> {
    let mut parents: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for t in &schema.tables {
        parents.insert(&t.name, BTreeSet::new());
    }
    for c in cs.iter() {
        if let ConstraintKind::ForeignKey { ref_table, .. } = &c.kind {
            if ref_table != &c.table {
                if let Some(deps) = parents.get_mut(c.table.as_str()) {
                    deps.insert(ref_table);
                }
            } else {
                // Self-reference: a row may point at an earlier row of the
                // same table, which per-table generation cannot honor.
                return Err(DatagenError::CyclicForeignKeys(vec![
                    c.table.clone(),
                    c.table.clone(),
                ]));
            }
        }
    }
    let mut order = Vec::with_capacity(parents.len());
    let mut placed: BTreeSet<&str> = BTreeSet::new();
    while placed.len() < parents.len() {
        let next = parents
            .iter()
            .find(|(t, deps)| !placed.contains(**t) && deps.iter().all(|d| placed.contains(d)))
            .map(|(t, _)| *t);
        match next {
            Some(t) => {
                placed.insert(t);
                order.push(t.to_string());
            }
            None => {
                // Walk parent links from any remaining table to exhibit a cycle.
                let start = parents.keys().find(|t| !placed.contains(**t)).unwrap();
                let mut cycle = vec![start.to_string()];
                let mut cur = *start;
                loop {
                    let parent = parents[cur]
                        .iter()
                        .find(|d| !placed.contains(**d))
                        .unwrap();
                    cycle.push(parent.to_string());
                    if cycle[..cycle.len() - 1].contains(&parent.to_string()) {
                        break;
                    }
                    cur = parent;
                }
                return Err(DatagenError::CyclicForeignKeys(cycle));
            }
        }
    }
    Ok(order)
}

/// Sample a string matching a regex pattern by walking its parsed form.
/// Bounded repetition; alternation branches picked uniformly.
pub(crate) fn sample_pattern(pattern: &str, ci: bool, rng: &mut ChaCha8Rng) -> Result<String, String> {
    use regex_syntax::hir::{Class, Hir, HirKind, Look};

    let hir = regex_syntax::ParserBuilder::new()
        .case_insensitive(ci)
        .build()
        .parse(pattern)
        .map_err(|e| e.to_string())?;

    fn pick_char(ranges: &[(u32, u32)], rng: &mut ChaCha8Rng) -> Option<char> {
        // Prefer printable ASCII when the class allows it.
        let printable: Vec<(u32, u32)> = ranges
            .iter()
            .filter_map(|(s, e)| {
                let s = (*s).max(0x20);
                let e = (*e).min(0x7e);
                (s <= e).then_some((s, e))
            })
            .collect();
        let use_ranges = if printable.is_empty() { ranges } else { &printable };
        let total: u64 = use_ranges.iter().map(|(s, e)| (e - s + 1) as u64).sum();
        if total == 0 {
            return None;
        }
        let mut nth = rng.random_range(0..total);
        for (s, e) in use_ranges {
            let span = (e - s + 1) as u64;
            if nth < span {
                return char::from_u32(s + nth as u32);
            }
            nth -= span;
        }
        None
    }

    fn walk(hir: &Hir, rng: &mut ChaCha8Rng, out: &mut String, depth: usize) -> Result<(), String> {
        if depth > 64 {
            return Err("pattern nests too deeply".into());
        }
        match hir.kind() {
            HirKind::Empty => {}
            HirKind::Literal(lit) => {
                out.push_str(std::str::from_utf8(&lit.0).map_err(|_| "non-UTF-8 literal")?)
            }
            HirKind::Class(Class::Unicode(cls)) => {
                let ranges: Vec<(u32, u32)> = cls
                    .ranges()
                    .iter()
                    .map(|r| (r.start() as u32, r.end() as u32))
                    .collect();
                match pick_char(&ranges, rng) {
                    Some(c) => out.push(c),
                    None => return Err("empty character class".into()),
                }
            }
            HirKind::Class(Class::Bytes(cls)) => {
                let ranges: Vec<(u32, u32)> = cls
                    .ranges()
                    .iter()
                    .map(|r| (r.start() as u32, r.end() as u32))
                    .collect();
                match pick_char(&ranges, rng) {
                    Some(c) => out.push(c),
                    None => return Err("empty character class".into()),
                }
            }
            HirKind::Look(look) => match look {
                Look::Start | Look::End | Look::StartLF | Look::EndLF | Look::StartCRLF
                | Look::EndCRLF => {}
                _ => return Err("word-boundary assertions are not sampleable".into()),
            },
            HirKind::Repetition(rep) => {
                let min = rep.min;
                let cap = rep.max.unwrap_or(min + 3).min(min + 3);
                let n = rng.random_range(min..=cap);
                for _ in 0..n {
                    walk(&rep.sub, rng, out, depth + 1)?;
                }
            }
            HirKind::Capture(c) => walk(&c.sub, rng, out, depth + 1)?,
            HirKind::Concat(parts) => {
                for p in parts {
                    walk(p, rng, out, depth + 1)?;
                }
            }
            HirKind::Alternation(parts) => {
                let pick = rng.random_range(0..parts.len());
                walk(&parts[pick], rng, out, depth + 1)?;
            }
        }
        Ok(())
    }

    let mut out = String::new();
    walk(&hir, rng, &mut out, 0)?;
    Ok(out)
}

fn random_text(len_min: u64, len_max: u64, rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(len_min..=len_max.max(len_min));
    (0..len)
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect()
}

/// One candidate value for a column; validity is checked by the caller.
fn sample_value(gen: &ColumnGen, rng: &mut ChaCha8Rng) -> Result<Value, String> {
    if let Some(pool) = &gen.fk_pool {
        return pool
            .choose(rng)
            .cloned()
            .ok_or_else(|| "foreign-key parent table has no rows".into());
    }
    if let Some(vals) = &gen.inclusion {
        return vals
            .choose(rng)
            .cloned()
            .ok_or_else(|| "inclusion list is empty".into());
    }
    if let Some((pattern, ci, _)) = gen.formats.first() {
        return sample_pattern(pattern, *ci, rng).map(Value::Text);
    }
    Ok(match &gen.ty {
        ColumnType::Integer => {
            let (lo, hi) = gen.int_bounds(0, 99);
            if lo > hi {
                return Err("empty numeric range".into());
            }
            Value::Int(rng.random_range(lo..=hi))
        }
        ColumnType::Float => {
            let lo = gen.lower.as_ref().map(|b| b.as_f64()).unwrap_or(0.0);
            let hi = gen.upper.as_ref().map(|b| b.as_f64()).unwrap_or(100.0);
            if lo > hi {
                return Err("empty numeric range".into());
            }
            // Quarter-step grid keeps literals short and comparisons exact.
            let steps = ((hi - lo) * 4.0).floor().max(0.0) as i64;
            Value::Float(lo + rng.random_range(0..=steps) as f64 / 4.0)
        }
        ColumnType::Timestamp => {
            let (lo, hi) = gen.int_bounds(1_600_000_000, 1_600_009_999);
            if lo > hi {
                return Err("empty numeric range".into());
            }
            Value::Timestamp(rng.random_range(lo..=hi))
        }
        ColumnType::Boolean => Value::Bool(rng.random_bool(0.5)),
        ColumnType::Text => Value::Text(random_text(
            gen.len_min.unwrap_or(3),
            gen.len_max.unwrap_or(8).min(gen.len_min.unwrap_or(3).max(8)),
            rng,
        )),
        ColumnType::Enum(vs) => Value::Text(
            vs.choose(rng)
                .ok_or("enum type with no values")?
                .clone(),
        ),
    })
}

fn predicate_holds(pred: &ScopePredicate, row: &BTreeMap<String, Value>) -> bool {
    match row.get(&pred.column) {
        Some(v) => pred.matches(v),
        None => false,
    }
}

struct UniqueTracker {
    key: Vec<String>,
    predicate: Option<ScopePredicate>,
    seen: HashSet<Vec<Value>>,
}

impl UniqueTracker {
    fn admits(&self, row: &BTreeMap<String, Value>) -> bool {
        if let Some(p) = &self.predicate {
            if !predicate_holds(p, row) {
                return true;
            }
        }
        let key: Vec<Value> = self.key.iter().map(|c| row[c].clone()).collect();
        !self.seen.contains(&key)
    }

    fn record(&mut self, row: &BTreeMap<String, Value>) {
        if let Some(p) = &self.predicate {
            if !predicate_holds(p, row) {
                return;
            }
        }
        let key: Vec<Value> = self.key.iter().map(|c| row[c].clone()).collect();
        self.seen.insert(key);
    }
}

pub fn generate_database(
    schema: &Schema,
    cs: &ConstraintSet,
    sizes: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<Database, DatagenError> {
    let mut all = cs.constraints.clone();
    all.extend(declared_constraints(schema).map_err(|e| DatagenError::Infeasible {
        table: String::new(),
        detail: format!("schema-declared constraints are malformed: {e}"),
    })?);
    let full = ConstraintSet::new(all).normalize();
    for c in full.iter() {
        if c.unsatisfiable {
            return Err(DatagenError::Infeasible {
                table: c.table.clone(),
                detail: format!("{} constraint is unsatisfiable after merging", c.kind.name()),
            });
        }
    }

    let order = topo_order(schema, &full)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = Database::new();

    for table_name in order {
        let table = schema.table(&table_name).expect("order built from schema");
        let size = sizes.get(&table_name).copied().unwrap_or(0);
        let table_cs: Vec<&Constraint> =
            full.iter().filter(|c| c.table == table_name).collect();

        // Uniqueness constraints, shortest key first so a permuted short key
        // keeps longer keys that extend it automatically distinct.
        let mut uniques: Vec<(Vec<String>, Option<ScopePredicate>)> = table_cs
            .iter()
            .filter_map(|c| match &c.kind {
                ConstraintKind::Uniqueness { predicate, .. } => {
                    let mut key = Vec::new();
                    for col in c.unique_key() {
                        if !key.contains(&col) {
                            key.push(col);
                        }
                    }
                    Some((key, predicate.clone()))
                }
                _ => None,
            })
            .collect();
        uniques.sort_by_key(|(k, p)| (k.len(), k.clone(), p.is_some()));
        uniques.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let unique_cols: BTreeSet<&String> = uniques.iter().flat_map(|(k, _)| k.iter()).collect();

        // Per-column generators.
        let mut gens: BTreeMap<String, ColumnGen> = BTreeMap::new();
        for col in &table.columns {
            let mut g = ColumnGen {
                ty: col.ty.clone(),
                not_null: !col.nullable,
                fk_pool: None,
                inclusion: None,
                lower: None,
                upper: None,
                len_min: None,
                len_max: None,
                formats: Vec::new(),
                in_unique_key: unique_cols.contains(&col.name),
            };
            for c in &table_cs {
                if c.columns != [col.name.clone()] {
                    continue;
                }
                match &c.kind {
                    ConstraintKind::Presence => g.not_null = true,
                    ConstraintKind::Inclusion { values } => {
                        let fitting: Vec<Value> =
                            values.iter().filter(|v| v.fits(&g.ty)).cloned().collect();
                        g.inclusion = Some(fitting);
                    }
                    ConstraintKind::Numerical { .. } => {
                        let (lo, hi) = numeric_range(&c.kind);
                        g.lower = lo;
                        g.upper = hi;
                    }
                    ConstraintKind::Length { min, max } => {
                        g.len_min = *min;
                        g.len_max = *max;
                    }
                    ConstraintKind::Format { patterns } => {
                        for p in &patterns.clone() {
                            let re = regex::RegexBuilder::new(&p.pattern)
                                .case_insensitive(p.case_insensitive)
                                .build()
                                .map_err(|e| DatagenError::Unsampleable {
                                    table: table_name.clone(),
                                    column: col.name.clone(),
                                    pattern: p.pattern.clone(),
                                    reason: e.to_string(),
                                })?;
                            g.formats.push((p.pattern.clone(), p.case_insensitive, re));
                        }
                    }
                    ConstraintKind::ForeignKey { ref_table, ref_column } => {
                        let parent = schema.table(ref_table).and_then(|t| {
                            t.columns.iter().position(|c| &c.name == ref_column)
                        });
                        let pool: Vec<Value> = match parent {
                            Some(idx) => db
                                .rows(ref_table)
                                .iter()
                                .map(|r| r[idx].clone())
                                .filter(|v| !v.is_null())
                                .collect(),
                            None => Vec::new(),
                        };
                        if pool.is_empty() && size > 0 && (g.not_null || !col.nullable) {
                            return Err(DatagenError::Infeasible {
                                table: table_name.clone(),
                                detail: format!(
                                    "{} requires rows in {} but it is empty",
                                    col.name, ref_table
                                ),
                            });
                        }
                        g.fk_pool = Some(pool);
                    }
                    ConstraintKind::Uniqueness { .. } => {}
                }
            }
            // Widen unconstrained unique integer keys so both permutation and
            // rejection sampling have room: 1..=max(4*size, 100) keeps id-style
            // columns far from saturation.
            if g.in_unique_key
                && g.ty == ColumnType::Integer
                && g.fk_pool.is_none()
                && g.inclusion.is_none()
                && g.lower.is_none()
                && g.upper.is_none()
            {
                g.lower = Some(NumBound::new(Value::Int(1), true));
                g.upper = Some(NumBound::new(Value::Int((4 * size as i64).max(100)), true));
            }
            gens.insert(col.name.clone(), g);
        }

        // Size every unconditional unique key with an enumerable domain; any
        // key space smaller than the requested row count is a hard error.
        let mut sized: Vec<(&Vec<String>, Vec<Vec<Value>>, u64)> = Vec::new();
        for (key, pred) in &uniques {
            if pred.is_some() {
                continue;
            }
            let domains: Option<Vec<Vec<Value>>> =
                key.iter().map(|c| gens[c].enumerable()).collect();
            let Some(domains) = domains else { continue };
            let product = domains
                .iter()
                .map(|d| d.len() as u64)
                .try_fold(1u64, |a, b| a.checked_mul(b))
                .unwrap_or(u64::MAX);
            if (product as usize) < size {
                return Err(DatagenError::Infeasible {
                    table: table_name.clone(),
                    detail: format!(
                        "unique key ({}) has only {} possible tuples, need {}",
                        key.join(", "),
                        product,
                        size
                    ),
                });
            }
            if product <= MAX_PERMUTATION_SPACE {
                sized.push((key, domains, product));
            }
        }
        // Permute the tightest key (rejection would thrash on it); the rest
        // are handled by rejection, which their slack can afford.
        sized.sort_by(|a, b| {
            (size as f64 / b.2 as f64)
                .partial_cmp(&(size as f64 / a.2 as f64))
                .unwrap()
                .then(a.0.len().cmp(&b.0.len()))
                .then(a.0.cmp(b.0))
        });
        let mut permuted: Option<(Vec<String>, Vec<Vec<Value>>)> = None;
        if let Some((key, domains, product)) = sized.first() {
            // Partial Fisher-Yates over the tuple index space.
            let mut indices: Vec<u64> = (0..*product).collect();
            let mut tuples = Vec::with_capacity(size);
            for i in 0..size {
                let j = rng.random_range(i..indices.len());
                indices.swap(i, j);
                let mut ix = indices[i];
                let mut tuple = Vec::with_capacity(domains.len());
                for d in domains {
                    tuple.push(d[(ix % d.len() as u64) as usize].clone());
                    ix /= d.len() as u64;
                }
                tuples.push(tuple);
            }
            permuted = Some(((*key).clone(), tuples));
        }

        let mut trackers: Vec<UniqueTracker> = uniques
            .iter()
            .filter(|(k, p)| Some(k) != permuted.as_ref().map(|(k, _)| k) || p.is_some())
            .map(|(k, p)| UniqueTracker {
                key: k.clone(),
                predicate: p.clone(),
                seen: HashSet::new(),
            })
            .collect();

        let mut rows: Vec<Vec<Value>> = Vec::with_capacity(size);
        for i in 0..size {
            let mut placed = false;
            'attempt: for _ in 0..ROW_RETRIES {
                let mut row: BTreeMap<String, Value> = BTreeMap::new();
                if let Some((key, tuples)) = &permuted {
                    for (c, v) in key.iter().zip(&tuples[i]) {
                        row.insert(c.clone(), v.clone());
                    }
                }
                for col in &table.columns {
                    if row.contains_key(&col.name) {
                        continue;
                    }
                    let g = &gens[&col.name];
                    if !g.not_null && !g.in_unique_key && rng.random_bool(NULL_PROB) {
                        row.insert(col.name.clone(), Value::Null);
                        continue;
                    }
                    let mut found = false;
                    for _ in 0..VALUE_RETRIES {
                        match sample_value(g, &mut rng) {
                            Ok(v) if g.valid(&v) => {
                                row.insert(col.name.clone(), v);
                                found = true;
                                break;
                            }
                            Ok(_) => continue,
                            Err(reason) => {
                                if let Some((pattern, _, _)) = g.formats.first() {
                                    return Err(DatagenError::Unsampleable {
                                        table: table_name.clone(),
                                        column: col.name.clone(),
                                        pattern: pattern.clone(),
                                        reason,
                                    });
                                }
                                return Err(DatagenError::Infeasible {
                                    table: table_name.clone(),
                                    detail: format!("{}: {}", col.name, reason),
                                });
                            }
                        }
                    }
                    if !found {
                        return Err(DatagenError::Unsatisfiable {
                            table: table_name.clone(),
                            column: col.name.clone(),
                        });
                    }
                }
                for t in &trackers {
                    if !t.admits(&row) {
                        continue 'attempt;
                    }
                }
                for t in &mut trackers {
                    t.record(&row);
                }
                rows.push(table.columns.iter().map(|c| row[&c.name].clone()).collect());
                placed = true;
                break;
            }
            if !placed {
                return Err(DatagenError::Infeasible {
                    table: table_name.clone(),
                    detail: format!("uniqueness rejection budget exhausted at row {}", i + 1),
                });
            }
        }
        db.tables.insert(table_name.clone(), rows);
    }
    Ok(db)
}

/// Parameter vectors for differential testing: values for each ordinal are
/// drawn from the generated data of the column the parameter is compared
/// against, falling back to type-shaped random values.
pub fn sample_params(
    q: &QueryTemplate,
    schema: &Schema,
    db: &Database,
    count: usize,
    seed: u64,
) -> Vec<Vec<Value>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = q.param_count() as usize;
    // Column each ordinal is compared against, when known.
    let mut cols: Vec<Option<(String, String)>> = vec![None; n];
    let mut note = |ordinal: u32, col: Option<(String, String)>| {
        let slot = &mut cols[ordinal as usize - 1];
        if slot.is_none() {
            *slot = col;
        }
    };
    for a in q.predicate.atoms() {
        match a {
            Atom::Cmp { left, right, .. } => {
                let colref = |o: &Operand| match o {
                    Operand::Col(c) => c.table.as_ref().map(|t| (t.clone(), c.column.clone())),
                    _ => None,
                };
                if let Operand::Param(k) = right {
                    note(*k, colref(left));
                }
                if let Operand::Param(k) = left {
                    note(*k, colref(right));
                }
            }
            Atom::InList { col, items, .. } => {
                for it in items {
                    if let Operand::Param(k) = it {
                        note(*k, col.table.as_ref().map(|t| (t.clone(), col.column.clone())));
                    }
                }
            }
            _ => {}
        }
    }
    let types = q.infer_param_types(schema);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|i| {
                    if let Some((t, c)) = &cols[i] {
                        let idx = schema
                            .table(t)
                            .and_then(|td| td.columns.iter().position(|cd| &cd.name == c));
                        if let Some(idx) = idx {
                            let pool: Vec<&Value> = db
                                .rows(t)
                                .iter()
                                .map(|r| &r[idx])
                                .filter(|v| !v.is_null())
                                .collect();
                            if !pool.is_empty() && rng.random_bool(0.7) {
                                return (*pool.choose(&mut rng).unwrap()).clone();
                            }
                        }
                    }
                    match types.get(i).and_then(|t| t.as_ref()) {
                        Some(ColumnType::Float) => Value::Float(rng.random_range(0..400) as f64 / 4.0),
                        Some(ColumnType::Boolean) => Value::Bool(rng.random_bool(0.5)),
                        Some(ColumnType::Timestamp) => {
                            Value::Timestamp(rng.random_range(1_600_000_000..1_600_010_000))
                        }
                        Some(ColumnType::Text) => Value::Text(random_text(3, 8, &mut rng)),
                        Some(ColumnType::Enum(vs)) if !vs.is_empty() => {
                            Value::Text(vs.choose(&mut rng).unwrap().clone())
                        }
                        _ => Value::Int(rng.random_range(0..100)),
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSource;

    fn schema() -> Schema {
        Schema::from_json(
            r#"{"tables":[
                {"name":"users","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"type","type":"text","nullable":false},
                    {"name":"age","type":"integer"},
                    {"name":"email","type":"text"}]},
                {"name":"projects","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true}]},
                {"name":"members","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"user_id","type":"integer","nullable":false},
                    {"name":"project_id","type":"integer","nullable":false}]}]}"#,
        )
        .unwrap()
    }

    fn constraints() -> ConstraintSet {
        ConstraintSet::new(vec![
            Constraint::new(
                "users",
                vec!["type".into()],
                ConstraintKind::Inclusion {
                    values: vec![Value::Text("User".into()), Value::Text("AnonymousUser".into())],
                },
                ConstraintSource::Inheritance,
            ),
            Constraint::new(
                "users",
                vec!["age".into()],
                ConstraintKind::Numerical {
                    lower: Some(NumBound::new(Value::Int(0), true)),
                    upper: Some(NumBound::new(Value::Int(120), true)),
                    equal: None,
                },
                ConstraintSource::BuiltinValidation,
            ),
            Constraint::new(
                "users",
                vec!["email".into()],
                ConstraintKind::Format {
                    patterns: vec![FormatPattern {
                        pattern: r"^[a-z]{3,8}@example\.(com|org)$".into(),
                        case_insensitive: false,
                    }],
                },
                ConstraintSource::BuiltinValidation,
            ),
            Constraint::new(
                "members",
                vec!["user_id".into()],
                ConstraintKind::ForeignKey {
                    ref_table: "users".into(),
                    ref_column: "id".into(),
                },
                ConstraintSource::DbDeclared,
            ),
            Constraint::new(
                "members",
                vec!["project_id".into()],
                ConstraintKind::ForeignKey {
                    ref_table: "projects".into(),
                    ref_column: "id".into(),
                },
                ConstraintSource::DbDeclared,
            ),
            Constraint::new(
                "members",
                vec!["user_id".into(), "project_id".into()],
                ConstraintKind::Uniqueness {
                    scope: vec![],
                    predicate: None,
                },
                ConstraintSource::HasOne,
            ),
        ])
    }

    use crate::constraints::FormatPattern;

    fn sizes(u: usize, p: usize, m: usize) -> BTreeMap<String, usize> {
        [
            ("users".to_string(), u),
            ("projects".to_string(), p),
            ("members".to_string(), m),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn saturated_unique_pairs_all_distinct() {
        // 10 users x 10 projects with 100 member rows uses every pair once.
        let db = generate_database(&schema(), &constraints(), &sizes(10, 10, 100), 7).unwrap();
        let pairs: BTreeSet<(Value, Value)> = db
            .rows("members")
            .iter()
            .map(|r| (r[1].clone(), r[2].clone()))
            .collect();
        assert_eq!(pairs.len(), 100);
    }

    #[test]
    fn values_respect_inclusion_range_format_and_fk() {
        let schema = schema();
        let cs = constraints();
        let db = generate_database(&schema, &cs, &sizes(30, 5, 40), 42).unwrap();
        let user_ids: BTreeSet<Value> =
            db.rows("users").iter().map(|r| r[0].clone()).collect();
        assert_eq!(user_ids.len(), 30, "primary keys distinct");
        let re = regex::Regex::new(r"^[a-z]{3,8}@example\.(com|org)$").unwrap();
        for row in db.rows("users") {
            match &row[1] {
                Value::Text(t) => assert!(t == "User" || t == "AnonymousUser"),
                other => panic!("type column held {other:?}"),
            }
            match &row[2] {
                Value::Null => {}
                Value::Int(age) => assert!((0..=120).contains(age)),
                other => panic!("age column held {other:?}"),
            }
            match &row[3] {
                Value::Null => {}
                Value::Text(s) => assert!(re.is_match(s), "email {s:?}"),
                other => panic!("email column held {other:?}"),
            }
        }
        for row in db.rows("members") {
            assert!(user_ids.contains(&row[1]), "fk hit");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_database(&schema(), &constraints(), &sizes(10, 3, 12), 5).unwrap();
        let b = generate_database(&schema(), &constraints(), &sizes(10, 3, 12), 5).unwrap();
        let c = generate_database(&schema(), &constraints(), &sizes(10, 3, 12), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn error_when_unique_domain_too_small() {
        let err = generate_database(&schema(), &constraints(), &sizes(2, 2, 10), 1).unwrap_err();
        match err {
            DatagenError::Infeasible { table, detail } => {
                assert_eq!(table, "members");
                assert!(detail.contains("unique key"), "{detail}");
            }
            other => panic!("expected Infeasible, got {other:?}"),
        }
    }

    #[test]
    fn error_on_fk_cycle() {
        let schema = Schema::from_json(
            r#"{"tables":[
                {"name":"a","columns":[{"name":"id","type":"integer","nullable":false,"primary_key":true},{"name":"b_id","type":"integer"}]},
                {"name":"b","columns":[{"name":"id","type":"integer","nullable":false,"primary_key":true},{"name":"a_id","type":"integer"}]}]}"#,
        )
        .unwrap();
        let cs = ConstraintSet::new(vec![
            Constraint::new(
                "a",
                vec!["b_id".into()],
                ConstraintKind::ForeignKey { ref_table: "b".into(), ref_column: "id".into() },
                ConstraintSource::DbDeclared,
            ),
            Constraint::new(
                "b",
                vec!["a_id".into()],
                ConstraintKind::ForeignKey { ref_table: "a".into(), ref_column: "id".into() },
                ConstraintSource::DbDeclared,
            ),
        ]);
        let sizes = [("a".to_string(), 2), ("b".to_string(), 2)].into_iter().collect();
        match generate_database(&schema, &cs, &sizes, 1) {
            Err(DatagenError::CyclicForeignKeys(cycle)) => assert!(cycle.len() >= 2),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn pattern_sampler_handles_alternation_classes_repetition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let re = regex::Regex::new(r"^(red|green|blue)-[0-9]{2,4}[a-f]?$").unwrap();
        for _ in 0..50 {
            let s = sample_pattern(r"^(red|green|blue)-[0-9]{2,4}[a-f]?$", false, &mut rng).unwrap();
            assert!(re.is_match(&s), "sampled {s:?}");
        }
        assert!(sample_pattern(r"\bword\b", false, &mut rng).is_err());
    }

    #[test]
    fn param_samples_prefer_live_column_values() {
        let schema = schema();
        let db = generate_database(&schema, &constraints(), &sizes(20, 3, 10), 11).unwrap();
        let q = crate::sql::parse_template(
            "SELECT users.id FROM users WHERE users.type = $1 AND users.age > $2",
        )
        .unwrap()
        .resolve(&schema)
        .unwrap();
        let samples = sample_params(&q, &schema, &db, 5, 9);
        assert_eq!(samples.len(), 5);
        for s in &samples {
            assert_eq!(s.len(), 2);
            assert!(matches!(s[0], Value::Text(_)));
            assert!(matches!(s[1], Value::Int(_)));
        }
    }
}
