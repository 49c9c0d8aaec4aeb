//! Constraint extraction from model source files.
//!
//! Two passes over the parsed AST. Pass one reads data-validation statements:
//! the `validates_*_of` family and custom validator methods whose bodies
//! guard `errors.add` with a condition we can negate. Pass two reads class
//! relationships: single-table inheritance chains, polymorphic interfaces,
//! paired `has_one`/`belongs_to` associations, and state-machine blocks.
//! Everything the grammar does not cover is skipped and counted, never
//! guessed at; under-extraction is always sound because every emitted
//! constraint is implied by what the application enforces.
//!
//! Both passes visit each AST node at most once; [`Extraction::pass_visits`]
//! exposes the counters so tests can hold that invariant.

mod parse;

use std::collections::BTreeMap;
use std::fmt;

use crate::constraints::{
    Constraint, ConstraintKind, ConstraintSource, FormatPattern, NumBound, Schema,
};
use crate::value::Value;

pub use parse::{
    parse_model_files, AssocKind, ClassDef, CondExpr, CondStmt, Event, LeafExpr, ModelAst,
    OptValue, ParseError, StateLit, Stmt, Term, Transition, WherePred,
};

use parse::opt_to_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Info,
    Warn,
    Error,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Info => "INFO",
            Level::Warn => "WARN",
            Level::Error => "ERROR",
        }
    }
}

/// One extraction diagnostic, rendered as `LEVEL file:line message`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub level: Level,
    pub file: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}:{} {}",
            self.level.as_str(),
            self.file,
            self.line,
            self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub constraints: Vec<Constraint>,
    pub diagnostics: Vec<Diagnostic>,
    /// Error-guarding conditions that could not be fully translated.
    pub missed_conditions: usize,
    /// Statements outside the recognized grammar.
    pub opaque_statements: usize,
    /// Total AST nodes, for the visit-count invariant.
    pub node_count: usize,
    /// Nodes examined by pass one and pass two; each must be <= node_count.
    pub pass_visits: [usize; 2],
}

/// Parse model sources and run both extraction passes against the schema.
pub fn extract_all(
    sources: &[(String, String)],
    schema: &Schema,
) -> Result<Extraction, ParseError> {
    let ast = parse_model_files(sources)?;
    Ok(extract_from_ast(&ast, schema))
}

pub fn extract_from_ast(ast: &ModelAst, schema: &Schema) -> Extraction {
    let mut out = Extraction {
        constraints: Vec::new(),
        diagnostics: Vec::new(),
        missed_conditions: 0,
        opaque_statements: 0,
        node_count: ast.node_count(),
        pass_visits: [0, 0],
    };
    pass_validations(ast, schema, &mut out);
    pass_relationships(ast, schema, &mut out);
    dedup(&mut out.constraints);
    out
}

/// Lowercased class name (module path dropped) with a plural suffix.
pub fn tableize(class_name: &str) -> String {
    let base = class_name.rsplit("::").next().unwrap_or(class_name);
    pluralize(&base.to_ascii_lowercase())
}

fn pluralize(word: &str) -> String {
    let bytes = word.as_bytes();
    if let Some(&last) = bytes.last() {
        if last == b'y' && bytes.len() >= 2 && !b"aeiou".contains(&bytes[bytes.len() - 2]) {
            return format!("{}ies", &word[..word.len() - 1]);
        }
        if matches!(last, b's' | b'x' | b'z') || word.ends_with("ch") || word.ends_with("sh") {
            return format!("{word}es");
        }
    }
    format!("{word}s")
}

/// `wiki_page` -> `WikiPage`; used to resolve association targets.
fn camelize(name: &str) -> String {
    name.split('_')
        .map(|part| {
            let mut cs = part.chars();
            match cs.next() {
                Some(c) => c.to_uppercase().collect::<String>() + cs.as_str(),
                None => String::new(),
            }
        })
        .collect()
}

fn schema_check(c: &Constraint, schema: &Schema) -> Result<(), String> {
    let Some(table) = schema.table(&c.table) else {
        return Err(format!("table {} not in schema", c.table));
    };
    for col in c.referenced_columns() {
        if table.column(&col).is_none() {
            return Err(format!("column {}.{col} not in schema", c.table));
        }
    }
    if let ConstraintKind::ForeignKey {
        ref_table,
        ref_column,
    } = &c.kind
    {
        match schema.table(ref_table) {
            Some(t) if t.column(ref_column).is_some() => {}
            _ => return Err(format!("reference {ref_table}.{ref_column} not in schema")),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pass one: data validations

fn pass_validations(ast: &ModelAst, schema: &Schema, out: &mut Extraction) {
    for class in &ast.classes {
        out.pass_visits[0] += 1;
        let table = tableize(&class.name);
        let mut registered: Vec<&str> = Vec::new();
        let mut methods: Vec<(&str, &[CondStmt], usize)> = Vec::new();
        for stmt in &class.statements {
            out.pass_visits[0] += 1;
            match stmt {
                Stmt::Builtin {
                    api,
                    fields,
                    options,
                    line,
                } => builtin_constraints(&table, api, fields, options, class, *line, schema, out),
                Stmt::ValidateRegistration { methods: ms, .. } => {
                    registered.extend(ms.iter().map(String::as_str))
                }
                Stmt::Method { name, body, line } => {
                    out.pass_visits[0] += body.len();
                    methods.push((name.as_str(), body.as_slice(), *line));
                }
                Stmt::Opaque { .. } => out.opaque_statements += 1,
                _ => {}
            }
        }
        for (name, body, _) in methods {
            if !registered.contains(&name) {
                continue;
            }
            for cond_stmt in body {
                custom_constraints(&table, cond_stmt, class, schema, out);
            }
        }
    }
}

fn opt<'a>(options: &'a [(String, OptValue)], key: &str) -> Option<&'a OptValue> {
    options.iter().find(|(k, _)| k == key).map(|(_, v)| v)
}

fn opt_u64(options: &[(String, OptValue)], key: &str) -> Option<u64> {
    match opt(options, key)? {
        OptValue::Num(Value::Int(v)) if *v >= 0 => Some(*v as u64),
        _ => None,
    }
}

fn opt_num(options: &[(String, OptValue)], key: &str) -> Option<Value> {
    match opt(options, key)? {
        OptValue::Num(v) => Some(v.clone()),
        _ => None,
    }
}

#[allow(clippy::too_many_arguments)]
fn builtin_constraints(
    table: &str,
    api: &str,
    fields: &[String],
    options: &[(String, OptValue)],
    class: &ClassDef,
    line: usize,
    schema: &Schema,
    out: &mut Extraction,
) {
    let diag = |out: &mut Extraction, level, message: String| {
        out.diagnostics.push(Diagnostic {
            level,
            file: class.file.clone(),
            line,
            message,
        })
    };
    if fields.is_empty() {
        diag(out, Level::Warn, format!("{api} validation without fields"));
        return;
    }
    let kinds: Vec<ConstraintKind> = match api {
        "presence" => vec![ConstraintKind::Presence],
        "inclusion" => {
            let list = opt(options, "in").or_else(|| opt(options, "within"));
            let values = match list {
                Some(OptValue::List(items)) => {
                    let vals: Option<Vec<Value>> = items.iter().map(opt_to_value).collect();
                    match vals {
                        Some(v) => v,
                        None => {
                            diag(out, Level::Warn, "inclusion list has non-literal items".into());
                            return;
                        }
                    }
                }
                Some(OptValue::Range { lo, hi, exclusive }) => {
                    let hi = if *exclusive { *hi - 1 } else { *hi };
                    if hi < *lo || hi - *lo > 64 {
                        diag(out, Level::Warn, "inclusion range too wide to enumerate".into());
                        return;
                    }
                    (*lo..=hi).map(Value::Int).collect()
                }
                _ => {
                    diag(out, Level::Warn, "inclusion without a value list".into());
                    return;
                }
            };
            vec![ConstraintKind::Inclusion { values }]
        }
        "uniqueness" => {
            let scope = match opt(options, "scope") {
                Some(OptValue::Sym(s)) | Some(OptValue::Str(s)) => vec![s.clone()],
                Some(OptValue::List(items)) => items
                    .iter()
                    .filter_map(|it| match it {
                        OptValue::Sym(s) | OptValue::Str(s) => Some(s.clone()),
                        _ => None,
                    })
                    .collect(),
                _ => vec![],
            };
            vec![ConstraintKind::Uniqueness {
                scope,
                predicate: None,
            }]
        }
        "length" | "size" => {
            let mut min = opt_u64(options, "minimum");
            let mut max = opt_u64(options, "maximum");
            if let Some(OptValue::Range { lo, hi, exclusive }) =
                opt(options, "in").or_else(|| opt(options, "within"))
            {
                min = Some((*lo).max(0) as u64);
                max = Some((if *exclusive { hi - 1 } else { *hi }).max(0) as u64);
            }
            if let Some(v) = opt_u64(options, "is") {
                min = Some(v);
                max = Some(v);
            }
            if min.is_none() && max.is_none() {
                diag(out, Level::Warn, "length validation without usable bounds".into());
                return;
            }
            vec![ConstraintKind::Length { min, max }]
        }
        "format" => {
            let pattern = match opt(options, "with") {
                Some(OptValue::Regex {
                    pattern,
                    case_insensitive,
                }) => FormatPattern {
                    pattern: normalize_anchors(pattern),
                    case_insensitive: *case_insensitive,
                },
                _ => {
                    diag(out, Level::Warn, "format validation without a regex".into());
                    return;
                }
            };
            vec![ConstraintKind::Format {
                patterns: vec![pattern],
            }]
        }
        "numericality" => {
            let mut lower = None;
            let mut upper = None;
            if let Some(v) = opt_num(options, "greater_than") {
                lower = Some(NumBound::new(v, false));
            }
            if let Some(v) = opt_num(options, "greater_than_or_equal_to") {
                lower = Some(NumBound::new(v, true));
            }
            if let Some(v) = opt_num(options, "less_than") {
                upper = Some(NumBound::new(v, false));
            }
            if let Some(v) = opt_num(options, "less_than_or_equal_to") {
                upper = Some(NumBound::new(v, true));
            }
            let equal = opt_num(options, "equal_to");
            if lower.is_none() && upper.is_none() && equal.is_none() {
                diag(
                    out,
                    Level::Info,
                    "numericality without bounds adds no constraint".into(),
                );
                return;
            }
            vec![ConstraintKind::Numerical {
                lower,
                upper,
                equal,
            }]
        }
        other => {
            diag(out, Level::Warn, format!("unsupported validation {other}"));
            return;
        }
    };
    for field in fields {
        for kind in &kinds {
            let c = Constraint::new(
                table,
                vec![field.clone()],
                kind.clone(),
                ConstraintSource::BuiltinValidation,
            );
            emit_checked(c, class, line, schema, out);
        }
    }
}

/// Ruby regexes end strings with `\z` or `\Z`; the stricter `\z` is the one
/// our matcher understands, and it only narrows what the application already
/// accepts.
fn normalize_anchors(pattern: &str) -> String {
    pattern.replace("\\Z", "\\z")
}

fn emit_checked(
    c: Constraint,
    class: &ClassDef,
    line: usize,
    schema: &Schema,
    out: &mut Extraction,
) -> bool {
    if let Err(e) = c.check_invariants() {
        out.diagnostics.push(Diagnostic {
            level: Level::Error,
            file: class.file.clone(),
            line,
            message: e.to_string(),
        });
        return false;
    }
    if let Err(msg) = schema_check(&c, schema) {
        out.diagnostics.push(Diagnostic {
            level: Level::Error,
            file: class.file.clone(),
            line,
            message: msg,
        });
        return false;
    }
    out.constraints.push(c);
    true
}

// ---------------------------------------------------------------------------
// Custom validator normalization

fn custom_constraints(
    table: &str,
    stmt: &CondStmt,
    class: &ClassDef,
    schema: &Schema,
    out: &mut Extraction,
) {
    if !stmt.fires_error {
        return;
    }
    let miss = |out: &mut Extraction, message: String| {
        out.missed_conditions += 1;
        out.diagnostics.push(Diagnostic {
            level: Level::Warn,
            file: class.file.clone(),
            line: stmt.line,
            message,
        });
    };
    let Some(cond) = &stmt.cond else {
        miss(out, "error-guarding condition outside the grammar".into());
        return;
    };
    if cond.contains_and() {
        // The negation of a conjunction is a disjunction, which is not a
        // conjunction of independent column constraints.
        miss(out, "conjunction guards errors.add; cannot negate".into());
        return;
    }
    let leaves = cond.or_leaves();
    let mut emitted = 0usize;
    let mut failed = false;
    for leaf in &leaves {
        match negate_leaf(leaf) {
            Some((field, kind)) => {
                let c = Constraint::new(
                    table,
                    vec![field],
                    kind,
                    ConstraintSource::CustomValidation,
                );
                if emit_checked(c, class, stmt.line, schema, out) {
                    emitted += 1;
                } else {
                    failed = true;
                }
            }
            None => failed = true,
        }
    }
    if failed || emitted == 0 {
        miss(
            out,
            "condition not fully translated; keeping what negates cleanly".into(),
        );
    }
}

/// Negate one disjunct of an error-raising condition into the constraint the
/// application enforces on saved rows. Returns the field plus the kind.
fn negate_leaf(leaf: &LeafExpr) -> Option<(String, ConstraintKind)> {
    match leaf {
        LeafExpr::Api { call, arg } => {
            let Term::Field { name, wrapper: None } = arg else {
                return None;
            };
            let kind = match call.as_str() {
                // error when nil/blank => stored values are present
                "nil?" | "blank?" => ConstraintKind::Presence,
                // error when empty => stored strings have at least one char
                "empty?" => ConstraintKind::Length {
                    min: Some(1),
                    max: None,
                },
                _ => return None,
            };
            Some((name.clone(), kind))
        }
        LeafExpr::Cmp { left, op, right } => {
            let (field, wrapper, constant, flipped) = match (left, right) {
                (Term::Field { name, wrapper }, Term::Const(v)) => {
                    (name, wrapper.as_deref(), v, false)
                }
                (Term::Const(v), Term::Field { name, wrapper }) => {
                    (name, wrapper.as_deref(), v, true)
                }
                _ => return None,
            };
            let op = if flipped { flip(op) } else { op.clone() };
            if op == "==" && *constant == Value::Null {
                return Some((field.clone(), ConstraintKind::Presence));
            }
            match wrapper {
                Some("length") | Some("size") => {
                    let Value::Int(v) = constant else { return None };
                    let v = *v;
                    if v < 0 {
                        return None;
                    }
                    let v = v as u64;
                    let kind = match op.as_str() {
                        ">" => ConstraintKind::Length {
                            min: None,
                            max: Some(v),
                        },
                        ">=" if v > 0 => ConstraintKind::Length {
                            min: None,
                            max: Some(v - 1),
                        },
                        "<" => ConstraintKind::Length {
                            min: Some(v),
                            max: None,
                        },
                        "<=" => ConstraintKind::Length {
                            min: Some(v + 1),
                            max: None,
                        },
                        _ => return None,
                    };
                    Some((field.clone(), kind))
                }
                None | Some("to_i") | Some("to_f") => {
                    if !matches!(constant, Value::Int(_) | Value::Float(_)) {
                        return None;
                    }
                    let b = |inclusive| Some(NumBound::new(constant.clone(), inclusive));
                    let kind = match op.as_str() {
                        ">" => ConstraintKind::Numerical {
                            lower: None,
                            upper: b(true),
                            equal: None,
                        },
                        ">=" => ConstraintKind::Numerical {
                            lower: None,
                            upper: b(false),
                            equal: None,
                        },
                        "<" => ConstraintKind::Numerical {
                            lower: b(true),
                            upper: None,
                            equal: None,
                        },
                        "<=" => ConstraintKind::Numerical {
                            lower: b(false),
                            upper: None,
                            equal: None,
                        },
                        _ => return None,
                    };
                    Some((field.clone(), kind))
                }
                _ => None,
            }
        }
    }
}

fn flip(op: &str) -> String {
    match op {
        ">" => "<",
        ">=" => "<=",
        "<" => ">",
        "<=" => ">=",
        other => other,
    }
    .to_string()
}

// ---------------------------------------------------------------------------
// Pass two: class relationships

struct BelongsTo<'a> {
    owner: &'a ClassDef,
    target: &'a str,
    class_name: Option<&'a str>,
    polymorphic: bool,
    line: usize,
}

struct Collector<'a> {
    owner: &'a ClassDef,
    interface: &'a str,
}

struct HasOne<'a> {
    owner: &'a ClassDef,
    target: &'a str,
    class_name: Option<&'a str>,
    where_lambda: Option<&'a WherePred>,
    line: usize,
}

fn pass_relationships(ast: &ModelAst, schema: &Schema, out: &mut Extraction) {
    let mut belongs: Vec<BelongsTo> = Vec::new();
    let mut collectors: Vec<Collector> = Vec::new();
    let mut has_ones: Vec<HasOne> = Vec::new();
    let mut machines: Vec<(&ClassDef, &Stmt)> = Vec::new();
    let mut inheritance_col: BTreeMap<&str, &str> = BTreeMap::new();

    for class in &ast.classes {
        out.pass_visits[1] += 1;
        for stmt in &class.statements {
            out.pass_visits[1] += 1;
            match stmt {
                Stmt::Association {
                    kind: AssocKind::BelongsTo,
                    target,
                    class_name,
                    polymorphic,
                    line,
                    ..
                } => belongs.push(BelongsTo {
                    owner: class,
                    target,
                    class_name: class_name.as_deref(),
                    polymorphic: *polymorphic,
                    line: *line,
                }),
                Stmt::Association {
                    kind: AssocKind::HasOne | AssocKind::HasMany,
                    target,
                    class_name,
                    as_interface,
                    where_lambda,
                    line,
                    ..
                } => {
                    if let Some(iface) = as_interface {
                        collectors.push(Collector {
                            owner: class,
                            interface: iface,
                        });
                    } else if matches!(
                        stmt,
                        Stmt::Association {
                            kind: AssocKind::HasOne,
                            ..
                        }
                    ) {
                        has_ones.push(HasOne {
                            owner: class,
                            target,
                            class_name: class_name.as_deref(),
                            where_lambda: where_lambda.as_ref(),
                            line: *line,
                        });
                    }
                }
                Stmt::StateMachine { events, .. } => {
                    for e in events {
                        out.pass_visits[1] += 1 + e.transitions.len();
                    }
                    machines.push((class, stmt));
                }
                Stmt::InheritanceColumn { column, .. } => {
                    inheritance_col.insert(class.name.as_str(), column.as_str());
                }
                _ => {}
            }
        }
    }

    extract_inheritance(ast, &inheritance_col, schema, out);
    extract_polymorphic(&belongs, &collectors, schema, out);
    extract_has_one(&has_ones, &belongs, schema, out);
    extract_state_machines(&machines, schema, out);
}

fn extract_inheritance<'a>(
    ast: &'a ModelAst,
    inheritance_col: &BTreeMap<&str, &str>,
    schema: &Schema,
    out: &mut Extraction,
) {
    let index: BTreeMap<&'a str, &'a ClassDef> = ast
        .classes
        .iter()
        .map(|c| (c.name.as_str(), c))
        .collect();
    // Root of each class's chain, following superclass links inside the AST.
    let root_of = |mut name: &'a str| -> &'a str {
        let mut seen = vec![name];
        while let Some(class) = index.get(name) {
            match class.superclass.as_deref() {
                Some(sup) if index.contains_key(sup) && !seen.contains(&sup) => {
                    seen.push(sup);
                    name = sup;
                }
                _ => break,
            }
        }
        name
    };
    // Descendants per root, in declaration order.
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for class in &ast.classes {
        let root = root_of(&class.name);
        if root != class.name {
            groups.entry(root).or_default().push(&class.name);
        }
    }
    for class in &ast.classes {
        let Some(descendants) = groups.get(class.name.as_str()) else {
            continue;
        };
        let column = inheritance_col
            .get(class.name.as_str())
            .copied()
            .unwrap_or("type");
        let values = descendants
            .iter()
            .map(|d| Value::Text(d.to_string()))
            .collect();
        let c = Constraint::new(
            tableize(&class.name),
            vec![column.to_string()],
            ConstraintKind::Inclusion { values },
            ConstraintSource::Inheritance,
        );
        emit_checked(c, class, class.line, schema, out);
    }
}

fn extract_polymorphic(
    belongs: &[BelongsTo],
    collectors: &[Collector],
    schema: &Schema,
    out: &mut Extraction,
) {
    for b in belongs {
        if !b.polymorphic {
            continue;
        }
        let names: Vec<Value> = collectors
            .iter()
            .filter(|c| c.interface == b.target)
            .map(|c| Value::Text(c.owner.name.clone()))
            .collect();
        if names.is_empty() {
            out.diagnostics.push(Diagnostic {
                level: Level::Warn,
                file: b.owner.file.clone(),
                line: b.line,
                message: format!("polymorphic interface {} has no implementors", b.target),
            });
            continue;
        }
        let c = Constraint::new(
            tableize(&b.owner.name),
            vec![format!("{}_type", b.target)],
            ConstraintKind::Inclusion { values: names },
            ConstraintSource::Polymorphic,
        );
        emit_checked(c, b.owner, b.line, schema, out);
    }
}

fn extract_has_one(
    has_ones: &[HasOne],
    belongs: &[BelongsTo],
    schema: &Schema,
    out: &mut Extraction,
) {
    for h in has_ones {
        let target_class = h
            .class_name
            .map(str::to_string)
            .unwrap_or_else(|| camelize(h.target));
        // The paired belongs_to on the child names the foreign-key column.
        let pair = belongs.iter().find(|b| {
            b.owner.name == target_class && !b.polymorphic && {
                let resolved = b
                    .class_name
                    .map(str::to_string)
                    .unwrap_or_else(|| camelize(b.target));
                resolved == h.owner.name
            }
        });
        let Some(pair) = pair else {
            out.diagnostics.push(Diagnostic {
                level: Level::Warn,
                file: h.owner.file.clone(),
                line: h.line,
                message: format!(
                    "has_one {} lacks a matching belongs_to on {target_class}; no uniqueness emitted",
                    h.target
                ),
            });
            continue;
        };
        let fk_column = format!("{}_id", pair.target);
        let c = Constraint::new(
            tableize(&target_class),
            vec![fk_column],
            ConstraintKind::Uniqueness {
                scope: vec![],
                predicate: h.where_lambda.map(|w| {
                    crate::constraints::ScopePredicate {
                        column: w.column.clone(),
                        op: w.op.clone(),
                        value: w.value.clone(),
                    }
                }),
            },
            ConstraintSource::HasOne,
        );
        emit_checked(c, h.owner, h.line, schema, out);
    }
}

fn extract_state_machines(machines: &[(&ClassDef, &Stmt)], schema: &Schema, out: &mut Extraction) {
    for (class, stmt) in machines {
        let Stmt::StateMachine {
            field,
            initial,
            events,
            line,
        } = stmt
        else {
            continue;
        };
        let mut states: Vec<String> = Vec::new();
        let mut poisoned = false;
        let push = |lit: &StateLit, states: &mut Vec<String>, poisoned: &mut bool| match lit {
            StateLit::Literal(s) => {
                if !states.contains(s) {
                    states.push(s.clone());
                }
            }
            StateLit::NonLiteral => *poisoned = true,
        };
        if let Some(init) = initial {
            push(init, &mut states, &mut poisoned);
        }
        for event in events {
            for tr in &event.transitions {
                for f in &tr.from {
                    push(f, &mut states, &mut poisoned);
                }
                push(&tr.to, &mut states, &mut poisoned);
            }
        }
        if poisoned || states.is_empty() {
            out.diagnostics.push(Diagnostic {
                level: Level::Warn,
                file: class.file.clone(),
                line: *line,
                message: format!(
                    "state machine on {field} uses non-literal states; no constraint emitted"
                ),
            });
            continue;
        }
        let c = Constraint::new(
            tableize(&class.name),
            vec![field.clone()],
            ConstraintKind::Inclusion {
                values: states.into_iter().map(Value::Text).collect(),
            },
            ConstraintSource::StateMachine,
        );
        emit_checked(c, class, *line, schema, out);
    }
}

/// Drop exact duplicates, keeping first occurrences.
fn dedup(constraints: &mut Vec<Constraint>) {
    let mut kept: Vec<Constraint> = Vec::with_capacity(constraints.len());
    for c in constraints.drain(..) {
        if !kept.contains(&c) {
            kept.push(c);
        }
    }
    *constraints = kept;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ScopePredicate;

    fn schema() -> Schema {
        Schema::from_json(
            r#"{"tables":[
                {"name":"users","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"email","type":"text"},
                    {"name":"login","type":"text"},
                    {"name":"name","type":"text"},
                    {"name":"type","type":"text"},
                    {"name":"status","type":"text"},
                    {"name":"age","type":"integer"},
                    {"name":"username","type":"text"}]},
                {"name":"members","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"user_id","type":"integer","nullable":false},
                    {"name":"project_id","type":"integer","nullable":false}]},
                {"name":"companies","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"type","type":"text"},
                    {"name":"kind","type":"text"}]},
                {"name":"addresses","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"addressable_id","type":"integer"},
                    {"name":"addressable_type","type":"text"}]},
                {"name":"wikipages","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"project_id","type":"integer"}]},
                {"name":"projects","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"name","type":"text"}]},
                {"name":"payments","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"state","type":"text"}]},
                {"name":"organizations","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true}]},
                {"name":"items","columns":[
                    {"name":"id","type":"integer","nullable":false,"primary_key":true},
                    {"name":"qty","type":"integer"},
                    {"name":"note","type":"text"}]}]}"#,
        )
        .unwrap()
    }

    fn extract(src: &str) -> Extraction {
        extract_all(&[("m.rb".into(), src.into())], &schema()).unwrap()
    }

    #[test]
    fn tableize_rules() {
        assert_eq!(tableize("Member"), "members");
        assert_eq!(tableize("WikiPage"), "wikipages");
        assert_eq!(tableize("Company"), "companies");
        assert_eq!(tableize("Address"), "addresses");
        assert_eq!(tableize("Payment"), "payments");
        assert_eq!(tableize("Admin::User"), "users");
    }

    #[test]
    fn scoped_uniqueness_from_member_listing() {
        let src = "class Member\n  belongs_to :user, :project\n  validates_uniqueness_of :user_id, :scope => :project_id\n  # Error! Raise an exception \"Validation failed\"\n  member = Member.new(user_id=1, project_id=2)\n  member.save\n";
        let ex = extract(src);
        assert_eq!(ex.opaque_statements, 2);
        assert_eq!(ex.constraints.len(), 1);
        let c = &ex.constraints[0];
        assert_eq!(c.table, "members");
        assert_eq!(c.columns, vec!["user_id".to_string()]);
        assert_eq!(
            c.kind,
            ConstraintKind::Uniqueness { scope: vec!["project_id".into()], predicate: None }
        );
        assert_eq!(c.source, ConstraintSource::BuiltinValidation);
    }

    #[test]
    fn format_plus_custom_length_from_validation_listing() {
        let src = "class User < ApplicationRecord\n  validates_format_of :email, :with =>\n    \"/\\A([^@\\s]+)@((?:[-a-z0-9]+\\.)+[a-z]{2,})\\Z/i\"\n  validate :validate_name\n  def validate_name\n    if length(name) > 30\n      errors.add(:name, \"is too long (maximum is 30 characters)\")\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 2, "{:?}", ex.diagnostics);
        let fmt = &ex.constraints[0];
        assert_eq!(fmt.table, "users");
        assert_eq!(fmt.columns, vec!["email".to_string()]);
        match &fmt.kind {
            ConstraintKind::Format { patterns } => {
                assert_eq!(patterns.len(), 1);
                // The end anchor is normalized to the strict form.
                assert!(patterns[0].pattern.ends_with("\\z"));
                assert!(patterns[0].case_insensitive);
            }
            other => panic!("unexpected {other:?}"),
        }
        let len = &ex.constraints[1];
        assert_eq!(len.columns, vec!["name".to_string()]);
        assert_eq!(len.kind, ConstraintKind::Length { min: None, max: Some(30) });
        assert_eq!(len.source, ConstraintSource::CustomValidation);
        assert_eq!(ex.missed_conditions, 0);
    }

    #[test]
    fn inheritance_descendants_only() {
        let src = "class Company < ActiveRecord::Base;\nclass Firm < Company;\nclass Client < Company;\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1);
        let c = &ex.constraints[0];
        assert_eq!(c.table, "companies");
        assert_eq!(c.columns, vec!["type".to_string()]);
        assert_eq!(
            c.kind,
            ConstraintKind::Inclusion {
                values: vec![Value::Text("Firm".into()), Value::Text("Client".into())]
            }
        );
        assert_eq!(c.source, ConstraintSource::Inheritance);
    }

    #[test]
    fn inheritance_column_override_applies() {
        let src = "class Company < ActiveRecord::Base\n  self.inheritance_column = 'kind'\nend\nclass Firm < Company;\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1);
        assert_eq!(ex.constraints[0].columns, vec!["kind".to_string()]);
    }

    #[test]
    fn polymorphic_interface_collects_implementors() {
        let src = "class Address < ActiveRecord::base\n  belongs_to :addressable, polymorphic: true\nclass Organization < ActiveRecord::base\n  has_one :addresses, as: :addressable\nclass User < ActiveRecord::base\n  has_one :addresses, as: :addressable\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1, "{:?}", ex.diagnostics);
        let c = &ex.constraints[0];
        assert_eq!(c.table, "addresses");
        assert_eq!(c.columns, vec!["addressable_type".to_string()]);
        assert_eq!(
            c.kind,
            ConstraintKind::Inclusion {
                values: vec![Value::Text("Organization".into()), Value::Text("User".into())]
            }
        );
        assert_eq!(c.source, ConstraintSource::Polymorphic);
    }

    #[test]
    fn paired_has_one_yields_uniqueness() {
        let src = "class WikiPage < ActiveRecord::base\n  belongs_to project, class_name: 'Project'\nclass Project < ActiveRecord::base\n  has_one wikipage, class_name: 'WikiPage'\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1, "{:?}", ex.diagnostics);
        let c = &ex.constraints[0];
        assert_eq!(c.table, "wikipages");
        assert_eq!(c.columns, vec!["project_id".to_string()]);
        assert_eq!(c.kind, ConstraintKind::Uniqueness { scope: vec![], predicate: None });
        assert_eq!(c.source, ConstraintSource::HasOne);
    }

    #[test]
    fn has_one_without_pairing_warns() {
        let src = "class Project < ActiveRecord::base\n  has_one wikipage, class_name: 'WikiPage'\n";
        let ex = extract(src);
        assert!(ex.constraints.is_empty());
        assert!(ex
            .diagnostics
            .iter()
            .any(|d| d.level == Level::Warn && d.message.contains("belongs_to")));
    }

    #[test]
    fn has_one_where_lambda_becomes_predicate() {
        let src = "class WikiPage < ActiveRecord::base\n  belongs_to project, class_name: 'Project'\nclass Project < ActiveRecord::base\n  has_one wikipage, -> { where(id: 1) }, class_name: 'WikiPage'\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1, "{:?}", ex.diagnostics);
        match &ex.constraints[0].kind {
            ConstraintKind::Uniqueness { predicate: Some(p), .. } => {
                assert_eq!(
                    p,
                    &ScopePredicate { column: "id".into(), op: "=".into(), value: Value::Int(1) }
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn state_machine_states_in_first_appearance_order() {
        let src = "class Payment\n  state_machine : state, initial: 'checkout' do\n    event :start_processing do\n      transition from:['checkout','pending','complete'],\n        to: 'processing'\n    event :failure do\n      transition from:['pending', 'processing'], to:'failed'\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1, "{:?}", ex.diagnostics);
        let c = &ex.constraints[0];
        assert_eq!(c.table, "payments");
        assert_eq!(c.columns, vec!["state".to_string()]);
        let expect: Vec<Value> = ["checkout", "pending", "complete", "processing", "failed"]
            .iter()
            .map(|s| Value::Text(s.to_string()))
            .collect();
        assert_eq!(c.kind, ConstraintKind::Inclusion { values: expect });
        assert_eq!(c.source, ConstraintSource::StateMachine);
    }

    #[test]
    fn state_machine_with_dynamic_state_skipped() {
        let src = "class Payment\n  state_machine :state, initial: 'a' do\n    event :go do\n      transition from: compute_states, to: 'b'\n    end\n  end\nend\n";
        let ex = extract(src);
        assert!(ex.constraints.is_empty());
        assert!(ex.diagnostics.iter().any(|d| d.message.contains("non-literal")));
    }

    #[test]
    fn builtin_field_lists_fan_out() {
        let src = "class User < ApplicationRecord\n  validates_presence_of :login, :email\nend\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 2);
        assert!(ex.constraints.iter().all(|c| c.kind == ConstraintKind::Presence));
        let cols: Vec<_> = ex.constraints.iter().map(|c| c.columns[0].as_str()).collect();
        assert_eq!(cols, vec!["login", "email"]);
    }

    #[test]
    fn inclusion_length_numericality_forms() {
        let src = "class User < ApplicationRecord\n  validates_inclusion_of :status, in: %w[active locked]\n  validates_length_of :login, in: 6..20\n  validates_size_of :name, maximum: 40\n  validates_numericality_of :age, greater_than: 0, less_than_or_equal_to: 150\nend\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 4, "{:?}", ex.diagnostics);
        assert_eq!(
            ex.constraints[0].kind,
            ConstraintKind::Inclusion {
                values: vec![Value::Text("active".into()), Value::Text("locked".into())]
            }
        );
        assert_eq!(ex.constraints[1].kind, ConstraintKind::Length { min: Some(6), max: Some(20) });
        assert_eq!(ex.constraints[2].kind, ConstraintKind::Length { min: None, max: Some(40) });
        assert_eq!(
            ex.constraints[3].kind,
            ConstraintKind::Numerical {
                lower: Some(NumBound::new(Value::Int(0), false)),
                upper: Some(NumBound::new(Value::Int(150), true)),
                equal: None,
            }
        );
    }

    #[test]
    fn custom_or_chain_emits_each_negation() {
        let src = "class Item\n  validate :check_qty\n  def check_qty\n    if qty.nil? || qty > 100\n      errors.add(:qty, \"bad\")\n    end\n  end\nend\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 2, "{:?}", ex.diagnostics);
        assert_eq!(ex.constraints[0].kind, ConstraintKind::Presence);
        assert_eq!(
            ex.constraints[1].kind,
            ConstraintKind::Numerical {
                lower: None,
                upper: Some(NumBound::new(Value::Int(100), true)),
                equal: None,
            }
        );
        assert_eq!(ex.missed_conditions, 0);
    }

    #[test]
    fn conjunction_counted_missed() {
        let src = "class Item\n  validate :check\n  def check\n    if qty > 1 && qty < 9\n      errors.add(:qty, \"bad\")\n    end\n  end\nend\n";
        let ex = extract(src);
        assert!(ex.constraints.is_empty());
        assert_eq!(ex.missed_conditions, 1);
    }

    #[test]
    fn equality_condition_counted_missed() {
        let src = "class Item\n  validate :check\n  def check\n    if qty == 7\n      errors.add(:qty, \"bad\")\n    end\n  end\nend\n";
        let ex = extract(src);
        assert!(ex.constraints.is_empty());
        assert_eq!(ex.missed_conditions, 1);
    }

    #[test]
    fn unregistered_method_ignored() {
        let src = "class Item\n  def check\n    if qty.nil?\n      errors.add(:qty, \"bad\")\n    end\n  end\nend\n";
        let ex = extract(src);
        assert!(ex.constraints.is_empty());
        assert_eq!(ex.missed_conditions, 0);
    }

    #[test]
    fn constant_on_left_flips() {
        let src = "class Item\n  validate :check\n  def check\n    if 100 < qty\n      errors.add(:qty, \"bad\")\n    end\n  end\nend\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1);
        // 100 < qty is qty > 100; its negation is qty <= 100.
        assert_eq!(
            ex.constraints[0].kind,
            ConstraintKind::Numerical {
                lower: None,
                upper: Some(NumBound::new(Value::Int(100), true)),
                equal: None,
            }
        );
    }

    #[test]
    fn unknown_field_dropped_with_diagnostic() {
        let src = "class User < ApplicationRecord\n  validates_presence_of :nonexistent\nend\n";
        let ex = extract(src);
        assert!(ex.constraints.is_empty());
        assert_eq!(ex.diagnostics.len(), 1);
        assert_eq!(ex.diagnostics[0].level, Level::Error);
        let rendered = ex.diagnostics[0].to_string();
        assert!(rendered.starts_with("ERROR m.rb:2 "), "{rendered}");
    }

    #[test]
    fn duplicate_constraints_deduplicated() {
        let src = "class User < ApplicationRecord\n  validates_presence_of :login\n  validates_presence_of :login\nend\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1);
    }

    #[test]
    fn visit_counters_bounded_by_node_count() {
        let src = "class Payment\n  validates_presence_of :state\n  state_machine :state, initial: 'a' do\n    event :go do\n      transition from: 'a', to: 'b'\n    end\n  end\n  validate :check\n  def check\n    if state.nil?\n      errors.add(:state, \"x\")\n    end\n  end\nend\n";
        let ex = extract(src);
        assert!(ex.node_count > 0);
        assert!(ex.pass_visits[0] <= ex.node_count, "{:?}", ex.pass_visits);
        assert!(ex.pass_visits[1] <= ex.node_count, "{:?}", ex.pass_visits);
        assert_eq!(ex.constraints.len(), 3, "{:?}", ex.diagnostics);
    }

    #[test]
    fn extraction_is_deterministic() {
        let src = "class User < ApplicationRecord\n  validates_presence_of :login\n  validates_inclusion_of :status, in: %w[a b]\nend\nclass Company < ActiveRecord::Base;\nclass Firm < Company;\n";
        let a = extract(src);
        let b = extract(src);
        assert_eq!(a, b);
    }

    #[test]
    fn nil9_comparison_to_nil_is_presence() {
        let src = "class Item\n  validate :check\n  def check\n    if qty == nil\n      errors.add(:qty, \"bad\")\n    end\n  end\nend\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1);
        assert_eq!(ex.constraints[0].kind, ConstraintKind::Presence);
    }

    #[test]
    fn empty_check_becomes_min_length() {
        let src = "class Item\n  validate :check\n  def check\n    if note.empty?\n      errors.add(:note, \"bad\")\n    end\n  end\nend\n";
        let ex = extract(src);
        assert_eq!(ex.constraints.len(), 1);
        assert_eq!(ex.constraints[0].kind, ConstraintKind::Length { min: Some(1), max: None });
    }
}
