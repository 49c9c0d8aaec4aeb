//! Parser for the restricted model-file grammar (see docs/model-grammar.md).
//!
//! Files are processed as logical lines: a physical line that ends with a
//! continuation token (comma, `=>`, an opening bracket, `->`, or a boolean
//! operator) or that has unbalanced brackets absorbs the next line. Each
//! logical line is one statement; `do` blocks and `class`/`def` scopes are
//! tracked with a frame stack. Statements outside the recognized forms are
//! kept as opaque nodes so extraction can count what it skipped.

use std::fmt;

use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub file: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelAst {
    pub classes: Vec<ClassDef>,
}

impl ModelAst {
    /// Total node count: classes, statements, and nested items. The
    /// extraction passes must not visit more nodes than this.
    pub fn node_count(&self) -> usize {
        let mut n = 0;
        for c in &self.classes {
            n += 1;
            for s in &c.statements {
                n += 1;
                match s {
                    Stmt::Method { body, .. } => n += body.len(),
                    Stmt::StateMachine { events, .. } => {
                        for e in events {
                            n += 1 + e.transitions.len();
                        }
                    }
                    _ => {}
                }
            }
        }
        n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    pub name: String,
    pub superclass: Option<String>,
    pub file: String,
    pub line: usize,
    pub statements: Vec<Stmt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssocKind {
    BelongsTo,
    HasOne,
    HasMany,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    /// `validates_<api>_of :field, ... , key: value, ...`
    Builtin {
        api: String,
        fields: Vec<String>,
        options: Vec<(String, OptValue)>,
        line: usize,
    },
    /// `validate :method_a, :method_b`
    ValidateRegistration { methods: Vec<String>, line: usize },
    /// `def name` ... `end`; body reduced to branch conditions.
    Method {
        name: String,
        body: Vec<CondStmt>,
        line: usize,
    },
    Association {
        kind: AssocKind,
        target: String,
        class_name: Option<String>,
        polymorphic: bool,
        as_interface: Option<String>,
        where_lambda: Option<WherePred>,
        line: usize,
    },
    StateMachine {
        field: String,
        initial: Option<StateLit>,
        events: Vec<Event>,
        line: usize,
    },
    /// `self.inheritance_column = 'col'`
    InheritanceColumn { column: String, line: usize },
    /// Anything else; preserved for diagnostics only.
    Opaque { line: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptValue {
    Sym(String),
    Str(String),
    Num(Value),
    Bool(bool),
    List(Vec<OptValue>),
    Range { lo: i64, hi: i64, exclusive: bool },
    Regex { pattern: String, case_insensitive: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WherePred {
    pub column: String,
    pub op: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub name: String,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: Vec<StateLit>,
    pub to: StateLit,
}

/// A state value: a string literal, or something dynamic we refuse to guess.
#[derive(Debug, Clone, PartialEq)]
pub enum StateLit {
    Literal(String),
    NonLiteral,
}

/// One `if cond ... errors.add` branch inside a validator method.
#[derive(Debug, Clone, PartialEq)]
pub struct CondStmt {
    /// `None` when the condition did not fit the grammar.
    pub cond: Option<CondExpr>,
    pub fires_error: bool,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CondExpr {
    Or(Box<CondExpr>, Box<CondExpr>),
    And(Box<CondExpr>, Box<CondExpr>),
    Leaf(LeafExpr),
}

impl CondExpr {
    pub fn contains_and(&self) -> bool {
        match self {
            CondExpr::And(..) => true,
            CondExpr::Or(a, b) => a.contains_and() || b.contains_and(),
            CondExpr::Leaf(_) => false,
        }
    }

    /// Leaves of a pure `||` chain, left to right.
    pub fn or_leaves(&self) -> Vec<&LeafExpr> {
        match self {
            CondExpr::Or(a, b) => {
                let mut out = a.or_leaves();
                out.extend(b.or_leaves());
                out
            }
            CondExpr::And(..) => vec![],
            CondExpr::Leaf(l) => vec![l],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeafExpr {
    Cmp { left: Term, op: String, right: Term },
    Api { call: String, arg: Term },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Field {
        name: String,
        /// `length`/`size`/`to_i`/… wrapping the field access.
        wrapper: Option<String>,
    },
    Const(Value),
}

pub const API_CALLS: &[&str] = &[
    "length", "size", "nil?", "empty?", "blank?", "none?", "any?", "exists?", "to_s", "to_i",
    "to_f",
];

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    ConstName(String),
    Sym(String),
    Str(String),
    Int(i64),
    Float(f64),
    Regex { pattern: String, ci: bool },
    Words(Vec<String>),
    KvKey(String),
    HashRocket,
    Arrow,
    Dot,
    DotDot,
    DotDotDot,
    Colon,
    Comma,
    Semi,
    Eq,
    Op(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_lowercase() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Whether a `/` in this position opens a regex literal (the grammar has no
/// division, but being explicit keeps the rule documented).
fn regex_position(prev: Option<&Tok>) -> bool {
    matches!(
        prev,
        None | Some(Tok::Comma)
            | Some(Tok::HashRocket)
            | Some(Tok::KvKey(_))
            | Some(Tok::Colon)
            | Some(Tok::LParen)
            | Some(Tok::LBracket)
            | Some(Tok::Op(_))
            | Some(Tok::Eq)
    )
}

fn lex(line: &str, file: &str, line_no: usize) -> Result<Vec<Tok>, ParseError> {
    let err = |m: String| ParseError { file: file.to_string(), line: line_no, message: m };
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let mut out: Vec<Tok> = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break; // comment to end of line
        }
        match c {
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    if i >= chars.len() {
                        return Err(err(format!("unterminated {quote} string")));
                    }
                    let ch = chars[i];
                    if ch == '\\' && i + 1 < chars.len() {
                        let nxt = chars[i + 1];
                        if nxt == quote || nxt == '\\' {
                            s.push(nxt);
                            i += 2;
                            continue;
                        }
                        // Other escapes pass through verbatim (regex bodies
                        // often travel inside quoted strings).
                        s.push(ch);
                        i += 1;
                        continue;
                    }
                    if ch == quote {
                        i += 1;
                        break;
                    }
                    s.push(ch);
                    i += 1;
                }
                out.push(Tok::Str(s));
            }
            '/' if regex_position(out.last()) => {
                let mut pat = String::new();
                i += 1;
                loop {
                    if i >= chars.len() {
                        return Err(err("unterminated regex literal".into()));
                    }
                    let ch = chars[i];
                    if ch == '\\' && i + 1 < chars.len() {
                        pat.push(ch);
                        pat.push(chars[i + 1]);
                        i += 2;
                        continue;
                    }
                    if ch == '/' {
                        i += 1;
                        break;
                    }
                    pat.push(ch);
                    i += 1;
                }
                let mut ci = false;
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    if chars[i] == 'i' {
                        ci = true;
                    }
                    i += 1;
                }
                out.push(Tok::Regex { pattern: pat, ci });
            }
            '%' if i + 1 < chars.len() && (chars[i + 1] == 'w' || chars[i + 1] == 'i') => {
                let open = *chars.get(i + 2).ok_or_else(|| err("bare % literal".into()))?;
                let close = match open {
                    '[' => ']',
                    '(' => ')',
                    '{' => '}',
                    other => return Err(err(format!("unsupported %w delimiter {other:?}"))),
                };
                i += 3;
                let mut body = String::new();
                while i < chars.len() && chars[i] != close {
                    body.push(chars[i]);
                    i += 1;
                }
                if i >= chars.len() {
                    return Err(err("unterminated %w list".into()));
                }
                i += 1;
                out.push(Tok::Words(body.split_whitespace().map(str::to_string).collect()));
            }
            ':' => {
                // `:sym`, `:sym` with padding (`state_machine : state`), a
                // keyword-argument colon, or a lone `::` path separator.
                if i + 1 < chars.len() && chars[i + 1] == ':' {
                    i += 2;
                    out.push(Tok::Op("::".into()));
                    continue;
                }
                let mut j = i + 1;
                while j < chars.len() && chars[j] == ' ' {
                    j += 1;
                }
                if j < chars.len() && (is_ident_start(chars[j]) || chars[j].is_ascii_uppercase()) {
                    let mut name = String::new();
                    while j < chars.len() && is_ident_char(chars[j]) {
                        name.push(chars[j]);
                        j += 1;
                    }
                    if j < chars.len() && (chars[j] == '?' || chars[j] == '!') {
                        name.push(chars[j]);
                        j += 1;
                    }
                    i = j;
                    out.push(Tok::Sym(name));
                } else {
                    i += 1;
                    out.push(Tok::Colon);
                }
            }
            '-' if i + 1 < chars.len() && chars[i + 1] == '>' => {
                i += 2;
                out.push(Tok::Arrow);
            }
            '=' if i + 1 < chars.len() && chars[i + 1] == '>' => {
                i += 2;
                out.push(Tok::HashRocket);
            }
            '=' if i + 1 < chars.len() && chars[i + 1] == '=' => {
                i += 2;
                out.push(Tok::Op("==".into()));
            }
            '=' => {
                i += 1;
                out.push(Tok::Eq);
            }
            '.' => {
                if chars.get(i + 1) == Some(&'.') {
                    if chars.get(i + 2) == Some(&'.') {
                        i += 3;
                        out.push(Tok::DotDotDot);
                    } else {
                        i += 2;
                        out.push(Tok::DotDot);
                    }
                } else {
                    i += 1;
                    out.push(Tok::Dot);
                }
            }
            ',' => {
                i += 1;
                out.push(Tok::Comma);
            }
            ';' => {
                i += 1;
                out.push(Tok::Semi);
            }
            '(' => {
                i += 1;
                out.push(Tok::LParen);
            }
            ')' => {
                i += 1;
                out.push(Tok::RParen);
            }
            '[' => {
                i += 1;
                out.push(Tok::LBracket);
            }
            ']' => {
                i += 1;
                out.push(Tok::RBracket);
            }
            '{' => {
                i += 1;
                out.push(Tok::LBrace);
            }
            '}' => {
                i += 1;
                out.push(Tok::RBrace);
            }
            '<' | '>' | '!' => {
                let two = format!("{}{}", c, chars.get(i + 1).copied().unwrap_or(' '));
                if two == "<=" || two == ">=" || two == "!=" || two == "<>" {
                    i += 2;
                    out.push(Tok::Op(two));
                } else {
                    i += 1;
                    out.push(Tok::Op(c.to_string()));
                }
            }
            '&' if chars.get(i + 1) == Some(&'&') => {
                i += 2;
                out.push(Tok::Op("&&".into()));
            }
            '|' if chars.get(i + 1) == Some(&'|') => {
                i += 2;
                out.push(Tok::Op("||".into()));
            }
            c if c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) =>
            {
                let mut num = String::new();
                if c == '-' {
                    num.push('-');
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    num.push(chars[i]);
                    i += 1;
                }
                // A dot that starts `..` belongs to a range, not the number.
                if i + 1 < chars.len()
                    && chars[i] == '.'
                    && chars[i + 1].is_ascii_digit()
                {
                    num.push('.');
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        num.push(chars[i]);
                        i += 1;
                    }
                    out.push(Tok::Float(num.parse().map_err(|_| err(format!("bad float {num}")))?));
                } else {
                    out.push(Tok::Int(num.parse().map_err(|_| err(format!("bad integer {num}")))?));
                }
            }
            c if c.is_ascii_uppercase() => {
                let mut name = String::new();
                while i < chars.len() && (is_ident_char(chars[i])) {
                    name.push(chars[i]);
                    i += 1;
                }
                // Absorb `::Path` segments into one constant name.
                while i + 1 < chars.len() && chars[i] == ':' && chars[i + 1] == ':' {
                    name.push_str("::");
                    i += 2;
                    while i < chars.len() && is_ident_char(chars[i]) {
                        name.push(chars[i]);
                        i += 1;
                    }
                }
                out.push(Tok::ConstName(name));
            }
            c if is_ident_start(c) => {
                let mut name = String::new();
                while i < chars.len() && is_ident_char(chars[i]) {
                    name.push(chars[i]);
                    i += 1;
                }
                if i < chars.len() && (chars[i] == '?' || chars[i] == '!') {
                    name.push(chars[i]);
                    i += 1;
                }
                // `key:` (no space before the colon) is a keyword argument,
                // unless the colon starts `::`.
                if i < chars.len() && chars[i] == ':' && chars.get(i + 1) != Some(&':') {
                    i += 1;
                    out.push(Tok::KvKey(name));
                } else {
                    out.push(Tok::Ident(name));
                }
            }
            other => return Err(err(format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Logical lines

struct LogicalLine {
    toks: Vec<Tok>,
    line: usize,
}

fn bracket_delta(toks: &[Tok]) -> i32 {
    toks.iter()
        .map(|t| match t {
            Tok::LParen | Tok::LBracket | Tok::LBrace => 1,
            Tok::RParen | Tok::RBracket | Tok::RBrace => -1,
            _ => 0,
        })
        .sum()
}

fn continues(toks: &[Tok]) -> bool {
    matches!(
        toks.last(),
        Some(Tok::Comma)
            | Some(Tok::HashRocket)
            | Some(Tok::Arrow)
            | Some(Tok::KvKey(_))
            | Some(Tok::Op(_))
            | Some(Tok::Eq)
            | Some(Tok::Dot)
    )
}

fn logical_lines(text: &str, file: &str) -> Result<Vec<LogicalLine>, ParseError> {
    let mut out: Vec<LogicalLine> = Vec::new();
    let mut pending: Option<LogicalLine> = None;
    for (idx, raw) in text.lines().enumerate() {
        let toks = lex(raw, file, idx + 1)?;
        if toks.is_empty() && pending.is_none() {
            continue;
        }
        let ll = match pending.take() {
            Some(mut p) => {
                p.toks.extend(toks);
                p
            }
            None => LogicalLine { toks, line: idx + 1 },
        };
        if bracket_delta(&ll.toks) > 0 || continues(&ll.toks) {
            pending = Some(ll);
        } else {
            out.push(ll);
        }
    }
    if let Some(p) = pending {
        out.push(p); // tolerate truncated sources; the statement parser copes
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Statement parser

/// A cursor over one logical line.
struct Cur<'a> {
    toks: &'a [Tok],
    pos: usize,
}

impl<'a> Cur<'a> {
    fn new(toks: &'a [Tok]) -> Self {
        Cur { toks, pos: 0 }
    }
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos)
    }
    fn next(&mut self) -> Option<&'a Tok> {
        let t = self.toks.get(self.pos);
        self.pos += 1;
        t
    }
    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }
    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

/// Symbol-ish positional argument: `:name`, bare `name`, or `Name`.
fn name_arg(cur: &mut Cur) -> Option<String> {
    match cur.peek() {
        Some(Tok::Sym(s)) | Some(Tok::Ident(s)) | Some(Tok::ConstName(s)) => {
            cur.pos += 1;
            Some(s.clone())
        }
        _ => None,
    }
}

fn opt_value(cur: &mut Cur) -> Option<OptValue> {
    match cur.peek()? {
        Tok::Sym(s) => {
            cur.pos += 1;
            Some(OptValue::Sym(s.clone()))
        }
        Tok::ConstName(s) => {
            cur.pos += 1;
            Some(OptValue::Str(s.clone()))
        }
        Tok::Str(s) => {
            cur.pos += 1;
            // A quoted regex literal: "/pat/flags".
            if s.starts_with('/') {
                if let Some(end) = s.rfind('/') {
                    if end > 0 {
                        let flags = &s[end + 1..];
                        if flags.chars().all(|c| c.is_ascii_alphabetic()) {
                            return Some(OptValue::Regex {
                                pattern: s[1..end].to_string(),
                                case_insensitive: flags.contains('i'),
                            });
                        }
                    }
                }
            }
            Some(OptValue::Str(s.clone()))
        }
        Tok::Regex { pattern, ci } => {
            let (p, c) = (pattern.clone(), *ci);
            cur.pos += 1;
            Some(OptValue::Regex { pattern: p, case_insensitive: c })
        }
        Tok::Int(v) => {
            let v = *v;
            cur.pos += 1;
            let exclusive = match cur.peek() {
                Some(Tok::DotDot) => Some(false),
                Some(Tok::DotDotDot) => Some(true),
                _ => None,
            };
            if let Some(exclusive) = exclusive {
                cur.pos += 1;
                if let Some(Tok::Int(hi)) = cur.peek() {
                    let hi = *hi;
                    cur.pos += 1;
                    return Some(OptValue::Range { lo: v, hi, exclusive });
                }
                return None;
            }
            Some(OptValue::Num(Value::Int(v)))
        }
        Tok::Float(v) => {
            let v = *v;
            cur.pos += 1;
            Some(OptValue::Num(Value::Float(v)))
        }
        Tok::Ident(s) if s == "true" => {
            cur.pos += 1;
            Some(OptValue::Bool(true))
        }
        Tok::Ident(s) if s == "false" => {
            cur.pos += 1;
            Some(OptValue::Bool(false))
        }
        Tok::Words(ws) => {
            let items = ws.iter().map(|w| OptValue::Str(w.clone())).collect();
            cur.pos += 1;
            Some(OptValue::List(items))
        }
        Tok::LBracket => {
            cur.pos += 1;
            let mut items = Vec::new();
            loop {
                if cur.eat(&Tok::RBracket) {
                    break;
                }
                items.push(opt_value(cur)?);
                if !cur.eat(&Tok::Comma) && !matches!(cur.peek(), Some(Tok::RBracket)) {
                    return None;
                }
            }
            Some(OptValue::List(items))
        }
        _ => None,
    }
}

/// `key: value` or `:key => value`.
fn kv_pair(cur: &mut Cur) -> Option<(String, OptValue)> {
    let save = cur.pos;
    let key = match cur.peek() {
        Some(Tok::KvKey(k)) => {
            cur.pos += 1;
            k.clone()
        }
        Some(Tok::Sym(k)) => {
            let k = k.clone();
            cur.pos += 1;
            if !cur.eat(&Tok::HashRocket) {
                cur.pos = save;
                return None;
            }
            k
        }
        _ => return None,
    };
    match opt_value(cur) {
        Some(v) => Some((key, v)),
        None => {
            cur.pos = save;
            None
        }
    }
}

/// `-> { where ... }`; returns None (consuming the lambda) when the body
/// doesn't match `field op value`.
fn where_lambda(cur: &mut Cur) -> Option<Option<WherePred>> {
    if !cur.eat(&Tok::Arrow) {
        return None;
    }
    if !cur.eat(&Tok::LBrace) {
        return Some(None);
    }
    let mut body: Vec<Tok> = Vec::new();
    let mut depth = 1;
    while let Some(t) = cur.next() {
        match t {
            Tok::LBrace => depth += 1,
            Tok::RBrace => {
                depth -= 1;
                if depth == 0 {
                    break;
                }
            }
            _ => {}
        }
        body.push(t.clone());
    }
    Some(parse_where_body(&body))
}

fn parse_where_body(body: &[Tok]) -> Option<WherePred> {
    let mut cur = Cur::new(body);
    if !matches!(cur.next(), Some(Tok::Ident(w)) if w == "where") {
        return None;
    }
    let had_paren = cur.eat(&Tok::LParen);
    // Quoted form: where("field op value").
    if let Some(Tok::Str(s)) = cur.peek() {
        let inner = lex(s, "<where>", 0).ok()?;
        let pred = parse_where_cmp(&mut Cur::new(&inner))?;
        return Some(pred);
    }
    // Hash form: where(field: value) means equality.
    if let Some((key, v)) = kv_pair(&mut cur) {
        let value = opt_to_value(&v)?;
        let _ = had_paren;
        return Some(WherePred { column: key, op: "=".into(), value });
    }
    parse_where_cmp(&mut cur)
}

fn parse_where_cmp(cur: &mut Cur) -> Option<WherePred> {
    let column = match cur.next()? {
        Tok::Ident(c) => c.clone(),
        _ => return None,
    };
    let op = match cur.next()? {
        Tok::Op(o) if ["==", "<>", "!=", ">", ">=", "<", "<="].contains(&o.as_str()) => {
            if o == "==" {
                "=".to_string()
            } else if o == "!=" {
                "<>".to_string()
            } else {
                o.clone()
            }
        }
        Tok::Eq => "=".to_string(),
        _ => return None,
    };
    let value = opt_to_value(&opt_value(cur)?)?;
    Some(WherePred { column, op, value })
}

pub(crate) fn opt_to_value(v: &OptValue) -> Option<Value> {
    match v {
        OptValue::Sym(s) | OptValue::Str(s) => Some(Value::Text(s.clone())),
        OptValue::Num(v) => Some(v.clone()),
        OptValue::Bool(b) => Some(Value::Bool(*b)),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Condition expressions (custom validators)

fn parse_cond(toks: &[Tok]) -> Option<CondExpr> {
    let mut cur = Cur::new(toks);
    let e = parse_or(&mut cur)?;
    cur.done().then_some(e)
}

fn parse_or(cur: &mut Cur) -> Option<CondExpr> {
    let mut left = parse_and(cur)?;
    while matches!(cur.peek(), Some(Tok::Op(o)) if o == "||") {
        cur.pos += 1;
        let right = parse_and(cur)?;
        left = CondExpr::Or(Box::new(left), Box::new(right));
    }
    Some(left)
}

fn parse_and(cur: &mut Cur) -> Option<CondExpr> {
    let mut left = parse_leaf(cur)?;
    while matches!(cur.peek(), Some(Tok::Op(o)) if o == "&&") {
        cur.pos += 1;
        let right = parse_leaf(cur)?;
        left = CondExpr::And(Box::new(left), Box::new(right));
    }
    Some(left)
}

fn parse_leaf(cur: &mut Cur) -> Option<CondExpr> {
    let left = parse_term(cur)?;
    match cur.peek() {
        Some(Tok::Op(o)) if ["<", "<=", ">", ">=", "=="].contains(&o.as_str()) => {
            let op = o.clone();
            cur.pos += 1;
            let right = parse_term(cur)?;
            Some(CondExpr::Leaf(LeafExpr::Cmp { left, op, right }))
        }
        _ => match left {
            // A bare api call (`f.nil?`) is a complete expression.
            Term::Field { ref name, wrapper: Some(ref w) } if w.ends_with('?') => {
                Some(CondExpr::Leaf(LeafExpr::Api {
                    call: w.clone(),
                    arg: Term::Field { name: name.clone(), wrapper: None },
                }))
            }
            _ => None,
        },
    }
}

/// `a` in the grammar: constant, field, or api_call(field) / field.api_call.
fn parse_term(cur: &mut Cur) -> Option<Term> {
    match cur.peek()? {
        Tok::Int(v) => {
            let v = *v;
            cur.pos += 1;
            Some(Term::Const(Value::Int(v)))
        }
        Tok::Float(v) => {
            let v = *v;
            cur.pos += 1;
            Some(Term::Const(Value::Float(v)))
        }
        Tok::Str(s) => {
            let s = s.clone();
            cur.pos += 1;
            Some(Term::Const(Value::Text(s)))
        }
        Tok::Sym(s) => {
            let s = s.clone();
            cur.pos += 1;
            Some(Term::Const(Value::Text(s)))
        }
        Tok::Ident(name) if name == "true" || name == "false" => {
            let b = name == "true";
            cur.pos += 1;
            Some(Term::Const(Value::Bool(b)))
        }
        Tok::Ident(name) if name == "nil" => {
            cur.pos += 1;
            Some(Term::Const(Value::Null))
        }
        Tok::Ident(name) if API_CALLS.contains(&name.as_str()) => {
            // Function form: length(field).
            let call = name.clone();
            cur.pos += 1;
            if !cur.eat(&Tok::LParen) {
                return None;
            }
            let inner = match cur.next()? {
                Tok::Ident(f) => f.clone(),
                _ => return None,
            };
            if !cur.eat(&Tok::RParen) {
                return None;
            }
            Some(Term::Field { name: inner, wrapper: Some(call) })
        }
        Tok::Ident(name) => {
            let name = name.clone();
            cur.pos += 1;
            if cur.eat(&Tok::Dot) {
                match cur.next()? {
                    Tok::Ident(m) if API_CALLS.contains(&m.as_str()) => {
                        return Some(Term::Field { name, wrapper: Some(m.clone()) });
                    }
                    _ => return None,
                }
            }
            Some(Term::Field { name, wrapper: None })
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// File parser

enum Frame {
    Method {
        name: String,
        line: usize,
        body: Vec<CondStmt>,
        open_ifs: usize,
        skip_depth: usize,
    },
    StateMachine {
        field: String,
        initial: Option<StateLit>,
        events: Vec<Event>,
        line: usize,
    },
    Event { name: String, transitions: Vec<Transition> },
    /// Unrecognized `do` block; swallowed.
    Skip,
}

/// Parse one or more model sources into a single AST. `sources` pairs a
/// display name (used in errors) with file text.
pub fn parse_model_files(sources: &[(String, String)]) -> Result<ModelAst, ParseError> {
    let mut classes: Vec<ClassDef> = Vec::new();
    for (file, text) in sources {
        parse_file(file, text, &mut classes)?;
    }
    Ok(ModelAst { classes })
}

fn parse_file(file: &str, text: &str, classes: &mut Vec<ClassDef>) -> Result<(), ParseError> {
    let lines = logical_lines(text, file)?;
    let mut current: Option<ClassDef> = None;
    let mut frames: Vec<Frame> = Vec::new();

    let finish_frame = |frame: Frame, current: &mut Option<ClassDef>, frames: &mut Vec<Frame>| {
        match frame {
            Frame::Method { name, line, body, .. } => {
                if let Some(c) = current.as_mut() {
                    c.statements.push(Stmt::Method { name, body, line });
                }
            }
            Frame::StateMachine { field, initial, events, line } => {
                if let Some(c) = current.as_mut() {
                    c.statements.push(Stmt::StateMachine { field, initial, events, line });
                }
            }
            Frame::Event { name, transitions } => {
                if let Some(Frame::StateMachine { events, .. }) = frames.last_mut() {
                    events.push(Event { name, transitions });
                }
            }
            Frame::Skip => {}
        }
    };

    for ll in lines {
        let toks = &ll.toks;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cur::new(toks);

        // `end` closes the innermost frame, then the class.
        if matches!(toks.first(), Some(Tok::Ident(k)) if k == "end") && toks.len() == 1 {
            if let Some(Frame::Method { open_ifs, skip_depth, .. }) = frames.last_mut() {
                if *skip_depth > 0 {
                    *skip_depth -= 1;
                    continue;
                }
                if *open_ifs > 0 {
                    *open_ifs -= 1;
                    continue;
                }
            }
            match frames.pop() {
                Some(frame) => finish_frame(frame, &mut current, &mut frames),
                None => {
                    if let Some(c) = current.take() {
                        classes.push(c);
                    }
                }
            }
            continue;
        }

        // `class Name [< Super]` opens a new class (classes never nest).
        if matches!(toks.first(), Some(Tok::Ident(k)) if k == "class") {
            while let Some(frame) = frames.pop() {
                finish_frame(frame, &mut current, &mut frames);
            }
            if let Some(c) = current.take() {
                classes.push(c);
            }
            cur.pos = 1;
            let name = match cur.next() {
                Some(Tok::ConstName(n)) => n.clone(),
                _ => {
                    return Err(ParseError {
                        file: file.to_string(),
                        line: ll.line,
                        message: "class keyword without a constant name".into(),
                    })
                }
            };
            let superclass = if matches!(cur.peek(), Some(Tok::Op(o)) if o == "<") {
                cur.pos += 1;
                match cur.next() {
                    Some(Tok::ConstName(n)) => Some(n.clone()),
                    _ => {
                        return Err(ParseError {
                            file: file.to_string(),
                            line: ll.line,
                            message: "malformed superclass reference".into(),
                        })
                    }
                }
            } else {
                None
            };
            current = Some(ClassDef {
                name,
                superclass,
                file: file.to_string(),
                line: ll.line,
                statements: Vec::new(),
            });
            continue;
        }

        // Inside a skipped block: only track nested `do`.
        if matches!(frames.last(), Some(Frame::Skip)) {
            if ends_with_do(toks) {
                frames.push(Frame::Skip);
            }
            continue;
        }

        // Inside a validator method body.
        if matches!(frames.last(), Some(Frame::Method { .. })) {
            let Some(Frame::Method { body, open_ifs, skip_depth, .. }) = frames.last_mut()
            else {
                unreachable!()
            };
            if *skip_depth > 0 {
                if ends_with_do(toks) || starts_block(toks) {
                    *skip_depth += 1;
                }
                continue;
            }
            if matches!(toks.first(), Some(Tok::Ident(k)) if k == "if") {
                let cond = parse_cond(&toks[1..]);
                body.push(CondStmt { cond, fires_error: false, line: ll.line });
                *open_ifs += 1;
                continue;
            }
            if is_errors_add(toks) {
                if let Some(stmt) = body.last_mut() {
                    stmt.fires_error = true;
                }
                continue;
            }
            if ends_with_do(toks) || starts_block(toks) {
                *skip_depth += 1;
            }
            continue;
        }

        // Inside a state_machine block.
        if matches!(frames.last(), Some(Frame::StateMachine { .. }) | Some(Frame::Event { .. })) {
            if matches!(toks.first(), Some(Tok::Ident(k)) if k == "event") {
                // Listings often omit `end`: a fresh event closes the open one.
                if matches!(frames.last(), Some(Frame::Event { .. })) {
                    let frame = frames.pop().expect("checked above");
                    finish_frame(frame, &mut current, &mut frames);
                }
                cur.pos = 1;
                let name = name_arg(&mut cur).unwrap_or_default();
                frames.push(Frame::Event { name, transitions: Vec::new() });
                continue;
            }
            if matches!(toks.first(), Some(Tok::Ident(k)) if k == "transition") {
                cur.pos = 1;
                let tr = parse_transition(&mut cur);
                if let Some(Frame::Event { transitions, .. }) = frames.last_mut() {
                    if let Some(tr) = tr {
                        transitions.push(tr);
                    }
                }
                continue;
            }
            if ends_with_do(toks) {
                frames.push(Frame::Skip);
            }
            continue;
        }

        // Class-level statements.
        if current.is_none() {
            continue; // top-level noise outside any class
        }
        let class = current.as_mut().expect("checked above");
        match parse_class_stmt(&mut cur, ll.line) {
            ClassStmt::Plain(stmt) => class.statements.push(stmt),
            ClassStmt::Multi(stmts) => class.statements.extend(stmts),
            ClassStmt::OpenMethod { name } => frames.push(Frame::Method {
                name,
                line: ll.line,
                body: Vec::new(),
                open_ifs: 0,
                skip_depth: 0,
            }),
            ClassStmt::OpenStateMachine { field, initial } => frames.push(Frame::StateMachine {
                field,
                initial,
                events: Vec::new(),
                line: ll.line,
            }),
            ClassStmt::OpenSkip => frames.push(Frame::Skip),
        }
    }

    // EOF closes everything still open (listings often omit trailing ends).
    while let Some(frame) = frames.pop() {
        finish_frame(frame, &mut current, &mut frames);
    }
    if let Some(c) = current.take() {
        classes.push(c);
    }
    Ok(())
}

fn ends_with_do(toks: &[Tok]) -> bool {
    matches!(toks.last(), Some(Tok::Ident(k)) if k == "do")
}

fn starts_block(toks: &[Tok]) -> bool {
    matches!(toks.first(), Some(Tok::Ident(k)) if k == "if" || k == "unless" || k == "while" || k == "case" || k == "def")
}

fn is_errors_add(toks: &[Tok]) -> bool {
    matches!(
        (toks.first(), toks.get(1), toks.get(2)),
        (Some(Tok::Ident(e)), Some(Tok::Dot), Some(Tok::Ident(a))) if e == "errors" && a == "add"
    )
}

fn parse_transition(cur: &mut Cur) -> Option<Transition> {
    let mut from = Vec::new();
    let mut to = None;
    let mut poisoned = false;
    while !cur.done() {
        if cur.eat(&Tok::Comma) {
            continue;
        }
        let Some((key, v)) = kv_pair(cur) else {
            // Non-literal piece (method call etc.): poison the transition.
            cur.pos += 1;
            poisoned = true;
            continue;
        };
        match key.as_str() {
            "from" => from = state_list(&v),
            "to" => {
                to = Some(match &v {
                    OptValue::Str(s) | OptValue::Sym(s) => StateLit::Literal(s.clone()),
                    _ => StateLit::NonLiteral,
                })
            }
            _ => {}
        }
    }
    if poisoned {
        from.push(StateLit::NonLiteral);
    }
    Some(Transition {
        from,
        to: to.unwrap_or(StateLit::NonLiteral),
    })
}

fn state_list(v: &OptValue) -> Vec<StateLit> {
    match v {
        OptValue::Str(s) | OptValue::Sym(s) => vec![StateLit::Literal(s.clone())],
        OptValue::List(items) => items
            .iter()
            .map(|it| match it {
                OptValue::Str(s) | OptValue::Sym(s) => StateLit::Literal(s.clone()),
                _ => StateLit::NonLiteral,
            })
            .collect(),
        _ => vec![StateLit::NonLiteral],
    }
}

enum ClassStmt {
    Plain(Stmt),
    Multi(Vec<Stmt>),
    OpenMethod { name: String },
    OpenStateMachine { field: String, initial: Option<StateLit> },
    OpenSkip,
}

const VALIDATES_APIS: &[&str] = &[
    "validates_inclusion_of",
    "validates_presence_of",
    "validates_uniqueness_of",
    "validates_length_of",
    "validates_size_of",
    "validates_format_of",
    "validates_numericality_of",
];

fn parse_class_stmt(cur: &mut Cur, line: usize) -> ClassStmt {
    let head = match cur.peek() {
        Some(Tok::Ident(k)) => k.clone(),
        _ => return opaque_or_skip(cur, line),
    };
    match head.as_str() {
        k if VALIDATES_APIS.contains(&k) => {
            cur.pos += 1;
            let mut fields = Vec::new();
            let mut options = Vec::new();
            loop {
                if cur.done() {
                    break;
                }
                if cur.eat(&Tok::Comma) {
                    continue;
                }
                if let Some(p) = kv_pair(cur) {
                    options.push(p);
                    continue;
                }
                match cur.peek() {
                    Some(Tok::Sym(s)) => {
                        fields.push(s.clone());
                        cur.pos += 1;
                    }
                    Some(Tok::Ident(s)) if options.is_empty() => {
                        fields.push(s.clone());
                        cur.pos += 1;
                    }
                    _ => {
                        cur.pos += 1; // unrecognized fragment; keep scanning
                    }
                }
            }
            let api = head
                .trim_start_matches("validates_")
                .trim_end_matches("_of")
                .to_string();
            ClassStmt::Plain(Stmt::Builtin { api, fields, options, line })
        }
        "validate" => {
            cur.pos += 1;
            let mut methods = Vec::new();
            loop {
                if cur.eat(&Tok::Comma) {
                    continue;
                }
                match cur.peek() {
                    Some(Tok::Sym(s)) => {
                        methods.push(s.clone());
                        cur.pos += 1;
                    }
                    _ => break,
                }
            }
            if methods.is_empty() {
                ClassStmt::Plain(Stmt::Opaque { line })
            } else {
                ClassStmt::Plain(Stmt::ValidateRegistration { methods, line })
            }
        }
        "belongs_to" | "has_one" | "has_many" => {
            let kind = match head.as_str() {
                "belongs_to" => AssocKind::BelongsTo,
                "has_one" => AssocKind::HasOne,
                _ => AssocKind::HasMany,
            };
            cur.pos += 1;
            let mut targets = Vec::new();
            let mut class_name = None;
            let mut polymorphic = false;
            let mut as_interface = None;
            let mut lambda = None;
            loop {
                if cur.done() {
                    break;
                }
                if cur.eat(&Tok::Comma) {
                    continue;
                }
                if let Some(found) = where_lambda(cur) {
                    lambda = found;
                    continue;
                }
                if let Some((key, v)) = kv_pair(cur) {
                    match (key.as_str(), &v) {
                        ("class_name", OptValue::Str(s)) => class_name = Some(s.clone()),
                        ("polymorphic", OptValue::Bool(b)) => polymorphic = *b,
                        ("as", OptValue::Sym(s)) | ("as", OptValue::Str(s)) => {
                            as_interface = Some(s.clone())
                        }
                        _ => {}
                    }
                    continue;
                }
                match name_arg(cur) {
                    Some(n) => targets.push(n),
                    None => {
                        cur.pos += 1;
                    }
                }
            }
            if targets.is_empty() {
                return ClassStmt::Plain(Stmt::Opaque { line });
            }
            // Multi-target form expands to one association per target.
            let mut stmts: Vec<Stmt> = targets
                .into_iter()
                .map(|target| Stmt::Association {
                    kind,
                    target,
                    class_name: class_name.clone(),
                    polymorphic,
                    as_interface: as_interface.clone(),
                    where_lambda: lambda.clone(),
                    line,
                })
                .collect();
            if stmts.len() == 1 {
                ClassStmt::Plain(stmts.pop().expect("one statement"))
            } else {
                ClassStmt::Multi(stmts)
            }
        }
        "def" => {
            cur.pos += 1;
            match cur.next() {
                Some(Tok::Ident(n)) => ClassStmt::OpenMethod { name: n.clone() },
                _ => ClassStmt::OpenSkip,
            }
        }
        "state_machine" => {
            cur.pos += 1;
            let field = match cur.peek() {
                Some(Tok::Sym(s)) => {
                    let s = s.clone();
                    cur.pos += 1;
                    s
                }
                _ => return ClassStmt::OpenSkip,
            };
            let mut initial = None;
            loop {
                if cur.done() {
                    break;
                }
                if cur.eat(&Tok::Comma) {
                    continue;
                }
                if let Some((key, v)) = kv_pair(cur) {
                    if key == "initial" {
                        initial = Some(match &v {
                            OptValue::Str(s) | OptValue::Sym(s) => StateLit::Literal(s.clone()),
                            _ => StateLit::NonLiteral,
                        });
                    }
                    continue;
                }
                cur.pos += 1;
            }
            ClassStmt::OpenStateMachine { field, initial }
        }
        "self" => {
            // self.inheritance_column = 'col' | :col
            cur.pos += 1;
            if cur.eat(&Tok::Dot) {
                if let Some(Tok::Ident(attr)) = cur.next() {
                    if attr == "inheritance_column" && cur.eat(&Tok::Eq) {
                        if let Some(Tok::Str(s)) | Some(Tok::Sym(s)) = cur.next() {
                            return ClassStmt::Plain(Stmt::InheritanceColumn {
                                column: s.clone(),
                                line,
                            });
                        }
                    }
                }
            }
            opaque_or_skip(cur, line)
        }
        _ => opaque_or_skip(cur, line),
    }
}

fn opaque_or_skip(cur: &mut Cur, line: usize) -> ClassStmt {
    if ends_with_do(cur.toks) {
        ClassStmt::OpenSkip
    } else {
        ClassStmt::Plain(Stmt::Opaque { line })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_class(src: &str) -> ClassDef {
        let ast = parse_model_files(&[("m.rb".into(), src.into())]).unwrap();
        assert_eq!(ast.classes.len(), 1, "expected one class in {src:?}");
        ast.classes.into_iter().next().unwrap()
    }

    #[test]
    fn class_header_variants() {
        let c = one_class("class Member\n");
        assert_eq!(c.name, "Member");
        assert_eq!(c.superclass, None);

        let c = one_class("class Firm < Company;\n");
        assert_eq!(c.superclass.as_deref(), Some("Company"));

        let c = one_class("class User < ActiveRecord::Base\nend\n");
        assert_eq!(c.superclass.as_deref(), Some("ActiveRecord::Base"));

        // Lowercase path tail still lexes as part of the constant.
        let c = one_class("class Address < ActiveRecord::base\n");
        assert_eq!(c.superclass.as_deref(), Some("ActiveRecord::base"));
    }

    #[test]
    fn symbol_with_space_after_colon() {
        let c = one_class("class P\n  state_machine : state, initial: 'checkout' do\n  end\nend\n");
        match &c.statements[0] {
            Stmt::StateMachine { field, initial, .. } => {
                assert_eq!(field, "state");
                assert_eq!(initial, &Some(StateLit::Literal("checkout".into())));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn multi_target_association_expands() {
        let c = one_class("class Member\n  belongs_to :user, :project\n");
        let targets: Vec<_> = c
            .statements
            .iter()
            .filter_map(|s| match s {
                Stmt::Association { kind: AssocKind::BelongsTo, target, .. } => Some(target.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(targets, vec!["user", "project"]);
    }

    #[test]
    fn hashrocket_and_modern_options() {
        let c = one_class(
            "class Member\n  validates_uniqueness_of :user_id, :scope => :project_id\n  validates_length_of :login, in: 6..20\n",
        );
        match &c.statements[0] {
            Stmt::Builtin { api, fields, options, .. } => {
                assert_eq!(api, "uniqueness");
                assert_eq!(fields, &["user_id".to_string()]);
                assert_eq!(options[0], ("scope".into(), OptValue::Sym("project_id".into())));
            }
            other => panic!("unexpected {other:?}"),
        }
        match &c.statements[1] {
            Stmt::Builtin { options, .. } => {
                assert_eq!(
                    options[0],
                    ("in".into(), OptValue::Range { lo: 6, hi: 20, exclusive: false })
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quoted_regex_string_becomes_regex_option() {
        let src = "class User < ApplicationRecord\n  validates_format_of :email, :with =>\n    \"/\\A([^@\\s]+)@((?:[-a-z0-9]+\\.)+[a-z]{2,})\\Z/i\"\n";
        let c = one_class(src);
        match &c.statements[0] {
            Stmt::Builtin { api, options, .. } => {
                assert_eq!(api, "format");
                match &options[0].1 {
                    OptValue::Regex { pattern, case_insensitive } => {
                        assert!(pattern.starts_with("\\A"));
                        assert!(pattern.ends_with("\\Z"));
                        assert!(case_insensitive);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slash_regex_literal() {
        let c = one_class("class U\n  validates_format_of :username, with: /\\A[a-zA-Z0-9_]+\\z/\n");
        match &c.statements[0] {
            Stmt::Builtin { options, .. } => assert_eq!(
                options[0].1,
                OptValue::Regex { pattern: "\\A[a-zA-Z0-9_]+\\z".into(), case_insensitive: false }
            ),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validator_method_body_with_truncated_listing() {
        let src = "class User < ApplicationRecord\n  validate :validate_name\n  def validate_name\n    if length(name) > 30\n      errors.add(:name, \"is too long (maximum is 30 characters)\")\n";
        let c = one_class(src);
        assert!(matches!(&c.statements[0], Stmt::ValidateRegistration { methods, .. } if methods == &["validate_name".to_string()]));
        match &c.statements[1] {
            Stmt::Method { name, body, .. } => {
                assert_eq!(name, "validate_name");
                assert_eq!(body.len(), 1);
                assert!(body[0].fires_error);
                let cond = body[0].cond.as_ref().expect("condition parses");
                match cond {
                    CondExpr::Leaf(LeafExpr::Cmp { left, op, right }) => {
                        assert_eq!(
                            left,
                            &Term::Field { name: "name".into(), wrapper: Some("length".into()) }
                        );
                        assert_eq!(op, ">");
                        assert_eq!(right, &Term::Const(crate::value::Value::Int(30)));
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn or_chain_and_method_form_api_calls() {
        let src = "class I\n  validate :check\n  def check\n    if qty.nil? || qty > 100\n      errors.add(:qty, \"bad\")\n    end\n  end\nend\n";
        let c = one_class(src);
        let Stmt::Method { body, .. } = &c.statements[1] else { panic!() };
        let cond = body[0].cond.as_ref().unwrap();
        assert!(!cond.contains_and());
        let leaves = cond.or_leaves();
        assert_eq!(leaves.len(), 2);
        assert!(matches!(leaves[0], LeafExpr::Api { call, .. } if call == "nil?"));
    }

    #[test]
    fn and_condition_flagged() {
        let src = "class I\n  validate :check\n  def check\n    if qty > 1 && qty < 9\n      errors.add(:qty, \"bad\")\n    end\n  end\nend\n";
        let c = one_class(src);
        let Stmt::Method { body, .. } = &c.statements[1] else { panic!() };
        assert!(body[0].cond.as_ref().unwrap().contains_and());
    }

    #[test]
    fn state_machine_without_ends() {
        let src = "class Payment\n  state_machine : state, initial: 'checkout' do\n    event :start_processing do\n      transition from:['checkout','pending','complete'],\n        to: 'processing'\n    event :failure do\n      transition from:['pending', 'processing'], to:'failed'\n";
        let c = one_class(src);
        let Stmt::StateMachine { field, initial, events, .. } = &c.statements[0] else {
            panic!("missing state machine: {:?}", c.statements)
        };
        assert_eq!(field, "state");
        assert_eq!(initial, &Some(StateLit::Literal("checkout".into())));
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].name, "start_processing");
        assert_eq!(events[0].transitions.len(), 1);
        assert_eq!(
            events[0].transitions[0].from,
            vec![
                StateLit::Literal("checkout".into()),
                StateLit::Literal("pending".into()),
                StateLit::Literal("complete".into())
            ]
        );
        assert_eq!(events[1].transitions[0].to, StateLit::Literal("failed".into()));
    }

    #[test]
    fn opaque_statements_preserved() {
        let src = "class Member\n  belongs_to :user, :project\n  validates_uniqueness_of :user_id, :scope => :project_id\n  # Error! Raise an exception \"Validation failed\"\n  member = Member.new(user_id=1, project_id=2)\n  member.save\n";
        let c = one_class(src);
        let opaque = c.statements.iter().filter(|s| matches!(s, Stmt::Opaque { .. })).count();
        assert_eq!(opaque, 2);
        assert_eq!(c.statements.len(), 5);
    }

    #[test]
    fn where_lambda_forms() {
        let src = "class Project\n  has_one :wiki, -> { where(primary: true) }, class_name: 'WikiPage'\n  has_one :doc, -> { where('kind > 3') }, class_name: 'Doc'\nend\n";
        let c = one_class(src);
        match &c.statements[0] {
            Stmt::Association { where_lambda: Some(w), .. } => {
                assert_eq!(w.column, "primary");
                assert_eq!(w.op, "=");
                assert_eq!(w.value, crate::value::Value::Bool(true));
            }
            other => panic!("unexpected {other:?}"),
        }
        match &c.statements[1] {
            Stmt::Association { where_lambda: Some(w), .. } => {
                assert_eq!(w.column, "kind");
                assert_eq!(w.op, ">");
                assert_eq!(w.value, crate::value::Value::Int(3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inheritance_column_override() {
        let c = one_class("class Company < ActiveRecord::Base\n  self.inheritance_column = 'kind'\nend\n");
        assert!(matches!(&c.statements[0], Stmt::InheritanceColumn { column, .. } if column == "kind"));
    }

    #[test]
    fn percent_w_lists_and_plain_arrays() {
        let c = one_class("class U\n  validates_inclusion_of :status, in: %w[active locked]\n  validates_inclusion_of :role, :in => ['admin', 'member']\nend\n");
        match &c.statements[0] {
            Stmt::Builtin { options, .. } => assert_eq!(
                options[0].1,
                OptValue::List(vec![OptValue::Str("active".into()), OptValue::Str("locked".into())])
            ),
            other => panic!("unexpected {other:?}"),
        }
        match &c.statements[1] {
            Stmt::Builtin { options, .. } => assert_eq!(
                options[0].1,
                OptValue::List(vec![OptValue::Str("admin".into()), OptValue::Str("member".into())])
            ),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn node_count_covers_nested_items() {
        let src = "class Payment\n  state_machine : state, initial: 'checkout' do\n    event :go do\n      transition from: 'a', to: 'b'\n    end\n  end\n  def check\n    if state.nil?\n      errors.add(:state, \"x\")\n    end\n  end\nend\n";
        let ast = parse_model_files(&[("m.rb".into(), src.into())]).unwrap();
        // class + sm stmt + event + transition + method stmt + cond = 6
        assert_eq!(ast.node_count(), 6);
    }

    #[test]
    fn parse_error_carries_line() {
        let err = parse_model_files(&[("m.rb".into(), "class User\n  validates_format_of :email, with: /broken\n".into())])
            .unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("regex"));
    }
}
