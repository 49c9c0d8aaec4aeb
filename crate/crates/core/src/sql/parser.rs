//! Recursive-descent parser for the restricted SQL grammar:
//! single SELECT, INNER JOINs with one equality each, AND/OR/NOT predicates
//! over comparison/IN/IS NULL/regex atoms, GROUP BY with COUNT(*),
//! HAVING COUNT(*), ORDER BY, LIMIT. No other subqueries than the
//! single-column `IN (SELECT col FROM t)` form used by checker statements.

use thiserror::Error;

use super::lexer::{lex, Spanned, Tok};
use super::{Atom, CmpOp, ColRef, Having, Join, Operand, Pred, Projection, QueryTemplate};
use crate::value::Value;

#[derive(Debug, Error, PartialEq)]
#[error("SQL parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    input_len: usize,
}

pub fn parse_template(sql: &str) -> Result<QueryTemplate, ParseError> {
    let toks = lex(sql).map_err(|(offset, message)| ParseError { offset, message })?;
    let mut p = Parser {
        toks,
        pos: 0,
        input_len: sql.len(),
    };
    let t = p.query()?;
    p.finish()?;
    check_param_density(&t)?;
    Ok(t)
}

fn check_param_density(t: &QueryTemplate) -> Result<(), ParseError> {
    let max = t.param_count();
    if max == 0 {
        return Ok(());
    }
    let mut seen = vec![false; max as usize];
    let mut mark = |n: u32| seen[n as usize - 1] = true;
    for a in t.predicate.atoms() {
        match a {
            Atom::Cmp { left, right, .. } => {
                for o in [left, right] {
                    if let Operand::Param(n) = o {
                        mark(*n);
                    }
                }
            }
            Atom::InList { items, .. } => {
                for o in items {
                    if let Operand::Param(n) = o {
                        mark(*n);
                    }
                }
            }
            _ => {}
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(ParseError {
            offset: 0,
            message: format!("non-dense parameter ordinals: ${} is unused", missing + 1),
        });
    }
    Ok(())
}

impl Parser {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self
                .toks
                .get(self.pos)
                .map(|s| s.offset)
                .unwrap_or(self.input_len),
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.pos + n).map(|s| &s.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn keyword(&self, n: usize) -> Option<String> {
        match self.peek_at(n) {
            Some(Tok::Ident(s)) => Some(s.to_ascii_uppercase()),
            _ => None,
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.keyword(0).as_deref() == Some(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        while self.peek() == Some(&Tok::Semicolon) {
            self.pos += 1;
        }
        if self.pos != self.toks.len() {
            return self.err("trailing input after query");
        }
        Ok(())
    }

    fn query(&mut self) -> Result<QueryTemplate, ParseError> {
        self.expect_keyword("SELECT")?;
        let distinct = self.eat_keyword("DISTINCT");
        let mut projections = vec![self.projection()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            projections.push(self.projection()?);
        }
        self.expect_keyword("FROM")?;
        let from = self.ident("table name")?;
        let mut joins = Vec::new();
        while self.keyword(0).as_deref() == Some("INNER") || self.keyword(0).as_deref() == Some("JOIN")
        {
            self.eat_keyword("INNER");
            self.expect_keyword("JOIN")?;
            let table = self.ident("join table")?;
            self.expect_keyword("ON")?;
            let left = self.colref()?;
            self.expect(Tok::Eq, "= in join condition")?;
            let right = self.colref()?;
            joins.push(Join { table, left, right });
        }
        let predicate = if self.eat_keyword("WHERE") {
            self.pred()?.simplify()
        } else {
            Pred::TRUE
        };
        let mut group_by = Vec::new();
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            group_by.push(self.colref()?);
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                group_by.push(self.colref()?);
            }
        }
        let having = if self.eat_keyword("HAVING") {
            self.expect_keyword("COUNT")?;
            self.expect(Tok::LParen, "( after COUNT")?;
            self.expect(Tok::Star, "* in COUNT(*)")?;
            self.expect(Tok::RParen, ") after COUNT(*")?;
            let op = self
                .cmp_op()
                .ok_or_else(|| self.err::<()>("comparison in HAVING").unwrap_err())?;
            let count = match self.next() {
                Some(Tok::Int(n)) => n,
                _ => return self.err("integer after HAVING COUNT(*) comparison"),
            };
            Some(Having { op, count })
        } else {
            None
        };
        let mut order_by = Vec::new();
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                let col = self.colref()?;
                let asc = if self.eat_keyword("DESC") {
                    false
                } else {
                    self.eat_keyword("ASC");
                    true
                };
                order_by.push((col, asc));
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        let limit = if self.eat_keyword("LIMIT") {
            match self.next() {
                Some(Tok::Int(n)) if n >= 0 => Some(n as u64),
                _ => return self.err("non-negative integer after LIMIT"),
            }
        } else {
            None
        };
        Ok(QueryTemplate {
            distinct,
            projections,
            from,
            joins,
            predicate,
            group_by,
            having,
            order_by,
            limit,
        })
    }

    fn projection(&mut self) -> Result<Projection, ParseError> {
        if self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            return Ok(Projection::Star);
        }
        if self.keyword(0).as_deref() == Some("COUNT") && self.peek_at(1) == Some(&Tok::LParen) {
            self.pos += 2;
            self.expect(Tok::Star, "* in COUNT(*)")?;
            self.expect(Tok::RParen, ") after COUNT(*")?;
            return Ok(Projection::CountStar);
        }
        let first = self.ident("projection")?;
        if self.peek() == Some(&Tok::Dot) {
            self.pos += 1;
            if self.peek() == Some(&Tok::Star) {
                self.pos += 1;
                return Ok(Projection::TableStar(first));
            }
            let col = self.ident("column after '.'")?;
            return Ok(Projection::Col(ColRef::new(first, col)));
        }
        Ok(Projection::Col(ColRef::bare(first)))
    }

    fn colref(&mut self) -> Result<ColRef, ParseError> {
        let first = self.ident("column reference")?;
        if self.peek() == Some(&Tok::Dot) {
            self.pos += 1;
            let col = self.ident("column after '.'")?;
            Ok(ColRef::new(first, col))
        } else {
            Ok(ColRef::bare(first))
        }
    }

    fn pred(&mut self) -> Result<Pred, ParseError> {
        let mut terms = vec![self.and_term()?];
        while self.eat_keyword("OR") {
            terms.push(self.and_term()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Pred::Or(terms)
        })
    }

    fn and_term(&mut self) -> Result<Pred, ParseError> {
        let mut terms = vec![self.unary()?];
        while self.eat_keyword("AND") {
            terms.push(self.unary()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Pred::And(terms)
        })
    }

    fn unary(&mut self) -> Result<Pred, ParseError> {
        if self.eat_keyword("NOT") {
            return Ok(Pred::Not(Box::new(self.unary()?)));
        }
        // A '(' at predicate position always opens a grouped predicate;
        // operands are never parenthesized in this grammar.
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let inner = self.pred()?;
            self.expect(Tok::RParen, ")")?;
            return Ok(inner);
        }
        self.atom().map(Pred::Atom)
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek()? {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return None,
        };
        self.pos += 1;
        Some(op)
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        // Standalone TRUE/FALSE (not followed by a comparison).
        if let Some(kw) = self.keyword(0) {
            if (kw == "TRUE" || kw == "FALSE") && !self.tok_is_cmp(1) {
                self.pos += 1;
                return Ok(Atom::Const(kw == "TRUE"));
            }
        }
        let left = self.operand()?;

        // IS [NOT] NULL, IN, NOT IN, regex — only valid after a column.
        if let Some(kw) = self.keyword(0) {
            match kw.as_str() {
                "IS" => {
                    let col = self.operand_col(left)?;
                    self.pos += 1;
                    let negated = self.eat_keyword("NOT");
                    self.expect_keyword("NULL")?;
                    return Ok(Atom::IsNull { col, negated });
                }
                "IN" => {
                    let col = self.operand_col(left)?;
                    self.pos += 1;
                    return self.in_tail(col, false);
                }
                "NOT" if self.keyword(1).as_deref() == Some("IN") => {
                    let col = self.operand_col(left)?;
                    self.pos += 2;
                    return self.in_tail(col, true);
                }
                _ => {}
            }
        }
        match self.peek() {
            Some(Tok::Match) | Some(Tok::MatchCi) | Some(Tok::NotMatch) | Some(Tok::NotMatchCi) => {
                let (negated, ci) = match self.peek().unwrap() {
                    Tok::Match => (false, false),
                    Tok::MatchCi => (false, true),
                    Tok::NotMatch => (true, false),
                    Tok::NotMatchCi => (true, true),
                    _ => unreachable!(),
                };
                let col = self.operand_col(left)?;
                self.pos += 1;
                let pattern = match self.next() {
                    Some(Tok::Str(s)) => s,
                    _ => return self.err("string pattern after regex operator"),
                };
                return Ok(Atom::Regex {
                    col,
                    pattern,
                    case_insensitive: ci,
                    negated,
                });
            }
            _ => {}
        }
        let op = match self.cmp_op() {
            Some(op) => op,
            None => return self.err("comparison operator"),
        };
        let right = self.operand()?;
        Ok(Atom::Cmp { left, op, right })
    }

    fn operand_col(&self, op: Operand) -> Result<ColRef, ParseError> {
        match op {
            Operand::Col(c) => Ok(c),
            _ => self.err("left side must be a column"),
        }
    }

    fn in_tail(&mut self, col: ColRef, negated: bool) -> Result<Atom, ParseError> {
        self.expect(Tok::LParen, "( after IN")?;
        if self.keyword(0).as_deref() == Some("SELECT") {
            self.pos += 1;
            let column = self.ident("subquery column")?;
            self.expect_keyword("FROM")?;
            let table = self.ident("subquery table")?;
            self.expect(Tok::RParen, ") closing subquery")?;
            return Ok(Atom::InSubquery {
                col,
                table,
                column,
                negated,
            });
        }
        let mut items = Vec::new();
        loop {
            let item = self.operand()?;
            match &item {
                Operand::Lit(_) | Operand::Param(_) => items.push(item),
                _ => return self.err("IN list items must be literals or parameters"),
            }
            if self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect(Tok::RParen, ") closing IN list")?;
        if items.is_empty() {
            return self.err("empty IN list");
        }
        Ok(Atom::InList { col, items, negated })
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(Operand::Lit(Value::Int(n)))
            }
            Some(Tok::Float(f)) => {
                self.pos += 1;
                Ok(Operand::Lit(Value::Float(f)))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Operand::Lit(Value::Text(s)))
            }
            Some(Tok::Param(n)) => {
                self.pos += 1;
                Ok(Operand::Param(n))
            }
            Some(Tok::Ident(id)) => {
                let kw = id.to_ascii_uppercase();
                if kw == "TRUE" || kw == "FALSE" {
                    self.pos += 1;
                    return Ok(Operand::Lit(Value::Bool(kw == "TRUE")));
                }
                if kw == "NULL" {
                    return self.err("bare NULL literal; use IS NULL");
                }
                if kw == "LENGTH" && self.peek_at(1) == Some(&Tok::LParen) {
                    self.pos += 2;
                    let col = self.colref()?;
                    self.expect(Tok::RParen, ") after LENGTH(col")?;
                    return Ok(Operand::Length(col));
                }
                Ok(Operand::Col(self.colref()?))
            }
            _ => self.err("operand"),
        }
    }

    fn tok_is_cmp(&self, n: usize) -> bool {
        matches!(
            self.peek_at(n),
            Some(Tok::Eq) | Some(Tok::Ne) | Some(Tok::Lt) | Some(Tok::Le) | Some(Tok::Gt) | Some(Tok::Ge)
        )
    }
}
