//! Tokenizer for the restricted SQL grammar. Double-quoted identifiers are
//! stripped to bare identifiers during lexing.

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Param(u32),
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Semicolon,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Match,         // ~
    MatchCi,       // ~*
    NotMatch,      // !~
    NotMatchCi,    // !~*
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub tok: Tok,
    pub offset: usize,
}

pub fn lex(input: &str) -> Result<Vec<Spanned>, (usize, String)> {
    let bytes = input.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                i += 1;
            }
            '(' => {
                toks.push(Spanned { tok: Tok::LParen, offset: start });
                i += 1;
            }
            ')' => {
                toks.push(Spanned { tok: Tok::RParen, offset: start });
                i += 1;
            }
            ',' => {
                toks.push(Spanned { tok: Tok::Comma, offset: start });
                i += 1;
            }
            '.' => {
                toks.push(Spanned { tok: Tok::Dot, offset: start });
                i += 1;
            }
            '*' => {
                toks.push(Spanned { tok: Tok::Star, offset: start });
                i += 1;
            }
            ';' => {
                toks.push(Spanned { tok: Tok::Semicolon, offset: start });
                i += 1;
            }
            '=' => {
                toks.push(Spanned { tok: Tok::Eq, offset: start });
                i += 1;
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    toks.push(Spanned { tok: Tok::Ne, offset: start });
                    i += 2;
                } else if bytes.get(i + 1) == Some(&b'=') {
                    toks.push(Spanned { tok: Tok::Le, offset: start });
                    i += 2;
                } else {
                    toks.push(Spanned { tok: Tok::Lt, offset: start });
                    i += 1;
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push(Spanned { tok: Tok::Ge, offset: start });
                    i += 2;
                } else {
                    toks.push(Spanned { tok: Tok::Gt, offset: start });
                    i += 1;
                }
            }
            '!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push(Spanned { tok: Tok::Ne, offset: start });
                    i += 2;
                } else if bytes.get(i + 1) == Some(&b'~') {
                    if bytes.get(i + 2) == Some(&b'*') {
                        toks.push(Spanned { tok: Tok::NotMatchCi, offset: start });
                        i += 3;
                    } else {
                        toks.push(Spanned { tok: Tok::NotMatch, offset: start });
                        i += 2;
                    }
                } else {
                    return Err((start, "unexpected '!'".into()));
                }
            }
            '~' => {
                if bytes.get(i + 1) == Some(&b'*') {
                    toks.push(Spanned { tok: Tok::MatchCi, offset: start });
                    i += 2;
                } else {
                    toks.push(Spanned { tok: Tok::Match, offset: start });
                    i += 1;
                }
            }
            '$' => {
                let mut j = i + 1;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j == i + 1 {
                    return Err((start, "parameter placeholder requires digits".into()));
                }
                let n: u32 = input[i + 1..j]
                    .parse()
                    .map_err(|_| (start, "parameter ordinal out of range".to_string()))?;
                if n == 0 {
                    return Err((start, "parameter ordinals start at 1".into()));
                }
                toks.push(Spanned { tok: Tok::Param(n), offset: start });
                i = j;
            }
            '\'' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    if j >= bytes.len() {
                        return Err((start, "unterminated string literal".into()));
                    }
                    if bytes[j] == b'\'' {
                        if bytes.get(j + 1) == Some(&b'\'') {
                            s.push('\'');
                            j += 2;
                        } else {
                            j += 1;
                            break;
                        }
                    } else {
                        s.push(bytes[j] as char);
                        j += 1;
                    }
                }
                toks.push(Spanned { tok: Tok::Str(s), offset: start });
                i = j;
            }
            '"' => {
                let mut j = i + 1;
                while j < bytes.len() && bytes[j] != b'"' {
                    j += 1;
                }
                if j >= bytes.len() {
                    return Err((start, "unterminated quoted identifier".into()));
                }
                toks.push(Spanned {
                    tok: Tok::Ident(input[i + 1..j].to_string()),
                    offset: start,
                });
                i = j + 1;
            }
            '-' if bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()) => {
                let (tok, next) = lex_number(input, i + 1, true)?;
                toks.push(Spanned { tok, offset: start });
                i = next;
            }
            '0'..='9' => {
                let (tok, next) = lex_number(input, i, false)?;
                toks.push(Spanned { tok, offset: start });
                i = next;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len()
                    && ((bytes[j] as char).is_ascii_alphanumeric() || bytes[j] == b'_')
                {
                    j += 1;
                }
                toks.push(Spanned {
                    tok: Tok::Ident(input[i..j].to_string()),
                    offset: start,
                });
                i = j;
            }
            other => return Err((start, format!("unexpected character {other:?}"))),
        }
    }
    Ok(toks)
}

fn lex_number(input: &str, digits_start: usize, negative: bool) -> Result<(Tok, usize), (usize, String)> {
    let bytes = input.as_bytes();
    let mut j = digits_start;
    while j < bytes.len() && bytes[j].is_ascii_digit() {
        j += 1;
    }
    let mut is_float = false;
    if j < bytes.len() && bytes[j] == b'.' && bytes.get(j + 1).is_some_and(|b| b.is_ascii_digit()) {
        is_float = true;
        j += 1;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
    }
    let text = &input[digits_start..j];
    let start = if negative { digits_start - 1 } else { digits_start };
    if is_float {
        let v: f64 = text
            .parse()
            .map_err(|_| (start, "malformed numeric literal".to_string()))?;
        Ok((Tok::Float(if negative { -v } else { v }), j))
    } else {
        let v: i64 = text
            .parse()
            .map_err(|_| (start, "integer literal out of range".to_string()))?;
        Ok((Tok::Int(if negative { -v } else { v }), j))
    }
}
