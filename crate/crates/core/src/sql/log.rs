//! Query-log lines: SQL text, two spaces, then a JSON array of bind values.
//!
//! ```text
//! SELECT * FROM users WHERE users.id = $1  [[42]]
//! ```
//!
//! Each bind value sits in its own single-element array (the shape most ORM
//! loggers emit); bare scalars are accepted too. A line without a parameter
//! list is a complete SQL statement with no binds. Blank lines and lines
//! starting with `#` carry no record.

use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub sql: String,
    pub params: Vec<Value>,
}

/// Parse one log line. `Ok(None)` means the line is blank or a comment.
pub fn parse_log_line(line: &str) -> Result<Option<LogRecord>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    if let Some(idx) = trimmed.rfind("  ") {
        let (sql_part, rest) = trimmed.split_at(idx);
        let tail = rest.trim();
        if tail.starts_with('[') {
            let parsed: serde_json::Value = serde_json::from_str(tail)
                .map_err(|e| format!("malformed parameter list: {e}"))?;
            let arr = parsed
                .as_array()
                .ok_or("parameter list must be a JSON array")?;
            let mut params = Vec::with_capacity(arr.len());
            for (i, item) in arr.iter().enumerate() {
                let inner = match item {
                    serde_json::Value::Array(cell) if cell.len() == 1 => &cell[0],
                    serde_json::Value::Array(cell) => {
                        return Err(format!(
                            "parameter {} holds {} values, expected 1",
                            i + 1,
                            cell.len()
                        ));
                    }
                    scalar => scalar,
                };
                params.push(
                    Value::from_json(inner, None)
                        .map_err(|e| format!("parameter {}: {e}", i + 1))?,
                );
            }
            return Ok(Some(LogRecord {
                sql: sql_part.trim().to_string(),
                params,
            }));
        }
    }
    Ok(Some(LogRecord {
        sql: trimmed.to_string(),
        params: Vec::new(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_sql_from_bind_list() {
        let rec = parse_log_line(
            "SELECT * FROM users WHERE users.status = $1 AND users.id = $2  [[\"active\"], [7]]",
        )
        .unwrap()
        .unwrap();
        assert_eq!(
            rec.sql,
            "SELECT * FROM users WHERE users.status = $1 AND users.id = $2"
        );
        assert_eq!(rec.params, vec![Value::Text("active".into()), Value::Int(7)]);
    }

    #[test]
    fn line_without_binds_is_plain_sql() {
        let rec = parse_log_line("SELECT * FROM users WHERE users.admin = TRUE")
            .unwrap()
            .unwrap();
        assert!(rec.params.is_empty());
        assert_eq!(rec.sql, "SELECT * FROM users WHERE users.admin = TRUE");
    }

    #[test]
    fn skips_blanks_and_comments() {
        assert_eq!(parse_log_line("   ").unwrap(), None);
        assert_eq!(parse_log_line("# queries from the staging box").unwrap(), None);
    }

    #[test]
    fn accepts_bare_scalars_and_nulls() {
        let rec = parse_log_line("SELECT * FROM t WHERE a = $1 AND b = $2  [1, [null]]")
            .unwrap()
            .unwrap();
        assert_eq!(rec.params, vec![Value::Int(1), Value::Null]);
    }

    #[test]
    fn rejects_malformed_bind_lists() {
        assert!(parse_log_line("SELECT * FROM t  [[1], [2,3]]").is_err());
        assert!(parse_log_line("SELECT * FROM t  [oops]").is_err());
    }
}
