//! CSV snapshots of a database, one file per table.
//!
//! Header cells are `column:type`. Text (and enum) fields are always quoted
//! with `""` escaping; numbers and booleans are bare; NULL is an empty
//! unquoted field, which keeps it distinct from the empty string `""`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::Database;
use crate::constraints::Schema;
use crate::value::{ColumnType, Value};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn encode(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Text(s) => quote(s),
        Value::Bool(b) => b.to_string(),
        other => other.render_sql(),
    }
}

pub fn dump(db: &Database, schema: &Schema, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for table in &schema.tables {
        let mut out = std::fs::File::create(dir.join(format!("{}.csv", table.name)))?;
        let header: Vec<String> = table
            .columns
            .iter()
            .map(|c| quote(&format!("{}:{}", c.name, c.ty)))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for row in db.rows(&table.name) {
            let cells: Vec<String> = row.iter().map(encode).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
    }
    Ok(())
}

/// Split one CSV line into cells, tracking whether each cell was quoted.
fn split_line(line: &str) -> Result<Vec<(String, bool)>, String> {
    let mut cells = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        let mut cell = String::new();
        let quoted = chars.peek() == Some(&'"');
        if quoted {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => {
                        if chars.peek() == Some(&'"') {
                            chars.next();
                            cell.push('"');
                        } else {
                            break;
                        }
                    }
                    Some(c) => cell.push(c),
                    None => return Err("unterminated quoted field".into()),
                }
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c == ',' {
                    break;
                }
                cell.push(c);
                chars.next();
            }
        }
        cells.push((cell, quoted));
        match chars.next() {
            Some(',') => continue,
            None => return Ok(cells),
            Some(c) => return Err(format!("unexpected {c:?} after field")),
        }
    }
}

fn decode(cell: &str, quoted: bool, ty: &ColumnType) -> Result<Value, String> {
    if quoted {
        return Ok(Value::Text(cell.to_string()));
    }
    if cell.is_empty() {
        return Ok(Value::Null);
    }
    Ok(match ty {
        ColumnType::Integer => Value::Int(cell.parse().map_err(|_| format!("bad integer {cell:?}"))?),
        ColumnType::Float => Value::Float(cell.parse().map_err(|_| format!("bad float {cell:?}"))?),
        ColumnType::Timestamp => {
            Value::Timestamp(cell.parse().map_err(|_| format!("bad timestamp {cell:?}"))?)
        }
        ColumnType::Boolean => match cell {
            "true" | "TRUE" => Value::Bool(true),
            "false" | "FALSE" => Value::Bool(false),
            _ => return Err(format!("bad boolean {cell:?}")),
        },
        ColumnType::Text | ColumnType::Enum(_) => Value::Text(cell.to_string()),
    })
}

pub fn load(schema: &Schema, dir: &Path) -> Result<Database, String> {
    let mut tables = BTreeMap::new();
    for table in &schema.tables {
        let path = dir.join(format!("{}.csv", table.name));
        if !path.exists() {
            tables.insert(table.name.clone(), Vec::new());
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| format!("{}: empty file", path.display()))?;
        let header_cells = split_line(header).map_err(|e| format!("{}: {e}", path.display()))?;
        let names: Vec<&str> = header_cells
            .iter()
            .map(|(c, _)| c.split(':').next().unwrap_or(""))
            .collect();
        let expected: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
        if names != expected {
            return Err(format!(
                "{}: header columns {names:?} do not match schema {expected:?}",
                path.display()
            ));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cells = split_line(line).map_err(|e| format!("{}:{}: {e}", path.display(), lineno + 2))?;
            if cells.len() != table.columns.len() {
                return Err(format!(
                    "{}:{}: {} fields, expected {}",
                    path.display(),
                    lineno + 2,
                    cells.len(),
                    table.columns.len()
                ));
            }
            let mut row = Vec::with_capacity(cells.len());
            for ((cell, quoted), col) in cells.iter().zip(&table.columns) {
                row.push(
                    decode(cell, *quoted, &col.ty)
                        .map_err(|e| format!("{}:{}: column {}: {e}", path.display(), lineno + 2, col.name))?,
                );
            }
            rows.push(row);
        }
        tables.insert(table.name.clone(), rows);
    }
    Ok(Database { tables })
}
