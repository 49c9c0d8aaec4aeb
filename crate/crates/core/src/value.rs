//! Runtime values flowing through literals, parameters, and table rows.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Closed set of column types.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Integer,
    Float,
    Text,
    Boolean,
    Timestamp,
    /// Named enumeration over a fixed value list. Stored as text values.
    Enum(Vec<String>),
}

impl ColumnType {
    pub fn is_textual(&self) -> bool {
        matches!(self, ColumnType::Text | ColumnType::Enum(_))
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ColumnType::Integer | ColumnType::Float | ColumnType::Timestamp
        )
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Integer => write!(f, "integer"),
            ColumnType::Float => write!(f, "float"),
            ColumnType::Text => write!(f, "text"),
            ColumnType::Boolean => write!(f, "boolean"),
            ColumnType::Timestamp => write!(f, "timestamp"),
            ColumnType::Enum(vs) => write!(f, "enum({})", vs.join(",")),
        }
    }
}

/// A single SQL value. Timestamps are epoch seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    Timestamp(i64),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Numeric view used by comparisons and interval reasoning.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) | Value::Timestamp(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn type_tag(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Text(_) => "text",
            Value::Bool(_) => "bool",
            Value::Timestamp(_) => "timestamp",
        }
    }

    /// SQL-comparison ordering between two non-null values, when comparable.
    /// Ints, floats, and timestamps compare numerically; text compares
    /// lexicographically; bools compare false < true.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => None,
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            _ => {
                let (a, b) = (self.as_f64()?, other.as_f64()?);
                Some(a.total_cmp(&b))
            }
        }
    }

    pub fn sql_eq(&self, other: &Value) -> Option<bool> {
        self.sql_cmp(other).map(|o| o == Ordering::Equal)
    }

    /// Render as a SQL literal. Text is single-quoted with '' escaping.
    pub fn render_sql(&self) -> String {
        match self {
            Value::Null => "NULL".into(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => {
                if f.fract() == 0.0 && f.is_finite() {
                    format!("{:.1}", f)
                } else {
                    format!("{}", f)
                }
            }
            Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
            Value::Bool(b) => if *b { "TRUE" } else { "FALSE" }.into(),
            Value::Timestamp(t) => t.to_string(),
        }
    }

    /// Coerce a JSON value (from a query-log parameter list) into a `Value`,
    /// guided by the expected column type when known.
    pub fn from_json(v: &serde_json::Value, expected: Option<&ColumnType>) -> Result<Value, String> {
        use serde_json::Value as J;
        Ok(match (v, expected) {
            (J::Null, _) => Value::Null,
            (J::Bool(b), _) => Value::Bool(*b),
            (J::Number(n), Some(ColumnType::Float)) => {
                Value::Float(n.as_f64().ok_or("non-finite number")?)
            }
            (J::Number(n), Some(ColumnType::Timestamp)) => {
                Value::Timestamp(n.as_i64().ok_or("timestamp parameter must be an integer")?)
            }
            (J::Number(n), _) => {
                if let Some(i) = n.as_i64() {
                    Value::Int(i)
                } else {
                    Value::Float(n.as_f64().ok_or("non-finite number")?)
                }
            }
            (J::String(s), Some(ColumnType::Timestamp)) => Value::Timestamp(
                s.parse::<i64>()
                    .map_err(|_| format!("timestamp parameter {s:?} is not epoch seconds"))?,
            ),
            (J::String(s), _) => Value::Text(s.clone()),
            (other, _) => return Err(format!("unsupported parameter value {other}")),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Null => J::Null,
            Value::Int(i) => J::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f)
                .map(J::Number)
                .unwrap_or(J::Null),
            Value::Text(s) => J::from(s.clone()),
            Value::Bool(b) => J::from(*b),
            Value::Timestamp(t) => J::from(*t),
        }
    }

    /// True when this value is storable in a column of the given type.
    pub fn fits(&self, ty: &ColumnType) -> bool {
        match (self, ty) {
            (Value::Null, _) => true,
            (Value::Int(_), ColumnType::Integer) => true,
            (Value::Int(_) | Value::Float(_), ColumnType::Float) => true,
            (Value::Text(s), ColumnType::Enum(vs)) => vs.contains(s),
            (Value::Text(_), ColumnType::Text) => true,
            (Value::Bool(_), ColumnType::Boolean) => true,
            (Value::Int(_) | Value::Timestamp(_), ColumnType::Timestamp) => true,
            _ => false,
        }
    }
}

/// Total order used for deterministic sorting and bag comparison:
/// NULL first, then by type rank, then by value (floats via total_cmp).
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Bool(_) => 1,
                Value::Int(_) => 2,
                Value::Float(_) => 3,
                Value::Timestamp(_) => 4,
                Value::Text(_) => 5,
            }
        }
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.type_tag().hash(state);
        match self {
            Value::Null => {}
            Value::Int(i) | Value::Timestamp(i) => i.hash(state),
            Value::Float(f) => f.to_bits().hash(state),
            Value::Text(s) => s.hash(state),
            Value::Bool(b) => b.hash(state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sql_comparison_is_numeric_across_int_and_float() {
        assert_eq!(Value::Int(2).sql_eq(&Value::Float(2.0)), Some(true));
        assert_eq!(
            Value::Int(1).sql_cmp(&Value::Float(1.5)),
            Some(Ordering::Less)
        );
        assert_eq!(Value::Null.sql_cmp(&Value::Int(1)), None);
    }

    #[test]
    fn renders_literals_with_escaping() {
        assert_eq!(Value::Text("it's".into()).render_sql(), "'it''s'");
        assert_eq!(Value::Int(-3).render_sql(), "-3");
        assert_eq!(Value::Float(2.0).render_sql(), "2.0");
        assert_eq!(Value::Bool(true).render_sql(), "TRUE");
    }

    #[test]
    fn json_coercion_respects_expected_type() {
        let v = Value::from_json(&serde_json::json!(3), Some(&ColumnType::Float)).unwrap();
        assert_eq!(v, Value::Float(3.0));
        let t = Value::from_json(&serde_json::json!(100), Some(&ColumnType::Timestamp)).unwrap();
        assert_eq!(t, Value::Timestamp(100));
    }
}
