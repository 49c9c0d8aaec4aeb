//! Schema model: ground truth for name resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::ColumnType;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    #[serde(default = "default_true")]
    pub nullable: bool,
    #[serde(default, rename = "primary_key")]
    pub primary_key: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn primary_key(&self) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.primary_key)
    }
}

/// Tables, columns, and column types, plus any database-declared constraints
/// (serialized in the same JSON shape as constraint-set files).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<TableDef>,
    /// Raw db-declared constraints; parsed by `declared_constraints`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<serde_json::Value>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("duplicate table {0}")]
    DuplicateTable(String),
    #[error("duplicate column {0}.{1}")]
    DuplicateColumn(String, String),
    #[error("table {0} has more than one primary key column")]
    MultiplePrimaryKeys(String),
    #[error("primary key column {0}.{1} must be NOT NULL")]
    NullablePrimaryKey(String, String),
    #[error("enum column {0}.{1} has an empty or duplicated value list")]
    BadEnumValues(String, String),
    #[error("invalid schema JSON: {0}")]
    Json(String),
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Schema, SchemaError> {
        let schema: Schema =
            serde_json::from_str(text).map_err(|e| SchemaError::Json(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("schema serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tables {
            if !seen.insert(&t.name) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut cols = std::collections::HashSet::new();
            let mut pks = 0;
            for c in &t.columns {
                if !cols.insert(&c.name) {
                    return Err(SchemaError::DuplicateColumn(t.name.clone(), c.name.clone()));
                }
                if c.primary_key {
                    pks += 1;
                    if c.nullable {
                        return Err(SchemaError::NullablePrimaryKey(
                            t.name.clone(),
                            c.name.clone(),
                        ));
                    }
                }
                if let ColumnType::Enum(vs) = &c.ty {
                    let uniq: std::collections::HashSet<_> = vs.iter().collect();
                    if vs.is_empty() || uniq.len() != vs.len() {
                        return Err(SchemaError::BadEnumValues(t.name.clone(), c.name.clone()));
                    }
                }
            }
            if pks > 1 {
                return Err(SchemaError::MultiplePrimaryKeys(t.name.clone()));
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnDef> {
        self.table(table).and_then(|t| t.column(column))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let s = Schema::from_json(
            r#"{"tables":[{"name":"users","columns":[
                {"name":"id","type":"integer","nullable":false,"primary_key":true},
                {"name":"status","type":"text"},
                {"name":"role","type":{"enum":["admin","member"]}}
            ]}]}"#,
        )
        .unwrap();
        assert_eq!(s.table("users").unwrap().primary_key().unwrap().name, "id");
        assert!(s.column("users", "status").unwrap().nullable);
        assert!(s
            .column("users", "role")
            .map(|c| c.ty == ColumnType::Enum(vec!["admin".into(), "member".into()]))
            .unwrap());
    }

    #[test]
    fn rejects_nullable_primary_key() {
        let err = Schema::from_json(
            r#"{"tables":[{"name":"t","columns":[
                {"name":"id","type":"integer","primary_key":true}
            ]}]}"#,
        )
        .unwrap_err();
        assert_eq!(err, SchemaError::NullablePrimaryKey("t".into(), "id".into()));
    }
}
