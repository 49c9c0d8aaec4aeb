//! In-memory test databases: storage, CSV snapshots, bag-semantics
//! evaluation, synthetic data generation, and the cost model used to filter
//! rewrite candidates.

mod cost;
mod csv;
mod datagen;
mod eval;
mod filter;

pub use cost::{estimate_cost, external_cost, CostModel, COST_PROVIDER_ENV};
pub use datagen::{generate_database, sample_params, DatagenError};
pub(crate) use datagen::sample_pattern;
pub use eval::{evaluate, evaluate_counted, EvalCounters, EvalError, Relation};
pub use filter::{filter_by_cost, filter_by_test, CostReport, FilterError};

use std::collections::BTreeMap;

use crate::value::Value;

/// Rows per table, aligned with the schema's column order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Database {
    pub tables: BTreeMap<String, Vec<Vec<Value>>>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self, table: &str) -> &[Vec<Value>] {
        self.tables.get(table).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Write one `<table>.csv` per table into `dir`. See [`csv`] for the
    /// field encoding.
    pub fn dump_csv(&self, schema: &crate::constraints::Schema, dir: &std::path::Path) -> std::io::Result<()> {
        csv::dump(self, schema, dir)
    }

    pub fn load_csv(schema: &crate::constraints::Schema, dir: &std::path::Path) -> Result<Self, String> {
        csv::load(schema, dir)
    }
}

/// Multiset equality over result rows.
pub fn bag_equal(a: &[Vec<Value>], b: &[Vec<Value>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut counts: BTreeMap<&[Value], i64> = BTreeMap::new();
    for row in a {
        *counts.entry(row.as_slice()).or_insert(0) += 1;
    }
    for row in b {
        match counts.get_mut(row.as_slice()) {
            Some(n) => *n -= 1,
            None => return false,
        }
    }
    counts.values().all(|n| *n == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[i64]) -> Vec<Value> {
        vals.iter().map(|v| Value::Int(*v)).collect()
    }

    #[test]
    fn bag_equality_counts_duplicates() {
        let a = vec![row(&[1]), row(&[2]), row(&[1])];
        let b = vec![row(&[2]), row(&[1]), row(&[1])];
        let c = vec![row(&[1]), row(&[2])];
        let d = vec![row(&[1]), row(&[2]), row(&[2])];
        assert!(bag_equal(&a, &b));
        assert!(!bag_equal(&a, &c));
        assert!(!bag_equal(&a, &d));
    }
}
