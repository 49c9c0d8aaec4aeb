//! Heuristic cost model: price the work counters of an actual evaluation on
//! the test database under a nested-loop physical model. Only the relative
//! ordering of candidates matters to the caller. An external provider can
//! replace the model entirely (SQL on stdin, decimal cost on stdout).

use std::io::Write;
use std::process::{Command, Stdio};

use super::eval::{evaluate_counted, EvalCounters, EvalError};
use super::Database;
use crate::constraints::Schema;
use crate::sql::QueryTemplate;

/// Environment variable naming the external cost provider command.
pub const COST_PROVIDER_ENV: &str = "SEMOPT_COST_PROVIDER";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub scan_per_row: f64,
    pub join_probe_per_pair: f64,
    pub distinct_per_input_row: f64,
    pub predicate_atom_per_row: f64,
    pub output_per_row: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            scan_per_row: 1.0,
            join_probe_per_pair: 1.0,
            distinct_per_input_row: 2.0,
            predicate_atom_per_row: 0.1,
            output_per_row: 0.1,
        }
    }
}

impl CostModel {
    /// Price a finished evaluation. With LIMIT L and no ORDER BY the engine
    /// could stop early, so pre-limit work is scaled by L/(k+1) where k is
    /// the pre-limit row count: the expected scanned fraction when hits are
    /// spread uniformly. ORDER BY forces full evaluation. A constant-FALSE
    /// WHERE costs nothing; the engine never scans.
    pub fn cost(&self, q: &QueryTemplate, c: &EvalCounters) -> f64 {
        if q.predicate.is_const(false) {
            return 0.0;
        }
        let pre = c.scanned_rows as f64 * self.scan_per_row
            + c.join_pairs as f64 * self.join_probe_per_pair
            + c.distinct_input_rows as f64 * self.distinct_per_input_row
            + c.predicate_atom_evals as f64 * self.predicate_atom_per_row;
        let factor = match q.limit {
            Some(l) if q.order_by.is_empty() => {
                (l as f64 / (c.pre_limit_rows as f64 + 1.0)).min(1.0)
            }
            _ => 1.0,
        };
        pre * factor + c.output_rows as f64 * self.output_per_row
    }
}

/// Evaluate `q` on `db` and price the work with the default weights.
pub fn estimate_cost(q: &QueryTemplate, db: &Database, schema: &Schema) -> Result<f64, EvalError> {
    let (_, counters) = evaluate_counted(q, db, schema)?;
    Ok(CostModel::default().cost(q, &counters))
}

/// Ask an external provider for a cost. The provider is a shell command
/// receiving the canonical SQL on stdin and answering with one decimal
/// number on stdout.
pub fn external_cost(provider: &str, sql: &str) -> Result<f64, String> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(provider)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("cost provider failed to start: {e}"))?;
    child
        .stdin
        .take()
        .expect("stdin piped")
        .write_all(sql.as_bytes())
        .map_err(|e| format!("cost provider stdin: {e}"))?;
    let out = child
        .wait_with_output()
        .map_err(|e| format!("cost provider: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "cost provider exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    text.trim()
        .parse::<f64>()
        .map_err(|_| format!("cost provider answered {:?}, expected a decimal", text.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_template;
    use crate::value::Value;

    fn schema() -> Schema {
        Schema::from_json(
            r#"{"tables":[{"name":"t","columns":[
                {"name":"id","type":"integer","nullable":false,"primary_key":true},
                {"name":"grp","type":"integer"}]}]}"#,
        )
        .unwrap()
    }

    fn db(n: i64) -> Database {
        let mut db = Database::new();
        db.tables.insert(
            "t".into(),
            (0..n).map(|i| vec![Value::Int(i), Value::Int(i % 3)]).collect(),
        );
        db
    }

    fn cost(sql: &str, n: i64) -> f64 {
        let t = parse_template(sql).unwrap().resolve(&schema()).unwrap();
        estimate_cost(&t, &db(n), &schema()).unwrap()
    }

    #[test]
    fn removing_distinct_never_increases_cost() {
        for n in [1, 10, 100] {
            let with = cost("SELECT DISTINCT t.grp FROM t", n);
            let without = cost("SELECT t.grp FROM t", n);
            assert!(without < with, "n={n}: {without} vs {with}");
        }
    }

    #[test]
    fn where_false_is_the_global_minimum() {
        assert_eq!(cost("SELECT t.id FROM t WHERE FALSE", 100), 0.0);
        assert!(cost("SELECT t.id FROM t", 1) > 0.0);
    }

    #[test]
    fn cost_monotone_in_cardinality() {
        let small = cost("SELECT t.id FROM t WHERE t.grp = 1", 10);
        let large = cost("SELECT t.id FROM t WHERE t.grp = 1", 100);
        assert!(small < large);
    }

    #[test]
    fn limit_discounts_unordered_scans_only() {
        let full = cost("SELECT t.id FROM t", 100);
        let limited = cost("SELECT t.id FROM t LIMIT 1", 100);
        let ordered = cost("SELECT t.id FROM t ORDER BY t.id ASC LIMIT 1", 100);
        assert!(limited < full / 10.0, "{limited} vs {full}");
        assert!(ordered > full / 2.0, "{ordered} vs {full}");
    }

    #[test]
    fn external_provider_round_trip() {
        let got = external_cost("wc -c | awk '{print $1}'", "SELECT 12345").unwrap();
        assert_eq!(got, 12.0);
        assert!(external_cost("exit 3", "SELECT").is_err());
        assert!(external_cost("echo nonsense", "SELECT").is_err());
    }
}
