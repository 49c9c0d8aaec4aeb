//! Counterexample files: a CSV database dump plus the parameter valuation
//! and the two query texts that disagree on it. A witness directory holds
//! one `<table>.csv` per schema table and a `witness.json` manifest, enough
//! to re-run both queries and watch them differ long after the verification
//! run is gone.

use std::path::Path;

use serde_json::{json, Value as Json};

use crate::constraints::Schema;
use crate::sql::parse_template;
use crate::testbed::{bag_equal, evaluate, Database};
use crate::value::Value;

const MANIFEST: &str = "witness.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub db: Database,
    pub params: Vec<Value>,
    pub original: String,
    pub candidate: String,
}

/// Dump a counterexample: table CSVs plus the manifest.
pub fn write_witness(
    dir: &Path,
    schema: &Schema,
    db: &Database,
    params: &[Value],
    original: &str,
    candidate: &str,
) -> std::io::Result<()> {
    db.dump_csv(schema, dir)?;
    let doc = json!({
        "params": params.iter().map(Value::to_json).collect::<Vec<_>>(),
        "original": original,
        "candidate": candidate,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    text.push('\n');
    std::fs::write(dir.join(MANIFEST), text)
}

pub fn read_witness(dir: &Path, schema: &Schema) -> Result<Witness, String> {
    let db = Database::load_csv(schema, dir)?;
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let doc: Json = serde_json::from_str(&text).map_err(|e| format!("{MANIFEST}: {e}"))?;
    let params = doc
        .get("params")
        .and_then(Json::as_array)
        .ok_or("witness manifest without params array")?
        .iter()
        .map(|j| Value::from_json(j, None))
        .collect::<Result<Vec<_>, _>>()?;
    let field = |key: &str| -> Result<String, String> {
        Ok(doc
            .get(key)
            .and_then(Json::as_str)
            .ok_or_else(|| format!("witness manifest without {key}"))?
            .to_string())
    };
    Ok(Witness {
        db,
        params,
        original: field("original")?,
        candidate: field("candidate")?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessReplay {
    pub original_rows: Vec<Vec<Value>>,
    pub candidate_rows: Vec<Vec<Value>>,
    /// Bag equality of the two results; a genuine witness makes this false.
    pub agree: bool,
}

/// Re-evaluate both queries on the dumped database. Each query consumes the
/// prefix of the valuation matching its own placeholder count (a rewrite
/// may drop trailing parameters, never reorder them).
pub fn replay_witness(w: &Witness, schema: &Schema) -> Result<WitnessReplay, String> {
    let run = |sql: &str| -> Result<Vec<Vec<Value>>, String> {
        let t = parse_template(sql).map_err(|e| e.to_string())?;
        let n = t.param_count() as usize;
        if n > w.params.len() {
            return Err(format!(
                "query declares ${n} but the witness carries {} parameters",
                w.params.len()
            ));
        }
        let ground = t.instantiate(&w.params[..n]).map_err(|e| e.to_string())?;
        let resolved = ground.resolve(schema).map_err(|e| e.to_string())?;
        Ok(evaluate(&resolved, &w.db, schema).map_err(|e| e.to_string())?.rows)
    };
    let original_rows = run(&w.original)?;
    let candidate_rows = run(&w.candidate)?;
    let agree = bag_equal(&original_rows, &candidate_rows);
    Ok(WitnessReplay {
        original_rows,
        candidate_rows,
        agree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSet;
    use crate::rewriter::RewriteCandidate;
    use crate::verifier::{verify_equivalence, Verdict, VerifyConfig};

    fn schema() -> Schema {
        Schema::from_json(
            r#"{"tables":[{"name":"users","columns":[
                {"name":"id","type":"integer","nullable":false},
                {"name":"name","type":"text"}]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn round_trips_and_distinguishes() {
        let schema = schema();
        let original = "SELECT DISTINCT users.name FROM users WHERE users.id = $1";
        let candidate = "SELECT users.name FROM users WHERE users.id = $1";
        let cand = RewriteCandidate {
            template: parse_template(candidate).unwrap().resolve(&schema).unwrap(),
            trace: vec![],
            est_cost: None,
        };
        let orig = parse_template(original).unwrap().resolve(&schema).unwrap();
        // No uniqueness on id: the verifier finds a duplicate-row witness.
        let verdict = verify_equivalence(
            &orig,
            &cand,
            &ConstraintSet::new(vec![]),
            &schema,
            &VerifyConfig::default(),
        );
        let Verdict::NotEquivalent { instance, params } = verdict else {
            panic!("expected a counterexample, got {}", verdict.describe());
        };

        let dir = tempfile::tempdir().unwrap();
        write_witness(dir.path(), &schema, &instance, &params, original, candidate).unwrap();
        let witness = read_witness(dir.path(), &schema).unwrap();
        assert_eq!(witness.db, instance);
        assert_eq!(witness.params, params);

        let replayed = replay_witness(&witness, &schema).unwrap();
        assert!(!replayed.agree, "witness must distinguish the queries");
        assert_ne!(replayed.original_rows.len(), replayed.candidate_rows.len());
    }

    #[test]
    fn missing_manifest_is_an_input_error() {
        let schema = schema();
        let dir = tempfile::tempdir().unwrap();
        Database::new().dump_csv(&schema, dir.path()).unwrap();
        assert!(read_witness(dir.path(), &schema).is_err());
    }

    #[test]
    fn null_params_survive_the_manifest() {
        let schema = schema();
        let db = Database::new();
        let dir = tempfile::tempdir().unwrap();
        write_witness(
            dir.path(),
            &schema,
            &db,
            &[Value::Null, Value::Text("x".into())],
            "SELECT users.id FROM users",
            "SELECT users.id FROM users",
        )
        .unwrap();
        let w = read_witness(dir.path(), &schema).unwrap();
        assert_eq!(w.params, vec![Value::Null, Value::Text("x".into())]);
        assert!(replay_witness(&w, &schema).unwrap().agree);
    }
}
