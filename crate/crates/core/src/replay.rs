//! Online query replacement: fingerprint an incoming query, apply the
//! matching lookup-table entry's prechecks, and either substitute the
//! optimized template, short-circuit to an empty result, or pass the query
//! through untouched.
//!
//! The replacement path is a parse, a hash lookup, and (on a hit) parameter
//! checks plus template instantiation. No enumeration, costing, or
//! verification happens here: the lookup table is immutable after load and
//! `replace_query` borrows it shared, so calls are reentrant.

use crate::pipeline::LookupTable;
use crate::sql::{parse_log_line, parse_template, Pred};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayAction {
    Rewritten,
    PrecheckEmpty,
    Passthrough,
}

impl ReplayAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReplayAction::Rewritten => "rewritten",
            ReplayAction::PrecheckEmpty => "precheck-empty",
            ReplayAction::Passthrough => "passthrough",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub action: ReplayAction,
    pub sql: String,
    /// Fail-open note: set when a table entry matched but could not be
    /// applied safely, so the original query was passed through.
    pub warning: Option<String>,
}

fn passthrough(sql: &str, warning: Option<String>) -> ReplayOutcome {
    ReplayOutcome {
        action: ReplayAction::Passthrough,
        sql: sql.to_string(),
        warning,
    }
}

/// Decide what to emit for one incoming query. Unknown or unsupported
/// queries pass through byte-identical; errors after a fingerprint match
/// fail open (pass through with a warning) rather than risking a wrong
/// substitution.
pub fn replace_query(sql: &str, params: &[Value], table: &LookupTable) -> ReplayOutcome {
    let Ok(parsed) = parse_template(sql) else {
        return passthrough(sql, None);
    };
    let (template, values) = match parsed.parameterize(params) {
        Ok(x) => x,
        Err(e) => return passthrough(sql, Some(format!("parameter mismatch: {e}"))),
    };
    let Some(entry) = table.entries.get(&template.fingerprint()) else {
        return passthrough(sql, None);
    };
    let needed = entry.template.param_count() as usize;
    if needed > values.len() {
        return passthrough(
            sql,
            Some(format!(
                "entry expects {needed} parameters, query carries {}",
                values.len()
            )),
        );
    }
    for rule in &entry.prechecks {
        let slot = (rule.param as usize).checked_sub(1);
        let Some(value) = slot.and_then(|i| values.get(i)) else {
            return passthrough(sql, Some(format!("precheck references parameter {}", rule.param)));
        };
        if !rule.passes(value) {
            // The parameter cannot match any stored value; hand back a
            // well-typed empty result without touching the database.
            let mut empty = parsed.clone();
            empty.predicate = Pred::FALSE;
            empty.having = None;
            return ReplayOutcome {
                action: ReplayAction::PrecheckEmpty,
                sql: empty.render(),
                warning: None,
            };
        }
    }
    match entry.template.instantiate(&values[..needed]) {
        Ok(ground) => ReplayOutcome {
            action: ReplayAction::Rewritten,
            sql: ground.render(),
            warning: None,
        },
        Err(e) => passthrough(sql, Some(format!("instantiation failed: {e}"))),
    }
}

/// Process one query-log line into an output line `ACTION\tSQL`, or None for
/// blank and comment lines. Malformed lines pass through as-is with a
/// warning so a replay stream never drops traffic.
pub fn replay_line(line: &str, table: &LookupTable) -> Option<(ReplayOutcome, String)> {
    match parse_log_line(line) {
        Ok(None) => None,
        Ok(Some(rec)) => {
            let outcome = replace_query(&rec.sql, &rec.params, table);
            let rendered = format!("{}\t{}", outcome.action.as_str(), outcome.sql);
            Some((outcome, rendered))
        }
        Err(e) => {
            let outcome = passthrough(line, Some(format!("unparseable log line: {e}")));
            let rendered = format!("{}\t{}", outcome.action.as_str(), outcome.sql);
            Some((outcome, rendered))
        }
    }
}
