//! Cost and differential-test gates between enumeration and verification.
//!
//! Both gates work on ground instantiations of the templates. A candidate
//! produced by predicate elimination may declare fewer parameters than the
//! original, so samples are cut down to each template's declared count;
//! ordinals are stable, only a suffix can disappear.

use thiserror::Error;

use super::cost::{estimate_cost, external_cost};
use super::eval::{evaluate, EvalError, Relation};
use super::{bag_equal, Database};
use crate::constraints::Schema;
use crate::rewriter::{RewriteCandidate, RuleKind};
use crate::sql::{QueryTemplate, TemplateError};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("instantiating the original query: {0}")]
    Template(#[from] TemplateError),
    #[error("evaluating the original query: {0}")]
    Eval(#[from] EvalError),
    #[error("cost provider: {0}")]
    Provider(String),
}

#[derive(Debug)]
pub struct CostReport {
    /// Candidates strictly cheaper than the original, cheapest first,
    /// with their estimated cost filled in. Ties lose.
    pub kept: Vec<RewriteCandidate>,
    pub original_cost: f64,
}

fn ground(q: &QueryTemplate, sample: &[Value]) -> Result<QueryTemplate, TemplateError> {
    let declared = q.param_count() as usize;
    if declared > sample.len() {
        return Err(TemplateError::MissingParam(sample.len() as u32 + 1));
    }
    q.instantiate(&sample[..declared])
}

/// Price every candidate against the original, summed over the parameter
/// samples, so one degenerate instantiation (say, an empty result) cannot
/// mask a saving visible on the others. With a provider command the
/// canonical ground SQL is piped to it per sample; otherwise the built-in
/// model prices an actual evaluation on `db`. Candidates that fail to
/// instantiate or evaluate are silently dropped; a failure on the original
/// is an error. With no samples everything ties and nothing is kept.
pub fn filter_by_cost(
    candidates: Vec<RewriteCandidate>,
    original: &QueryTemplate,
    samples: &[Vec<Value>],
    db: &Database,
    schema: &Schema,
    provider: Option<&str>,
) -> Result<CostReport, FilterError> {
    let price = |q: &QueryTemplate| -> Result<f64, FilterError> {
        let mut total = 0.0;
        for sample in samples {
            let g = ground(q, sample)?;
            total += match provider {
                Some(cmd) => external_cost(cmd, &g.render()).map_err(FilterError::Provider)?,
                None => estimate_cost(&g, db, schema)?,
            };
        }
        Ok(total)
    };
    let original_cost = price(original)?;
    let mut kept = Vec::new();
    for mut c in candidates {
        let Ok(cost) = price(&c.template) else { continue };
        if cost < original_cost {
            c.est_cost = Some(cost);
            kept.push(c);
        }
    }
    kept.sort_by(|a, b| {
        a.est_cost
            .partial_cmp(&b.est_cost)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.template.fingerprint().cmp(&b.template.fingerprint()))
    });
    Ok(CostReport { kept, original_cost })
}

/// Keep candidates that return the same bag as the original on every
/// sample. Candidates carrying the LIMIT 1 rule are compared without
/// their limit and additionally require the original to produce at most
/// one row per sample, since equality of one-row prefixes proves nothing.
pub fn filter_by_test(
    candidates: Vec<RewriteCandidate>,
    original: &QueryTemplate,
    db: &Database,
    schema: &Schema,
    samples: &[Vec<Value>],
) -> Result<Vec<RewriteCandidate>, FilterError> {
    let mut baseline: Vec<Relation> = Vec::with_capacity(samples.len());
    for s in samples {
        baseline.push(evaluate(&ground(original, s)?, db, schema)?);
    }
    let mut kept = Vec::new();
    'cand: for c in candidates {
        let limit_rule = c.trace.contains(&RuleKind::AddLimitOne);
        for (s, base) in samples.iter().zip(&baseline) {
            let Ok(mut g) = ground(&c.template, s) else { continue 'cand };
            if limit_rule {
                if base.rows.len() > 1 {
                    continue 'cand;
                }
                g.limit = None;
            }
            let Ok(rel) = evaluate(&g, db, schema) else { continue 'cand };
            if !bag_equal(&rel.rows, &base.rows) {
                continue 'cand;
            }
        }
        kept.push(c);
    }
    Ok(kept)
}
