//! End-to-end offline run: group logged queries into templates, rewrite each
//! against the merged constraint set, keep only candidates that price
//! cheaper, agree on generated data, and certify equivalence up to the
//! bound, then assemble the deployable artifacts: the lookup table mapping
//! query fingerprints to optimized templates, per-parameter prechecks, and
//! enum DDL suggestions.
//!
//! Templates are processed concurrently; artifact assembly is
//! single-threaded so output is byte-identical across runs with the same
//! seed and configuration. A failure while processing one template is
//! recorded on that template's report and never aborts the batch.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use crate::constraints::{Constraint, ConstraintKind, ConstraintSet, Schema};
use crate::rewriter::{enumerate_rewrites, RuleKind};
use crate::sql::{parse_log_line, parse_template, Atom, CmpOp, Operand, Pred, QueryTemplate};
use crate::testbed::{filter_by_cost, filter_by_test, generate_database, sample_params};
use crate::value::{ColumnType, Value};
use crate::verifier::{verify_batch, Verdict, VerifyConfig, DEFAULT_BOUND, DEFAULT_CEILING};

pub use crate::rewriter::DEFAULT_THRESHOLD;

pub const DEFAULT_DATAGEN_ROWS: usize = 24;
pub const DEFAULT_PARAM_SAMPLES: usize = 6;

/// Format version of the lookup-table JSON layout.
pub const LOOKUP_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Enumeration cap on rewrite candidates per template.
    pub threshold: usize,
    /// Database size bound for equivalence certificates.
    pub bound: usize,
    /// Instance-count ceiling above which verification is skipped.
    pub ceiling: f64,
    /// External cost provider command; None uses the built-in model.
    pub cost_provider: Option<String>,
    /// Rows per table in the generated test database.
    pub datagen_rows: usize,
    /// Parameter vectors sampled for differential testing.
    pub param_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            bound: DEFAULT_BOUND,
            ceiling: DEFAULT_CEILING,
            cost_provider: None,
            datagen_rows: DEFAULT_DATAGEN_ROWS,
            param_samples: DEFAULT_PARAM_SAMPLES,
        }
    }
}

impl PipelineConfig {
    /// Hash over every field that can change pipeline output; stamped into
    /// the lookup table so stale artifacts are detectable.
    pub fn hash(&self) -> String {
        let canon = format!(
            "seed={};threshold={};bound={};ceiling={};provider={};rows={};samples={}",
            self.seed,
            self.threshold,
            self.bound,
            self.ceiling,
            self.cost_provider.as_deref().unwrap_or(""),
            self.datagen_rows,
            self.param_samples,
        );
        hex(&Sha256::digest(canon.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// ---------------------------------------------------------------------------
// Prechecks

/// Input validation attached to one parameter ordinal. A failing check means
/// the query cannot match any stored row, so the replayer returns an empty
/// result without touching the database.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecheckRule {
    /// 1-based parameter ordinal.
    pub param: u32,
    pub check: PrecheckKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrecheckKind {
    LengthRange { min: u64, max: Option<u64> },
    FormatMatch { pattern: String, case_insensitive: bool },
    InclusionIn { values: Vec<Value> },
}

impl PrecheckRule {
    /// Whether the bound parameter value can possibly match a stored value.
    /// NULL fails every check: an equality against NULL is empty anyway.
    pub fn passes(&self, value: &Value) -> bool {
        match &self.check {
            PrecheckKind::LengthRange { min, max } => match value {
                Value::Text(s) => {
                    let n = s.chars().count() as u64;
                    n >= *min && max.map_or(true, |m| n <= m)
                }
                _ => false,
            },
            PrecheckKind::FormatMatch { pattern, case_insensitive } => match value {
                Value::Text(s) => regex::RegexBuilder::new(pattern)
                    .case_insensitive(*case_insensitive)
                    .build()
                    .map(|re| re.is_match(s))
                    .unwrap_or(true),
                _ => false,
            },
            PrecheckKind::InclusionIn { values } => {
                values.iter().any(|v| value.sql_eq(v) == Some(true))
            }
        }
    }

    pub fn to_json(&self) -> Json {
        match &self.check {
            PrecheckKind::LengthRange { min, max } => json!({
                "param": self.param,
                "kind": "length-range",
                "min": min,
                "max": max,
            }),
            PrecheckKind::FormatMatch { pattern, case_insensitive } => json!({
                "param": self.param,
                "kind": "format-match",
                "pattern": pattern,
                "case_insensitive": case_insensitive,
            }),
            PrecheckKind::InclusionIn { values } => json!({
                "param": self.param,
                "kind": "inclusion-in",
                "values": values.iter().map(Value::to_json).collect::<Vec<_>>(),
            }),
        }
    }

    pub fn from_json(v: &Json) -> Result<PrecheckRule, String> {
        let param = v
            .get("param")
            .and_then(Json::as_u64)
            .ok_or("precheck missing param ordinal")? as u32;
        let kind = v
            .get("kind")
            .and_then(Json::as_str)
            .ok_or("precheck missing kind")?;
        let check = match kind {
            "length-range" => PrecheckKind::LengthRange {
                min: v.get("min").and_then(Json::as_u64).unwrap_or(0),
                max: v.get("max").and_then(Json::as_u64),
            },
            "format-match" => PrecheckKind::FormatMatch {
                pattern: v
                    .get("pattern")
                    .and_then(Json::as_str)
                    .ok_or("format-match without pattern")?
                    .to_string(),
                case_insensitive: v
                    .get("case_insensitive")
                    .and_then(Json::as_bool)
                    .unwrap_or(false),
            },
            "inclusion-in" => PrecheckKind::InclusionIn {
                values: v
                    .get("values")
                    .and_then(Json::as_array)
                    .ok_or("inclusion-in without values")?
                    .iter()
                    .map(|j| Value::from_json(j, None))
                    .collect::<Result<Vec<_>, _>>()?,
            },
            other => return Err(format!("unknown precheck kind {other}")),
        };
        Ok(PrecheckRule { param, check })
    }
}

/// Top-level conjunct atoms: atoms that hold in every result row. Atoms
/// under OR or NOT do not qualify, so a failing precheck on them could not
/// prove the result empty.
fn conjunct_atoms(p: &Pred) -> Vec<&Atom> {
    match p {
        Pred::And(ps) => ps.iter().flat_map(conjunct_atoms).collect(),
        Pred::Atom(a) => vec![a],
        _ => vec![],
    }
}

/// Derive parameter prechecks from equality atoms `col = $n` whose column
/// carries a Length, Format, or Inclusion constraint. Stored values all
/// satisfy the constraint, so a parameter violating it cannot equal any of
/// them and the query returns nothing.
pub fn derive_prechecks(t: &QueryTemplate, cs: &ConstraintSet) -> Vec<PrecheckRule> {
    let mut rules: Vec<PrecheckRule> = Vec::new();
    for atom in conjunct_atoms(&t.predicate) {
        let Atom::Cmp { left, op: CmpOp::Eq, right } = atom else {
            continue;
        };
        let (col, param) = match (left, right) {
            (Operand::Col(c), Operand::Param(n)) => (c, *n),
            (Operand::Param(n), Operand::Col(c)) => (c, *n),
            _ => continue,
        };
        let Some(table) = &col.table else { continue };
        for c in cs.iter() {
            if &c.table != table || c.columns.len() != 1 || c.columns[0] != col.column {
                continue;
            }
            let checks: Vec<PrecheckKind> = match &c.kind {
                ConstraintKind::Length { min, max } => vec![PrecheckKind::LengthRange {
                    min: min.unwrap_or(0),
                    max: *max,
                }],
                ConstraintKind::Format { patterns } => patterns
                    .iter()
                    .filter(|p| {
                        regex::RegexBuilder::new(&p.pattern)
                            .case_insensitive(p.case_insensitive)
                            .build()
                            .is_ok()
                    })
                    .map(|p| PrecheckKind::FormatMatch {
                        pattern: p.pattern.clone(),
                        case_insensitive: p.case_insensitive,
                    })
                    .collect(),
                ConstraintKind::Inclusion { values } => vec![PrecheckKind::InclusionIn {
                    values: values.clone(),
                }],
                _ => vec![],
            };
            for check in checks {
                let rule = PrecheckRule { param, check };
                if !rules.contains(&rule) {
                    rules.push(rule);
                }
            }
        }
    }
    rules
}

// ---------------------------------------------------------------------------
// Enum DDL

#[derive(Debug, Clone, PartialEq)]
pub struct EnumDdl {
    /// CREATE TYPE / ALTER TABLE pairs, ordered by table then column.
    /// Emitted as text for a DBA to review, never applied by this tool.
    pub statements: Vec<String>,
    pub diagnostics: Vec<String>,
}

/// Suggest PostgreSQL enum types for text columns carrying an Inclusion
/// constraint. Value order follows the constraint.
pub fn emit_enum_ddl(schema: &Schema, cs: &ConstraintSet) -> EnumDdl {
    let mut picked: Vec<(&str, &str, &[Value])> = Vec::new();
    let mut diagnostics = Vec::new();
    for c in cs.iter() {
        let ConstraintKind::Inclusion { values } = &c.kind else {
            continue;
        };
        if c.columns.len() != 1 {
            diagnostics.push(format!(
                "skipped {}({}): inclusion over multiple columns",
                c.table,
                c.columns.join(",")
            ));
            continue;
        }
        let col = c.columns[0].as_str();
        let Some(table) = schema.table(&c.table) else {
            diagnostics.push(format!("skipped {}.{col}: table not in schema", c.table));
            continue;
        };
        let Some(column) = table.column(col) else {
            diagnostics.push(format!("skipped {}.{col}: column not in schema", c.table));
            continue;
        };
        if column.ty != ColumnType::Text {
            diagnostics.push(format!(
                "skipped {}.{col}: column type {} is not text",
                c.table, column.ty
            ));
            continue;
        }
        if picked.iter().any(|(t, co, _)| *t == c.table && *co == col) {
            diagnostics.push(format!(
                "skipped {}.{col}: a previous inclusion constraint already defines the enum",
                c.table
            ));
            continue;
        }
        picked.push((c.table.as_str(), col, values.as_slice()));
    }
    picked.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut statements = Vec::new();
    for (table, col, values) in picked {
        let ty = format!("{table}_{col}_enum");
        let list = values
            .iter()
            .map(Value::render_sql)
            .collect::<Vec<_>>()
            .join(", ");
        statements.push(format!("CREATE TYPE {ty} AS ENUM ({list});"));
        statements.push(format!(
            "ALTER TABLE {table} ALTER COLUMN {col} TYPE {ty} USING {col}::{ty};"
        ));
    }
    EnumDdl {
        statements,
        diagnostics,
    }
}

// ---------------------------------------------------------------------------
// Lookup table

#[derive(Debug, Clone, PartialEq)]
pub struct LookupEntry {
    /// Parameterized original, for humans reading the artifact.
    pub original: String,
    /// Parameterized optimized template text.
    pub optimized: String,
    /// Parsed form of `optimized`; rebuilt on load.
    pub template: QueryTemplate,
    pub trace: Vec<RuleKind>,
    pub prechecks: Vec<PrecheckRule>,
    pub verified_bound: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub version: String,
    pub config_hash: String,
    pub entries: BTreeMap<String, LookupEntry>,
}

impl LookupTable {
    pub fn empty(config_hash: String) -> LookupTable {
        LookupTable {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            entries: BTreeMap::new(),
        }
    }

    /// Canonical JSON: object keys sorted, compact separators, stable across
    /// runs with equal content.
    pub fn to_json(&self) -> String {
        let entries: BTreeMap<&String, Json> = self
            .entries
            .iter()
            .map(|(fp, e)| {
                (
                    fp,
                    json!({
                        "original": e.original,
                        "optimized": e.optimized,
                        "trace": e.trace.iter().map(|r| r.name()).collect::<Vec<_>>(),
                        "prechecks": e.prechecks.iter().map(PrecheckRule::to_json).collect::<Vec<_>>(),
                        "verified_bound": e.verified_bound,
                    }),
                )
            })
            .collect();
        let doc = json!({
            "format": LOOKUP_FORMAT,
            "version": self.version,
            "config_hash": self.config_hash,
            "entries": entries,
        });
        serde_json::to_string_pretty(&doc).expect("lookup table serializes")
    }

    pub fn from_json(text: &str) -> Result<LookupTable, String> {
        let doc: Json = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let format = doc.get("format").and_then(Json::as_u64).unwrap_or(0);
        if format != LOOKUP_FORMAT as u64 {
            return Err(format!("unsupported lookup format {format}"));
        }
        let version = doc
            .get("version")
            .and_then(Json::as_str)
            .unwrap_or("")
            .to_string();
        let config_hash = doc
            .get("config_hash")
            .and_then(Json::as_str)
            .unwrap_or("")
            .to_string();
        let mut entries = BTreeMap::new();
        let Some(map) = doc.get("entries").and_then(Json::as_object) else {
            return Err("lookup table without entries object".into());
        };
        for (fp, e) in map {
            let original = e
                .get("original")
                .and_then(Json::as_str)
                .ok_or("entry without original")?
                .to_string();
            let optimized = e
                .get("optimized")
                .and_then(Json::as_str)
                .ok_or("entry without optimized")?
                .to_string();
            let template =
                parse_template(&optimized).map_err(|err| format!("entry {fp}: {err}"))?;
            let trace = e
                .get("trace")
                .and_then(Json::as_array)
                .map(|a| {
                    a.iter()
                        .filter_map(Json::as_str)
                        .filter_map(rule_from_name)
                        .collect()
                })
                .unwrap_or_default();
            let prechecks = e
                .get("prechecks")
                .and_then(Json::as_array)
                .map(|a| a.iter().map(PrecheckRule::from_json).collect())
                .transpose()?
                .unwrap_or_default();
            let verified_bound = e
                .get("verified_bound")
                .and_then(Json::as_u64)
                .unwrap_or(0) as u32;
            entries.insert(
                fp.clone(),
                LookupEntry {
                    original,
                    optimized,
                    template,
                    trace,
                    prechecks,
                    verified_bound,
                },
            );
        }
        Ok(LookupTable {
            version,
            config_hash,
            entries,
        })
    }
}

fn rule_from_name(name: &str) -> Option<RuleKind> {
    RuleKind::ALL.iter().copied().find(|r| r.name() == name)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageCounts {
    /// Templates with at least one constraint touching their tables.
    pub with_constraints: usize,
    /// Candidates produced by enumeration, summed over templates.
    pub enumerated: usize,
    /// Candidates pricing strictly cheaper than their original.
    pub cost_kept: usize,
    /// Candidates agreeing with their original on all test samples.
    pub test_kept: usize,
    /// Candidates certified equivalent (at most one per template).
    pub verified: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateReport {
    pub fingerprint: String,
    pub original: String,
    pub occurrences: usize,
    /// Some constraint touches a table this template reads.
    pub with_constraints: bool,
    pub enumerated: usize,
    pub cost_kept: usize,
    pub test_kept: usize,
    pub verified: bool,
    pub trace: Vec<RuleKind>,
    /// Populated when this template was skipped rather than processed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub templates: Vec<TemplateReport>,
    pub stage: StageCounts,
    /// Log lines that did not parse into a supported query.
    pub skipped_lines: usize,
    /// Run-level notes (for example a data generation failure).
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let templates: Vec<Json> = self
            .templates
            .iter()
            .map(|t| {
                json!({
                    "fingerprint": t.fingerprint,
                    "original": t.original,
                    "occurrences": t.occurrences,
                    "with_constraints": t.with_constraints,
                    "enumerated": t.enumerated,
                    "cost_kept": t.cost_kept,
                    "test_kept": t.test_kept,
                    "verified": t.verified,
                    "trace": t.trace.iter().map(|r| r.name()).collect::<Vec<_>>(),
                    "error": t.error,
                })
            })
            .collect();
        let doc = json!({
            "stage": {
                "with_constraints": self.stage.with_constraints,
                "enumerated": self.stage.enumerated,
                "cost_kept": self.stage.cost_kept,
                "test_kept": self.stage.test_kept,
                "verified": self.stage.verified,
            },
            "skipped_lines": self.skipped_lines,
            "notes": self.notes,
            "templates": templates,
        });
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }

    /// Short human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "templates: {} ({} with constraints), skipped lines: {}\n",
            self.templates.len(),
            self.stage.with_constraints,
            self.skipped_lines
        ));
        out.push_str(&format!(
            "candidates: enumerated {} -> cheaper {} -> test-equal {} -> certified {}\n",
            self.stage.enumerated, self.stage.cost_kept, self.stage.test_kept, self.stage.verified
        ));
        for t in &self.templates {
            let status = match (&t.error, t.verified) {
                (Some(e), _) => format!("error: {e}"),
                (None, true) => format!(
                    "optimized [{}]",
                    t.trace.iter().map(|r| r.abbrev()).collect::<Vec<_>>().join("+")
                ),
                (None, false) => "unchanged".to_string(),
            };
            out.push_str(&format!(
                "  {}x {} -> {}\n",
                t.occurrences,
                &t.fingerprint[..12.min(t.fingerprint.len())],
                status
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// The run

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub lookup: LookupTable,
    pub report: RunReport,
}

struct Grouped {
    /// Parameterized, unresolved template; its fingerprint keys the group.
    template: QueryTemplate,
    occurrences: usize,
}

/// Parse a query log into unique parameterized templates, preserving
/// first-seen order under a sorted key. Unparseable lines are counted.
fn group_log(log: &str, skipped: &mut usize, notes: &mut Vec<String>) -> BTreeMap<String, Grouped> {
    let mut groups: BTreeMap<String, Grouped> = BTreeMap::new();
    for line in log.lines() {
        let rec = match parse_log_line(line) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                *skipped += 1;
                if notes.len() < 20 {
                    notes.push(format!("log line skipped: {e}"));
                }
                continue;
            }
        };
        let parsed = match parse_template(&rec.sql) {
            Ok(t) => t,
            Err(e) => {
                *skipped += 1;
                if notes.len() < 20 {
                    notes.push(format!("log line skipped: {e}"));
                }
                continue;
            }
        };
        let (template, _values) = match parsed.parameterize(&rec.params) {
            Ok(x) => x,
            Err(e) => {
                *skipped += 1;
                if notes.len() < 20 {
                    notes.push(format!("log line skipped: {e}"));
                }
                continue;
            }
        };
        let fp = template.fingerprint();
        groups
            .entry(fp)
            .and_modify(|g| g.occurrences += 1)
            .or_insert(Grouped {
                template,
                occurrences: 1,
            });
    }
    groups
}

/// Whether any constraint in the set touches a table of the template.
fn has_relevant_constraints(t: &QueryTemplate, cs: &ConstraintSet) -> bool {
    let tables = t.tables();
    cs.iter().any(|c| tables.iter().any(|tb| tb == &c.table))
}

struct TemplateOutcome {
    report: TemplateReport,
    entry: Option<(String, LookupEntry)>,
}

fn process_template(
    fp: &str,
    g: &Grouped,
    cs: &ConstraintSet,
    schema: &Schema,
    db: Option<&crate::testbed::Database>,
    config: &PipelineConfig,
) -> TemplateOutcome {
    let mut report = TemplateReport {
        fingerprint: fp.to_string(),
        original: g.template.render(),
        occurrences: g.occurrences,
        with_constraints: false,
        enumerated: 0,
        cost_kept: 0,
        test_kept: 0,
        verified: false,
        trace: Vec::new(),
        error: None,
    };
    let fail = |mut report: TemplateReport, msg: String| {
        report.error = Some(msg);
        TemplateOutcome {
            report,
            entry: None,
        }
    };

    let resolved = match g.template.resolve(schema) {
        Ok(r) => r,
        Err(e) => return fail(report, format!("resolve: {e}")),
    };
    report.with_constraints = has_relevant_constraints(&resolved, cs);
    if !report.with_constraints {
        return TemplateOutcome {
            report,
            entry: None,
        };
    }
    let enumeration = enumerate_rewrites(&resolved, cs, schema, config.threshold);
    report.enumerated = enumeration.candidates.len();
    if enumeration.candidates.is_empty() {
        return TemplateOutcome {
            report,
            entry: None,
        };
    }
    let Some(db) = db else {
        return fail(report, "no test database available".into());
    };
    let samples = sample_params(
        &resolved,
        schema,
        db,
        config.param_samples.max(1),
        config.seed,
    );
    let cost = match filter_by_cost(
        enumeration.candidates,
        &resolved,
        &samples,
        db,
        schema,
        config.cost_provider.as_deref(),
    ) {
        Ok(c) => c,
        Err(e) => return fail(report, format!("cost filter: {e}")),
    };
    report.cost_kept = cost.kept.len();
    let tested = match filter_by_test(cost.kept, &resolved, db, schema, &samples) {
        Ok(t) => t,
        Err(e) => return fail(report, format!("test filter: {e}")),
    };
    report.test_kept = tested.len();
    let outcome = verify_batch(
        &resolved,
        &tested,
        cs,
        schema,
        &VerifyConfig {
            bound: config.bound,
            ceiling: config.ceiling,
        },
    );
    let Some(winner) = outcome.winner else {
        return TemplateOutcome {
            report,
            entry: None,
        };
    };
    let candidate = &tested[winner];
    let bound = outcome
        .attempts
        .iter()
        .find_map(|(i, v)| match v {
            Verdict::EquivalentUpToBound { bound } if *i == winner => Some(*bound),
            _ => None,
        })
        .unwrap_or(config.bound);
    report.verified = true;
    report.trace = candidate.trace.clone();
    let entry = LookupEntry {
        original: g.template.render(),
        optimized: candidate.template.render(),
        template: candidate.template.clone(),
        trace: candidate.trace.clone(),
        prechecks: derive_prechecks(&resolved, cs),
        verified_bound: bound as u32,
    };
    TemplateOutcome {
        report,
        entry: Some((fp.to_string(), entry)),
    }
}

/// Run the whole offline path: group the query log into templates, generate
/// one shared test database, then enumerate, cost-filter, test, and verify
/// each template, collecting verified winners into a lookup table.
pub fn run_pipeline(
    cs: &ConstraintSet,
    schema: &Schema,
    query_log: &str,
    config: &PipelineConfig,
) -> PipelineOutput {
    let mut skipped = 0usize;
    let mut notes: Vec<String> = Vec::new();
    let groups = group_log(query_log, &mut skipped, &mut notes);

    let sizes: BTreeMap<String, usize> = schema
        .tables
        .iter()
        .map(|t| (t.name.clone(), config.datagen_rows))
        .collect();
    let db = match generate_database(schema, cs, &sizes, config.seed) {
        Ok(db) => Some(db),
        Err(e) => {
            notes.push(format!("test database generation failed: {e}"));
            None
        }
    };

    // Concurrent per-template work; the fingerprint-sorted group order is
    // preserved by collecting into a vector.
    let ordered: Vec<(&String, &Grouped)> = groups.iter().collect();
    let outcomes: Vec<TemplateOutcome> = ordered
        .par_iter()
        .map(|(fp, g)| process_template(fp, g, cs, schema, db.as_ref(), config))
        .collect();

    // Single-threaded assembly.
    let mut lookup = LookupTable::empty(config.hash());
    let mut report = RunReport {
        templates: Vec::with_capacity(outcomes.len()),
        stage: StageCounts::default(),
        skipped_lines: skipped,
        notes,
    };
    for outcome in outcomes {
        let t = &outcome.report;
        if t.with_constraints {
            report.stage.with_constraints += 1;
        }
        report.stage.enumerated += t.enumerated;
        report.stage.cost_kept += t.cost_kept;
        report.stage.test_kept += t.test_kept;
        if t.verified {
            report.stage.verified += 1;
        }
        if let Some((fp, entry)) = outcome.entry {
            lookup.entries.insert(fp, entry);
        }
        report.templates.push(outcome.report);
    }
    PipelineOutput { lookup, report }
}

/// Convenience wrapper: extract constraints from model sources, union them
/// with schema-declared ones (both hold in the same application, so this is
/// normalization rather than the unanimity merge used across replicas), then
/// run the pipeline.
pub fn run_pipeline_from_sources(
    model_sources: &[(String, String)],
    schema: &Schema,
    query_log: &str,
    config: &PipelineConfig,
) -> Result<(PipelineOutput, crate::extractor::Extraction), String> {
    let extraction =
        crate::extractor::extract_all(model_sources, schema).map_err(|e| e.to_string())?;
    let declared = crate::constraints::declared_constraints(schema).map_err(|e| e.to_string())?;
    let mut all: Vec<Constraint> = extraction.constraints.clone();
    all.extend(declared);
    let cs = ConstraintSet::new(all).normalize();
    Ok((run_pipeline(&cs, schema, query_log, config), extraction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{ConstraintSource, FormatPattern};
    use crate::replay::{replace_query, ReplayAction};

    const MICRO_SCHEMA: &str = r#"{
        "tables": [
            {"name": "users", "columns": [
                {"name": "id", "type": "integer", "nullable": false, "primary_key": true},
                {"name": "status", "type": "text", "nullable": false}]},
            {"name": "members", "columns": [
                {"name": "id", "type": "integer", "nullable": false, "primary_key": true},
                {"name": "user_id", "type": "integer", "nullable": false},
                {"name": "project_id", "type": "integer", "nullable": false}]}],
        "constraints": [
            {"table": "members", "columns": ["user_id"], "kind": "foreign-key",
             "source": "db-declared",
             "params": {"references": {"table": "users", "column": "id"}}}]}"#;

    const MEMBER_RB: &str = "class Member < ActiveRecord::Base\n\
         \x20 belongs_to :user\n\
         \x20 validates_uniqueness_of :user_id, :scope => :project_id\n\
         \x20 validates_inclusion_of :project_id, :in => 1..3\n\
         end\n";

    const USER_RB: &str = "class User < ActiveRecord::Base\n\
         \x20 validates_inclusion_of :status, :in => %w( active registered locked )\n\
         end\n";

    const MICRO_LOG_SQL: &str = "SELECT DISTINCT users.* FROM users \
         INNER JOIN members ON members.user_id = users.id \
         WHERE users.status = $1 AND members.project_id = $2";

    fn micro_sources() -> Vec<(String, String)> {
        vec![
            ("member.rb".to_string(), MEMBER_RB.to_string()),
            ("user.rb".to_string(), USER_RB.to_string()),
        ]
    }

    fn micro_log() -> String {
        format!("{MICRO_LOG_SQL}  [[\"active\"], [2]]\n")
    }

    fn micro_run() -> PipelineOutput {
        let schema = Schema::from_json(MICRO_SCHEMA).unwrap();
        let (out, extraction) = run_pipeline_from_sources(
            &micro_sources(),
            &schema,
            &micro_log(),
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!(
            extraction.diagnostics.iter().all(|d| d.level != crate::extractor::Level::Error),
            "{:?}",
            extraction.diagnostics
        );
        out
    }

    #[test]
    fn micro_corpus_end_to_end() {
        let out = micro_run();
        let stage = out.report.stage;
        assert_eq!(stage.with_constraints, 1);
        assert_eq!(stage.enumerated, 3, "{}", out.report.to_text());
        assert!(stage.cost_kept >= 1, "{}", out.report.to_text());
        assert!(stage.test_kept >= 1, "{}", out.report.to_text());
        assert!(stage.cost_kept >= stage.test_kept);
        assert_eq!(stage.verified, 1, "{}", out.report.to_text());

        assert_eq!(out.lookup.entries.len(), 1);
        let (fp, entry) = out.lookup.entries.iter().next().unwrap();
        let expected_fp = parse_template(MICRO_LOG_SQL).unwrap().fingerprint();
        assert_eq!(fp, &expected_fp);
        assert_eq!(entry.trace, vec![RuleKind::RemoveDistinct]);
        assert!(!entry.optimized.contains("DISTINCT"));
        assert!(entry.original.contains("DISTINCT"));
        assert_eq!(entry.verified_bound, DEFAULT_BOUND as u32);

        // Both equality parameters sit on inclusion-constrained columns.
        assert_eq!(entry.prechecks.len(), 2);
        assert!(entry
            .prechecks
            .iter()
            .any(|r| r.param == 1
                && matches!(&r.check, PrecheckKind::InclusionIn { values }
                    if values.contains(&Value::Text("registered".into())))));
        assert!(entry
            .prechecks
            .iter()
            .any(|r| r.param == 2
                && matches!(&r.check, PrecheckKind::InclusionIn { values }
                    if values.contains(&Value::Int(3)))));
    }

    #[test]
    fn micro_corpus_lookup_replays() {
        let out = micro_run();
        let hit = replace_query(
            MICRO_LOG_SQL,
            &[Value::Text("locked".into()), Value::Int(1)],
            &out.lookup,
        );
        assert_eq!(hit.action, ReplayAction::Rewritten);
        assert!(!hit.sql.contains("DISTINCT"));
        assert!(hit.sql.contains("'locked'"));

        let blocked = replace_query(
            MICRO_LOG_SQL,
            &[Value::Text("banned".into()), Value::Int(1)],
            &out.lookup,
        );
        assert_eq!(blocked.action, ReplayAction::PrecheckEmpty);
        assert!(blocked.sql.contains("WHERE FALSE"));

        let miss = replace_query(
            "SELECT users.* FROM users WHERE users.id = $1",
            &[Value::Int(5)],
            &out.lookup,
        );
        assert_eq!(miss.action, ReplayAction::Passthrough);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = micro_run();
        let b = micro_run();
        assert_eq!(a.lookup.to_json(), b.lookup.to_json());
        assert_eq!(a.report.to_json(), b.report.to_json());
    }

    #[test]
    fn empty_log_yields_empty_artifacts() {
        let schema = Schema::from_json(MICRO_SCHEMA).unwrap();
        let (out, _) = run_pipeline_from_sources(
            &micro_sources(),
            &schema,
            "",
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!(out.lookup.entries.is_empty());
        assert_eq!(out.report.stage, StageCounts::default());
        assert!(out.report.templates.is_empty());
        assert_eq!(out.report.skipped_lines, 0);
    }

    #[test]
    fn unconstrained_template_counts_zero() {
        let schema = Schema::from_json(
            r#"{"tables":[{"name":"notes","columns":[
                {"name":"id","type":"integer"},
                {"name":"body","type":"text"}]}]}"#,
        )
        .unwrap();
        let log = "SELECT notes.* FROM notes WHERE notes.body = $1  [[\"x\"]]\n\
                   UPDATE notes SET body = $1  [[\"y\"]]\n";
        let out = run_pipeline(
            &ConstraintSet::new(vec![]),
            &schema,
            log,
            &PipelineConfig::default(),
        );
        assert!(out.lookup.entries.is_empty());
        assert_eq!(out.report.stage.with_constraints, 0);
        assert_eq!(out.report.stage.enumerated, 0);
        assert_eq!(out.report.stage.verified, 0);
        assert_eq!(out.report.templates.len(), 1);
        assert_eq!(out.report.skipped_lines, 1);
        assert_eq!(out.report.notes.len(), 1);
    }

    #[test]
    fn repeated_lines_group_into_one_template() {
        let schema = Schema::from_json(MICRO_SCHEMA).unwrap();
        // Same shape three times: twice with binds, once with an inlined
        // literal. All share a fingerprint.
        let log = format!(
            "{MICRO_LOG_SQL}  [[\"active\"], [2]]\n\
             {MICRO_LOG_SQL}  [[\"locked\"], [1]]\n\
             SELECT DISTINCT users.* FROM users \
             INNER JOIN members ON members.user_id = users.id \
             WHERE users.status = 'registered' AND members.project_id = $1  [[3]]\n"
        );
        let (out, _) = run_pipeline_from_sources(
            &micro_sources(),
            &schema,
            &log,
            &PipelineConfig::default(),
        )
        .unwrap();
        assert_eq!(out.report.templates.len(), 1);
        assert_eq!(out.report.templates[0].occurrences, 3);
        assert_eq!(out.lookup.entries.len(), 1);
    }

    #[test]
    fn run_report_text_summarizes_stages() {
        let out = micro_run();
        let text = out.report.to_text();
        assert!(text.contains("templates: 1 (1 with constraints)"));
        assert!(text.contains("enumerated 3"));
        assert!(text.contains("optimized [RD]"), "{text}");
    }

    #[test]
    fn lookup_json_round_trip() {
        let out = micro_run();
        let text = out.lookup.to_json();
        let back = LookupTable::from_json(&text).unwrap();
        assert_eq!(back, out.lookup);
        assert_eq!(back.version, env!("CARGO_PKG_VERSION"));
        assert_eq!(back.config_hash, PipelineConfig::default().hash());
    }

    #[test]
    fn lookup_from_json_rejects_other_formats() {
        let out = micro_run();
        let tampered = out.lookup.to_json().replacen(
            &format!("\"format\": {LOOKUP_FORMAT}"),
            "\"format\": 99",
            1,
        );
        assert!(LookupTable::from_json(&tampered).is_err());
        assert!(LookupTable::from_json("{}").is_err());
        assert!(LookupTable::from_json("not json").is_err());
    }

    #[test]
    fn config_hash_tracks_every_knob() {
        let base = PipelineConfig::default();
        let mut variants = Vec::new();
        for f in [
            |c: &mut PipelineConfig| c.seed = 1,
            |c: &mut PipelineConfig| c.threshold = 100,
            |c: &mut PipelineConfig| c.bound = 2,
            |c: &mut PipelineConfig| c.ceiling = 1e6,
            |c: &mut PipelineConfig| c.cost_provider = Some("cat".into()),
            |c: &mut PipelineConfig| c.datagen_rows = 10,
            |c: &mut PipelineConfig| c.param_samples = 2,
        ] {
            let mut c = base.clone();
            f(&mut c);
            variants.push(c.hash());
        }
        variants.push(base.hash());
        let unique: std::collections::BTreeSet<_> = variants.iter().collect();
        assert_eq!(unique.len(), variants.len());
    }

    // ---- prechecks ----

    fn cs_of(items: Vec<(&str, &str, ConstraintKind)>) -> ConstraintSet {
        ConstraintSet::new(
            items
                .into_iter()
                .map(|(t, c, k)| {
                    Constraint::new(
                        t.to_string(),
                        vec![c.to_string()],
                        k,
                        ConstraintSource::BuiltinValidation,
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn format_constraint_derives_format_precheck() {
        let t = parse_template("SELECT users.id FROM users WHERE users.username = $1").unwrap();
        let cs = cs_of(vec![(
            "users",
            "username",
            ConstraintKind::Format {
                patterns: vec![FormatPattern {
                    pattern: "\\A[a-z0-9_]+\\z".into(),
                    case_insensitive: false,
                }],
            },
        )]);
        let rules = derive_prechecks(&t, &cs);
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].param, 1);
        assert!(rules[0].passes(&Value::Text("ben_123".into())));
        assert!(!rules[0].passes(&Value::Text("Ben".into())));
        assert!(!rules[0].passes(&Value::Text("a b".into())));
        assert!(!rules[0].passes(&Value::Null));
        assert!(!rules[0].passes(&Value::Int(7)));
    }

    #[test]
    fn length_constraint_derives_length_precheck() {
        let t = parse_template("SELECT users.id FROM users WHERE users.name = $1").unwrap();
        let cs = cs_of(vec![(
            "users",
            "name",
            ConstraintKind::Length { min: None, max: Some(30) },
        )]);
        let rules = derive_prechecks(&t, &cs);
        assert_eq!(
            rules,
            vec![PrecheckRule {
                param: 1,
                check: PrecheckKind::LengthRange { min: 0, max: Some(30) },
            }]
        );
        assert!(rules[0].passes(&Value::Text("x".repeat(30))));
        assert!(!rules[0].passes(&Value::Text("x".repeat(31))));
        assert!(rules[0].passes(&Value::Text(String::new())));
    }

    #[test]
    fn non_equality_and_disjunctive_atoms_derive_nothing() {
        let cs = cs_of(vec![
            ("users", "age", ConstraintKind::Length { min: Some(1), max: None }),
            ("users", "name", ConstraintKind::Length { min: Some(1), max: None }),
        ]);
        let gt = parse_template("SELECT users.id FROM users WHERE users.age > $1").unwrap();
        assert!(derive_prechecks(&gt, &cs).is_empty());
        let or = parse_template(
            "SELECT users.id FROM users WHERE users.name = $1 OR users.age = $2",
        )
        .unwrap();
        assert!(derive_prechecks(&or, &cs).is_empty());
    }

    #[test]
    fn conjunct_under_and_derives_and_duplicates_collapse() {
        let cs = cs_of(vec![(
            "users",
            "status",
            ConstraintKind::Inclusion {
                values: vec![Value::Text("active".into()), Value::Text("locked".into())],
            },
        )]);
        let t = parse_template(
            "SELECT users.id FROM users \
             WHERE users.status = $1 AND users.status = $1 AND users.id > $2",
        )
        .unwrap();
        let rules = derive_prechecks(&t, &cs);
        assert_eq!(rules.len(), 1);
        assert!(rules[0].passes(&Value::Text("active".into())));
        assert!(!rules[0].passes(&Value::Text("gone".into())));
        assert!(!rules[0].passes(&Value::Null));
    }

    #[test]
    fn uncompilable_format_patterns_are_not_emitted() {
        let t = parse_template("SELECT users.id FROM users WHERE users.name = $1").unwrap();
        let cs = cs_of(vec![(
            "users",
            "name",
            ConstraintKind::Format {
                patterns: vec![FormatPattern {
                    pattern: "(?=look)ahead".into(),
                    case_insensitive: false,
                }],
            },
        )]);
        assert!(derive_prechecks(&t, &cs).is_empty());
    }

    #[test]
    fn precheck_value_semantics() {
        let ci = PrecheckRule {
            param: 1,
            check: PrecheckKind::FormatMatch { pattern: "\\Aab+\\z".into(), case_insensitive: true },
        };
        assert!(ci.passes(&Value::Text("ABB".into())));
        assert!(!ci.passes(&Value::Text("ba".into())));

        let incl = PrecheckRule {
            param: 1,
            check: PrecheckKind::InclusionIn { values: vec![Value::Float(3.0)] },
        };
        assert!(incl.passes(&Value::Int(3)));
        assert!(!incl.passes(&Value::Int(4)));
        assert!(!incl.passes(&Value::Null));
    }

    #[test]
    fn precheck_rule_json_round_trip() {
        let rules = vec![
            PrecheckRule {
                param: 1,
                check: PrecheckKind::LengthRange { min: 2, max: None },
            },
            PrecheckRule {
                param: 2,
                check: PrecheckKind::FormatMatch { pattern: "^a$".into(), case_insensitive: true },
            },
            PrecheckRule {
                param: 3,
                check: PrecheckKind::InclusionIn {
                    values: vec![Value::Text("x".into()), Value::Int(1), Value::Null],
                },
            },
        ];
        for rule in rules {
            let back = PrecheckRule::from_json(&rule.to_json()).unwrap();
            assert_eq!(back, rule);
        }
    }

    // ---- enum DDL ----

    #[test]
    fn enum_ddl_for_text_inclusion_is_exact() {
        let schema = Schema::from_json(
            r#"{"tables":[{"name":"users","columns":[
                {"name":"id","type":"integer"},
                {"name":"type","type":"text"}]}]}"#,
        )
        .unwrap();
        let cs = cs_of(vec![(
            "users",
            "type",
            ConstraintKind::Inclusion {
                values: vec![Value::Text("User".into()), Value::Text("AnonymousUser".into())],
            },
        )]);
        let ddl = emit_enum_ddl(&schema, &cs);
        assert_eq!(
            ddl.statements,
            vec![
                "CREATE TYPE users_type_enum AS ENUM ('User', 'AnonymousUser');".to_string(),
                "ALTER TABLE users ALTER COLUMN type TYPE users_type_enum USING type::users_type_enum;"
                    .to_string(),
            ]
        );
        assert!(ddl.diagnostics.is_empty());
    }

    #[test]
    fn enum_ddl_skips_non_text_columns() {
        let schema = Schema::from_json(
            r#"{"tables":[{"name":"members","columns":[
                {"name":"project_id","type":"integer"}]}]}"#,
        )
        .unwrap();
        let cs = cs_of(vec![(
            "members",
            "project_id",
            ConstraintKind::Inclusion { values: vec![Value::Int(1), Value::Int(2)] },
        )]);
        let ddl = emit_enum_ddl(&schema, &cs);
        assert!(ddl.statements.is_empty());
        assert_eq!(ddl.diagnostics.len(), 1);
        assert!(ddl.diagnostics[0].contains("integer is not text"));
    }

    #[test]
    fn enum_ddl_sorts_by_table_and_column() {
        let schema = Schema::from_json(
            r#"{"tables":[
                {"name":"zoo","columns":[{"name":"kind","type":"text"}]},
                {"name":"apt","columns":[{"name":"floor","type":"text"}]}]}"#,
        )
        .unwrap();
        let cs = cs_of(vec![
            (
                "zoo",
                "kind",
                ConstraintKind::Inclusion { values: vec![Value::Text("cat".into())] },
            ),
            (
                "apt",
                "floor",
                ConstraintKind::Inclusion { values: vec![Value::Text("2a".into())] },
            ),
        ]);
        let ddl = emit_enum_ddl(&schema, &cs);
        assert_eq!(ddl.statements.len(), 4);
        assert!(ddl.statements[0].starts_with("CREATE TYPE apt_floor_enum"));
        assert!(ddl.statements[2].starts_with("CREATE TYPE zoo_kind_enum"));
    }

    #[test]
    fn enum_ddl_flags_duplicates_and_missing_targets() {
        let schema = Schema::from_json(
            r#"{"tables":[{"name":"users","columns":[{"name":"type","type":"text"}]}]}"#,
        )
        .unwrap();
        let cs = cs_of(vec![
            (
                "users",
                "type",
                ConstraintKind::Inclusion { values: vec![Value::Text("A".into())] },
            ),
            (
                "users",
                "type",
                ConstraintKind::Inclusion { values: vec![Value::Text("B".into())] },
            ),
            (
                "ghosts",
                "type",
                ConstraintKind::Inclusion { values: vec![Value::Text("C".into())] },
            ),
            (
                "users",
                "gone",
                ConstraintKind::Inclusion { values: vec![Value::Text("D".into())] },
            ),
        ]);
        let ddl = emit_enum_ddl(&schema, &cs);
        assert_eq!(ddl.statements.len(), 2);
        assert!(ddl.statements[0].contains("('A')"));
        assert_eq!(ddl.diagnostics.len(), 3);
        assert!(ddl.diagnostics.iter().any(|d| d.contains("already defines")));
        assert!(ddl.diagnostics.iter().any(|d| d.contains("table not in schema")));
        assert!(ddl.diagnostics.iter().any(|d| d.contains("column not in schema")));
    }
}
