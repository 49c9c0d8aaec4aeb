//! Command-line front end. Offline subcommands turn model sources, a schema,
//! and a query log into deployable artifacts; `rewrite` is the online path,
//! a pure stdin/stdout stream transformer that substitutes optimized
//! templates by fingerprint.
//!
//! Exit codes: 0 success, 1 input error (unreadable or malformed inputs),
//! 2 internal error (filesystem trouble while writing outputs).

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use semopt::constraints::{merge_constraint_sets, ConstraintSet, Schema};
use semopt::extractor::extract_all;
use semopt::pipeline::{
    emit_enum_ddl, run_pipeline_from_sources, LookupTable, PipelineConfig, DEFAULT_DATAGEN_ROWS,
    DEFAULT_PARAM_SAMPLES, DEFAULT_THRESHOLD,
};
use semopt::replay::replay_line;
use semopt::testbed::generate_database;
use semopt::value::Value;
use semopt::verifier::{DEFAULT_BOUND, DEFAULT_CEILING};
use semopt::witness::{read_witness, replay_witness};

#[derive(Parser)]
#[command(name = "semopt", version, about = "Constraint-driven SQL query rewriting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract data constraints from model source files
    Extract {
        /// Schema JSON (tables, columns, declared constraints)
        #[arg(long)]
        schema: PathBuf,
        /// Model files, or directories scanned for .rb files
        #[arg(required = true)]
        models: Vec<PathBuf>,
        /// Write the constraint set here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge constraint sets, keeping only what every set supports
    Merge {
        /// Constraint-set JSON files
        #[arg(required = true)]
        sets: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit checker SQL that finds rows violating a constraint set
    Check {
        /// Constraint-set JSON
        #[arg(long)]
        constraints: PathBuf,
        /// Validate table and column references against this schema first
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a constraint-satisfying database as CSV files
    Gendata {
        #[arg(long)]
        schema: PathBuf,
        /// Extra constraints beyond those declared in the schema
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Rows per table
        #[arg(long, default_value_t = DEFAULT_DATAGEN_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving one <table>.csv per table
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the offline pipeline: query log in, lookup table out
    Optimize {
        /// Model files, or directories scanned for .rb files
        #[arg(long, required = true, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long)]
        schema: PathBuf,
        /// Query log, one statement per line with optional JSON bind list
        #[arg(long)]
        log: PathBuf,
        /// Lookup-table output path
        #[arg(long)]
        out: PathBuf,
        /// Write the human-readable run report here (default: stdout)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the run report as JSON here
        #[arg(long)]
        report_json: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cap on rewrite candidates enumerated per template
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: usize,
        /// Max rows per table when certifying equivalence
        #[arg(long, default_value_t = DEFAULT_BOUND)]
        bound: usize,
        /// Instance-count ceiling above which certification is skipped
        #[arg(long, default_value_t = DEFAULT_CEILING)]
        ceiling: f64,
        /// Shell command pricing candidate SQL (stdin: SQL, stdout: cost)
        #[arg(long)]
        cost_provider: Option<String>,
        /// Rows per table in the generated test database
        #[arg(long, default_value_t = DEFAULT_DATAGEN_ROWS)]
        rows: usize,
        /// Parameter vectors sampled for differential testing
        #[arg(long, default_value_t = DEFAULT_PARAM_SAMPLES)]
        samples: usize,
    },
    /// Stream query-log lines from stdin, emitting "ACTION\tSQL" per line
    Rewrite {
        /// Lookup table produced by `optimize`
        #[arg(long)]
        lut: PathBuf,
    },
    /// List the parameter prechecks stored in a lookup table
    Prechecks {
        #[arg(long)]
        lut: PathBuf,
    },
    /// Suggest enum DDL for inclusion-constrained text columns
    Ddl {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        constraints: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run both queries of a counterexample dump and compare results
    Replay {
        #[arg(long)]
        schema: PathBuf,
        /// Witness directory: <table>.csv files plus witness.json
        dir: PathBuf,
    },
}

enum CliError {
    Input(String),
    Internal(String),
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_schema(path: &Path) -> Result<Schema, CliError> {
    Schema::from_json(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_constraints(path: &Path) -> Result<ConstraintSet, CliError> {
    ConstraintSet::from_json(&read(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_lut(path: &Path) -> Result<LookupTable, CliError> {
    LookupTable::from_json(&read(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Expand file and directory arguments into (name, source) pairs, sorted by
/// path so extraction order never depends on filesystem iteration order.
fn collect_models(paths: &[PathBuf]) -> Result<Vec<(String, String)>, CliError> {
    let mut files: Vec<PathBuf> = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            for entry in entries {
                let path = entry
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                    .path();
                if path.extension().is_some_and(|x| x == "rb") {
                    files.push(path);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(CliError::Input("no model files found".into()));
    }
    let mut sources = Vec::with_capacity(files.len());
    for f in &files {
        sources.push((f.display().to_string(), read(f)?));
    }
    Ok(sources)
}

/// Write to `out` when given, else print to stdout.
fn deliver(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Internal(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Extract { schema, models, out } => {
            let schema = load_schema(&schema)?;
            let sources = collect_models(&models)?;
            let extraction = extract_all(&sources, &schema).map_err(input)?;
            for d in &extraction.diagnostics {
                eprintln!("{d}");
            }
            eprintln!(
                "{} constraints ({} conditions missed, {} opaque statements)",
                extraction.constraints.len(),
                extraction.missed_conditions,
                extraction.opaque_statements
            );
            let cs = ConstraintSet::new(extraction.constraints);
            deliver(out.as_ref(), &cs.to_canonical_json())
        }
        Cmd::Merge { sets, out } => {
            let loaded = sets
                .iter()
                .map(|p| load_constraints(p))
                .collect::<Result<Vec<_>, _>>()?;
            let merged = merge_constraint_sets(&loaded).map_err(input)?;
            deliver(out.as_ref(), &merged.to_canonical_json())
        }
        Cmd::Check { constraints, schema, out } => {
            let cs = load_constraints(&constraints)?;
            if let Some(schema) = schema {
                let schema = load_schema(&schema)?;
                let errors = cs.validate_against_schema(&schema);
                if !errors.is_empty() {
                    for e in &errors {
                        eprintln!("{e}");
                    }
                    return Err(CliError::Input(format!(
                        "{} constraint references do not resolve against the schema",
                        errors.len()
                    )));
                }
            }
            let mut text = cs.emit_checker_sql().join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            deliver(out.as_ref(), &text)
        }
        Cmd::Gendata { schema, constraints, rows, seed, out } => {
            let schema = load_schema(&schema)?;
            let cs = match constraints {
                Some(p) => load_constraints(&p)?,
                None => ConstraintSet::new(vec![]),
            };
            let sizes = schema
                .tables
                .iter()
                .map(|t| (t.name.clone(), rows))
                .collect();
            let db = generate_database(&schema, &cs, &sizes, seed).map_err(input)?;
            db.dump_csv(&schema, &out)
                .map_err(|e| CliError::Internal(format!("{}: {e}", out.display())))?;
            eprintln!("wrote {} tables to {}", schema.tables.len(), out.display());
            Ok(())
        }
        Cmd::Optimize {
            models,
            schema,
            log,
            out,
            report,
            report_json,
            seed,
            threshold,
            bound,
            ceiling,
            cost_provider,
            rows,
            samples,
        } => {
            let schema = load_schema(&schema)?;
            let sources = collect_models(&models)?;
            let query_log = read(&log)?;
            let config = PipelineConfig {
                seed,
                threshold,
                bound,
                ceiling,
                cost_provider,
                datagen_rows: rows,
                param_samples: samples,
            };
            let (output, extraction) =
                run_pipeline_from_sources(&sources, &schema, &query_log, &config).map_err(input)?;
            for d in &extraction.diagnostics {
                eprintln!("{d}");
            }
            std::fs::write(&out, output.lookup.to_json())
                .map_err(|e| CliError::Internal(format!("{}: {e}", out.display())))?;
            if let Some(path) = &report_json {
                std::fs::write(path, output.report.to_json())
                    .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
            }
            deliver(report.as_ref(), &output.report.to_text())
        }
        Cmd::Rewrite { lut } => {
            let table = load_lut(&lut)?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for line in stdin.lock().lines() {
                let line = line.map_err(|e| CliError::Input(format!("stdin: {e}")))?;
                let Some((outcome, rendered)) = replay_line(&line, &table) else {
                    continue;
                };
                if let Some(w) = &outcome.warning {
                    eprintln!("warning: {w}");
                }
                writeln!(out, "{rendered}")
                    .map_err(|e| CliError::Internal(format!("stdout: {e}")))?;
            }
            Ok(())
        }
        Cmd::Prechecks { lut } => {
            let table = load_lut(&lut)?;
            let doc: serde_json::Map<String, serde_json::Value> = table
                .entries
                .iter()
                .map(|(fp, e)| {
                    (
                        fp.clone(),
                        serde_json::json!({
                            "original": e.original,
                            "prechecks": e.prechecks
                                .iter()
                                .map(|r| r.to_json())
                                .collect::<Vec<_>>(),
                        }),
                    )
                })
                .collect();
            let mut text =
                serde_json::to_string_pretty(&doc).expect("precheck listing serializes");
            text.push('\n');
            print!("{text}");
            Ok(())
        }
        Cmd::Ddl { schema, constraints, out } => {
            let schema = load_schema(&schema)?;
            let cs = load_constraints(&constraints)?;
            let ddl = emit_enum_ddl(&schema, &cs);
            for d in &ddl.diagnostics {
                eprintln!("{d}");
            }
            let mut text = ddl.statements.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            deliver(out.as_ref(), &text)
        }
        Cmd::Replay { schema, dir } => {
            let schema = load_schema(&schema)?;
            let witness = read_witness(&dir, &schema).map_err(CliError::Input)?;
            let replayed = replay_witness(&witness, &schema).map_err(CliError::Input)?;
            let render_rows = |rows: &[Vec<Value>]| {
                rows.iter()
                    .map(|r| {
                        let cells: Vec<String> = r.iter().map(Value::render_sql).collect();
                        format!("  ({})", cells.join(", "))
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            println!("original:  {}", witness.original);
            println!("candidate: {}", witness.candidate);
            let params: Vec<String> = witness.params.iter().map(Value::render_sql).collect();
            println!("params:    [{}]", params.join(", "));
            println!("original rows ({}):", replayed.original_rows.len());
            if !replayed.original_rows.is_empty() {
                println!("{}", render_rows(&replayed.original_rows));
            }
            println!("candidate rows ({}):", replayed.candidate_rows.len());
            if !replayed.candidate_rows.is_empty() {
                println!("{}", render_rows(&replayed.candidate_rows));
            }
            if replayed.agree {
                println!("verdict: queries agree on this database");
            } else {
                println!("verdict: queries differ on this database");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
