//! Constraint-driven SQL query rewriting.
//!
//! The library extracts data constraints from Rails-style ORM model files,
//! merges constraint sets, and uses the constraints to enumerate, test, and
//! verify semantic rewrites of SQL query templates. Verified rewrites are
//! packaged into a lookup table that an online component consults to replace
//! queries as they stream past.
//!
//! Module map:
//! - [`constraints`]: schema + constraint data model, merging, checker SQL
//! - [`extractor`]: model-file parsing and constraint extraction
//! - [`sql`]: query template IR, parser, canonical rendering, fingerprints
//! - [`rewriter`]: rewrite rules, interval reasoning, candidate enumeration
//! - [`testbed`]: in-memory engine, synthetic data generation, cost model
//! - [`verifier`]: bounded exhaustive equivalence checking
//! - [`pipeline`]: offline orchestration producing deployable artifacts
//! - [`replay`]: online query replacement against a lookup table

pub mod constraints;
pub mod extractor;
pub mod pipeline;
pub mod replay;
pub mod rewriter;
pub mod sql;
pub mod testbed;
pub mod value;
pub mod verifier;
pub mod witness;

pub use constraints::{Constraint, ConstraintKind, ConstraintSet, Schema};
pub use sql::QueryTemplate;
pub use value::Value;
