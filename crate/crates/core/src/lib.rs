//! Pure core of the semsynth text-to-SQL synthesis pipeline.
//!
//! Everything here is deterministic and free of IO: schema and sample types,
//! the six-layer knowledge base and its retrieval rules, SQL fact extraction
//! and complexity classification, rationale traces, rule-based diagnosis,
//! corpus metrics and the prompt templates used by the LLM-backed stages.
//! Database access, the model gateway, persistence and the CLI live in the
//! `semsynth` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diagnose;
#[cfg(test)]
mod fixture;
pub mod kb;
pub mod metrics;
pub mod names;
pub mod prompt;
pub mod schema;
pub mod sql;
pub mod text;
pub mod trace;

pub use diagnose::{DetectedError, DiagnosisReport, ErrorType, ExecutionOutcome, TraceLocation};
pub use kb::{Evidence, EvidenceEntry, EvidenceQuery, KnowledgeBase, LayerId, PartialKb, Stage};
pub use schema::{CellValue, ColumnDef, DatabaseSchema, ForeignKeyDef, InstanceSample, TableDef};
pub use sql::{classify_complexity, extract_facts, ComplexityLevel, Feature, Level, SqlFacts};
pub use trace::{GenerationSpec, RationaleTrace, Status, Triple};
