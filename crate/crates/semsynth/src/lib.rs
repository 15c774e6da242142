//! IO side of semsynth: SQLite access, the model gateway, knowledge-base
//! persistence, draft generation, refinement, metrics and the run pipeline.
//! The deterministic logic lives in `semsynth-core`.

pub mod db;
pub mod eval;
pub mod kb;
pub mod llm;
pub mod pipeline;
pub mod refine;
pub mod spool;
pub mod synth;

pub use semsynth_core as core;
