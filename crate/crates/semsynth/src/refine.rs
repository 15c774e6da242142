//! The diagnose, retrieve, correct loop.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use semsynth_core::diagnose::{self, DiagnosisReport};
use semsynth_core::kb::retrieve;
use semsynth_core::prompt::correction_prompt;
use semsynth_core::sql::statement_is_select;
use semsynth_core::text::extract_sql;
use semsynth_core::trace::RefinementEntry;
use semsynth_core::{DatabaseSchema, ErrorType, Evidence, KnowledgeBase, RationaleTrace, Status, Triple};

use crate::db::Executor;
use crate::llm::{ChatRequest, Gateway, LlmError, ResponseKind, JUDGE_TEMPERATURE};

pub const DEFAULT_MAX_ITERATIONS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("correction requested for a triple with no detected errors")]
    NothingToCorrect,
    #[error("refinement needs a draft, got a {0:?} triple")]
    NotADraft(Status),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("corrected triple is invalid: {0}")]
    InvalidCorrection(String),
}

/// Diagnoses `t` against the KB, executing its SQL through `exec`.
pub fn diagnose(t: &Triple, kb: &KnowledgeBase, schema: &DatabaseSchema, exec: &Executor) -> DiagnosisReport {
    diagnose::diagnose(&t.sql, &t.rationale, kb, schema, |sql| exec.execute(sql))
}

/// Evidence for every error in the report. Per-error retrieval failures are
/// returned alongside so they can be audited.
pub fn gather_evidence(report: &DiagnosisReport, kb: &KnowledgeBase) -> (Evidence, Vec<String>) {
    let mut evidence = Evidence::default();
    let mut misses = Vec::new();
    for e in &report.errors {
        match retrieve(kb, &e.evidence_query()) {
            Ok(ev) => evidence.merge(ev),
            Err(err) => misses.push(format!("{}: {err}", e.error_type)),
        }
    }
    (evidence, misses)
}

#[derive(Debug, Deserialize)]
struct CorrectionReply {
    #[serde(default)]
    question: Option<String>,
    think: RationaleTrace,
    answer: String,
    #[serde(default)]
    corrections: Vec<String>,
}

/// One correction call. The question is kept unless the report carries an
/// error type that permits rewording it. The returned triple's log gains one
/// entry for this iteration.
pub fn correct(
    gw: &Gateway,
    t: &Triple,
    report: &DiagnosisReport,
    evidence: &Evidence,
    schema: &DatabaseSchema,
) -> Result<Triple, VerifyError> {
    if report.errors.is_empty() {
        return Err(VerifyError::NothingToCorrect);
    }
    let editable = report.errors.iter().any(|e| e.error_type.permits_question_edit());
    let prompt = correction_prompt(&t.question, &t.sql, &t.rationale, report, evidence, editable);
    let req = ChatRequest::new(prompt, JUDGE_TEMPERATURE, ResponseKind::StructuredRecord).with_purpose("correct");
    let reply: CorrectionReply = gw.complete_structured(&req)?;
    let sql = extract_sql(&reply.answer);
    if !statement_is_select(&sql) {
        return Err(VerifyError::InvalidCorrection(format!("not a SELECT statement: {sql}")));
    }
    let mut corrections = reply.corrections;
    let mut question = t.question.clone();
    if let Some(q) = reply.question.map(|q| q.trim().to_string()).filter(|q| !q.is_empty() && *q != t.question) {
        if editable {
            question = q;
        } else {
            corrections.push("question rewrite discarded: no error permitted it".into());
        }
    }
    let level = t.rationale.metadata.complexity_level;
    let mut trace = reply.think;
    trace.validate(schema, level).map_err(|v| {
        VerifyError::InvalidCorrection(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
    })?;
    // The log is ours, not the model's.
    let mut log = t.rationale.refinement_log.clone();
    log.push(RefinementEntry { iteration: log.len() as u32 + 1, errors: report.errors.clone(), corrections });
    trace.refinement_log = log;
    Ok(Triple { sample_id: t.sample_id.clone(), question, sql, rationale: trace, status: Status::Draft })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Clean,
    MaxIterations,
    Uncorrectable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementOutcome {
    pub triple: Triple,
    /// Correction calls made.
    pub iterations_used: u32,
    pub terminal: Terminal,
    pub final_report: DiagnosisReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sample_id: String,
    pub iteration: u32,
    pub sql: String,
    pub report: DiagnosisReport,
    pub evidence: Evidence,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieval_misses: Vec<String>,
}

/// Diagnoses and corrects until the triple is clean, `max_iterations`
/// corrections have been made, or the corrector returns SQL it already
/// returned for the same error set.
///
/// Sample-level failures (malformed or invalid corrections) reject the
/// triple; other model errors are returned and leave it a draft.
pub fn refine(
    gw: &Gateway,
    t: Triple,
    kb: &KnowledgeBase,
    schema: &DatabaseSchema,
    exec: &Executor,
    max_iterations: u32,
    audit: &mut dyn FnMut(AuditRecord),
) -> Result<RefinementOutcome, VerifyError> {
    if t.status != Status::Draft {
        return Err(VerifyError::NotADraft(t.status));
    }
    let mut current = t;
    let mut returned: BTreeSet<(BTreeSet<(ErrorType, String)>, String)> = BTreeSet::new();
    let mut iteration = 0u32;
    loop {
        let report = diagnose(&current, kb, schema, exec);
        if report.is_clean() {
            audit(AuditRecord {
                sample_id: current.sample_id.clone(),
                iteration,
                sql: current.sql.clone(),
                report: report.clone(),
                evidence: Evidence::default(),
                retrieval_misses: Vec::new(),
            });
            return Ok(finish(current, iteration, Terminal::Clean, report, None));
        }
        let (evidence, misses) = gather_evidence(&report, kb);
        audit(AuditRecord {
            sample_id: current.sample_id.clone(),
            iteration,
            sql: current.sql.clone(),
            report: report.clone(),
            evidence: evidence.clone(),
            retrieval_misses: misses,
        });
        if iteration >= max_iterations {
            return Ok(finish(current, iteration, Terminal::MaxIterations, report, None));
        }
        let corrected = match correct(gw, &current, &report, &evidence, schema) {
            Ok(c) => c,
            Err(e @ (VerifyError::InvalidCorrection(_) | VerifyError::Llm(LlmError::MalformedResponse { .. }))) => {
                iteration += 1;
                return Ok(finish(current, iteration, Terminal::Uncorrectable, report, Some(e.to_string())));
            }
            Err(e) => return Err(e),
        };
        iteration += 1;
        if !returned.insert((report.signature(), corrected.sql.clone())) {
            let reason = "corrector returned the same SQL twice for the same errors".to_string();
            return Ok(finish(corrected, iteration, Terminal::Uncorrectable, report, Some(reason)));
        }
        current = corrected;
    }
}

fn finish(
    mut triple: Triple,
    iterations_used: u32,
    terminal: Terminal,
    final_report: DiagnosisReport,
    reason: Option<String>,
) -> RefinementOutcome {
    triple.status = if terminal == Terminal::Clean { Status::Verified } else { Status::Rejected };
    RefinementOutcome { triple, iterations_used, terminal, final_report, reason }
}
