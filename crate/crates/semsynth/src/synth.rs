//! Draft generation: batch planning, question plus trace, then SQL.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use semsynth_core::prompt::{question_prompt, sql_prompt};
use semsynth_core::sql::statement_is_select;
use semsynth_core::text::extract_sql;
use semsynth_core::trace::TraceViolation;
use semsynth_core::{
    classify_complexity, extract_facts, ComplexityLevel, DatabaseSchema, GenerationSpec, KnowledgeBase, Level,
    RationaleTrace, Status, Triple,
};

use crate::llm::{ChatRequest, Gateway, LlmError, ResponseKind, GENERATION_TEMPERATURE};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("domain and task-type vocabularies must both be non-empty")]
pub struct EmptyVocabulary;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("trace violates constraints: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    ConstraintViolation(Vec<TraceViolation>),
    #[error("model returned a non-SELECT statement: {0}")]
    NonSelectOutput(String),
}

impl SynthError {
    /// Errors that reject one draft rather than stop the run.
    pub fn is_sample_level(&self) -> bool {
        matches!(
            self,
            SynthError::ConstraintViolation(_)
                | SynthError::NonSelectOutput(_)
                | SynthError::Llm(LlmError::MalformedResponse { .. })
        )
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D4_9BB1_33B4_9BB2);
    x ^ (x >> 31)
}

/// Stable id of the `index`-th planned sample.
pub fn sample_id(index: usize) -> String {
    format!("s{:05}", index + 1)
}

/// Specs for every quota slot, level by level. Within a level the k-th slot
/// takes domain `k mod |C|` and task type `(k div |C|) mod |T|`, so domains
/// cycle fastest.
pub fn plan_batch(
    domains: &[String],
    task_types: &[String],
    quotas: &BTreeMap<Level, usize>,
    seed: u64,
) -> Result<Vec<GenerationSpec>, EmptyVocabulary> {
    if domains.is_empty() || task_types.is_empty() {
        return Err(EmptyVocabulary);
    }
    let mut out = Vec::new();
    for level in Level::ALL {
        let n = quotas.get(&level).copied().unwrap_or(0);
        for k in 0..n {
            let index = out.len() as u64;
            out.push(GenerationSpec {
                domain_context: domains[k % domains.len()].clone(),
                task_type: task_types[(k / domains.len()) % task_types.len()].clone(),
                level,
                seed: splitmix64(seed ^ index),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct QuestionReply {
    question: String,
    think: RationaleTrace,
}

/// First model call: a question and its trace, checked against the schema
/// and the target level before any SQL is requested.
pub fn generate_question(
    gw: &Gateway,
    kb: &KnowledgeBase,
    schema: &DatabaseSchema,
    spec: &GenerationSpec,
) -> Result<(String, RationaleTrace), SynthError> {
    let req = ChatRequest::new(question_prompt(kb, spec), GENERATION_TEMPERATURE, ResponseKind::StructuredRecord)
        .with_purpose("question");
    let mut reply: QuestionReply = gw.complete_structured(&req)?;
    reply.think.refinement_log.clear();
    if reply.question.trim().is_empty() {
        return Err(SynthError::Llm(LlmError::MalformedResponse {
            raw: String::new(),
            reason: "empty question".into(),
        }));
    }
    reply.think.validate(schema, spec.level).map_err(SynthError::ConstraintViolation)?;
    Ok((reply.question.trim().to_string(), reply.think))
}

/// Second model call: one SELECT statement for the validated question.
pub fn generate_sql(
    gw: &Gateway,
    question: &str,
    trace: &RationaleTrace,
    spec: &GenerationSpec,
    kb: &KnowledgeBase,
) -> Result<String, SynthError> {
    let req = ChatRequest::new(sql_prompt(question, trace, spec, kb), GENERATION_TEMPERATURE, ResponseKind::FreeText)
        .with_purpose("sql");
    let text = gw.complete(&req)?.text;
    let sql = extract_sql(&text);
    if sql.is_empty() {
        return Err(SynthError::Llm(LlmError::MalformedResponse { raw: text, reason: "no SQL in reply".into() }));
    }
    if !statement_is_select(&sql) {
        return Err(SynthError::NonSelectOutput(sql));
    }
    Ok(sql)
}

/// Run-side fields stored next to a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub status: Status,
    pub spec: GenerationSpec,
    /// Rule-based level of the current SQL, when it parses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classified: Option<ComplexityLevel>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub level_mismatch: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// One spool line: the exported fields plus `meta`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpoolRecord {
    pub question: String,
    pub think: RationaleTrace,
    pub answer: String,
    pub meta: SampleMeta,
}

impl SpoolRecord {
    pub fn new(triple: Triple, spec: GenerationSpec, schema: &DatabaseSchema) -> Self {
        let mut r = SpoolRecord {
            question: triple.question,
            think: triple.rationale,
            answer: triple.sql,
            meta: SampleMeta {
                sample_id: triple.sample_id,
                status: triple.status,
                spec,
                classified: None,
                level_mismatch: false,
                reason: None,
            },
        };
        r.reclassify(schema);
        r
    }

    pub fn triple(&self) -> Triple {
        Triple {
            sample_id: self.meta.sample_id.clone(),
            question: self.question.clone(),
            sql: self.answer.clone(),
            rationale: self.think.clone(),
            status: self.meta.status,
        }
    }

    /// Replaces question, SQL, trace and status from `t`.
    pub fn update(&mut self, t: Triple, schema: &DatabaseSchema) {
        self.question = t.question;
        self.answer = t.sql;
        self.think = t.rationale;
        self.meta.status = t.status;
        self.reclassify(schema);
    }

    fn reclassify(&mut self, schema: &DatabaseSchema) {
        self.meta.classified = extract_facts(&self.answer, schema).ok().map(|f| classify_complexity(&f));
        self.meta.level_mismatch = self.meta.classified.as_ref().is_some_and(|c| c.level != self.meta.spec.level);
    }
}

/// A draft that never reached SQL, or whose SQL was refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftFailure {
    pub sample_id: String,
    pub spec: GenerationSpec,
    pub stage: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

/// Both generation calls for one spec. Sample-level failures come back as
/// `Ok(Err(..))`; infrastructure failures as `Err`.
pub fn draft(
    gw: &Gateway,
    kb: &KnowledgeBase,
    schema: &DatabaseSchema,
    spec: &GenerationSpec,
    id: &str,
) -> Result<Result<SpoolRecord, DraftFailure>, SynthError> {
    let fail = |stage: &str, e: &SynthError, question: Option<String>| DraftFailure {
        sample_id: id.to_string(),
        spec: spec.clone(),
        stage: stage.into(),
        reason: e.to_string(),
        question,
    };
    let (question, trace) = match generate_question(gw, kb, schema, spec) {
        Ok(x) => x,
        Err(e) if e.is_sample_level() => return Ok(Err(fail("question", &e, None))),
        Err(e) => return Err(e),
    };
    let sql = match generate_sql(gw, &question, &trace, spec, kb) {
        Ok(s) => s,
        Err(e) if e.is_sample_level() => return Ok(Err(fail("sql", &e, Some(question)))),
        Err(e) => return Err(e),
    };
    let triple = Triple { sample_id: id.to_string(), question, sql, rationale: trace, status: Status::Draft };
    Ok(Ok(SpoolRecord::new(triple, spec.clone(), schema)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn quota_arithmetic() {
        let q = BTreeMap::from([(Level::L1, 2), (Level::L2, 2)]);
        let specs = plan_batch(&v(&["sales"]), &v(&["ranking"]), &q, 1).unwrap();
        let levels: Vec<Level> = specs.iter().map(|s| s.level).collect();
        assert_eq!(levels, vec![Level::L1, Level::L1, Level::L2, Level::L2]);
    }

    #[test]
    fn domains_cycle_first() {
        let q = BTreeMap::from([(Level::L1, 3)]);
        let specs = plan_batch(&v(&["a", "b"]), &v(&["x"]), &q, 1).unwrap();
        let c: Vec<&str> = specs.iter().map(|s| s.domain_context.as_str()).collect();
        assert_eq!(c, vec!["a", "b", "a"]);
        let q = BTreeMap::from([(Level::L3, 4)]);
        let specs = plan_batch(&v(&["a", "b"]), &v(&["x", "y"]), &q, 1).unwrap();
        let pairs: Vec<(&str, &str)> =
            specs.iter().map(|s| (s.domain_context.as_str(), s.task_type.as_str())).collect();
        assert_eq!(pairs, vec![("a", "x"), ("b", "x"), ("a", "y"), ("b", "y")]);
    }

    #[test]
    fn zero_quotas_and_empty_vocabulary() {
        assert!(plan_batch(&v(&["a"]), &v(&["x"]), &BTreeMap::new(), 0).unwrap().is_empty());
        assert_eq!(plan_batch(&[], &v(&["x"]), &BTreeMap::from([(Level::L1, 1)]), 0), Err(EmptyVocabulary));
    }

    #[test]
    fn planning_is_pure() {
        let q = BTreeMap::from([(Level::L1, 2), (Level::L4, 3)]);
        let a = plan_batch(&v(&["a", "b"]), &v(&["x"]), &q, 42).unwrap();
        assert_eq!(a, plan_batch(&v(&["a", "b"]), &v(&["x"]), &q, 42).unwrap());
        assert_ne!(a[0].seed, a[1].seed);
        assert_eq!(sample_id(0), "s00001");
    }
}
