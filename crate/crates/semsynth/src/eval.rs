//! Corpus metrics: SER, judged semantic alignment, complexity histogram and
//! embedding diversity.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use semsynth_core::metrics::{self, embed_offline, EmbeddingVector};
use semsynth_core::prompt::consistency_prompt;
use semsynth_core::{classify_complexity, extract_facts, DatabaseSchema, ExecutionOutcome, Level};

use crate::db::Executor;
use crate::llm::{ChatRequest, Gateway, LlmError, OpenAiProvider, ResponseKind, JUDGE_TEMPERATURE};

/// The part of a sample the metrics look at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub sample_id: String,
    pub question: String,
    pub sql: String,
}

/// Executes every SQL and returns SER with the per-sample outcomes.
pub fn compute_ser(items: &[EvalItem], exec: &Executor) -> (f64, Vec<ExecutionOutcome>) {
    let outcomes: Vec<ExecutionOutcome> = items.iter().map(|i| exec.execute(&i.sql)).collect();
    let ok = outcomes.iter().filter(|o| o.success).count();
    (metrics::ser(ok, items.len()), outcomes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub sample_id: String,
    pub label: u8,
    pub reasoning: String,
}

#[derive(Debug, Deserialize)]
struct JudgeReply {
    label: serde_json::Value,
    #[serde(default)]
    reasoning: String,
}

fn label_of(v: &serde_json::Value) -> Option<u8> {
    match v {
        serde_json::Value::Number(n) => n.as_u64().filter(|n| *n <= 1).map(|n| n as u8),
        serde_json::Value::String(s) => match s.trim() {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        },
        serde_json::Value::Bool(b) => Some(u8::from(*b)),
        _ => None,
    }
}

/// Consistency judgement of one sample. A reply that cannot be read counts
/// as label 0 with the problem as its reasoning.
pub fn judge_one(gw: &Gateway, schema: &DatabaseSchema, item: &EvalItem) -> Result<Judgement, LlmError> {
    let req = ChatRequest::new(
        consistency_prompt(&schema.to_ddl(), &item.question, &item.sql),
        JUDGE_TEMPERATURE,
        ResponseKind::StructuredRecord,
    )
    .with_purpose("judge consistency");
    let (label, reasoning) = match gw.complete_structured::<JudgeReply>(&req) {
        Ok(r) => match label_of(&r.label) {
            Some(l) => (l, r.reasoning),
            None => (0, format!("unreadable label {}", r.label)),
        },
        Err(LlmError::MalformedResponse { reason, .. }) => (0, format!("malformed judge reply: {reason}")),
        Err(e) => return Err(e),
    };
    Ok(Judgement { sample_id: item.sample_id.clone(), label, reasoning })
}

/// SA over the executable items only; `None` when there are none.
pub fn judge_sa(
    gw: &Gateway,
    schema: &DatabaseSchema,
    items: &[EvalItem],
    executable: &[bool],
) -> Result<(Option<f64>, usize, Vec<Judgement>), LlmError> {
    let subset: Vec<&EvalItem> = items.iter().zip(executable).filter(|(_, ok)| **ok).map(|(i, _)| i).collect();
    let judgements = subset.iter().map(|i| judge_one(gw, schema, i)).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<u8> = judgements.iter().map(|j| j.label).collect();
    Ok((metrics::sa(&labels), subset.len(), judgements))
}

/// Source of SQL embeddings.
pub enum Embedder<'a> {
    Offline,
    Provider { client: &'a OpenAiProvider, model: String },
}

impl Embedder<'_> {
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        match self {
            Embedder::Offline => Ok(embed_offline(text)),
            Embedder::Provider { client, model } => Ok(EmbeddingVector { values: client.embed(model, text)? }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub sample_id: String,
    pub execution: ExecutionOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgement: Option<Judgement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub n_samples: usize,
    pub ser: f64,
    pub executable: usize,
    /// Absent when SA was not requested or nothing was executable.
    pub sa: Option<f64>,
    pub sa_subset: usize,
    pub complexity_histogram: BTreeMap<Level, usize>,
    pub parseable: usize,
    pub mean_l2: Option<f64>,
    pub one_nn: Option<f64>,
    pub diversity_samples: usize,
    pub samples: Vec<SampleEval>,
}

pub struct EvalOptions<'a> {
    pub judge: Option<&'a Gateway>,
    pub embedder: Embedder<'a>,
}

pub fn evaluate(
    items: &[EvalItem],
    schema: &DatabaseSchema,
    exec: &Executor,
    opts: &EvalOptions<'_>,
) -> Result<CorpusReport, LlmError> {
    let (ser, outcomes) = compute_ser(items, exec);
    let executable: Vec<bool> = outcomes.iter().map(|o| o.success).collect();
    let levels: Vec<Option<Level>> =
        items.iter().map(|i| extract_facts(&i.sql, schema).ok().map(|f| classify_complexity(&f).level)).collect();
    let (sa, sa_subset, judgements) = match opts.judge {
        Some(gw) => judge_sa(gw, schema, items, &executable)?,
        None => (None, 0, Vec::new()),
    };
    let vectors = items.iter().map(|i| opts.embedder.embed(&i.sql)).collect::<Result<Vec<_>, _>>()?;
    let diversity = metrics::diversity(&vectors).ok();
    let mut by_id: BTreeMap<String, Judgement> = judgements.into_iter().map(|j| (j.sample_id.clone(), j)).collect();
    let samples = items
        .iter()
        .zip(outcomes)
        .zip(&levels)
        .map(|((i, execution), level)| SampleEval {
            sample_id: i.sample_id.clone(),
            execution,
            level: *level,
            judgement: by_id.remove(&i.sample_id),
        })
        .collect();
    Ok(CorpusReport {
        n_samples: items.len(),
        ser,
        executable: executable.iter().filter(|e| **e).count(),
        sa,
        sa_subset,
        complexity_histogram: metrics::histogram(levels.iter().flatten().copied()),
        parseable: levels.iter().flatten().count(),
        mean_l2: diversity.as_ref().map(|d| d.mean_l2),
        one_nn: diversity.as_ref().map(|d| d.one_nn),
        diversity_samples: diversity.as_ref().map(|d| d.used).unwrap_or(0),
        samples,
    })
}

impl CorpusReport {
    /// Plain-text summary table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(out, "{:<22} {}", "samples", self.n_samples);
        let _ = writeln!(out, "{:<22} {:.4} ({}/{})", "SER", self.ser, self.executable, self.n_samples);
        let _ = writeln!(out, "{:<22} {} (subset {})", "SA", opt(self.sa), self.sa_subset);
        for (l, n) in &self.complexity_histogram {
            let _ = writeln!(out, "{:<22} {n}", format!("complexity {l}"));
        }
        let _ = writeln!(out, "{:<22} {}", "mean L2", opt(self.mean_l2));
        let _ = writeln!(out, "{:<22} {}", "1-NN", opt(self.one_nn));
        out
    }
}
