//! Run orchestration: config, run directory, manifest and the eight stages.
//!
//! A run lives in `<out_dir>/<run_id>/`:
//!
//! ```text
//! manifest.json   config snapshot, finished stages, counters
//! schema.json     sample.json
//! kb/             knowledge-base layers and their manifest
//! plan.jsonl      one {sample_id, spec} per line
//! drafts.jsonl    generated triples
//! verified.jsonl  rejected.jsonl  audit.jsonl
//! filtered.jsonl  samples removed by the contamination filter
//! report.json     report.txt
//! export.jsonl    the final corpus
//! ```
//!
//! Stages run in a fixed order and each one checkpoints. Generation and
//! refinement also spool per sample, so an interrupted stage picks up where
//! it stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use semsynth_core::metrics::{contamination_filter, Field, PairText, DEFAULT_NGRAM_N, DEFAULT_NGRAM_THRESHOLD};
use semsynth_core::trace::ExportRecord;
use semsynth_core::{DatabaseSchema, DiagnosisReport, GenerationSpec, InstanceSample, KnowledgeBase, Level, Status};

use crate::db::{self, Executor};
use crate::eval::{self, Embedder, EvalItem, EvalOptions};
use crate::kb::{self as kbuild, KbStore};
use crate::llm::{Gateway, OpenAiProvider, ProviderConfig, ScriptedProvider};
use crate::refine::{self, AuditRecord, Terminal};
use crate::spool::{read_jsonl, write_jsonl, Spool};
use crate::synth::{self, DraftFailure, SpoolRecord};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("stage {stage} failed: {message}")]
    StageFailed { stage: StageName, message: String },
}

impl PipelineError {
    fn stage(stage: StageName, e: impl std::fmt::Display) -> Self {
        PipelineError::StageFailed { stage, message: e.to_string() }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::ConfigInvalid(_) => 2,
            PipelineError::StageFailed { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSection {
    Openai(ProviderConfig),
    Scripted {
        script: PathBuf,
        #[serde(default = "one")]
        concurrency_cap: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    #[serde(default = "default_domains")]
    pub domains: Vec<String>,
    #[serde(default = "default_task_types")]
    pub task_types: Vec<String>,
    pub quotas: BTreeMap<Level, usize>,
}

fn default_domains() -> Vec<String> {
    vec!["sales".into(), "education".into()]
}

fn default_task_types() -> Vec<String> {
    vec!["trend_analysis".into(), "ranking".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "default_n")]
    pub ngram_n: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Evaluation sets to screen against: JSON arrays or JSONL of
    /// `{question, sql}` (also `SQL` or `query`).
    #[serde(default)]
    pub eval_sets: Vec<PathBuf>,
}

fn default_n() -> usize {
    DEFAULT_NGRAM_N
}

fn default_threshold() -> f64 {
    DEFAULT_NGRAM_THRESHOLD
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection { ngram_n: DEFAULT_NGRAM_N, threshold: DEFAULT_NGRAM_THRESHOLD, eval_sets: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Offline,
    Provider,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    #[serde(default)]
    pub with_sa: bool,
    #[serde(default)]
    pub embedder: EmbedderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub run_id: String,
    pub db: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_rows")]
    pub sample_rows_per_table: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: u32,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_statement_timeout")]
    pub statement_timeout_secs: u64,
    pub provider: ProviderSection,
    pub generation: GenerationSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_rows() -> usize {
    semsynth_core::schema::DEFAULT_SAMPLE_ROWS
}
fn default_iterations() -> u32 {
    refine::DEFAULT_MAX_ITERATIONS
}
fn default_workers() -> usize {
    4
}
fn default_statement_timeout() -> u64 {
    db::DEFAULT_TIMEOUT.as_secs()
}

impl Config {
    /// Reads a TOML config. Relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Config, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let mut c: Config = toml::from_str(&text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.resolve_paths(base);
        c.validate()?;
        Ok(c)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.db);
        fix(&mut self.out_dir);
        if let ProviderSection::Scripted { script, .. } = &mut self.provider {
            fix(script);
        }
        self.filter.eval_sets.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::ConfigInvalid(m.to_string()));
        if self.run_id.is_empty() || !self.run_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad("run_id must be non-empty and use only letters, digits, '-', '_' or '.'");
        }
        if self.generation.quotas.values().sum::<usize>() == 0 {
            return bad("generation quotas are all zero");
        }
        if self.generation.domains.is_empty() || self.generation.task_types.is_empty() {
            return bad("generation domains and task_types must be non-empty");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.sample_rows_per_table == 0 {
            return bad("sample_rows_per_table must be at least 1");
        }
        if self.filter.ngram_n < 2 {
            return bad("filter.ngram_n must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.filter.threshold) {
            return bad("filter.threshold must lie in [0, 1]");
        }
        match &self.provider {
            ProviderSection::Openai(p) if p.concurrency_cap == 0 => bad("provider.concurrency_cap must be at least 1"),
            ProviderSection::Scripted { concurrency_cap: 0, .. } => bad("provider.concurrency_cap must be at least 1"),
            _ => Ok(()),
        }
    }

    /// Gateway for the configured provider.
    pub fn gateway(&self) -> Result<Gateway, PipelineError> {
        match &self.provider {
            ProviderSection::Openai(p) => {
                Ok(Gateway::new(OpenAiProvider::new(p.clone()), p.concurrency_cap, p.max_retries))
            }
            ProviderSection::Scripted { script, concurrency_cap } => {
                let provider = ScriptedProvider::load(script)
                    .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", script.display())))?;
                Ok(Gateway::new(provider, *concurrency_cap, 0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    Introspect,
    BuildKb,
    Plan,
    Generate,
    Refine,
    Filter,
    Evaluate,
    Export,
}

impl StageName {
    pub const ALL: [StageName; 8] = [
        StageName::Introspect,
        StageName::BuildKb,
        StageName::Plan,
        StageName::Generate,
        StageName::Refine,
        StageName::Filter,
        StageName::Evaluate,
        StageName::Export,
    ];
}

impl std::fmt::Display for StageName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub drafted: usize,
    pub verified: usize,
    pub rejected: usize,
    pub filtered: usize,
    pub exported: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: StageName,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: Config,
    pub completed: BTreeSet<StageName>,
    pub counters: Counters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<StageFailure>,
}

/// A rejected sample, from either generation or refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub sample_id: String,
    pub stage: StageName,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft: Option<DraftFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<SpoolRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_report: Option<DiagnosisReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLine {
    pub sample_id: String,
    pub spec: GenerationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredLine {
    pub sample_id: String,
    pub eval_set: String,
    pub eval_index: usize,
    pub field: Field,
    pub score: f64,
}

/// Messages from workers to the single spool writer.
enum Msg {
    Draft(SpoolRecord),
    Rejected(RejectedLine),
    Verified(SpoolRecord, Vec<AuditRecord>),
    RejectedAfterRefine(RejectedLine, Vec<AuditRecord>),
}

pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    gateway: Option<Gateway>,
}

fn io_err(stage: StageName) -> impl Fn(std::io::Error) -> PipelineError {
    move |e| PipelineError::stage(stage, e)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

impl Run {
    /// Opens the run directory for `config`, creating it on first use. An
    /// existing run must have been started with an identical config.
    pub fn open(config: Config) -> Result<Run, PipelineError> {
        config.validate()?;
        let dir = config.out_dir.join(&config.run_id);
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", dir.display())))?;
        let path = dir.join("manifest.json");
        let manifest = if path.exists() {
            let m: RunManifest = read_json(&path).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
            if m.config != config {
                return Err(PipelineError::ConfigInvalid(format!(
                    "run `{}` was started with a different config; use a new run_id",
                    config.run_id
                )));
            }
            m
        } else {
            let m = RunManifest {
                run_id: config.run_id.clone(),
                config,
                completed: BTreeSet::new(),
                counters: Counters::default(),
                kb_fingerprint: None,
                failure: None,
            };
            write_json(&path, &m).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
            m
        };
        Ok(Run { dir, manifest, gateway: None })
    }

    /// Uses `gw` instead of the configured provider.
    pub fn with_gateway(mut self, gw: Gateway) -> Self {
        self.gateway = Some(gw);
        self
    }

    pub fn config(&self) -> &Config {
        &self.manifest.config
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn save_manifest(&self) -> std::io::Result<()> {
        write_json(&self.path("manifest.json"), &self.manifest)
    }

    fn gateway(&mut self) -> Result<Gateway, PipelineError> {
        if self.gateway.is_none() {
            self.gateway = Some(self.config().gateway()?);
        }
        Ok(self.gateway.clone().expect("gateway set above"))
    }

    pub fn is_complete(&self, s: StageName) -> bool {
        self.manifest.completed.contains(&s)
    }

    /// Runs every unfinished stage in order and returns the final manifest.
    pub fn run_all(&mut self) -> Result<RunManifest, PipelineError> {
        for s in StageName::ALL {
            self.run_stage(s)?;
        }
        Ok(self.manifest.clone())
    }

    /// Runs `stage` unless it already finished. Earlier stages must be done.
    pub fn run_stage(&mut self, stage: StageName) -> Result<(), PipelineError> {
        if let Some(missing) = StageName::ALL.iter().take_while(|s| **s != stage).find(|s| !self.is_complete(**s)) {
            return Err(PipelineError::stage(stage, format!("stage {missing} has not finished")));
        }
        if self.is_complete(stage) && !(stage == StageName::BuildKb && !self.kb_matches()) {
            log::info!("{stage}: already complete");
            return Ok(());
        }
        log::info!("{stage}: running");
        let result = match stage {
            StageName::Introspect => self.introspect(),
            StageName::BuildKb => self.build_kb(),
            StageName::Plan => self.plan(),
            StageName::Generate => self.generate(),
            StageName::Refine => self.refine(),
            StageName::Filter => self.filter(),
            StageName::Evaluate => self.evaluate(),
            StageName::Export => self.export().map(|_| ()),
        };
        match result {
            Ok(()) => {
                self.manifest.completed.insert(stage);
                self.manifest.failure = None;
            }
            Err(ref e) => {
                self.manifest.failure = Some(StageFailure { stage, message: e.to_string() });
            }
        }
        self.refresh_counters().map_err(io_err(stage))?;
        self.save_manifest().map_err(io_err(stage))?;
        result
    }

    fn kb_matches(&self) -> bool {
        match (KbStore::new(self.path("kb")).load(), &self.manifest.kb_fingerprint) {
            (Ok(kb), Some(fp)) => kbuild::kb_fingerprint(&kb) == *fp,
            _ => false,
        }
    }

    fn refresh_counters(&mut self) -> std::io::Result<()> {
        let drafts: Vec<SpoolRecord> = read_jsonl(&self.path("drafts.jsonl"))?;
        let rejected: Vec<RejectedLine> = read_jsonl(&self.path("rejected.jsonl"))?;
        let verified: Vec<SpoolRecord> = read_jsonl(&self.path("verified.jsonl"))?;
        let filtered: Vec<FilteredLine> = read_jsonl(&self.path("filtered.jsonl"))?;
        let draft_failures = rejected.iter().filter(|r| r.stage == StageName::Generate).count();
        let c = &mut self.manifest.counters;
        c.drafted = drafts.len() + draft_failures;
        c.verified = verified.len();
        c.rejected = rejected.len();
        c.filtered = filtered.len();
        Ok(())
    }

    pub fn schema(&self) -> Result<DatabaseSchema, PipelineError> {
        read_json(&self.path("schema.json")).map_err(io_err(StageName::Introspect))
    }

    fn sample(&self) -> Result<InstanceSample, PipelineError> {
        read_json(&self.path("sample.json")).map_err(io_err(StageName::Introspect))
    }

    pub fn kb(&self) -> Result<KnowledgeBase, PipelineError> {
        KbStore::new(self.path("kb")).load().map_err(|e| PipelineError::stage(StageName::BuildKb, e))
    }

    fn introspect(&mut self) -> Result<(), PipelineError> {
        let s = StageName::Introspect;
        let cfg = self.config().clone();
        let schema = db::introspect(&cfg.db).map_err(|e| PipelineError::stage(s, e))?;
        let sample = db::sample_instances(&schema, &cfg.db, cfg.sample_rows_per_table, cfg.root_seed)
            .map_err(|e| PipelineError::stage(s, e))?;
        write_json(&self.path("schema.json"), &schema).map_err(io_err(s))?;
        write_json(&self.path("sample.json"), &sample).map_err(io_err(s))?;
        Ok(())
    }

    fn build_kb(&mut self) -> Result<(), PipelineError> {
        let s = StageName::BuildKb;
        let (schema, sample) = (self.schema()?, self.sample()?);
        let gw = self.gateway()?;
        let store = KbStore::new(self.path("kb"));
        let kb = kbuild::build(&gw, &schema, &sample, Some(&store)).map_err(|e| PipelineError::stage(s, e))?;
        self.manifest.kb_fingerprint = Some(kbuild::kb_fingerprint(&kb));
        Ok(())
    }

    fn plan(&mut self) -> Result<(), PipelineError> {
        let s = StageName::Plan;
        let g = &self.config().generation;
        let specs = synth::plan_batch(&g.domains, &g.task_types, &g.quotas, self.config().root_seed)
            .map_err(|e| PipelineError::stage(s, e))?;
        let lines: Vec<PlanLine> =
            specs.into_iter().enumerate().map(|(i, spec)| PlanLine { sample_id: synth::sample_id(i), spec }).collect();
        write_jsonl(&self.path("plan.jsonl"), &lines).map_err(io_err(s))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, std::io::Error> {
        rayon::ThreadPoolBuilder::new().num_threads(self.config().workers).build().map_err(std::io::Error::other)
    }

    /// Runs `work` over `items` on the worker pool while a single thread
    /// appends its messages to the spools.
    fn fan_out<T: Sync>(
        &self,
        stage: StageName,
        items: &[T],
        work: impl Fn(&T) -> Result<Msg, PipelineError> + Sync,
    ) -> Result<(), PipelineError> {
        let pool = self.pool().map_err(io_err(stage))?;
        let open = |n: &str| Spool::open(&self.path(n)).map_err(io_err(stage));
        let (mut drafts, mut verified, mut rejected, mut audit) =
            (open("drafts.jsonl")?, open("verified.jsonl")?, open("rejected.jsonl")?, open("audit.jsonl")?);
        let (tx, rx) = mpsc::channel::<Msg>();
        std::thread::scope(|scope| {
            let writer = scope.spawn(move || -> std::io::Result<()> {
                for msg in rx {
                    match msg {
                        Msg::Draft(r) => drafts.append(&r)?,
                        Msg::Rejected(r) => rejected.append(&r)?,
                        Msg::Verified(r, a) => {
                            a.iter().try_for_each(|x| audit.append(x))?;
                            verified.append(&r)?;
                        }
                        Msg::RejectedAfterRefine(r, a) => {
                            a.iter().try_for_each(|x| audit.append(x))?;
                            rejected.append(&r)?;
                        }
                    }
                }
                Ok(())
            });
            let result = pool.install(|| {
                items.par_iter().try_for_each_with(tx, |tx, item| {
                    let msg = work(item)?;
                    tx.send(msg).map_err(|e| PipelineError::stage(stage, e))
                })
            });
            let written = writer.join().unwrap_or_else(|_| Err(std::io::Error::other("spool writer panicked")));
            result?;
            written.map_err(io_err(stage))
        })
    }

    fn generate(&mut self) -> Result<(), PipelineError> {
        let s = StageName::Generate;
        let (schema, kb, gw) = (self.schema()?, self.kb()?, self.gateway()?);
        let plan: Vec<PlanLine> = read_jsonl(&self.path("plan.jsonl")).map_err(io_err(s))?;
        let done = self.done_ids(&["drafts.jsonl"], Some(s))?;
        let todo: Vec<PlanLine> = plan.into_iter().filter(|p| !done.contains(&p.sample_id)).collect();
        log::info!("generate: {} drafts to write, {} already spooled", todo.len(), done.len());
        self.fan_out(s, &todo, |p| match synth::draft(&gw, &kb, &schema, &p.spec, &p.sample_id) {
            Ok(Ok(record)) => Ok(Msg::Draft(record)),
            Ok(Err(failure)) => Ok(Msg::Rejected(RejectedLine {
                sample_id: failure.sample_id.clone(),
                stage: s,
                reason: format!("{}: {}", failure.stage, failure.reason),
                draft: Some(failure),
                record: None,
                final_report: None,
            })),
            Err(e) => Err(PipelineError::stage(s, format!("{}: {e}", p.sample_id))),
        })
    }

    /// Sample ids already present in the named spools, plus rejected lines
    /// from `stage`.
    fn done_ids(&self, spools: &[&str], stage: Option<StageName>) -> Result<BTreeSet<String>, PipelineError> {
        let s = stage.unwrap_or(StageName::Refine);
        let mut ids = BTreeSet::new();
        for name in spools {
            let recs: Vec<SpoolRecord> = read_jsonl(&self.path(name)).map_err(io_err(s))?;
            ids.extend(recs.into_iter().map(|r| r.meta.sample_id));
        }
        if let Some(stage) = stage {
            let rej: Vec<RejectedLine> = read_jsonl(&self.path("rejected.jsonl")).map_err(io_err(s))?;
            ids.extend(rej.into_iter().filter(|r| r.stage == stage).map(|r| r.sample_id));
        }
        Ok(ids)
    }

    fn refine(&mut self) -> Result<(), PipelineError> {
        let s = StageName::Refine;
        let (schema, kb, gw) = (self.schema()?, self.kb()?, self.gateway()?);
        let cfg = self.config().clone();
        let drafts: Vec<SpoolRecord> = read_jsonl(&self.path("drafts.jsonl")).map_err(io_err(s))?;
        let done = self.done_ids(&["verified.jsonl"], Some(s))?;
        let todo: Vec<SpoolRecord> = drafts.into_iter().filter(|d| !done.contains(&d.meta.sample_id)).collect();
        let timeout = Duration::from_secs(cfg.statement_timeout_secs.max(1));
        log::info!("refine: {} drafts to refine, {} already done", todo.len(), done.len());
        self.fan_out(s, &todo, |d| {
            let exec = Executor::open(&cfg.db, timeout).map_err(|e| PipelineError::stage(s, e))?;
            let mut audits = Vec::new();
            let outcome =
                refine::refine(&gw, d.triple(), &kb, &schema, &exec, cfg.max_iterations, &mut |a| audits.push(a))
                    .map_err(|e| PipelineError::stage(s, format!("{}: {e}", d.meta.sample_id)))?;
            let mut record = d.clone();
            record.update(outcome.triple, &schema);
            if outcome.terminal == Terminal::Clean {
                Ok(Msg::Verified(record, audits))
            } else {
                let reason = match &outcome.reason {
                    Some(r) => format!("{:?}: {r}", outcome.terminal),
                    None => format!("{:?} after {} corrections", outcome.terminal, outcome.iterations_used),
                };
                record.meta.reason = Some(reason.clone());
                Ok(Msg::RejectedAfterRefine(
                    RejectedLine {
                        sample_id: record.meta.sample_id.clone(),
                        stage: s,
                        reason,
                        draft: None,
                        record: Some(record),
                        final_report: Some(outcome.final_report),
                    },
                    audits,
                ))
            }
        })
    }

    fn verified(&self) -> Result<Vec<SpoolRecord>, PipelineError> {
        let mut v: Vec<SpoolRecord> = read_jsonl(&self.path("verified.jsonl")).map_err(io_err(StageName::Refine))?;
        v.retain(|r| r.meta.status == Status::Verified);
        v.sort_by(|a, b| a.meta.sample_id.cmp(&b.meta.sample_id));
        v.dedup_by(|a, b| a.meta.sample_id == b.meta.sample_id);
        Ok(v)
    }

    fn filter(&mut self) -> Result<(), PipelineError> {
        let s = StageName::Filter;
        let cfg = self.config().clone();
        let verified = self.verified()?;
        let corpus: Vec<PairText<'_>> =
            verified.iter().map(|r| PairText { question: &r.question, sql: &r.answer }).collect();
        let mut removed: BTreeMap<String, FilteredLine> = BTreeMap::new();
        for path in &cfg.filter.eval_sets {
            let eval = load_eval_set(path).map_err(|e| PipelineError::stage(s, e))?;
            let pairs: Vec<PairText<'_>> = eval.iter().map(|(q, sql)| PairText { question: q, sql }).collect();
            let out = contamination_filter(&corpus, &pairs, cfg.filter.ngram_n, cfg.filter.threshold)
                .map_err(|e| PipelineError::stage(s, e))?;
            for r in out.removed {
                let id = verified[r.index].meta.sample_id.clone();
                let line = FilteredLine {
                    sample_id: id.clone(),
                    eval_set: path.display().to_string(),
                    eval_index: r.eval_index,
                    field: r.field,
                    score: r.score,
                };
                removed
                    .entry(id)
                    .and_modify(|l| {
                        if line.score > l.score {
                            *l = line.clone()
                        }
                    })
                    .or_insert(line);
            }
        }
        let lines: Vec<FilteredLine> = removed.into_values().collect();
        log::info!("filter: removed {} of {} verified samples", lines.len(), verified.len());
        write_jsonl(&self.path("filtered.jsonl"), &lines).map_err(io_err(s))
    }

    /// Verified samples that survived the filter, by sample id.
    pub fn corpus(&self) -> Result<Vec<SpoolRecord>, PipelineError> {
        let filtered: Vec<FilteredLine> =
            read_jsonl(&self.path("filtered.jsonl")).map_err(io_err(StageName::Filter))?;
        let gone: BTreeSet<String> = filtered.into_iter().map(|f| f.sample_id).collect();
        let mut v = self.verified()?;
        v.retain(|r| !gone.contains(&r.meta.sample_id));
        Ok(v)
    }

    fn evaluate(&mut self) -> Result<(), PipelineError> {
        let s = StageName::Evaluate;
        let cfg = self.config().clone();
        let schema = self.schema()?;
        let items: Vec<EvalItem> = self
            .corpus()?
            .into_iter()
            .map(|r| EvalItem { sample_id: r.meta.sample_id, question: r.question, sql: r.answer })
            .collect();
        let exec = Executor::open(&cfg.db, Duration::from_secs(cfg.statement_timeout_secs.max(1)))
            .map_err(|e| PipelineError::stage(s, e))?;
        let judge = if cfg.evaluate.with_sa { Some(self.gateway()?) } else { None };
        let client;
        let embedder = match (cfg.evaluate.embedder, &cfg.provider) {
            (EmbedderKind::Offline, _) => Embedder::Offline,
            (EmbedderKind::Provider, ProviderSection::Openai(p)) => {
                client = OpenAiProvider::new(p.clone());
                let model = cfg.evaluate.embedding_model.clone().unwrap_or_else(|| "text-embedding-3-small".into());
                Embedder::Provider { client: &client, model }
            }
            (EmbedderKind::Provider, _) => {
                return Err(PipelineError::stage(s, "the provider embedder needs an openai provider"));
            }
        };
        let report = eval::evaluate(&items, &schema, &exec, &EvalOptions { judge: judge.as_ref(), embedder })
            .map_err(|e| PipelineError::stage(s, e))?;
        write_json(&self.path("report.json"), &report).map_err(io_err(s))?;
        std::fs::write(self.path("report.txt"), report.render()).map_err(io_err(s))
    }

    /// Writes `export.jsonl` and returns the record count.
    pub fn export(&mut self) -> Result<usize, PipelineError> {
        let s = StageName::Export;
        let corpus = self.corpus()?;
        let path = self.path("export.jsonl");
        let n = export(&corpus, &path).map_err(io_err(s))?;
        self.manifest.counters.exported = n;
        Ok(n)
    }
}

/// Writes the corpus as `question`/`think`/`answer` JSONL.
pub fn export(corpus: &[SpoolRecord], path: &Path) -> std::io::Result<usize> {
    let records: Vec<ExportRecord> = corpus.iter().map(|r| ExportRecord::from(&r.triple())).collect();
    write_jsonl(path, &records)?;
    Ok(records.len())
}

/// Reads `(question, sql)` pairs from a JSON array or JSONL file.
pub fn load_eval_set(path: &Path) -> std::io::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let values: Vec<serde_json::Value> = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Array(a)) => a,
        _ => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?,
    };
    let field = |v: &serde_json::Value, keys: &[&str]| {
        keys.iter().find_map(|k| v.get(*k).and_then(|x| x.as_str())).unwrap_or_default().to_string()
    };
    Ok(values.iter().map(|v| (field(v, &["question"]), field(v, &["sql", "SQL", "query", "answer"]))).collect())
}
