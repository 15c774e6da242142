use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use semsynth::db::{self, Executor};
use semsynth::eval::{self, Embedder, EvalItem, EvalOptions};
use semsynth::llm::{OpenAiProvider, ProviderConfig};
use semsynth::pipeline::{self, Config, PipelineError, Run, StageName};
use semsynth_core::metrics::{contamination_filter, PairText, DEFAULT_NGRAM_N, DEFAULT_NGRAM_THRESHOLD};
use semsynth_core::{classify_complexity, extract_facts, DatabaseSchema};

#[derive(Parser)]
#[command(name = "semsynth", version, about = "Knowledge-grounded text-to-SQL corpus synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run config (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Print the schema of a SQLite database, optionally with an instance sample.
    Introspect {
        /// SQLite database file.
        #[arg(long)]
        db: PathBuf,
        /// Write JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also sample this many rows per table.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the knowledge base.
    BuildKb(ConfigArg),
    /// Expand quotas into per-sample generation specs.
    Plan(ConfigArg),
    /// Draft question, trace and SQL for every planned sample.
    Generate(ConfigArg),
    /// Diagnose and repair drafts until clean or out of budget.
    Refine(ConfigArg),
    /// Drop samples that overlap the evaluation sets.
    Filter(ConfigArg),
    /// Score a run or a standalone corpus.
    Evaluate(EvaluateArgs),
    /// Write the final corpus.
    Export(ConfigArg),
    /// Run every unfinished stage.
    Pipeline(ConfigArg),
    /// Classify SQL read from stdin, one statement per line.
    Classify {
        /// Resolve names against this database.
        #[arg(long)]
        db: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderArg {
    Offline,
    Provider,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run the evaluate stage of this run instead of a standalone corpus.
    #[arg(long, short, conflicts_with_all = ["corpus", "db"])]
    config: Option<PathBuf>,
    /// JSONL corpus with question and answer (or sql) fields.
    #[arg(long, requires = "db")]
    corpus: Option<PathBuf>,
    /// Database the corpus SQL runs against.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Evaluation sets for the contamination filter; repeatable.
    #[arg(long = "eval-set")]
    eval_set: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NGRAM_N)]
    ngram_n: usize,
    #[arg(long, default_value_t = DEFAULT_NGRAM_THRESHOLD)]
    ngram_threshold: f64,
    /// Judge semantic alignment with the provider from --provider-config.
    #[arg(long)]
    with_sa: bool,
    #[arg(long, value_enum, default_value = "offline")]
    embedder: EmbedderArg,
    /// Provider settings (TOML with the `[provider]` keys) for SA or embeddings.
    #[arg(long)]
    provider_config: Option<PathBuf>,
    #[arg(long, default_value = "text-embedding-3-small")]
    embedding_model: String,
    /// Write the JSON report here; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = e.downcast_ref::<PipelineError>().map(|p| p.exit_code()).unwrap_or(1);
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<u8> {
    // A stage subcommand also runs any earlier stage that has not finished.
    let run_to = |c: ConfigArg, s: StageName| -> anyhow::Result<Run> {
        let mut run = Run::open(Config::load(&c.config)?)?;
        for prior in StageName::ALL.iter().take_while(|p| **p != s) {
            run.run_stage(*prior)?;
        }
        run.run_stage(s)?;
        print_counters(&run);
        Ok(run)
    };
    let stage = |c: ConfigArg, s: StageName| run_to(c, s).map(|_| 0);
    match cmd {
        Command::Introspect { db, out, sample, seed } => introspect(&db, out.as_deref(), sample, seed),
        Command::BuildKb(c) => stage(c, StageName::BuildKb),
        Command::Plan(c) => stage(c, StageName::Plan),
        Command::Generate(c) => stage(c, StageName::Generate),
        Command::Refine(c) => stage(c, StageName::Refine),
        Command::Filter(c) => stage(c, StageName::Filter),
        Command::Evaluate(a) => match a.config.clone() {
            Some(config) => stage(ConfigArg { config }, StageName::Evaluate),
            None => evaluate_standalone(a),
        },
        Command::Export(c) => {
            let run = run_to(c, StageName::Export)?;
            Ok(if run.manifest.counters.exported > 0 { 0 } else { 1 })
        }
        Command::Pipeline(c) => {
            let mut run = Run::open(Config::load(&c.config)?)?;
            let manifest = run.run_all()?;
            print_counters(&run);
            Ok(if manifest.counters.exported > 0 { 0 } else { 1 })
        }
        Command::Classify { db } => classify(db.as_deref()),
    }
}

fn print_counters(run: &Run) {
    let c = &run.manifest.counters;
    println!(
        "run {}: drafted {} verified {} rejected {} filtered {} exported {}",
        run.manifest.run_id, c.drafted, c.verified, c.rejected, c.filtered, c.exported
    );
}

fn introspect(path: &Path, out: Option<&Path>, sample: Option<usize>, seed: u64) -> anyhow::Result<u8> {
    let schema = db::introspect(path)?;
    let value = match sample {
        Some(n) => {
            let s = db::sample_instances(&schema, path, n, seed)?;
            serde_json::json!({ "schema": schema, "sample": s })
        }
        None => serde_json::to_value(&schema)?,
    };
    let text = serde_json::to_string_pretty(&value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| p.display().to_string())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(0)
}

fn classify(db: Option<&Path>) -> anyhow::Result<u8> {
    let schema = match db {
        Some(p) => db::introspect(p)?,
        None => DatabaseSchema::new("stdin", Vec::new(), Vec::new())?,
    };
    let mut out = std::io::stdout().lock();
    let mut failed = false;
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = match extract_facts(&line, &schema) {
            Ok(f) => serde_json::to_value(classify_complexity(&f))?,
            Err(e) => {
                failed = true;
                serde_json::json!({ "error": e.to_string() })
            }
        };
        writeln!(out, "{record}")?;
    }
    Ok(u8::from(failed))
}

fn evaluate_standalone(a: EvaluateArgs) -> anyhow::Result<u8> {
    let (Some(corpus_path), Some(db_path)) = (a.corpus.as_deref(), a.db.as_deref()) else {
        return Err(PipelineError::ConfigInvalid("evaluate needs --config, or --corpus with --db".into()).into());
    };
    if a.ngram_n < 2 || !(0.0..=1.0).contains(&a.ngram_threshold) {
        return Err(PipelineError::ConfigInvalid("--ngram-n must be ≥ 2 and --ngram-threshold in [0, 1]".into()).into());
    }
    let items = load_corpus(corpus_path)?;
    let pairs: Vec<PairText<'_>> = items.iter().map(|i| PairText { question: &i.question, sql: &i.sql }).collect();
    let mut removed = std::collections::BTreeSet::new();
    for path in &a.eval_set {
        let eval_set = pipeline::load_eval_set(path).with_context(|| path.display().to_string())?;
        let eval_pairs: Vec<PairText<'_>> = eval_set.iter().map(|(q, s)| PairText { question: q, sql: s }).collect();
        let out = contamination_filter(&pairs, &eval_pairs, a.ngram_n, a.ngram_threshold)?;
        for r in out.removed {
            log::info!(
                "{}: overlaps {} #{} ({:?} {:.3})",
                items[r.index].sample_id,
                path.display(),
                r.eval_index,
                r.field,
                r.score
            );
            removed.insert(r.index);
        }
    }
    let kept: Vec<EvalItem> =
        items.into_iter().enumerate().filter(|(i, _)| !removed.contains(i)).map(|(_, x)| x).collect();

    let schema = db::introspect(db_path)?;
    let exec = Executor::open(db_path, db::DEFAULT_TIMEOUT)?;
    let provider = match &a.provider_config {
        Some(p) => Some(load_provider(p)?),
        None => None,
    };
    if (a.with_sa || matches!(a.embedder, EmbedderArg::Provider)) && provider.is_none() {
        return Err(
            PipelineError::ConfigInvalid("--with-sa and --embedder provider need --provider-config".into()).into()
        );
    }
    let gateway = match (&provider, a.with_sa) {
        (Some(p), true) => {
            Some(semsynth::llm::Gateway::new(OpenAiProvider::new(p.clone()), p.concurrency_cap, p.max_retries))
        }
        _ => None,
    };
    let client = provider.clone().map(OpenAiProvider::new);
    let embedder = match (a.embedder, &client) {
        (EmbedderArg::Provider, Some(c)) => Embedder::Provider { client: c, model: a.embedding_model.clone() },
        _ => Embedder::Offline,
    };
    let report = eval::evaluate(&kept, &schema, &exec, &EvalOptions { judge: gateway.as_ref(), embedder })?;
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    println!("{:<22} {}", "filtered", removed.len());
    print!("{}", report.render());
    Ok(0)
}

fn load_corpus(path: &Path) -> anyhow::Result<Vec<EvalItem>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        let get = |keys: &[&str]| {
            keys.iter().find_map(|k| v.get(*k).and_then(|x| x.as_str())).unwrap_or_default().to_string()
        };
        let id = v
            .get("meta")
            .and_then(|m| m.get("sample_id"))
            .and_then(|x| x.as_str())
            .map(String::from)
            .unwrap_or_else(|| format!("line{:05}", i + 1));
        items.push(EvalItem { sample_id: id, question: get(&["question"]), sql: get(&["answer", "sql", "SQL"]) });
    }
    Ok(items)
}

fn load_provider(path: &Path) -> anyhow::Result<ProviderConfig> {
    #[derive(serde::Deserialize)]
    struct File {
        provider: ProviderConfig,
    }
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let f: File = toml::from_str(&text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    Ok(f.provider)
}
