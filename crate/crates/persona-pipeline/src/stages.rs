//! Command-line orchestration of the full flow: raw logs → intent memories
//! → candidate persona sets → quality scores → preference training →
//! downstream evaluation, plus the clustering baseline, the synthetic
//! corpus generator, and the compression report.
//!
//! Every subcommand reads and writes files, so any stage can be replaced by
//! external tooling (for example, real-model log-probs fed into
//! `gdpo-train`). Given one config, one seed, and recorded cassettes, a
//! full rerun is byte-identical: per-user work runs behind a worker cap but
//! results are committed in input order, and all writes are atomic.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use persona_core::cluster::{
    sample_negatives, select_representatives, ward_hac, PointSet, SelectionConfig,
    DEFAULT_MERGE_THRESHOLD, NEGATIVE_BAND, NEGATIVE_SAMPLE_CAP,
};
use persona_core::domain::{lenient_clean, ValidationPolicy};
use persona_core::embedding::{memory_text, persona_text, EmbedError, EmbeddingClient, EmbeddingTable};
use persona_core::eval::{evaluate, EvalUser, HitMode, ItemPool, PoolItem};
use persona_core::gdpo::toy_train;
use persona_core::judge::{judge_candidate, mock_judge, Judge, JudgeError};
use persona_core::quality::score_candidate;
use persona_core::rng::derive_seed;
use persona_core::synth::{synth_dataset, SynthEmbedder, SyntheticSpec};
use persona_core::{parse_candidate, IntentMemory, Persona, PersonaSet, Window};
use serde::{Deserialize, Serialize};

use crate::cassette::{Cassette, CassetteChat, CassetteMode};
use crate::chat::{ChatMessage, ChatRequest, ChatTransport, HttpChat, TransportError};
use crate::config::{toy_train_config, ConfigError, PipelineConfig};
use crate::embed_client::{HttpEmbedder, TableEmbedder};
use crate::formats::{
    load_embeddings, read_json, read_jsonl, save_embeddings, write_json, write_jsonl,
    CandidateRecord, FormatError, LogRecord, MemoryRecord, PersonaScoreRecord, PersonaSetRecord,
    ScoreRecord, TruthRecord,
};
use crate::judge_live::LiveJudge;
use crate::prompts;

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

/// Stage failures, bucketed by exit code: 1 usage, 2 upstream service,
/// 3 data validation.
#[derive(Debug)]
pub enum StageError {
    Usage(String),
    Upstream(String),
    Data(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Usage(_) => 1,
            StageError::Upstream(_) => 2,
            StageError::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            StageError::Usage(m) | StageError::Upstream(m) | StageError::Data(m) => m,
        }
    }
}

impl From<ConfigError> for StageError {
    fn from(e: ConfigError) -> Self {
        StageError::Usage(e.to_string())
    }
}

impl From<FormatError> for StageError {
    fn from(e: FormatError) -> Self {
        match e {
            // A file we cannot open is a pointing problem; a file we cannot
            // decode is a data problem.
            FormatError::Io { .. } => StageError::Usage(e.to_string()),
            FormatError::Record { .. } | FormatError::Content { .. } => {
                StageError::Data(e.to_string())
            }
        }
    }
}

impl From<TransportError> for StageError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::NoEndpoint => StageError::Usage(e.to_string()),
            _ => StageError::Upstream(e.to_string()),
        }
    }
}

impl From<EmbedError> for StageError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Transport { .. } | EmbedError::Cardinality { .. } => {
                StageError::Upstream(e.to_string())
            }
            other => StageError::Data(other.to_string()),
        }
    }
}

impl From<JudgeError> for StageError {
    fn from(e: JudgeError) -> Self {
        StageError::Upstream(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// CLI surface
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "persona-pipeline",
    version,
    about = "Persona induction pipeline: summarize logs, generate and score persona sets, \
             train a preference policy, evaluate, and compare against a clustering baseline.",
    after_help = "Exit codes: 0 success, 1 usage error, 2 upstream-service failure, \
                  3 data validation failure."
)]
struct Cli {
    /// TOML config file (flag > env > file > defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set gdpo.beta=0.7 (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Root seed (overrides gdpo.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory (overrides paths.data_dir).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Per-stage worker cap (overrides workers).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus: logs, memories, candidate pools,
    /// embeddings, item pool, and ground truth.
    Synth(SynthArgs),
    /// Summarize daily logs into intent memories with the chat model.
    Summarize(SummarizeArgs),
    /// Sample persona-set candidates for each user window.
    Generate(GenerateArgs),
    /// Score every valid candidate: cohesion, size, judges, coverage.
    Score(ScoreArgs),
    /// Train the toy preference policy on scored pools.
    GdpoTrain(GdpoTrainArgs),
    /// Cluster memories per user (Ward linkage), select representatives,
    /// and sample banded negatives.
    ClusterBaseline(ClusterBaselineArgs),
    /// Rank the item pool with persona embeddings and report Hit@k / MAP@k.
    Eval(EvalArgs),
    /// Report mean per-user counts at each compression level.
    Report(ReportArgs),
}

/// Cassette flags shared by every stage that talks to a model service.
#[derive(Args, Debug, Clone)]
struct CassetteArgs {
    /// Record/replay tape for model traffic.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Tape mode; replaying is the default so reruns never go live.
    #[arg(long, default_value = "replay")]
    cassette_mode: String,
}

impl CassetteArgs {
    fn open(&self) -> Result<Option<Arc<Cassette>>, StageError> {
        let Some(path) = &self.cassette else { return Ok(None) };
        let mode: CassetteMode = self
            .cassette_mode
            .parse()
            .map_err(|e: String| StageError::Usage(e))?;
        let cassette = Cassette::open(path, mode)
            .map_err(|e| StageError::Usage(e.to_string()))?;
        Ok(Some(Arc::new(cassette)))
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Synthetic-corpus spec (JSON); defaults plus the root seed otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Input log records (JSONL; default <data_dir>/logs.jsonl).
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Output memory records (JSONL; default <data_dir>/memories.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tape: CassetteArgs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Input memory records (JSONL; default <data_dir>/memories.jsonl).
    #[arg(long)]
    memories: Option<PathBuf>,
    /// Output candidate records (JSONL; default <data_dir>/candidates.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tape: CassetteArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Input memory records (JSONL; default <data_dir>/memories.jsonl).
    #[arg(long)]
    memories: Option<PathBuf>,
    /// Input candidate records (JSONL; default <data_dir>/candidates.jsonl).
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Embedding table (JSONL; default <data_dir>/embeddings.jsonl). Texts
    /// missing from it are fetched live when an endpoint is configured.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Output score records (JSONL; default <data_dir>/scores.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which judge grades alignment and truthfulness.
    #[arg(long, value_parser = ["mock", "live"], default_value = "mock")]
    judge: String,
    #[command(flatten)]
    tape: CassetteArgs,
}

#[derive(Args, Debug)]
struct GdpoTrainArgs {
    /// Input score records (JSONL; default <data_dir>/scores.jsonl).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Input candidate records, for resolving chosen persona sets.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Output training outcome (JSON; default <data_dir>/policy.json).
    #[arg(long)]
    out_policy: Option<PathBuf>,
    /// Output loss trace (JSONL; default <data_dir>/trace.jsonl).
    #[arg(long)]
    out_trace: Option<PathBuf>,
    /// Output argmax persona sets (JSONL; default <data_dir>/chosen.jsonl).
    #[arg(long)]
    out_chosen: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClusterBaselineArgs {
    /// Input memory records (JSONL; default <data_dir>/memories.jsonl).
    #[arg(long)]
    memories: Option<PathBuf>,
    /// Embedding table (JSONL; default <data_dir>/embeddings.jsonl).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Merge threshold on Ward heights.
    #[arg(long, default_value_t = DEFAULT_MERGE_THRESHOLD)]
    tau: f64,
    /// Global representative budget per user (default: the window size).
    #[arg(long)]
    budget: Option<usize>,
    /// Output cluster records (JSONL; default <data_dir>/clusters.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output one-persona labeling prompts
    /// (JSONL; default <data_dir>/labeling_requests.jsonl).
    #[arg(long)]
    requests_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Persona sets to evaluate (JSONL; default <data_dir>/chosen.jsonl).
    #[arg(long)]
    personas: Option<PathBuf>,
    /// Item pool (JSONL; default <data_dir>/pool.jsonl).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Ground truth (JSONL; default <data_dir>/truth.jsonl).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Embedding table for persona texts (default <data_dir>/embeddings.jsonl).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Rebuild the synthetic embedder from this spec instead of a table.
    #[arg(long)]
    synth_spec: Option<PathBuf>,
    /// Cutoffs to evaluate.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10, 50, 100])]
    ks: Vec<usize>,
    /// Hit counting: binary (hit anything) or fractional (share of truth).
    #[arg(long, value_parser = ["binary", "fractional"], default_value = "binary")]
    mode: String,
    /// Output metrics (JSON; default <data_dir>/metrics.json).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tape: CassetteArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Log records (JSONL; default <data_dir>/logs.jsonl).
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Memory records (JSONL; default <data_dir>/memories.jsonl).
    #[arg(long)]
    memories: Option<PathBuf>,
    /// Persona-set records (JSONL; default <data_dir>/chosen.jsonl).
    #[arg(long)]
    personas: Option<PathBuf>,
    /// Output report (JSON; default <data_dir>/compression_report.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Binary entry point: parses arguments, runs the stage, maps failures to
/// exit codes.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the error path.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), StageError> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth(args) => cmd_synth(&cfg, args),
        Command::Summarize(args) => cmd_summarize(&cfg, args),
        Command::Generate(args) => cmd_generate(&cfg, args),
        Command::Score(args) => cmd_score(&cfg, args),
        Command::GdpoTrain(args) => cmd_gdpo_train(&cfg, args),
        Command::ClusterBaseline(args) => cmd_cluster_baseline(&cfg, args),
        Command::Eval(args) => cmd_eval(&cfg, args),
        Command::Report(args) => cmd_report(&cfg, args),
    }
}

/// Resolves the config with full precedence: defaults < file < environment
/// < `--set` pairs < dedicated flags.
fn load_config(cli: &Cli) -> Result<PipelineConfig, StageError> {
    let env = |name: &str| std::env::var(name).ok();
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref(), &env)?;

    if !cli.overrides.is_empty() {
        let mut pairs = BTreeMap::new();
        for item in &cli.overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                StageError::Usage(format!("--set needs SECTION.KEY=VALUE, got {item:?}"))
            })?;
            let name = format!("PERSONA_{}", key.trim().replace('.', "_").to_uppercase());
            pairs.insert(name, value.to_owned());
        }
        // The same override machinery the environment uses; track which
        // names it consults so typos fail instead of silently no-opping.
        let consulted = std::cell::RefCell::new(BTreeSet::new());
        let lookup = |name: &str| {
            consulted.borrow_mut().insert(name.to_owned());
            pairs.get(name).cloned()
        };
        cfg.apply_env(&lookup)?;
        let consulted = consulted.into_inner();
        if let Some(unknown) = pairs.keys().find(|name| !consulted.contains(*name)) {
            return Err(StageError::Usage(format!(
                "--set refers to an unknown config key ({unknown})"
            )));
        }
    }

    if let Some(seed) = cli.seed {
        cfg.gdpo.seed = seed;
    }
    if let Some(dir) = &cli.data_dir {
        cfg.paths.data_dir = dir.display().to_string();
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Shared machinery
// ---------------------------------------------------------------------------

/// Runs `job` over `items` with at most `workers` threads, returning results
/// in input order regardless of completion order.
fn run_indexed<T, R, F>(items: &[T], workers: usize, job: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, item)| job(i, item)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let (sender, receiver) = std::sync::mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            let sender = sender.clone();
            let next = &next;
            let job = &job;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                if sender.send((i, job(i, &items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(sender);
        for (i, result) in receiver {
            slots[i] = Some(result);
        }
    });
    slots.into_iter().map(|slot| slot.expect("every index completed")).collect()
}

/// First error (by input order) or all successes.
fn sequence<R>(results: Vec<Result<R, StageError>>) -> Result<Vec<R>, StageError> {
    results.into_iter().collect()
}

/// The chat transport for a stage: live client, cassette, or both.
fn chat_transport(
    cfg: &PipelineConfig,
    cassette: Option<Arc<Cassette>>,
) -> Result<Box<dyn ChatTransport>, StageError> {
    let live: Option<Box<dyn ChatTransport>> = if cfg.chat.endpoint.is_empty() {
        None
    } else {
        Some(Box::new(HttpChat::new(
            &cfg.chat.endpoint,
            cfg.chat.max_retries,
            cfg.chat.timeout_secs,
        )?))
    };
    match cassette {
        Some(tape) => Ok(Box::new(CassetteChat::new(tape, live))),
        None => live.ok_or(StageError::Usage(
            "no chat endpoint configured and no cassette given".to_owned(),
        )),
    }
}

/// Crude length accounting (≈4 characters per token) for the over-length
/// warning; the serving side owns real truncation semantics.
fn estimate_tokens(text: &str) -> u32 {
    (text.chars().count() as u32).div_ceil(4)
}

fn warn_over_context(cfg: &PipelineConfig, what: &str, prompt: &str) -> bool {
    let estimate = estimate_tokens(prompt);
    if estimate > cfg.generation.max_context {
        eprintln!(
            "warning: {what} prompt estimated at {estimate} tokens exceeds the \
             {}-token context; sending unmodified",
            cfg.generation.max_context
        );
        return true;
    }
    false
}

fn windows_by_user(memories_path: &Path) -> Result<Vec<Window>, StageError> {
    let records: Vec<MemoryRecord> = read_jsonl(memories_path)?;
    crate::formats::windows_from_memories(&records).map_err(StageError::Data)
}

/// `id. label: description` lines for a window, in (day, id) order.
fn memory_lines(window: &Window) -> String {
    let mut block = String::new();
    for memory in &window.memories {
        block.push_str(&format!("{}. {}: {}\n", memory.id, memory.label, memory.description));
    }
    block
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Sidecar describing how the synthetic candidate pools were laid out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthMeta {
    pub user_ids: Vec<String>,
    /// Per user: variant tag of each pool position.
    pub variant_names: Vec<Vec<String>>,
    /// Per user: pool position of the oracle candidate.
    pub oracle_indices: Vec<usize>,
}

fn cmd_synth(cfg: &PipelineConfig, args: &SynthArgs) -> Result<(), StageError> {
    let spec = match &args.spec {
        Some(path) => read_json::<SyntheticSpec>(path)?,
        None => SyntheticSpec { seed: cfg.gdpo.seed, ..SyntheticSpec::default() },
    };
    let data = synth_dataset(&spec).map_err(|e| StageError::Data(e.to_string()))?;

    let logs: Vec<LogRecord> = data
        .logs
        .iter()
        .map(|e| LogRecord { user_id: e.user_id.clone(), day: e.day, text: e.text.clone() })
        .collect();
    write_jsonl(&cfg.data_path("logs.jsonl"), &logs)?;

    let mut memories = Vec::new();
    for window in &data.windows {
        for memory in &window.memories {
            memories.push(MemoryRecord { user_id: window.user_id.clone(), memory: memory.clone() });
        }
    }
    write_jsonl(&cfg.data_path("memories.jsonl"), &memories)?;

    let mut candidates = Vec::new();
    for (w, window) in data.windows.iter().enumerate() {
        for (c, candidate) in data.candidate_pools[w].iter().enumerate() {
            let personas = candidate.parse_result.as_ref().ok().map(|set| set.personas.clone());
            candidates.push(CandidateRecord {
                user_id: window.user_id.clone(),
                candidate_index: c,
                raw_text: candidate.raw_text.clone(),
                valid: candidate.is_valid(),
                rejection: None,
                personas,
                variant: Some(data.variant_names[w][c].clone()),
            });
        }
    }
    write_jsonl(&cfg.data_path("candidates.jsonl"), &candidates)?;

    // One table serves scoring (memory texts) and evaluation (persona texts).
    let mut table = data.memory_table.clone();
    let mut persona_texts: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for pool in &data.candidate_pools {
        for candidate in pool {
            if let Ok(set) = &candidate.parse_result {
                for persona in &set.personas {
                    let text = persona_text(persona);
                    if seen.insert(text.clone()) {
                        persona_texts.push(text);
                    }
                }
            }
        }
    }
    let vectors = data.embedder.embed(&persona_texts).map_err(StageError::from)?;
    table
        .absorb(
            EmbeddingTable::from_records(persona_texts.into_iter().zip(vectors))
                .map_err(StageError::from)?,
        )
        .map_err(StageError::from)?;
    save_embeddings(&cfg.data_path("embeddings.jsonl"), &table)?;

    write_jsonl(&cfg.data_path("pool.jsonl"), data.item_pool.items())?;

    let truth: Vec<TruthRecord> = data
        .truth
        .iter()
        .map(|(user_id, ids)| TruthRecord {
            user_id: user_id.clone(),
            item_ids: ids.iter().copied().collect(),
        })
        .collect();
    write_jsonl(&cfg.data_path("truth.jsonl"), &truth)?;

    write_json(&cfg.data_path("synth_spec.json"), &spec)?;
    let meta = SynthMeta {
        user_ids: data.windows.iter().map(|w| w.user_id.clone()).collect(),
        variant_names: data.variant_names.clone(),
        oracle_indices: data.oracle_indices.clone(),
    };
    write_json(&cfg.data_path("synth_meta.json"), &meta)?;

    eprintln!(
        "synth: {} users, {} memories, {} candidates, {} pool items → {}",
        data.windows.len(),
        memories.len(),
        candidates.len(),
        data.item_pool.len(),
        cfg.paths.data_dir,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// summarize
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct SummarizedMemory {
    intent_memory: String,
    description: String,
}

/// Extracts the first balanced JSON array from free-form reply text.
fn extract_json_array(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = text.find('[')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &byte) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if byte == b'\\' {
                escaped = true;
            } else if byte == b'"' {
                in_string = false;
            }
            continue;
        }
        match byte {
            b'"' => in_string = true,
            b'[' => depth += 1,
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=start + offset]);
                }
            }
            _ => {}
        }
    }
    None
}

fn decode_summary(reply: &str) -> Result<Vec<SummarizedMemory>, String> {
    let array = extract_json_array(reply).ok_or("no JSON array in reply")?;
    serde_json::from_str(array).map_err(|e| format!("bad memory array: {e}"))
}

fn cmd_summarize(cfg: &PipelineConfig, args: &SummarizeArgs) -> Result<(), StageError> {
    let logs_path = args.logs.clone().unwrap_or_else(|| cfg.data_path("logs.jsonl"));
    let out_path = args.out.clone().unwrap_or_else(|| cfg.data_path("memories.jsonl"));
    let logs: Vec<LogRecord> = read_jsonl(&logs_path)?;
    let transport = chat_transport(cfg, args.tape.open()?)?;

    // One unit per (user, day), users in first-appearance order, days
    // ascending within a user.
    let mut user_order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<(usize, persona_core::domain::Day), Vec<String>> = BTreeMap::new();
    for record in &logs {
        let slot = match user_order.iter().position(|u| u == &record.user_id) {
            Some(i) => i,
            None => {
                user_order.push(record.user_id.clone());
                user_order.len() - 1
            }
        };
        grouped.entry((slot, record.day)).or_default().push(record.text.clone());
    }
    let units: Vec<((usize, persona_core::domain::Day), Vec<String>)> =
        grouped.into_iter().collect();

    let results = run_indexed(&units, cfg.workers, |_, ((_, day), lines)| {
        let prompt = prompts::render(prompts::SUMMARIZE, &[("logs", &lines.join("\n"))])
            .map_err(|e| StageError::Usage(e.to_string()))?;
        warn_over_context(cfg, "summarize", &prompt);
        let request = ChatRequest {
            model: cfg.chat.model.clone(),
            messages: vec![ChatMessage::user(&prompt)],
            temperature: 0.0,
            top_p: None,
            sample_index: None,
        };
        // A malformed reply earns exactly one retry; then the day is skipped.
        let mut last_failure = String::new();
        for _ in 0..2 {
            let reply = transport.complete(&request).map_err(StageError::from)?;
            match decode_summary(&reply) {
                Ok(list) => return Ok(Some(list)),
                Err(message) => last_failure = message,
            }
        }
        eprintln!("warning: skipping day {day:?}: {last_failure}");
        Ok(None)
    });
    let results = sequence(results)?;

    let mut records: Vec<MemoryRecord> = Vec::new();
    let mut next_id: BTreeMap<usize, u32> = BTreeMap::new();
    let mut skipped_days = 0usize;
    for (((user_slot, day), _), outcome) in units.iter().zip(results) {
        match outcome {
            Some(list) => {
                for item in list {
                    let id = next_id.entry(*user_slot).or_insert(1);
                    records.push(MemoryRecord {
                        user_id: user_order[*user_slot].clone(),
                        memory: IntentMemory {
                            id: *id,
                            day: *day,
                            label: item.intent_memory,
                            description: item.description,
                        },
                    });
                    *id += 1;
                }
            }
            None => skipped_days += 1,
        }
    }
    write_jsonl(&out_path, &records)?;
    eprintln!(
        "summarize: {} days → {} memories ({} days skipped after retry)",
        units.len(),
        records.len(),
        skipped_days
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

/// Stage tally written next to the candidate records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub windows: usize,
    pub candidates: usize,
    pub valid: usize,
    /// Users whose every sample failed to parse or validate.
    pub unusable_windows: Vec<String>,
}

fn cmd_generate(cfg: &PipelineConfig, args: &GenerateArgs) -> Result<(), StageError> {
    let memories_path = args.memories.clone().unwrap_or_else(|| cfg.data_path("memories.jsonl"));
    let out_path = args.out.clone().unwrap_or_else(|| cfg.data_path("candidates.jsonl"));
    let windows = windows_by_user(&memories_path)?;
    if windows.is_empty() {
        return Err(StageError::Data("no user windows in the memory file".to_owned()));
    }
    let transport = chat_transport(cfg, args.tape.open()?)?;
    let n = cfg.gdpo.candidates_per_window;

    let per_window = run_indexed(&windows, cfg.workers, |_, window| {
        let prompt = prompts::render(prompts::INDUCE, &[("memories", &memory_lines(window))])
            .map_err(|e| StageError::Usage(e.to_string()))?;
        warn_over_context(cfg, "generate", &prompt);
        let mut records = Vec::with_capacity(n);
        for sample in 0..n {
            let request = ChatRequest {
                model: cfg.chat.model.clone(),
                messages: vec![ChatMessage::user(&prompt)],
                temperature: cfg.generation.temperature,
                top_p: Some(cfg.generation.top_p),
                sample_index: Some(sample as u32),
            };
            let reply = transport.complete(&request).map_err(StageError::from)?;
            let mut candidate = parse_candidate(&reply);
            candidate.validate_against(window, ValidationPolicy::Lenient);
            let (valid, personas, rejection) = match (&candidate.parse_result, candidate.is_valid())
            {
                (Ok(set), true) => {
                    // Store the cleaned set: evidence ids outside the window
                    // are dropped so downstream pools never see them.
                    let (cleaned, _) = lenient_clean(set, window);
                    (true, Some(cleaned.personas), None)
                }
                (Ok(_), false) => {
                    let why = candidate
                        .validation
                        .errors
                        .first()
                        .map(|issue| issue.message.clone())
                        .unwrap_or_else(|| "validation failed".to_owned());
                    (false, None, Some(why))
                }
                (Err(failure), _) => (false, None, Some(failure.message.clone())),
            };
            records.push(CandidateRecord {
                user_id: window.user_id.clone(),
                candidate_index: sample,
                raw_text: reply,
                valid,
                rejection,
                personas,
                variant: None,
            });
        }
        Ok(records)
    });
    let per_window = sequence(per_window)?;

    let mut unusable = Vec::new();
    for (window, records) in windows.iter().zip(&per_window) {
        if records.iter().all(|r| !r.valid) {
            eprintln!(
                "warning: window {} unusable — all {n} candidates failed to parse or validate",
                window.user_id
            );
            unusable.push(window.user_id.clone());
        }
    }
    let records: Vec<CandidateRecord> = per_window.into_iter().flatten().collect();
    let summary = GenerateSummary {
        windows: windows.len(),
        candidates: records.len(),
        valid: records.iter().filter(|r| r.valid).count(),
        unusable_windows: unusable,
    };
    write_jsonl(&out_path, &records)?;
    write_json(&cfg.data_path("generate_summary.json"), &summary)?;
    eprintln!(
        "generate: {} windows × {n} samples → {} valid candidates",
        summary.windows, summary.valid
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

/// Groups candidate records per user, keeping only usable persona sets.
fn valid_sets_by_user(
    records: &[CandidateRecord],
) -> BTreeMap<String, Vec<(usize, PersonaSet)>> {
    let mut by_user: BTreeMap<String, Vec<(usize, PersonaSet)>> = BTreeMap::new();
    for record in records {
        if !record.valid {
            continue;
        }
        let Some(personas) = &record.personas else { continue };
        by_user.entry(record.user_id.clone()).or_default().push((
            record.candidate_index,
            PersonaSet {
                personas: personas.clone(),
                source_candidate_index: record.candidate_index,
            },
        ));
    }
    for pool in by_user.values_mut() {
        pool.sort_by_key(|(index, _)| *index);
    }
    by_user
}

/// Loads the embedding table, fetching any missing memory texts through the
/// live embedding client; persists the augmented table.
fn memory_table(
    cfg: &PipelineConfig,
    path: &Path,
    windows: &[Window],
    cassette: Option<Arc<Cassette>>,
) -> Result<EmbeddingTable, StageError> {
    let mut table = if path.exists() { Some(load_embeddings(path)?) } else { None };
    let mut missing: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for window in windows {
        for memory in &window.memories {
            let text = memory_text(memory);
            let absent = table.as_ref().map_or(true, |t| t.get(&text).is_none());
            if absent && seen.insert(text.clone()) {
                missing.push(text);
            }
        }
    }
    if !missing.is_empty() {
        if cfg.embeddings.endpoint.is_empty() && cassette.is_none() {
            return Err(StageError::Usage(format!(
                "{} memory texts are missing from {} and no embedding endpoint or cassette is \
                 configured",
                missing.len(),
                path.display()
            )));
        }
        let cache_dir =
            (!cfg.embeddings.cache_dir.is_empty()).then(|| PathBuf::from(&cfg.embeddings.cache_dir));
        let client = HttpEmbedder::new(
            &cfg.embeddings.endpoint,
            &cfg.embeddings.model,
            cfg.chat.max_retries,
            cfg.chat.timeout_secs,
            cache_dir.as_deref(),
            cassette,
        )?;
        let vectors = client.embed(&missing)?;
        let fetched = EmbeddingTable::from_records(missing.into_iter().zip(vectors))?;
        match &mut table {
            Some(t) => t.absorb(fetched)?,
            None => table = Some(fetched),
        }
        save_embeddings(path, table.as_ref().expect("just filled"))?;
    }
    table.ok_or_else(|| {
        StageError::Usage(format!("no embeddings available at {}", path.display()))
    })
}

fn cmd_score(cfg: &PipelineConfig, args: &ScoreArgs) -> Result<(), StageError> {
    let memories_path = args.memories.clone().unwrap_or_else(|| cfg.data_path("memories.jsonl"));
    let candidates_path =
        args.candidates.clone().unwrap_or_else(|| cfg.data_path("candidates.jsonl"));
    let embeddings_path =
        args.embeddings.clone().unwrap_or_else(|| cfg.data_path("embeddings.jsonl"));
    let out_path = args.out.clone().unwrap_or_else(|| cfg.data_path("scores.jsonl"));

    let windows = windows_by_user(&memories_path)?;
    let candidates: Vec<CandidateRecord> = read_jsonl(&candidates_path)?;
    let pools = valid_sets_by_user(&candidates);
    let cassette = args.tape.open()?;
    let table = memory_table(cfg, &embeddings_path, &windows, cassette.clone())?;

    let judge: Box<dyn Judge> = match args.judge.as_str() {
        "live" => Box::new(
            LiveJudge::from_config(&cfg.judges, cassette).map_err(StageError::from)?,
        ),
        _ => Box::new(mock_judge(cfg.gdpo.seed)),
    };

    let results = run_indexed(&windows, cfg.workers, |_, window| {
        let mut scores = Vec::new();
        let Some(pool) = pools.get(&window.user_id) else {
            return Ok(scores);
        };
        for (index, set) in pool {
            let judged = judge_candidate(set, window, judge.as_ref()).map_err(StageError::from)?;
            let scored = score_candidate(set, window, &table, &judged, &cfg.reward)
                .map_err(|e| StageError::Data(format!("user {}: {e}", window.user_id)))?;
            scores.push(ScoreRecord {
                user_id: window.user_id.clone(),
                candidate_index: *index,
                scalar_reward: scored.scalar_reward,
                coverage_raw: scored.coverage_raw,
                coverage_soft: scored.coverage_soft,
                per_persona: scored
                    .per_persona
                    .iter()
                    .map(|p| PersonaScoreRecord {
                        persona_id: p.persona.persona_id.clone(),
                        cohesion: p.quality.coh,
                        size: p.quality.size,
                        align: p.quality.align,
                        truth: p.quality.truth,
                        reward: p.reward,
                    })
                    .collect(),
            });
        }
        Ok(scores)
    });
    let records: Vec<ScoreRecord> = sequence(results)?.into_iter().flatten().collect();
    write_jsonl(&out_path, &records)?;
    eprintln!("score: {} candidates scored across {} windows", records.len(), windows.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// gdpo-train
// ---------------------------------------------------------------------------

fn cmd_gdpo_train(cfg: &PipelineConfig, args: &GdpoTrainArgs) -> Result<(), StageError> {
    let scores_path = args.scores.clone().unwrap_or_else(|| cfg.data_path("scores.jsonl"));
    let candidates_path =
        args.candidates.clone().unwrap_or_else(|| cfg.data_path("candidates.jsonl"));
    let policy_path = args.out_policy.clone().unwrap_or_else(|| cfg.data_path("policy.json"));
    let trace_path = args.out_trace.clone().unwrap_or_else(|| cfg.data_path("trace.jsonl"));
    let chosen_path = args.out_chosen.clone().unwrap_or_else(|| cfg.data_path("chosen.jsonl"));

    let scores: Vec<ScoreRecord> = read_jsonl(&scores_path)?;
    if scores.is_empty() {
        return Err(StageError::Data("no score records to train on".to_owned()));
    }

    // Window order = first appearance in the score file; candidate order =
    // ascending candidate_index within a window.
    let mut user_order: Vec<String> = Vec::new();
    let mut per_user: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for record in &scores {
        if !per_user.contains_key(&record.user_id) {
            user_order.push(record.user_id.clone());
        }
        per_user
            .entry(record.user_id.clone())
            .or_default()
            .push((record.candidate_index, record.scalar_reward));
    }
    let mut pool_rewards: Vec<Vec<f64>> = Vec::with_capacity(user_order.len());
    let mut pool_indices: Vec<Vec<usize>> = Vec::with_capacity(user_order.len());
    for user in &user_order {
        let mut pool = per_user.remove(user).expect("listed user");
        pool.sort_by_key(|(index, _)| *index);
        pool_indices.push(pool.iter().map(|(index, _)| *index).collect());
        pool_rewards.push(pool.into_iter().map(|(_, reward)| reward).collect());
    }

    let outcome = toy_train(&pool_rewards, &toy_train_config(cfg))
        .map_err(|e| StageError::Data(e.to_string()))?;

    // The argmax persona set per trainable window, resolved back through the
    // candidate file.
    let candidates: Vec<CandidateRecord> = read_jsonl(&candidates_path)?;
    let mut persona_lookup: BTreeMap<(String, usize), Vec<Persona>> = BTreeMap::new();
    for record in &candidates {
        if let Some(personas) = &record.personas {
            persona_lookup
                .insert((record.user_id.clone(), record.candidate_index), personas.clone());
        }
    }
    let mut chosen = Vec::new();
    for (w, user) in user_order.iter().enumerate() {
        if outcome.skipped_windows.contains(&w) {
            continue;
        }
        let probs = outcome.policy.probs(w);
        let best = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
            .map(|(i, _)| i)
            .expect("nonempty pool");
        let candidate_index = pool_indices[w][best];
        let personas = persona_lookup
            .get(&(user.clone(), candidate_index))
            .cloned()
            .ok_or_else(|| {
                StageError::Data(format!(
                    "score record for user {user} candidate {candidate_index} has no matching \
                     candidate record"
                ))
            })?;
        chosen.push(PersonaSetRecord { user_id: user.clone(), candidate_index, personas });
    }

    #[derive(Serialize)]
    struct PolicyArtifact<'a> {
        users: &'a [String],
        pool_candidate_indices: &'a [Vec<usize>],
        policy: &'a persona_core::gdpo::ToyPolicy,
        checkpoints: &'a [persona_core::gdpo::Checkpoint],
        skipped_windows: &'a [usize],
    }
    write_json(
        &policy_path,
        &PolicyArtifact {
            users: &user_order,
            pool_candidate_indices: &pool_indices,
            policy: &outcome.policy,
            checkpoints: &outcome.checkpoints,
            skipped_windows: &outcome.skipped_windows,
        },
    )?;
    write_jsonl(&trace_path, &outcome.trace)?;
    write_jsonl(&chosen_path, &chosen)?;
    eprintln!(
        "gdpo-train: {} windows ({} skipped), {} steps → {} chosen persona sets",
        user_order.len(),
        outcome.skipped_windows.len(),
        cfg.gdpo.steps,
        chosen.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// cluster-baseline
// ---------------------------------------------------------------------------

/// One user cluster with its selections and sampled negative clusters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub user_id: String,
    pub cluster_index: usize,
    pub member_ids: Vec<u32>,
    pub representative_ids: Vec<u32>,
    pub centroid: Vec<f64>,
    /// `(user_id, cluster_index)` of sampled negative clusters from other
    /// users.
    pub negatives: Vec<(String, usize)>,
}

/// A rendered one-persona labeling prompt for a cluster's representatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelingRequest {
    pub user_id: String,
    pub cluster_index: usize,
    pub prompt: String,
}

fn cmd_cluster_baseline(cfg: &PipelineConfig, args: &ClusterBaselineArgs) -> Result<(), StageError> {
    let memories_path = args.memories.clone().unwrap_or_else(|| cfg.data_path("memories.jsonl"));
    let embeddings_path =
        args.embeddings.clone().unwrap_or_else(|| cfg.data_path("embeddings.jsonl"));
    let out_path = args.out.clone().unwrap_or_else(|| cfg.data_path("clusters.jsonl"));
    let requests_path =
        args.requests_out.clone().unwrap_or_else(|| cfg.data_path("labeling_requests.jsonl"));

    let windows = windows_by_user(&memories_path)?;
    let table = load_embeddings(&embeddings_path)?;
    let selection = SelectionConfig::default();

    struct UserClusters {
        user_id: String,
        clusters: Vec<BTreeSet<u32>>,
        centroids: Vec<Vec<f64>>,
        representatives: Vec<Vec<u32>>,
    }
    let clustered = run_indexed(&windows, cfg.workers, |_, window| {
        let items: Vec<(u32, String)> =
            window.memories.iter().map(|m| (m.id, memory_text(m))).collect();
        let points = PointSet::from_table(&table, &items)
            .map_err(|e| StageError::Data(format!("user {}: {e}", window.user_id)))?;
        let set = ward_hac(&points, args.tau)
            .map_err(|e| StageError::Data(format!("user {}: {e}", window.user_id)))?;
        let budget = args.budget.unwrap_or(window.memories.len());
        let representatives = set
            .clusters
            .iter()
            .map(|cluster| select_representatives(cluster, &points, &selection, budget))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| StageError::Data(format!("user {}: {e}", window.user_id)))?;
        Ok(UserClusters {
            user_id: window.user_id.clone(),
            clusters: set.clusters,
            centroids: set.centroids,
            representatives,
        })
    });
    let clustered = sequence(clustered)?;

    // Candidate negatives for a cluster come from OTHER users' clusters.
    let mut records = Vec::new();
    let mut requests = Vec::new();
    for (u, user) in clustered.iter().enumerate() {
        let mut other_refs: Vec<(String, usize)> = Vec::new();
        let mut other_centroids: Vec<Vec<f64>> = Vec::new();
        for (v, other) in clustered.iter().enumerate() {
            if v == u {
                continue;
            }
            for (c, centroid) in other.centroids.iter().enumerate() {
                other_refs.push((other.user_id.clone(), c));
                other_centroids.push(centroid.clone());
            }
        }
        let window = &windows[u];
        for (c, cluster) in user.clusters.iter().enumerate() {
            let seed = derive_seed(cfg.gdpo.seed, &format!("negatives/{}/{c}", user.user_id));
            let picks = sample_negatives(
                &user.centroids[c],
                &other_centroids,
                NEGATIVE_BAND,
                NEGATIVE_SAMPLE_CAP,
                seed,
            );
            records.push(ClusterRecord {
                user_id: user.user_id.clone(),
                cluster_index: c,
                member_ids: cluster.iter().copied().collect(),
                representative_ids: user.representatives[c].clone(),
                centroid: user.centroids[c].clone(),
                negatives: picks.into_iter().map(|i| other_refs[i].clone()).collect(),
            });

            let mut block = String::new();
            for id in &user.representatives[c] {
                let memory = window.memory(*id).expect("representative from this window");
                block.push_str(&format!("{}. {}: {}\n", memory.id, memory.label, memory.description));
            }
            let prompt = prompts::render(prompts::INDUCE_SINGLE, &[("memories", &block)])
                .map_err(|e| StageError::Usage(e.to_string()))?;
            requests.push(LabelingRequest {
                user_id: user.user_id.clone(),
                cluster_index: c,
                prompt,
            });
        }
    }
    write_jsonl(&out_path, &records)?;
    write_jsonl(&requests_path, &requests)?;
    eprintln!(
        "cluster-baseline: {} users → {} clusters (τ = {})",
        clustered.len(),
        records.len(),
        args.tau
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(cfg: &PipelineConfig, args: &EvalArgs) -> Result<(), StageError> {
    let personas_path = args.personas.clone().unwrap_or_else(|| cfg.data_path("chosen.jsonl"));
    let pool_path = args.pool.clone().unwrap_or_else(|| cfg.data_path("pool.jsonl"));
    let truth_path = args.truth.clone().unwrap_or_else(|| cfg.data_path("truth.jsonl"));
    let out_path = args.out.clone().unwrap_or_else(|| cfg.data_path("metrics.json"));

    let persona_sets: Vec<PersonaSetRecord> = read_jsonl(&personas_path)?;
    let items: Vec<PoolItem> = read_jsonl(&pool_path)?;
    let pool = ItemPool::new(items).map_err(|e| StageError::Data(e.to_string()))?;
    let truth_records: Vec<TruthRecord> = read_jsonl(&truth_path)?;
    let truth: BTreeMap<String, BTreeSet<u32>> = truth_records
        .into_iter()
        .map(|r| (r.user_id, r.item_ids.into_iter().collect()))
        .collect();

    let mut users = Vec::new();
    for record in &persona_sets {
        users.push(EvalUser {
            user_id: record.user_id.clone(),
            persona_texts: record.personas.iter().map(persona_text).collect(),
            truth: truth.get(&record.user_id).cloned().unwrap_or_default(),
        });
    }

    let mode = match args.mode.as_str() {
        "fractional" => HitMode::Fractional,
        _ => HitMode::Binary,
    };

    // Embedder precedence: synthetic reconstruction, then live service,
    // then the stored table.
    let embedder: Box<dyn EmbeddingClient> = if let Some(spec_path) = &args.synth_spec {
        let spec: SyntheticSpec = read_json(spec_path)?;
        Box::new(SynthEmbedder::new(&spec.vocabularies, spec.seed))
    } else if !cfg.embeddings.endpoint.is_empty() || args.tape.cassette.is_some() {
        let cache_dir =
            (!cfg.embeddings.cache_dir.is_empty()).then(|| PathBuf::from(&cfg.embeddings.cache_dir));
        Box::new(HttpEmbedder::new(
            &cfg.embeddings.endpoint,
            &cfg.embeddings.model,
            cfg.chat.max_retries,
            cfg.chat.timeout_secs,
            cache_dir.as_deref(),
            args.tape.open()?,
        )?)
    } else {
        let embeddings_path =
            args.embeddings.clone().unwrap_or_else(|| cfg.data_path("embeddings.jsonl"));
        Box::new(TableEmbedder::new(load_embeddings(&embeddings_path)?))
    };

    let result = evaluate(&users, &pool, &args.ks, mode, embedder.as_ref())
        .map_err(|e| StageError::Data(e.to_string()))?;
    write_json(&out_path, &result)?;
    for summary in &result.dataset_mean {
        eprintln!(
            "eval: k={:<4} hit={:.4} map={:.4}",
            summary.k, summary.hit, summary.map
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Mean per-user unit counts at each compression level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub users: usize,
    pub mean_logs: f64,
    pub mean_memories: f64,
    pub mean_personas: f64,
}

/// Counts units per user at every level and averages them. All three files
/// must cover exactly the same users.
pub fn compression_report(
    logs: &[LogRecord],
    memories: &[MemoryRecord],
    persona_sets: &[PersonaSetRecord],
) -> Result<CompressionReport, String> {
    let mut log_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in logs {
        *log_counts.entry(record.user_id.as_str()).or_default() += 1;
    }
    let mut memory_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in memories {
        *memory_counts.entry(record.user_id.as_str()).or_default() += 1;
    }
    let mut persona_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in persona_sets {
        *persona_counts.entry(record.user_id.as_str()).or_default() += record.personas.len();
    }
    if persona_counts.values().sum::<usize>() == 0 {
        return Err("persona level is empty".to_owned());
    }
    let users: BTreeSet<&str> = log_counts.keys().copied().collect();
    for (name, counts) in
        [("memory", &memory_counts), ("persona", &persona_counts)]
    {
        let level: BTreeSet<&str> = counts.keys().copied().collect();
        if level != users {
            let missing: Vec<&&str> = users.symmetric_difference(&level).collect();
            return Err(format!(
                "user ids disagree between the log and {name} levels (first few: {:?})",
                missing.into_iter().take(4).collect::<Vec<_>>()
            ));
        }
    }
    let mean = |counts: &BTreeMap<&str, usize>| {
        counts.values().map(|&n| n as f64).sum::<f64>() / counts.len() as f64
    };
    Ok(CompressionReport {
        users: users.len(),
        mean_logs: mean(&log_counts),
        mean_memories: mean(&memory_counts),
        mean_personas: mean(&persona_counts),
    })
}

fn cmd_report(cfg: &PipelineConfig, args: &ReportArgs) -> Result<(), StageError> {
    let logs_path = args.logs.clone().unwrap_or_else(|| cfg.data_path("logs.jsonl"));
    let memories_path = args.memories.clone().unwrap_or_else(|| cfg.data_path("memories.jsonl"));
    let personas_path = args.personas.clone().unwrap_or_else(|| cfg.data_path("chosen.jsonl"));
    let out_path = args.out.clone().unwrap_or_else(|| cfg.data_path("compression_report.json"));

    let logs: Vec<LogRecord> = read_jsonl(&logs_path)?;
    let memories: Vec<MemoryRecord> = read_jsonl(&memories_path)?;
    let persona_sets: Vec<PersonaSetRecord> = read_jsonl(&personas_path)?;
    let report = compression_report(&logs, &memories, &persona_sets).map_err(StageError::Data)?;
    write_json(&out_path, &report)?;
    println!(
        "users={} logs={} memories={} personas={}",
        report.users, report.mean_logs, report.mean_memories, report.mean_personas
    );
    Ok(())
}
