//! Task loading, the run manifest, and the end-to-end run with its on-disk
//! artifacts.
//!
//! Run directory layout:
//!
//! ```text
//! manifest.json            config, task set, providers, start time, environment
//! tasks.json               snapshot of the loaded tasks
//! transcript.jsonl         every answered provider call, replayable
//! report.json              one RoundReport per round
//! report.csv               one row per task per round
//! summary.json             final metrics, token totals, end time
//! rounds/round_NNN/        stats.json, best_elapsed.json, transcripts/<task>.jsonl
//! pools/<task>/            NNNN.py + NNNN.json per candidate
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{info, warn};

use crate::executor::build_harness;
use crate::metrics::{write_csv, RoundReport, TaskRow};
use crate::model::{BenchmarkKind, CandidateId, ConfigError, PoolError, RunConfig, Task};
use crate::refinement::{Engine, ProviderCall, RoundOutput, TaskState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Error, PartialEq)]
#[error("{file}: {location}field `{field}`: {reason}")]
pub struct SchemaError {
    pub file: String,
    /// `entry N: ` when the error belongs to one task entry.
    pub location: String,
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("run directory: {0}")]
    Io(#[from] io::Error),
    #[error("pool persistence: {0}")]
    Pool(#[from] PoolError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Schema(_) => EXIT_CONFIG,
            Self::ProviderUnavailable(_) => EXIT_PROVIDER,
            Self::Io(_) | Self::Pool(_) | Self::Json(_) | Self::Csv(_) => EXIT_FAILURE,
        }
    }
}

const REQUIRED_STRINGS: [&str; 3] = ["task_id", "description", "entry_point"];

/// Loads a JSON array of tasks, or JSON Lines when the file ends in `.jsonl`.
///
/// `kind` fills entries that omit `benchmark_kind`; an entry naming a
/// different kind is a schema error.
pub fn load_tasks(path: &Path, kind: Option<BenchmarkKind>) -> Result<Vec<Task>, SchemaError> {
    let file = path.display().to_string();
    let err = |location: String, field: &str, reason: String| SchemaError {
        file: file.clone(),
        location,
        field: field.to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| err(String::new(), "<file>", e.to_string()))?;
    let entries: Vec<serde_json::Value> = if path.extension().is_some_and(|e| e == "jsonl") {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: ", n + 1), "<json>", e.to_string())))
            .collect::<Result<_, _>>()?
    } else {
        serde_json::from_str(&text).map_err(|e| err(String::new(), "<json>", e.to_string()))?
    };

    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(entries.len());
    for (i, mut entry) in entries.into_iter().enumerate() {
        let at = format!("entry {i}: ");
        let obj = entry.as_object_mut().ok_or_else(|| err(at.clone(), "<entry>", "expected an object".into()))?;
        for field in REQUIRED_STRINGS {
            match obj.get(field) {
                Some(serde_json::Value::String(_)) => {}
                Some(_) => return Err(err(at, field, "expected a string".into())),
                None => return Err(err(at, field, "missing".into())),
            }
        }
        match (obj.get("benchmark_kind"), kind) {
            (None, Some(k)) => {
                obj.insert("benchmark_kind".into(), serde_json::to_value(k).expect("enum serializes"));
            }
            (None, None) => return Err(err(at, "benchmark_kind", "missing and no --benchmark given".into())),
            (Some(v), Some(k)) if *v != serde_json::to_value(k).expect("enum serializes") => {
                return Err(err(at, "benchmark_kind", format!("{v} conflicts with requested {k:?}")));
            }
            _ => {}
        }
        let task: Task = serde_json::from_value(entry).map_err(|e| err(at.clone(), "<entry>", e.to_string()))?;
        task.validate().map_err(|e| err(at.clone(), "task", e.to_string()))?;
        build_harness(&task).map_err(|e| err(at.clone(), "harness", e.to_string()))?;
        if !seen.insert(task.task_id.clone()) {
            return Err(err(at, "task_id", format!("duplicate id `{}`", task.task_id)));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

/// Source of wall-clock timestamps for run metadata.
pub trait Clock: Send + Sync {
    /// RFC 3339, UTC.
    fn now(&self) -> String;
}

/// Real time, or `SOURCE_DATE_EPOCH` when it is set.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        let fixed = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse::<i64>().ok());
        match fixed.and_then(|s| chrono::DateTime::from_timestamp(s, 0)) {
            Some(t) => t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            None => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

/// Always returns the same timestamp.
#[derive(Debug, Clone)]
pub struct FixedClock(pub String);

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvFingerprint {
    pub os: String,
    pub arch: String,
    pub engine_version: String,
    /// `python3 --version`, when a real interpreter is in use.
    pub python: Option<String>,
}

impl EnvFingerprint {
    pub fn current(python: Option<String>) -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            python,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSetId {
    pub name: String,
    /// SHA-256 of the canonical JSON of the loaded tasks.
    pub sha256: String,
    pub count: usize,
}

impl TaskSetId {
    pub fn of(name: impl Into<String>, tasks: &[Task]) -> Self {
        let json = serde_json::to_vec(tasks).expect("tasks serialize");
        Self { name: name.into(), sha256: hex::encode(Sha256::digest(&json)), count: tasks.len() }
    }
}

/// Written once before round 0; never rewritten during the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub task_set: TaskSetId,
    pub provider_id: String,
    pub embedding_provider_id: String,
    pub executor_id: String,
    pub profiler_id: String,
    pub started_at: String,
    pub environment: EnvFingerprint,
}

impl RunManifest {
    pub fn new(engine: &Engine, task_set: TaskSetId, clock: &dyn Clock, environment: EnvFingerprint) -> Self {
        Self {
            config: engine.cfg.clone(),
            task_set,
            provider_id: engine.provider.id().to_string(),
            embedding_provider_id: engine.embedder.provider_id().to_string(),
            executor_id: engine.executor.backend_id().to_string(),
            profiler_id: engine.profiler.id().to_string(),
            started_at: clock.now(),
            environment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestElapsed {
    pub task_id: String,
    pub candidate_id: Option<CandidateId>,
    pub mean_elapsed_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub finished_at: String,
    pub rounds_completed: u32,
    pub final_pass_at_1: f64,
    pub final_mean_timing_s: Option<f64>,
    pub final_dps: Option<f64>,
    pub final_dps_norm: Option<f64>,
    pub final_beyond: Option<f64>,
    pub provider_calls: usize,
    pub provider_errors: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub task_errors: usize,
}

/// Path-safe directory name for a task id; collisions get an index suffix.
fn task_dir_names(tasks: &[Task]) -> Vec<String> {
    let mut used = HashSet::new();
    tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut name: String = t
                .task_id
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
                .collect();
            if name.is_empty() || name.starts_with('.') || !used.insert(name.clone()) {
                name = format!("{name}-{i}");
                used.insert(name.clone());
            }
            name
        })
        .collect()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

const MANAGED: [&str; 8] =
    ["manifest.json", "tasks.json", "transcript.jsonl", "report.json", "report.csv", "summary.json", "rounds", "pools"];

/// Creates `out`, or clears the artifacts of an earlier run in it. Refuses
/// non-empty directories that are not run directories.
fn prepare_run_dir(out: &Path) -> Result<(), PipelineError> {
    if out.exists() {
        let non_empty = fs::read_dir(out)?.next().is_some();
        if non_empty && !out.join("manifest.json").is_file() {
            return Err(ConfigError(format!("{} exists and is not a run directory", out.display())).into());
        }
        for name in MANAGED {
            let p = out.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            } else if p.exists() {
                fs::remove_file(&p)?;
            }
        }
    }
    fs::create_dir_all(out.join("rounds"))?;
    fs::create_dir_all(out.join("pools"))?;
    Ok(())
}

struct RunWriter<'a> {
    out: &'a Path,
    dirs: Vec<String>,
    reports: Vec<RoundReport>,
    calls: usize,
    call_errors: usize,
    task_errors: usize,
    prompt_tokens: u64,
    completion_tokens: u64,
    transcript: io::BufWriter<fs::File>,
}

impl RunWriter<'_> {
    fn round_dir(&self, round: u32) -> PathBuf {
        self.out.join("rounds").join(format!("round_{round:03}"))
    }

    /// Persists one round and returns its report.
    fn record(&mut self, states: &[TaskState], output: &RoundOutput) -> Result<(), PipelineError> {
        let dir = self.round_dir(output.round);
        fs::create_dir_all(dir.join("transcripts"))?;
        let mut rows = Vec::with_capacity(states.len());
        for ((state, stats), name) in states.iter().zip(&output.tasks).zip(&self.dirs) {
            let calls: Vec<&ProviderCall> = output.calls.iter().filter(|c| c.task_id == state.task.task_id).collect();
            write_jsonl(&dir.join("transcripts").join(format!("{name}.jsonl")), calls.iter())?;
            let tokens = calls.iter().fold((0, 0), |(p, c), call| (p + call.prompt_tokens, c + call.completion_tokens));
            let shape = stats.selection.as_ref().map(|s| s.shape.as_str().to_string());
            let refs = state.task.reference_runtimes.as_deref();
            let row = TaskRow::from_pool(output.round, &state.pool, refs, shape.clone(), tokens).or_else(|e| {
                warn!(task = %state.task.task_id, "reference runtimes unusable: {e}");
                TaskRow::from_pool(output.round, &state.pool, None, shape, tokens)
            });
            rows.push(row.expect("scoring without references cannot fail"));
            self.task_errors += stats.errors.len();
            state.pool.save_dir(&self.out.join("pools").join(name))?;
        }
        for call in &output.calls {
            self.calls += 1;
            self.call_errors += usize::from(call.response.is_none());
            if let Some(rec) = call.transcript_record() {
                serde_json::to_writer(&mut self.transcript, &rec)?;
                self.transcript.write_all(b"\n")?;
            }
        }
        self.prompt_tokens += output.prompt_tokens();
        self.completion_tokens += output.completion_tokens();

        let report = RoundReport::from_rows(output.round, rows);
        let best: Vec<BestElapsed> = report
            .tasks
            .iter()
            .map(|r| BestElapsed { task_id: r.task_id.clone(), candidate_id: r.final_id, mean_elapsed_s: r.mean_elapsed_s })
            .collect();
        write_json(&dir.join("best_elapsed.json"), &best)?;
        write_json(
            &dir.join("stats.json"),
            &serde_json::json!({
                "round": output.round,
                "pass_at_1": report.pass_at_1,
                "mean_timing_s": report.mean_timing_s,
                "prompt_tokens": output.prompt_tokens(),
                "completion_tokens": output.completion_tokens(),
                "provider_calls": output.calls.len(),
                "tasks": output.tasks,
            }),
        )?;
        info!(round = output.round, pass_at_1 = report.pass_at_1, mean_timing_s = ?report.mean_timing_s, "round complete");
        self.reports.push(report);
        Ok(())
    }
}

/// Runs the generation pass and every refinement round, writing artifacts
/// under `out`. Per-task failures are recorded, never fatal.
pub fn run_pipeline(
    manifest: &RunManifest,
    tasks: Vec<Task>,
    engine: &Engine,
    out: &Path,
    clock: &dyn Clock,
) -> Result<RunSummary, PipelineError> {
    engine.cfg.validate()?;
    if tasks.is_empty() {
        return Err(ConfigError("task set is empty".into()).into());
    }
    prepare_run_dir(out)?;
    write_json(&out.join("manifest.json"), manifest)?;
    write_json(&out.join("tasks.json"), &tasks)?;

    let mut writer = RunWriter {
        out,
        dirs: task_dir_names(&tasks),
        reports: Vec::new(),
        calls: 0,
        call_errors: 0,
        task_errors: 0,
        prompt_tokens: 0,
        completion_tokens: 0,
        transcript: io::BufWriter::new(fs::File::create(out.join("transcript.jsonl"))?),
    };
    let mut states: Vec<TaskState> = tasks.into_iter().enumerate().map(|(i, t)| TaskState::new(i, t)).collect();

    info!(tasks = states.len(), mode = engine.cfg.mode.as_str(), "generation pass");
    let gen = engine.generation_pass(&mut states);
    if !gen.calls.is_empty() && gen.calls.iter().all(|c| c.response.is_none()) {
        let first = gen.calls[0].error.clone().unwrap_or_default();
        return Err(PipelineError::ProviderUnavailable(format!("every generation call failed; first error: {first}")));
    }
    writer.record(&states, &gen)?;

    let rounds = engine.cfg.effective_rounds();
    for round in 1..=rounds {
        info!(round, "refinement round");
        let output = engine.run_round(&mut states, round);
        writer.record(&states, &output)?;
    }
    writer.transcript.flush()?;

    write_json(&out.join("report.json"), &writer.reports)?;
    write_csv(fs::File::create(out.join("report.csv"))?, &writer.reports)?;
    let last = writer.reports.last().expect("generation pass reported");
    let summary = RunSummary {
        finished_at: clock.now(),
        rounds_completed: rounds,
        final_pass_at_1: last.pass_at_1,
        final_mean_timing_s: last.mean_timing_s,
        final_dps: last.dps,
        final_dps_norm: last.dps_norm,
        final_beyond: last.beyond,
        provider_calls: writer.calls,
        provider_errors: writer.call_errors,
        prompt_tokens: writer.prompt_tokens,
        completion_tokens: writer.completion_tokens,
        task_errors: writer.task_errors,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// SHA-256 over every file under `dir`, keyed by relative path, for
/// comparing run directories.
pub fn hash_tree(dir: &Path) -> io::Result<Vec<(String, String)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
                out.push((rel, hex::encode(Sha256::digest(fs::read(&path)?))));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}
