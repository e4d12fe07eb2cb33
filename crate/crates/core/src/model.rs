//! Tasks, candidates, and the per-task candidate pool.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ElapsedStats, FailureKind, FailureSignal};
use crate::profiler::ProfileSummary;
use crate::similarity::{ast_features, AstFeatureVector, EmbeddingVector, SimilarityConfig};

pub type CandidateId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    Evalperf,
    Mercury,
    Enamel,
    Custom,
}

impl FromStr for BenchmarkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "evalperf" => Ok(Self::Evalperf),
            "mercury" => Ok(Self::Mercury),
            "enamel" => Ok(Self::Enamel),
            "custom" => Ok(Self::Custom),
            other => Err(format!("unknown benchmark kind `{other}`")),
        }
    }
}

/// One reference solution's runtime and its weight in the DPS distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRuntime {
    pub runtime_s: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

/// A single input/expected-output check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub args: Vec<serde_json::Value>,
    pub expected: serde_json::Value,
}

/// Benchmark-specific correctness check description.
///
/// `cases` are fixed input/expected pairs. `generator` is optional code
/// defining `generate_cases(rng)` that returns extra `(args, expected)`
/// pairs from a fixed-seed RNG. `check` is code defining `check(candidate)`
/// and is required for custom tasks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarnessSpec {
    #[serde(default)]
    pub cases: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub float_tolerance: Option<f64>,
}

impl HarnessSpec {
    pub fn is_empty(&self) -> bool {
        self.cases.is_empty() && self.generator.is_none() && self.check.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub description: String,
    pub entry_point: String,
    #[serde(default)]
    pub harness: HarnessSpec,
    pub benchmark_kind: BenchmarkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_runtimes: Option<Vec<ReferenceRuntime>>,
    /// Code stub shown in generation prompts (Mercury class stub, ENAMEL signature).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub: Option<String>,
    /// Language name used in prompt templates.
    #[serde(default = "default_language")]
    pub language: String,
}

fn default_language() -> String {
    "Python".to_string()
}

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("task_id must be non-empty")]
    EmptyTaskId,
    #[error("task `{0}`: entry_point must be non-empty")]
    EmptyEntryPoint(String),
    #[error("task `{task}`: reference runtime #{index} must have positive runtime and weight")]
    BadReference { task: String, index: usize },
}

impl Task {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.task_id.trim().is_empty() {
            return Err(TaskError::EmptyTaskId);
        }
        if self.entry_point.trim().is_empty() {
            return Err(TaskError::EmptyEntryPoint(self.task_id.clone()));
        }
        if let Some(refs) = &self.reference_runtimes {
            for (index, r) in refs.iter().enumerate() {
                if !(r.weight > 0.0 && r.runtime_s > 0.0) || !r.weight.is_finite() {
                    return Err(TaskError::BadReference { task: self.task_id.clone(), index });
                }
            }
        }
        Ok(())
    }
}

/// The (input, expected, actual) triple of a failed check, as printable reprs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub input: String,
    pub expected: String,
    pub actual: String,
}

/// Outcome of one correctness check. A passed check never carries a mismatch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub index: usize,
    passed: bool,
    mismatch: Option<Mismatch>,
}

impl TestOutcome {
    pub fn pass(index: usize) -> Self {
        Self { index, passed: true, mismatch: None }
    }

    pub fn fail(index: usize, mismatch: Option<Mismatch>) -> Self {
        Self { index, passed: false, mismatch }
    }

    pub fn passed(&self) -> bool {
        self.passed
    }

    pub fn mismatch(&self) -> Option<&Mismatch> {
        self.mismatch.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correctness {
    #[default]
    Unknown,
    Correct,
    Incorrect,
    /// Source could not be parsed; never executed or paired.
    Error,
}

impl Correctness {
    /// Verdict over a full set of check outcomes.
    pub fn from_outcomes(outcomes: &[TestOutcome]) -> Self {
        if outcomes.iter().all(TestOutcome::passed) {
            Self::Correct
        } else {
            Self::Incorrect
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Generation,
    RefinementPaired,
    RefinementSolo,
}

/// One generated or refined program and everything measured about it.
///
/// The id and source are fixed once the candidate enters a pool; the
/// measurement fields are filled in through [`CandidatePool::update`].
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    id: CandidateId,
    source: Arc<str>,
    pub round_created: u32,
    pub origin: Origin,
    pub parent_ids: Vec<CandidateId>,
    pub correctness: Correctness,
    pub elapsed: Option<ElapsedStats>,
    pub profile: Option<ProfileSummary>,
    pub failure: Option<FailureSignal>,
    pub ast_vector: Option<AstFeatureVector>,
    pub embedding: Option<EmbeddingVector>,
}

impl Candidate {
    pub fn new(
        source: impl Into<Arc<str>>,
        round_created: u32,
        origin: Origin,
        parent_ids: Vec<CandidateId>,
    ) -> Self {
        Self {
            id: 0,
            source: source.into(),
            round_created,
            origin,
            parent_ids,
            correctness: Correctness::Unknown,
            elapsed: None,
            profile: None,
            failure: None,
            ast_vector: None,
            embedding: None,
        }
    }

    pub fn id(&self) -> CandidateId {
        self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn source_arc(&self) -> Arc<str> {
        Arc::clone(&self.source)
    }

    /// Mean elapsed over successful runs, if any run succeeded.
    pub fn mean_elapsed(&self) -> Option<f64> {
        self.elapsed.as_ref().and_then(|e| e.mean_s)
    }

    pub fn is_correct(&self) -> bool {
        self.correctness == Correctness::Correct
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertResult {
    Inserted(CandidateId),
    RejectedDuplicate { existing: CandidateId },
}

impl InsertResult {
    pub fn inserted_id(self) -> Option<CandidateId> {
        match self {
            Self::Inserted(id) => Some(id),
            Self::RejectedDuplicate { .. } => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("candidate ids must be strictly increasing (found {found} after {previous})")]
    NonMonotonicIds { previous: CandidateId, found: CandidateId },
    #[error("pool persistence: {0}")]
    Io(#[from] std::io::Error),
    #[error("pool metadata: {0}")]
    Json(#[from] serde_json::Error),
}

/// Persistent per-task candidate set. Entries are never removed.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    task_id: String,
    entries: Vec<Candidate>,
    best_correct_id: Option<CandidateId>,
    next_id: CandidateId,
}

impl CandidatePool {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self { task_id: task_id.into(), entries: Vec::new(), best_correct_id: None, next_id: 0 }
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: CandidateId) -> Option<&Candidate> {
        self.entries.binary_search_by_key(&id, Candidate::id).ok().map(|i| &self.entries[i])
    }

    pub fn best_correct_id(&self) -> Option<CandidateId> {
        self.best_correct_id
    }

    /// Inserts a candidate unless an existing entry is an AST duplicate.
    ///
    /// Missing AST features are computed here. Sources that fail to parse
    /// are kept with `Correctness::Error` and bypass deduplication.
    pub fn insert(&mut self, mut candidate: Candidate) -> InsertResult {
        if candidate.ast_vector.is_none() {
            match ast_features(candidate.source()) {
                Ok(v) => candidate.ast_vector = Some(v),
                Err(err) => {
                    candidate.correctness = Correctness::Error;
                    candidate.failure = Some(FailureSignal::new(
                        FailureKind::Exception,
                        None,
                        Some("SyntaxError".to_string()),
                        &err.to_string(),
                    ));
                }
            }
        }
        if let Some(features) = &candidate.ast_vector {
            let duplicate = self.entries.iter().find(|existing| {
                existing.ast_vector.as_ref().is_some_and(|other| features.is_duplicate_of(other))
            });
            if let Some(existing) = duplicate {
                return InsertResult::RejectedDuplicate { existing: existing.id };
            }
        }
        candidate.id = self.next_id;
        self.next_id += 1;
        let id = candidate.id;
        self.entries.push(candidate);
        self.refresh_best();
        InsertResult::Inserted(id)
    }

    /// Applies `f` to the entry with `id` and refreshes the best-correct cache.
    /// The closure cannot change the candidate's id or source.
    pub fn update<R>(&mut self, id: CandidateId, f: impl FnOnce(&mut Candidate) -> R) -> Option<R> {
        let idx = self.entries.binary_search_by_key(&id, Candidate::id).ok()?;
        let out = f(&mut self.entries[idx]);
        self.refresh_best();
        Some(out)
    }

    /// Correct entry with minimum mean elapsed; ties go to the lowest id.
    pub fn best_correct(&self) -> Option<&Candidate> {
        self.best_correct_id.and_then(|id| self.get(id))
    }

    /// Entry with minimum mean elapsed regardless of correctness.
    pub fn fastest_any(&self) -> Option<&Candidate> {
        argmin_elapsed(self.entries.iter())
    }

    fn refresh_best(&mut self) {
        self.best_correct_id =
            argmin_elapsed(self.entries.iter().filter(|c| c.is_correct())).map(Candidate::id);
    }

    /// Rebuilds a pool from persisted entries, keeping their ids.
    pub fn restore(task_id: impl Into<String>, entries: Vec<Candidate>) -> Result<Self, PoolError> {
        for pair in entries.windows(2) {
            if pair[1].id <= pair[0].id {
                return Err(PoolError::NonMonotonicIds { previous: pair[0].id, found: pair[1].id });
            }
        }
        let next_id = entries.last().map_or(0, |c| c.id + 1);
        let mut pool = Self { task_id: task_id.into(), entries, best_correct_id: None, next_id };
        pool.refresh_best();
        Ok(pool)
    }

    /// Writes one `<id>.py` source file and one `<id>.json` metadata file per entry.
    pub fn save_dir(&self, dir: &Path) -> Result<(), PoolError> {
        fs::create_dir_all(dir)?;
        for c in &self.entries {
            fs::write(dir.join(format!("{:04}.py", c.id)), c.source())?;
            let meta = CandidateMeta::from(c);
            let mut json = serde_json::to_string_pretty(&meta)?;
            json.push('\n');
            fs::write(dir.join(format!("{:04}.json", c.id)), json)?;
        }
        Ok(())
    }

    /// Loads a pool written by [`CandidatePool::save_dir`]. Similarity
    /// features are not persisted and must be recomputed by the caller.
    pub fn load_dir(task_id: impl Into<String>, dir: &Path) -> Result<Self, PoolError> {
        let mut metas = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let meta: CandidateMeta = serde_json::from_str(&fs::read_to_string(&path)?)?;
                metas.push(meta);
            }
        }
        metas.sort_by_key(|m| m.id);
        let mut entries = Vec::with_capacity(metas.len());
        for meta in metas {
            let source = fs::read_to_string(dir.join(format!("{:04}.py", meta.id)))?;
            entries.push(meta.into_candidate(source));
        }
        Self::restore(task_id, entries)
    }
}

fn argmin_elapsed<'a>(iter: impl Iterator<Item = &'a Candidate>) -> Option<&'a Candidate> {
    iter.filter_map(|c| c.mean_elapsed().map(|m| (m, c)))
        .min_by(|(ma, a), (mb, b)| ma.total_cmp(mb).then(a.id.cmp(&b.id)))
        .map(|(_, c)| c)
}

/// Sidecar metadata record for a persisted candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateMeta {
    pub id: CandidateId,
    pub origin: Origin,
    pub round_created: u32,
    pub parent_ids: Vec<CandidateId>,
    pub correctness: Correctness,
    pub elapsed: Option<ElapsedStats>,
    pub failure: Option<FailureSignal>,
    pub profile: Option<ProfileSummary>,
}

impl From<&Candidate> for CandidateMeta {
    fn from(c: &Candidate) -> Self {
        Self {
            id: c.id,
            origin: c.origin,
            round_created: c.round_created,
            parent_ids: c.parent_ids.clone(),
            correctness: c.correctness,
            elapsed: c.elapsed.clone(),
            failure: c.failure.clone(),
            profile: c.profile.clone(),
        }
    }
}

impl CandidateMeta {
    fn into_candidate(self, source: String) -> Candidate {
        let mut c = Candidate::new(source, self.round_created, self.origin, self.parent_ids);
        c.id = self.id;
        c.correctness = self.correctness;
        c.elapsed = self.elapsed;
        c.failure = self.failure;
        c.profile = self.profile;
        c
    }
}

/// Which feedback channels a run attaches to refinement prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Generation only, no refinement rounds.
    Baseline,
    /// Paired prompts without profiler output.
    PairedNoProfiling,
    /// Single-candidate prompts with summarized profiles.
    SoloSummary,
    /// Similarity pairing plus contrastive profile summaries.
    #[default]
    Effipair,
}

impl Mode {
    pub const ALL: [Mode; 4] =
        [Mode::Baseline, Mode::PairedNoProfiling, Mode::SoloSummary, Mode::Effipair];

    pub fn refines(self) -> bool {
        self != Mode::Baseline
    }

    pub fn uses_pairing(self) -> bool {
        matches!(self, Mode::PairedNoProfiling | Mode::Effipair)
    }

    pub fn uses_profiling(self) -> bool {
        matches!(self, Mode::SoloSummary | Mode::Effipair)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::PairedNoProfiling => "paired_no_profiling",
            Mode::SoloSummary => "solo_summary",
            Mode::Effipair => "effipair",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_initial: u32,
    pub t_rounds: u32,
    pub alpha: f64,
    pub tau: f64,
    pub workers: usize,
    pub base_seed: u64,
    pub correctness_timeout_s: u64,
    pub profiling_timeout_s: u64,
    pub timing_runs: u32,
    pub mode: Mode,
    /// Skip a task's round instead of falling back when no similar correct pair exists.
    pub strict_pairing: bool,
    pub pin_cores: bool,
    /// Local speedup assumed when ranking hotspots by potential global gain.
    pub amdahl_k: f64,
    /// Byte budget for one rendered profile summary.
    pub summary_budget_bytes: usize,
    /// Embed comment-stripped source instead of raw source.
    pub embed_preprocessed: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_initial: 3,
            t_rounds: 3,
            alpha: 0.8,
            tau: 0.85,
            workers: 16,
            base_seed: 1,
            correctness_timeout_s: 30,
            profiling_timeout_s: 120,
            timing_runs: 3,
            mode: Mode::Effipair,
            strict_pairing: false,
            pin_cores: false,
            amdahl_k: 10.0,
            summary_budget_bytes: 4096,
            embed_preprocessed: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError(msg.to_string()));
        if self.n_initial < 1 {
            return bad("n_initial must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must be in [0, 1]");
        }
        if self.workers < 1 {
            return bad("workers must be >= 1");
        }
        if self.timing_runs < 1 {
            return bad("timing_runs must be >= 1");
        }
        if self.correctness_timeout_s == 0 || self.profiling_timeout_s == 0 {
            return bad("timeouts must be positive");
        }
        if !(self.amdahl_k > 0.0) {
            return bad("amdahl_k must be positive");
        }
        Ok(())
    }

    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig { alpha: self.alpha, tau: self.tau }
    }

    /// Rounds actually executed after the generation pass.
    pub fn effective_rounds(&self) -> u32 {
        if self.mode.refines() {
            self.t_rounds
        } else {
            0
        }
    }
}
