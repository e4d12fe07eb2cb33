//! Profiler backends and the shim wire protocol.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LineRecord, RawProfile};
use crate::executor::{
    build_harness, line_weights, tail_chars, Executor, HarnessRecord, RecordStatus, CANDIDATE_FILE,
    HARNESS_FILE, STDERR_TAIL_CAP,
};
use crate::model::{Candidate, RunConfig, Task};
use crate::sandbox::{ExitState, Sandbox, SandboxCommand};

/// Minimum accumulated runtime of a profiled series.
pub const PROFILE_TARGET_S: f64 = 1.0;
/// Sampling interval handed to the profiler, in seconds.
pub const SAMPLING_INTERVAL_S: f64 = 0.001;

const MAX_REPETITIONS: u32 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profiling timed out after {timeout_s}s")]
    ProfilingTimeout { timeout_s: f64 },
    #[error("profiler output could not be parsed: {0}")]
    ProfilerParseError(String),
    #[error("candidate {0} has no measured elapsed time")]
    NotMeasured(u64),
    #[error("profiled run failed: {0}")]
    RunFailed(String),
}

/// `max(1, ceil(1.0 / single_call_s))`, capped for degenerate timings.
pub fn repetitions_for(single_call_s: f64) -> u32 {
    if !(single_call_s > 0.0) {
        return MAX_REPETITIONS;
    }
    let reps = (PROFILE_TARGET_S / single_call_s).ceil();
    if reps >= f64::from(MAX_REPETITIONS) {
        MAX_REPETITIONS
    } else {
        (reps as u32).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct ProfileRequest {
    pub task: Arc<Task>,
    pub source: Arc<str>,
    pub single_call_s: f64,
    pub timeout: Duration,
}

pub trait ProfilerBackend: Send + Sync {
    fn id(&self) -> &str;
    fn profile(&self, req: &ProfileRequest) -> Result<RawProfile, ProfileError>;
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    total_profiled_s: f64,
    repetitions: u32,
}

/// Everything the shim prints in profile mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStream {
    pub result: Option<HarnessRecord>,
    pub profile: RawProfile,
}

/// Parses the shim's line-delimited stream: optional result record, one
/// record per profiled line, and exactly one trailer.
pub fn parse_profile_stream(stdout: &str) -> Result<ProfileStream, ProfileError> {
    let bad = |msg: String| ProfileError::ProfilerParseError(msg);
    let mut result = None;
    let mut lines = Vec::new();
    let mut trailer: Option<Trailer> = None;
    for (n, text) in stdout.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        let obj = value.as_object().ok_or_else(|| bad(format!("line {}: not an object", n + 1)))?;
        if obj.contains_key("status") {
            result = Some(serde_json::from_value(value).map_err(|e| bad(format!("line {}: {e}", n + 1)))?);
        } else if obj.contains_key("total_profiled_s") {
            if trailer.is_some() {
                return Err(bad(format!("line {}: duplicate trailer", n + 1)));
            }
            trailer = Some(serde_json::from_value(value).map_err(|e| bad(format!("line {}: {e}", n + 1)))?);
        } else if obj.contains_key("cpu_percent") {
            let rec: LineRecord = serde_json::from_value(value).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
            if !(rec.cpu_percent >= 0.0 && rec.cpu_percent.is_finite()) {
                return Err(bad(format!("line {}: invalid cpu_percent", n + 1)));
            }
            lines.push(rec);
        } else {
            return Err(bad(format!("line {}: unknown record", n + 1)));
        }
    }
    let trailer = trailer.ok_or_else(|| bad("missing trailer record".into()))?;
    if trailer.repetitions < 1 {
        return Err(bad("repetitions must be >= 1".into()));
    }
    if trailer.repetitions > 1 && trailer.total_profiled_s < PROFILE_TARGET_S {
        return Err(bad(format!(
            "total_profiled_s {} below {PROFILE_TARGET_S}s with {} repetitions",
            trailer.total_profiled_s, trailer.repetitions
        )));
    }
    Ok(ProfileStream {
        result,
        profile: RawProfile { lines, total_profiled_s: trailer.total_profiled_s, repetitions: trailer.repetitions },
    })
}

/// Serializes a profile in the shim's wire format (line records, then trailer).
pub fn to_wire(profile: &RawProfile) -> String {
    let mut out = String::new();
    for rec in &profile.lines {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    let trailer = Trailer { total_profiled_s: profile.total_profiled_s, repetitions: profile.repetitions };
    out.push_str(&serde_json::to_string(&trailer).expect("trailer serializes"));
    out.push('\n');
    out
}

/// Runs `python3 <shim> profile candidate.py harness.py` in a sandbox.
#[derive(Debug)]
pub struct ShimProfiler {
    python: PathBuf,
    shim: PathBuf,
    sandbox: Sandbox,
    backend: Option<String>,
}

impl ShimProfiler {
    pub fn new(python: impl Into<PathBuf>, shim: impl Into<PathBuf>, sandbox: Sandbox) -> Self {
        Self { python: python.into(), shim: shim.into(), sandbox, backend: None }
    }

    /// Profiler implementation the shim should use (`EFFIPAIR_PROFILER_BACKEND`).
    pub fn with_backend(mut self, name: impl Into<String>) -> Self {
        self.backend = Some(name.into());
        self
    }
}

impl ProfilerBackend for ShimProfiler {
    fn id(&self) -> &str {
        "shim"
    }

    fn profile(&self, req: &ProfileRequest) -> Result<RawProfile, ProfileError> {
        let harness = build_harness(&req.task).map_err(|e| ProfileError::RunFailed(e.to_string()))?;
        let shim_source = std::fs::read(&self.shim)
            .map_err(|e| ProfileError::RunFailed(format!("reading shim {}: {e}", self.shim.display())))?;
        let mut cmd = SandboxCommand::new(self.python.as_os_str(), req.timeout)
            .arg("shim.py")
            .arg("profile")
            .arg(CANDIDATE_FILE)
            .arg(HARNESS_FILE)
            .file("shim.py", shim_source)
            .file(CANDIDATE_FILE, req.source.as_bytes())
            .file(HARNESS_FILE, harness)
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("EFFIPAIR_PROFILER_INTERVAL", SAMPLING_INTERVAL_S.to_string())
            .env("EFFIPAIR_REPETITIONS", repetitions_for(req.single_call_s).to_string());
        if let Some(b) = &self.backend {
            cmd = cmd.env("EFFIPAIR_PROFILER_BACKEND", b.clone());
        }
        let out = self.sandbox.run(&cmd).map_err(|e| ProfileError::RunFailed(e.to_string()))?;
        match out.state {
            ExitState::TimedOut => Err(ProfileError::ProfilingTimeout { timeout_s: req.timeout.as_secs_f64() }),
            ExitState::Exited(0) => {
                let stream = parse_profile_stream(&out.stdout)?;
                match &stream.result {
                    Some(r) if r.status != RecordStatus::Pass => Err(ProfileError::RunFailed(format!(
                        "{} {}",
                        r.error_type,
                        tail_chars(&r.stderr_tail, STDERR_TAIL_CAP)
                    ))),
                    _ => Ok(stream.profile),
                }
            }
            state => Err(ProfileError::RunFailed(format!(
                "{state:?}: {}",
                tail_chars(&out.stderr, STDERR_TAIL_CAP)
            ))),
        }
    }
}

/// Deterministic profiler derived from the static cost model.
///
/// CPU share is each line's share of the modeled cost. Lines that build
/// containers report `10^(depth+1)` allocations of 64 bytes each.
#[derive(Debug, Clone, Default)]
pub struct FakeProfiler;

const ALLOC_MARKERS: [&str; 7] = ["append(", "[", "{", "list(", "dict(", "set(", "sorted("];

impl ProfilerBackend for FakeProfiler {
    fn id(&self) -> &str {
        "fake"
    }

    fn profile(&self, req: &ProfileRequest) -> Result<RawProfile, ProfileError> {
        let weights = line_weights(&req.source);
        let total: f64 = weights.iter().map(|w| w.weight).sum();
        let lines = weights
            .iter()
            .map(|w| {
                let allocs = if ALLOC_MARKERS.iter().any(|m| w.text.contains(m)) {
                    10u64.pow(w.depth + 1)
                } else {
                    0
                };
                LineRecord {
                    file: CANDIDATE_FILE.to_string(),
                    line: w.line,
                    cpu_percent: if total > 0.0 { 100.0 * w.weight / total } else { 0.0 },
                    alloc_count: allocs,
                    peak_mem_bytes: (allocs > 0).then_some(allocs * 64),
                }
            })
            .collect();
        let repetitions = repetitions_for(req.single_call_s);
        Ok(RawProfile { lines, total_profiled_s: f64::from(repetitions) * req.single_call_s, repetitions })
    }
}

/// Profiles a measured candidate while holding an executor worker permit.
pub fn profile_candidate(
    executor: &Executor,
    backend: &dyn ProfilerBackend,
    task: &Arc<Task>,
    candidate: &Candidate,
    cfg: &RunConfig,
) -> Result<RawProfile, ProfileError> {
    let single_call_s = candidate.mean_elapsed().ok_or(ProfileError::NotMeasured(candidate.id()))?;
    let req = ProfileRequest {
        task: Arc::clone(task),
        source: candidate.source_arc(),
        single_call_s,
        timeout: Duration::from_secs(cfg.profiling_timeout_s),
    };
    executor.with_permit(|| backend.profile(&req))
}
