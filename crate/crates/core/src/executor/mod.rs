//! Isolated execution of candidates against task harnesses.

mod fake;
mod harness;

pub use fake::{fake_elapsed, line_weights, modeled_elapsed, FakeBackend, WeightedLine};
pub use harness::{
    build_harness, parse_record, HarnessRecord, MissingRecord, RecordStatus, TemplateError,
    CANDIDATE_FILE, HARNESS_FILE,
};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{Correctness, Mismatch, RunConfig, Task};
use crate::sandbox::{ExitState, Sandbox, SandboxCommand};

/// Maximum characters of stderr kept in a failure signal.
pub const STDERR_TAIL_CAP: usize = 2000;

/// Last `cap` characters of `text`, on a char boundary.
pub fn tail_chars(text: &str, cap: usize) -> &str {
    let count = text.chars().count();
    if count <= cap {
        return text;
    }
    let (idx, _) = text.char_indices().nth(count - cap).expect("index within text");
    &text[idx..]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub elapsed_s: f64,
    /// The harness ran to completion (pass or output mismatch).
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElapsedStats {
    pub runs: Vec<RunSample>,
    /// Arithmetic mean over successful runs; absent when none succeeded.
    pub mean_s: Option<f64>,
    pub successes: u32,
}

impl ElapsedStats {
    pub fn from_samples(runs: Vec<RunSample>) -> Self {
        let ok: Vec<f64> = runs.iter().filter(|r| r.success).map(|r| r.elapsed_s).collect();
        let mean_s = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        Self { successes: ok.len() as u32, mean_s, runs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Timeout,
    NonzeroExit,
    Exception,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSignal {
    pub kind: FailureKind,
    pub exit_status: Option<i32>,
    pub error_type: Option<String>,
    pub stderr_tail: String,
    pub mismatch: Option<Mismatch>,
}

impl FailureSignal {
    pub fn new(kind: FailureKind, exit_status: Option<i32>, error_type: Option<String>, stderr: &str) -> Self {
        Self {
            kind,
            exit_status,
            error_type,
            stderr_tail: tail_chars(stderr, STDERR_TAIL_CAP).to_string(),
            mismatch: None,
        }
    }

    pub fn mismatch(m: Mismatch, error_type: &str) -> Self {
        Self {
            kind: FailureKind::Mismatch,
            exit_status: Some(0),
            error_type: Some(error_type.to_string()),
            stderr_tail: String::new(),
            mismatch: Some(m),
        }
    }

    /// Plain-text feedback block for prompts.
    pub fn render(&self) -> String {
        let mut out = match self.kind {
            FailureKind::Timeout => "The program exceeded the time limit.".to_string(),
            FailureKind::NonzeroExit => match self.exit_status {
                Some(code) => format!("The program exited abnormally with status {code}."),
                None => "The program was terminated by a signal.".to_string(),
            },
            FailureKind::Exception => format!(
                "The program raised {}.",
                self.error_type.as_deref().unwrap_or("an exception")
            ),
            FailureKind::Mismatch => "A test assertion failed.".to_string(),
        };
        if let Some(m) = &self.mismatch {
            out.push_str(&format!(
                "\nInput: {}\nExpected: {}\nActual: {}",
                m.input, m.expected, m.actual
            ));
        }
        if !self.stderr_tail.trim().is_empty() {
            out.push_str("\nStderr (tail):\n");
            out.push_str(self.stderr_tail.trim_end());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPurpose {
    Correctness,
    Timing,
    Profiling,
}

impl RunPurpose {
    pub fn timeout(self, cfg: &RunConfig) -> Duration {
        match self {
            RunPurpose::Correctness | RunPurpose::Timing => Duration::from_secs(cfg.correctness_timeout_s),
            RunPurpose::Profiling => Duration::from_secs(cfg.profiling_timeout_s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionRequest {
    pub task: Arc<Task>,
    pub source: Arc<str>,
    pub timeout: Duration,
    pub purpose: RunPurpose,
    pub seed: u64,
}

impl ExecutionRequest {
    pub fn new(task: Arc<Task>, source: Arc<str>, purpose: RunPurpose, cfg: &RunConfig) -> Self {
        Self { task, source, timeout: purpose.timeout(cfg), purpose, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum RunOutcome {
    Passed,
    Failed(FailureSignal),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub outcome: RunOutcome,
    pub elapsed_s: f64,
}

impl RunResult {
    pub fn passed(&self) -> bool {
        matches!(self.outcome, RunOutcome::Passed)
    }

    /// The harness ran to completion, so the elapsed time is a valid measurement.
    pub fn completed(&self) -> bool {
        match &self.outcome {
            RunOutcome::Passed => true,
            RunOutcome::Failed(f) => f.kind == FailureKind::Mismatch,
        }
    }

    pub fn failure(&self) -> Option<&FailureSignal> {
        match &self.outcome {
            RunOutcome::Passed => None,
            RunOutcome::Failed(f) => Some(f),
        }
    }
}

pub trait ExecutionBackend: Send + Sync {
    fn id(&self) -> &str;
    fn run(&self, req: &ExecutionRequest) -> RunResult;
}

/// Runs `python3 harness.py` in a sandbox.
#[derive(Debug)]
pub struct SubprocessBackend {
    python: PathBuf,
    sandbox: Sandbox,
}

impl SubprocessBackend {
    pub fn new(python: impl Into<PathBuf>, sandbox: Sandbox) -> Self {
        Self { python: python.into(), sandbox }
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn python(&self) -> &std::path::Path {
        &self.python
    }
}

impl Default for SubprocessBackend {
    fn default() -> Self {
        Self::new("python3", Sandbox::from_env())
    }
}

/// Maps a finished harness process to a run result.
pub fn interpret_output(state: ExitState, stdout: &str, stderr: &str, wall_s: f64) -> RunResult {
    let failed = |f: FailureSignal| RunResult { outcome: RunOutcome::Failed(f), elapsed_s: wall_s };
    match state {
        ExitState::TimedOut => failed(FailureSignal::new(FailureKind::Timeout, None, None, stderr)),
        ExitState::Signaled(sig) => failed(FailureSignal::new(
            FailureKind::NonzeroExit,
            None,
            Some(format!("signal {sig}")),
            stderr,
        )),
        ExitState::Exited(code) => match parse_record(stdout) {
            Ok(rec) if code == 0 => {
                let elapsed_s = rec.elapsed_s;
                let outcome = match rec.status {
                    RecordStatus::Pass => RunOutcome::Passed,
                    RecordStatus::Fail => match rec.mismatch {
                        Some(m) => {
                            let mut f = FailureSignal::mismatch(m, &rec.error_type);
                            f.stderr_tail = tail_chars(&rec.stderr_tail, STDERR_TAIL_CAP).to_string();
                            RunOutcome::Failed(f)
                        }
                        None => RunOutcome::Failed(FailureSignal::new(
                            FailureKind::Exception,
                            Some(code),
                            Some(rec.error_type),
                            &rec.stderr_tail,
                        )),
                    },
                    RecordStatus::Error => RunOutcome::Failed(FailureSignal::new(
                        FailureKind::Exception,
                        Some(code),
                        (!rec.error_type.is_empty()).then_some(rec.error_type),
                        &rec.stderr_tail,
                    )),
                };
                RunResult { outcome, elapsed_s }
            }
            _ => failed(FailureSignal::new(FailureKind::NonzeroExit, Some(code), None, stderr)),
        },
    }
}

impl ExecutionBackend for SubprocessBackend {
    fn id(&self) -> &str {
        "subprocess"
    }

    fn run(&self, req: &ExecutionRequest) -> RunResult {
        let harness = match build_harness(&req.task) {
            Ok(h) => h,
            Err(e) => {
                return RunResult {
                    outcome: RunOutcome::Failed(FailureSignal::new(
                        FailureKind::Exception,
                        None,
                        Some("TemplateError".into()),
                        &e.to_string(),
                    )),
                    elapsed_s: 0.0,
                }
            }
        };
        let cmd = SandboxCommand::new(self.python.as_os_str(), req.timeout)
            .arg(HARNESS_FILE)
            .file(CANDIDATE_FILE, req.source.as_bytes())
            .file(HARNESS_FILE, harness)
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1");
        match self.sandbox.run(&cmd) {
            Ok(out) => interpret_output(out.state, &out.stdout, &out.stderr, out.wall_s),
            Err(e) => RunResult {
                outcome: RunOutcome::Failed(FailureSignal::new(
                    FailureKind::NonzeroExit,
                    None,
                    Some("SpawnError".into()),
                    &e.to_string(),
                )),
                elapsed_s: 0.0,
            },
        }
    }
}

/// Counting semaphore bounding live child runs, with a peak gauge.
#[derive(Debug)]
struct Permits {
    limit: usize,
    live: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut live = self.live.lock().unwrap_or_else(|e| e.into_inner());
        while *live >= self.limit {
            live = self.freed.wait(live).unwrap_or_else(|e| e.into_inner());
        }
        *live += 1;
        self.peak.fetch_max(*live, Ordering::SeqCst);
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut live = self.0.live.lock().unwrap_or_else(|e| e.into_inner());
        *live -= 1;
        self.0.freed.notify_one();
    }
}

/// Correctness verdict, timing statistics, and first failure of a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub correctness: Correctness,
    pub elapsed: ElapsedStats,
    pub failure: Option<FailureSignal>,
}

/// Front end over an execution backend with a bounded worker set.
///
/// Every run, from any thread, holds one of `workers` permits while it executes.
pub struct Executor {
    backend: Arc<dyn ExecutionBackend>,
    permits: Permits,
}

impl Executor {
    pub fn new(backend: Arc<dyn ExecutionBackend>, workers: usize) -> Self {
        assert!(workers >= 1, "workers must be >= 1");
        Self {
            backend,
            permits: Permits { limit: workers, live: Mutex::new(0), freed: Condvar::new(), peak: AtomicUsize::new(0) },
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn workers(&self) -> usize {
        self.permits.limit
    }

    /// Highest number of simultaneously running requests observed so far.
    pub fn peak_concurrency(&self) -> usize {
        self.permits.peak.load(Ordering::SeqCst)
    }

    /// Runs `f` while holding a worker permit.
    pub fn with_permit<R>(&self, f: impl FnOnce() -> R) -> R {
        let _permit = self.permits.acquire();
        f()
    }

    pub fn run_once(&self, req: &ExecutionRequest) -> RunResult {
        self.with_permit(|| self.backend.run(req))
    }

    /// Runs all requests with at most `workers` in flight; results keep request order.
    pub fn run_batch(&self, requests: &[ExecutionRequest]) -> Vec<RunResult> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<RunResult>>> = requests.iter().map(|_| Mutex::new(None)).collect();
        let threads = self.workers().min(requests.len());
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = requests.get(i) else { break };
                    let result = self.run_once(req);
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every slot filled"))
            .collect()
    }

    /// Runs the harness `timing_runs` times; the first run decides correctness.
    ///
    /// A timeout ends the series early since later runs would also hit the limit.
    pub fn evaluate(&self, task: &Arc<Task>, source: &Arc<str>, cfg: &RunConfig) -> Evaluation {
        let mut samples = Vec::new();
        let mut first: Option<RunResult> = None;
        for i in 0..cfg.timing_runs {
            let purpose = if i == 0 { RunPurpose::Correctness } else { RunPurpose::Timing };
            let req = ExecutionRequest::new(Arc::clone(task), Arc::clone(source), purpose, cfg);
            let result = self.run_once(&req);
            samples.push(RunSample { elapsed_s: result.elapsed_s, success: result.completed() });
            let timed_out = result.failure().is_some_and(|f| f.kind == FailureKind::Timeout);
            first.get_or_insert(result);
            if timed_out {
                break;
            }
        }
        let first = first.expect("timing_runs >= 1");
        let correctness = if first.passed() { Correctness::Correct } else { Correctness::Incorrect };
        Evaluation { correctness, elapsed: ElapsedStats::from_samples(samples), failure: first.failure().cloned() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BenchmarkKind, HarnessSpec};

    struct Scripted(Vec<RunResult>, AtomicUsize);

    impl ExecutionBackend for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }
        fn run(&self, _req: &ExecutionRequest) -> RunResult {
            self.0[self.1.fetch_add(1, Ordering::SeqCst)].clone()
        }
    }

    fn pass(t: f64) -> RunResult {
        RunResult { outcome: RunOutcome::Passed, elapsed_s: t }
    }

    fn timeout() -> RunResult {
        RunResult { outcome: RunOutcome::Failed(FailureSignal::new(FailureKind::Timeout, None, None, "")), elapsed_s: 30.0 }
    }

    fn mismatch(t: f64) -> RunResult {
        let m = Mismatch { input: "1".into(), expected: "2".into(), actual: "3".into() };
        RunResult { outcome: RunOutcome::Failed(FailureSignal::mismatch(m, "AssertionError")), elapsed_s: t }
    }

    fn task() -> Arc<Task> {
        Arc::new(Task {
            task_id: "t".into(),
            description: String::new(),
            entry_point: "f".into(),
            harness: HarnessSpec::default(),
            benchmark_kind: BenchmarkKind::Evalperf,
            reference_runtimes: None,
            stub: None,
            language: "Python".into(),
        })
    }

    fn evaluate(script: Vec<RunResult>) -> Evaluation {
        let ex = Executor::new(Arc::new(Scripted(script, AtomicUsize::new(0))), 2);
        ex.evaluate(&task(), &Arc::from("x = 1"), &RunConfig::default())
    }

    #[test]
    fn mean_of_three_passes() {
        let e = evaluate(vec![pass(0.10), pass(0.12), pass(0.11)]);
        assert_eq!(e.correctness, Correctness::Correct);
        let oracle = (0.10 + 0.12 + 0.11) / 3.0;
        assert!((e.elapsed.mean_s.unwrap() - oracle).abs() < 1e-15);
        assert_eq!(e.elapsed.successes, 3);
    }

    #[test]
    fn mean_skips_failed_runs() {
        let e = evaluate(vec![pass(0.10), mismatch(0.5), pass(0.12)]);
        assert_eq!(e.correctness, Correctness::Correct);
        let stats = ElapsedStats::from_samples(vec![
            RunSample { elapsed_s: 0.10, success: true },
            RunSample { elapsed_s: 9.0, success: false },
            RunSample { elapsed_s: 0.12, success: true },
        ]);
        assert!((stats.mean_s.unwrap() - 0.11).abs() < 1e-12);
        assert_eq!(stats.successes, 2);
    }

    #[test]
    fn all_failures_leave_no_mean() {
        let e = evaluate(vec![timeout()]);
        assert_eq!(e.correctness, Correctness::Incorrect);
        assert_eq!(e.elapsed.mean_s, None);
        assert_eq!(e.elapsed.runs.len(), 1);
        assert_eq!(e.failure.unwrap().kind, FailureKind::Timeout);
    }

    #[test]
    fn interpret_maps_each_state() {
        let r = interpret_output(ExitState::TimedOut, "", "x", 30.0);
        assert_eq!(r.failure().unwrap().kind, FailureKind::Timeout);
        let r = interpret_output(ExitState::Exited(1), "", "boom", 0.1);
        let f = r.failure().unwrap();
        assert_eq!((f.kind, f.exit_status, f.stderr_tail.as_str()), (FailureKind::NonzeroExit, Some(1), "boom"));
        let ok = "{\"status\":\"pass\",\"elapsed_s\":0.25,\"error_type\":\"\",\"stderr_tail\":\"\",\"mismatch\":null}\n";
        let r = interpret_output(ExitState::Exited(0), ok, "", 0.4);
        assert!(r.passed());
        assert_eq!(r.elapsed_s, 0.25);
        let r = interpret_output(ExitState::Exited(0), "not json", "", 0.4);
        assert_eq!(r.failure().unwrap().kind, FailureKind::NonzeroExit);
    }

    #[test]
    fn stderr_tail_is_capped() {
        let long = "é".repeat(5000);
        let f = FailureSignal::new(FailureKind::Exception, None, None, &long);
        assert_eq!(f.stderr_tail.chars().count(), STDERR_TAIL_CAP);
    }

    #[test]
    fn batch_preserves_order_and_bounds_concurrency() {
        let ex = Executor::new(Arc::new(FakeBackend), 3);
        let reqs: Vec<_> = (0..20)
            .map(|i| {
                let src: Arc<str> = Arc::from(format!("# fake: elapsed={}\n", i + 1));
                ExecutionRequest::new(task(), src, RunPurpose::Correctness, &RunConfig::default())
            })
            .collect();
        let out = ex.run_batch(&reqs);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.elapsed_s, (i + 1) as f64);
        }
        assert!(ex.peak_concurrency() <= 3);
    }
}
