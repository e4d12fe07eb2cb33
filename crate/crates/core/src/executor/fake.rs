//! Deterministic in-process stand-in for the subprocess backend.
//!
//! Outcomes come from an optional `# fake:` directive line in the candidate
//! source (`status=pass|fail|error|timeout|crash`, `elapsed=<seconds>`).
//! Without an `elapsed` directive the runtime is a static cost model:
//! each code line costs `1e-4 * 10^depth` seconds, where depth counts the
//! enclosing `for`/`while` blocks plus one for an inline comprehension.

use super::{ExecutionBackend, ExecutionRequest, FailureKind, FailureSignal, RunOutcome, RunResult};
use crate::model::Mismatch;

const UNIT_COST_S: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FakeStatus {
    Pass,
    Fail,
    Error,
    Timeout,
    Crash,
}

#[derive(Debug, Clone, Copy)]
struct Directive {
    status: FakeStatus,
    elapsed: Option<f64>,
}

fn directive(source: &str) -> Directive {
    let mut d = Directive { status: FakeStatus::Pass, elapsed: None };
    for line in source.lines() {
        let Some(rest) = line.trim().strip_prefix("# fake:") else { continue };
        for token in rest.split_whitespace() {
            match token.split_once('=') {
                Some(("status", v)) => {
                    d.status = match v {
                        "fail" => FakeStatus::Fail,
                        "error" => FakeStatus::Error,
                        "timeout" => FakeStatus::Timeout,
                        "crash" => FakeStatus::Crash,
                        _ => FakeStatus::Pass,
                    }
                }
                Some(("elapsed", v)) => d.elapsed = v.parse().ok().filter(|x: &f64| x.is_finite() && *x > 0.0),
                _ => {}
            }
        }
    }
    d
}

/// One weighted source line of the static cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLine {
    pub line: u32,
    pub text: String,
    pub depth: u32,
    pub weight: f64,
}

fn has_comprehension(code: &str) -> bool {
    let opens = ['[', '(', '{'];
    code.contains(" for ") && code.contains(" in ") && opens.iter().any(|c| code.contains(*c))
}

/// Per-line costs of `source`; blank and comment-only lines are skipped.
pub fn line_weights(source: &str) -> Vec<WeightedLine> {
    let mut blocks: Vec<(usize, bool)> = Vec::new();
    let mut out = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let code = raw.trim();
        if code.is_empty() || code.starts_with('#') {
            continue;
        }
        let indent = raw.len() - raw.trim_start().len();
        while blocks.last().is_some_and(|(i, _)| *i >= indent) {
            blocks.pop();
        }
        let is_loop_header =
            code.starts_with("for ") || code.starts_with("while ") || code.starts_with("async for ");
        let mut depth = blocks.iter().filter(|(_, l)| *l).count() as u32;
        if !is_loop_header && has_comprehension(code) {
            depth += 1;
        }
        out.push(WeightedLine {
            line: idx as u32 + 1,
            text: code.to_string(),
            depth,
            weight: 10f64.powi(depth as i32),
        });
        if code.ends_with(':') {
            blocks.push((indent, is_loop_header));
        }
    }
    out
}

/// Static cost model runtime in seconds.
pub fn modeled_elapsed(source: &str) -> f64 {
    UNIT_COST_S * line_weights(source).iter().map(|l| l.weight).sum::<f64>()
}

/// Runtime the fake backend reports for `source` (directive or model).
pub fn fake_elapsed(source: &str) -> f64 {
    directive(source).elapsed.unwrap_or_else(|| modeled_elapsed(source))
}

#[derive(Debug, Clone, Default)]
pub struct FakeBackend;

impl ExecutionBackend for FakeBackend {
    fn id(&self) -> &str {
        "fake"
    }

    fn run(&self, req: &ExecutionRequest) -> RunResult {
        let d = directive(&req.source);
        let elapsed_s = d.elapsed.unwrap_or_else(|| modeled_elapsed(&req.source));
        let fail = |f: FailureSignal, elapsed_s: f64| RunResult { outcome: RunOutcome::Failed(f), elapsed_s };
        match d.status {
            FakeStatus::Pass => RunResult { outcome: RunOutcome::Passed, elapsed_s },
            FakeStatus::Fail => fail(
                FailureSignal::mismatch(
                    Mismatch {
                        input: "[0]".into(),
                        expected: "0".into(),
                        actual: "1".into(),
                    },
                    "AssertionError",
                ),
                elapsed_s,
            ),
            FakeStatus::Error => fail(
                FailureSignal::new(
                    FailureKind::Exception,
                    Some(0),
                    Some("RuntimeError".into()),
                    "Traceback (most recent call last):\nRuntimeError: fake error",
                ),
                0.0,
            ),
            FakeStatus::Timeout => fail(
                FailureSignal::new(FailureKind::Timeout, None, None, ""),
                req.timeout.as_secs_f64(),
            ),
            FakeStatus::Crash => fail(
                FailureSignal::new(FailureKind::NonzeroExit, Some(1), None, "fake crash"),
                0.0,
            ),
        }
    }
}
