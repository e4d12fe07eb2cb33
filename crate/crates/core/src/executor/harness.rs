//! Generation of the self-contained Python harness and parsing of its
//! single-line result record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BenchmarkKind, Mismatch, Task, TestCase};

/// Name the candidate program is written under inside the scratch directory.
pub const CANDIDATE_FILE: &str = "candidate.py";
pub const HARNESS_FILE: &str = "harness.py";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("task `{0}`: custom tasks need a `check` function in the harness spec")]
    MissingCheck(String),
    #[error("task `{0}`: harness spec has no cases, generator, or check")]
    EmptySpec(String),
}

#[derive(Serialize)]
struct Payload<'a> {
    kind: BenchmarkKind,
    entry_point: &'a str,
    cases: &'a [TestCase],
    generator: Option<&'a str>,
    check: Option<&'a str>,
    tolerance: f64,
}

const TEMPLATE: &str = r#"import contextlib
import copy
import io
import json
import math
import os
import random
import sys
import time
import traceback

random.seed(0)
_RNG = random.Random(0)
_SPEC = json.loads(@@SPEC@@)
_HERE = os.path.dirname(os.path.abspath(__file__))
_CAP = 2000


def _short(value, limit=500):
    try:
        text = json.dumps(value)
    except (TypeError, ValueError):
        text = repr(value)
    return text if len(text) <= limit else text[:limit] + "..."


def _load():
    path = os.path.join(_HERE, "@@CANDIDATE@@")
    with open(path, encoding="utf-8") as handle:
        source = handle.read()
    namespace = {"__name__": "candidate", "__file__": "@@CANDIDATE@@"}
    exec(compile(source, "@@CANDIDATE@@", "exec"), namespace)
    return namespace


def _target(namespace):
    name = _SPEC["entry_point"]
    if _SPEC["kind"] == "mercury":
        cls = namespace.get("Solution")
        if cls is None:
            raise NameError("class 'Solution' is not defined")
        if not hasattr(cls, name):
            raise AttributeError("'Solution' object has no attribute '%s'" % name)
        return lambda *args: getattr(cls(), name)(*args)
    func = namespace.get(name)
    if func is None:
        raise NameError("name '%s' is not defined" % name)
    return func


def _cases():
    cases = [(case["args"], case["expected"]) for case in _SPEC["cases"]]
    if _SPEC["generator"]:
        scope = {}
        exec(_SPEC["generator"], scope)
        cases.extend((list(a), e) for a, e in scope["generate_cases"](random.Random(0)))
    return cases


def _checker():
    if not _SPEC["check"]:
        return None
    scope = {}
    exec(_SPEC["check"], scope)
    return scope["check"]


def _same(actual, expected, tol):
    if isinstance(actual, bool) or isinstance(expected, bool):
        return actual == expected
    if isinstance(actual, (int, float)) and isinstance(expected, (int, float)):
        if isinstance(actual, float) or isinstance(expected, float):
            return math.isclose(actual, expected, rel_tol=tol, abs_tol=tol)
        return actual == expected
    if isinstance(actual, (list, tuple)) and isinstance(expected, (list, tuple)):
        return len(actual) == len(expected) and all(
            _same(a, e, tol) for a, e in zip(actual, expected)
        )
    if isinstance(actual, dict) and isinstance(expected, dict):
        return actual.keys() == expected.keys() and all(
            _same(actual[k], expected[k], tol) for k in actual
        )
    return actual == expected


def _tail(text):
    return text[-_CAP:]


def run_checks():
    record = {"status": "pass", "elapsed_s": 0.0, "error_type": "", "stderr_tail": "", "mismatch": None}
    sink = io.StringIO()
    start = None
    try:
        with contextlib.redirect_stdout(sink):
            target = _target(_load())
            cases = _cases()
            checker = _checker()
            start = time.perf_counter()
            for args, expected in cases:
                actual = target(*copy.deepcopy(args))
                if not _same(actual, expected, _SPEC["tolerance"]):
                    record.update(
                        status="fail",
                        elapsed_s=time.perf_counter() - start,
                        error_type="AssertionError",
                        mismatch={"input": _short(args), "expected": _short(expected), "actual": _short(actual)},
                    )
                    return record
            if checker is not None:
                checker(target)
            record["elapsed_s"] = time.perf_counter() - start
    except AssertionError as exc:
        record.update(
            status="fail",
            elapsed_s=(time.perf_counter() - start) if start is not None else 0.0,
            error_type="AssertionError",
            stderr_tail=_tail(traceback.format_exc()),
            mismatch={"input": "check(candidate)", "expected": "no assertion failure", "actual": _short(str(exc))},
        )
    except Exception as exc:
        record.update(
            status="error",
            elapsed_s=(time.perf_counter() - start) if start is not None else 0.0,
            error_type=type(exc).__name__,
            stderr_tail=_tail(traceback.format_exc()),
        )
    return record


if __name__ == "__main__":
    sys.stdout.write(json.dumps(run_checks()) + "\n")
    sys.stdout.flush()
"#;

/// Builds the harness program for `task`.
///
/// The harness loads `candidate.py` from its own directory, runs every check
/// with fixed RNG state, and prints exactly one JSON record. Output depends
/// only on the task, so repeated builds are byte-identical.
pub fn build_harness(task: &Task) -> Result<String, TemplateError> {
    let spec = &task.harness;
    if task.benchmark_kind == BenchmarkKind::Custom && spec.check.is_none() {
        return Err(TemplateError::MissingCheck(task.task_id.clone()));
    }
    if spec.is_empty() {
        return Err(TemplateError::EmptySpec(task.task_id.clone()));
    }
    let payload = Payload {
        kind: task.benchmark_kind,
        entry_point: &task.entry_point,
        cases: &spec.cases,
        generator: spec.generator.as_deref(),
        check: spec.check.as_deref(),
        tolerance: spec.float_tolerance.unwrap_or(1e-6),
    };
    let json = serde_json::to_string(&payload).expect("payload serializes");
    // A JSON string literal is also a valid Python string literal.
    let literal = serde_json::to_string(&json).expect("string serializes");
    Ok(TEMPLATE.replace("@@SPEC@@", &literal).replace("@@CANDIDATE@@", CANDIDATE_FILE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Pass,
    Fail,
    Error,
}

/// The harness wire record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessRecord {
    pub status: RecordStatus,
    pub elapsed_s: f64,
    #[serde(default)]
    pub error_type: String,
    #[serde(default)]
    pub stderr_tail: String,
    #[serde(default)]
    pub mismatch: Option<Mismatch>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no harness record on stdout")]
pub struct MissingRecord;

/// Takes the last stdout line that parses as a harness record.
pub fn parse_record(stdout: &str) -> Result<HarnessRecord, MissingRecord> {
    stdout
        .lines()
        .rev()
        .filter(|l| l.trim_start().starts_with('{'))
        .find_map(|l| serde_json::from_str::<HarnessRecord>(l).ok())
        .filter(|r| r.elapsed_s.is_finite() && r.elapsed_s >= 0.0)
        .ok_or(MissingRecord)
}
