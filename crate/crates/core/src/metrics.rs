//! Pass@1, speedup, DPS / DPS_norm, Beyond, and per-round reports.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Candidate, CandidateId, CandidatePool, ReferenceRuntime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("reference distribution is empty")]
    EmptyReferences,
    #[error("reference #{0} has a non-positive runtime or weight")]
    InvalidReference(usize),
    #[error("no task has a correct final solution under both methods")]
    NoComparableTasks,
    #[error("baseline and method lists differ in length ({0} vs {1})")]
    Misaligned(usize, usize),
}

/// A task's reference solutions and their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistribution {
    runtimes: Vec<f64>,
    raw_weights: Vec<f64>,
    total_weight: f64,
}

impl ReferenceDistribution {
    pub fn new(refs: &[ReferenceRuntime]) -> Result<Self, MetricsError> {
        if refs.is_empty() {
            return Err(MetricsError::EmptyReferences);
        }
        for (i, r) in refs.iter().enumerate() {
            if !(r.runtime_s > 0.0 && r.weight > 0.0 && r.runtime_s.is_finite() && r.weight.is_finite()) {
                return Err(MetricsError::InvalidReference(i));
            }
        }
        Ok(Self {
            runtimes: refs.iter().map(|r| r.runtime_s).collect(),
            raw_weights: refs.iter().map(|r| r.weight).collect(),
            total_weight: refs.iter().map(|r| r.weight).sum(),
        })
    }

    pub fn len(&self) -> usize {
        self.runtimes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runtimes.is_empty()
    }

    pub fn runtimes(&self) -> &[f64] {
        &self.runtimes
    }

    /// Weights normalized to sum to 1.
    pub fn weights(&self) -> Vec<f64> {
        self.raw_weights.iter().map(|w| w / self.total_weight).collect()
    }

    /// `100 * count(runtime >= t) / n`.
    fn slower_or_equal_share(&self, t: f64) -> f64 {
        100.0 * self.runtimes.iter().filter(|&&r| r >= t).count() as f64 / self.runtimes.len() as f64
    }
}

/// Fastest correct candidate, the task's representative solution.
pub fn final_solution(pool: &CandidatePool) -> Option<&Candidate> {
    pool.best_correct()
}

/// `100 * correct / total`; 0 for an empty task set.
pub fn pass_at_1(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

pub fn pass_at_1_pools<'a>(pools: impl IntoIterator<Item = &'a CandidatePool>) -> f64 {
    let (mut correct, mut total) = (0, 0);
    for p in pools {
        total += 1;
        correct += usize::from(final_solution(p).is_some());
    }
    pass_at_1(correct, total)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `mean(baseline) / mean(method)` over tasks where both have a correct
/// final solution (`Some` runtime). Lists are aligned by task.
pub fn speedup(baseline_mean_s: &[Option<f64>], method_mean_s: &[Option<f64>]) -> Result<f64, MetricsError> {
    if baseline_mean_s.len() != method_mean_s.len() {
        return Err(MetricsError::Misaligned(baseline_mean_s.len(), method_mean_s.len()));
    }
    let (b, m): (Vec<f64>, Vec<f64>) = baseline_mean_s
        .iter()
        .zip(method_mean_s)
        .filter_map(|(b, m)| Some(((*b)?, (*m)?)))
        .unzip();
    if b.is_empty() {
        return Err(MetricsError::NoComparableTasks);
    }
    Ok(mean(&b) / mean(&m))
}

/// Weight of references at least as slow as the candidate, scaled to 0-100.
///
/// `candidate_mean_s = None` marks an incorrect final solution and scores 0.
/// `normalized` uses uniform weights.
pub fn dps(candidate_mean_s: Option<f64>, refs: &ReferenceDistribution, normalized: bool) -> Result<f64, MetricsError> {
    if refs.is_empty() {
        return Err(MetricsError::EmptyReferences);
    }
    let Some(t) = candidate_mean_s else { return Ok(0.0) };
    if normalized {
        return Ok(refs.slower_or_equal_share(t));
    }
    let mass: f64 = refs.runtimes.iter().zip(&refs.raw_weights).filter(|(r, _)| **r >= t).map(|(_, w)| w).sum();
    Ok((100.0 * mass / refs.total_weight).clamp(0.0, 100.0))
}

/// Percentage of the distribution at least as slow as the candidate; 0 for
/// an incorrect final solution.
pub fn beyond(candidate_mean_s: Option<f64>, refs: &ReferenceDistribution) -> Result<f64, MetricsError> {
    if refs.is_empty() {
        return Err(MetricsError::EmptyReferences);
    }
    let Some(t) = candidate_mean_s else { return Ok(0.0) };
    Ok(refs.slower_or_equal_share(t))
}

/// Per-task snapshot at the end of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub round: u32,
    pub task_id: String,
    pub final_id: Option<CandidateId>,
    pub correct: bool,
    pub mean_elapsed_s: Option<f64>,
    pub shape: Option<String>,
    pub pool_size: usize,
    pub dps: Option<f64>,
    pub dps_norm: Option<f64>,
    pub beyond: Option<f64>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TaskRow {
    /// Builds a row from the task's pool and optional reference runtimes.
    pub fn from_pool(
        round: u32,
        pool: &CandidatePool,
        refs: Option<&[ReferenceRuntime]>,
        shape: Option<String>,
        tokens: (u64, u64),
    ) -> Result<Self, MetricsError> {
        let best = final_solution(pool);
        let mean = best.and_then(Candidate::mean_elapsed);
        let dist = refs.map(ReferenceDistribution::new).transpose()?;
        let score = |f: &dyn Fn(&ReferenceDistribution) -> Result<f64, MetricsError>| dist.as_ref().map(f).transpose();
        Ok(Self {
            round,
            task_id: pool.task_id().to_string(),
            final_id: best.map(Candidate::id),
            correct: best.is_some(),
            mean_elapsed_s: mean,
            shape,
            pool_size: pool.len(),
            dps: score(&|d| dps(mean, d, false))?,
            dps_norm: score(&|d| dps(mean, d, true))?,
            beyond: score(&|d| beyond(mean, d))?,
            prompt_tokens: tokens.0,
            completion_tokens: tokens.1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub tasks: Vec<TaskRow>,
    pub pass_at_1: f64,
    /// Mean of final-solution runtimes over correct tasks.
    pub mean_timing_s: Option<f64>,
    /// Means over tasks that have reference runtimes.
    pub dps: Option<f64>,
    pub dps_norm: Option<f64>,
    pub beyond: Option<f64>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

impl RoundReport {
    pub fn from_rows(round: u32, tasks: Vec<TaskRow>) -> Self {
        let correct = tasks.iter().filter(|t| t.correct).count();
        Self {
            round,
            pass_at_1: pass_at_1(correct, tasks.len()),
            mean_timing_s: mean_of(tasks.iter().map(|t| t.mean_elapsed_s)),
            dps: mean_of(tasks.iter().map(|t| t.dps)),
            dps_norm: mean_of(tasks.iter().map(|t| t.dps_norm)),
            beyond: mean_of(tasks.iter().map(|t| t.beyond)),
            prompt_tokens: tasks.iter().map(|t| t.prompt_tokens).sum(),
            completion_tokens: tasks.iter().map(|t| t.completion_tokens).sum(),
            tasks,
        }
    }

    /// True when the stored aggregates equal a recomputation from the rows.
    pub fn is_consistent(&self) -> bool {
        *self == Self::from_rows(self.round, self.tasks.clone())
    }
}

/// Writes one CSV row per task per round, with a header.
pub fn write_csv<'a, W: io::Write>(out: W, reports: impl IntoIterator<Item = &'a RoundReport>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for report in reports {
        for row in &report.tasks {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}
