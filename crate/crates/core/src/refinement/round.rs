//! The generation pass and refinement rounds over all task pools.

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::extract::extract_code;
use super::prompt::{build_efficiency_prompt, build_generation_prompt, Channels, PromptBundle, RenderOptions};
use super::provider::{derive_seed, prompt_hash, Completion, GenerationProvider, GenerationRequest, ProviderError, TranscriptRecord};
use crate::executor::Executor;
use crate::model::{Candidate, CandidateId, CandidatePool, Correctness, InsertResult, Origin, RunConfig, Task};
use crate::pairing::{select_round_input, RefinementInput, Shape};
use crate::profiler::{contrast, profile_candidate, summarize, ProfilerBackend};
use crate::similarity::Embedder;

/// Per-task mutable state carried across rounds.
#[derive(Debug, Clone)]
pub struct TaskState {
    pub index: usize,
    pub task: Arc<Task>,
    pub pool: CandidatePool,
    /// Candidates whose profiling or embedding failed; not retried.
    pub attempted: HashSet<(CandidateId, &'static str)>,
}

impl TaskState {
    pub fn new(index: usize, task: Task) -> Self {
        let pool = CandidatePool::new(task.task_id.clone());
        Self { index, task: Arc::new(task), pool, attempted: HashSet::new() }
    }
}

/// One provider call and what became of its response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderCall {
    pub task_id: String,
    pub round: u32,
    pub sample: u32,
    pub seed: u64,
    pub provider_id: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub channels: Channels,
    pub profile_bytes: usize,
    pub response: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub error: Option<String>,
    pub extraction_note: Option<String>,
    pub inserted: Option<CandidateId>,
    pub duplicate_of: Option<CandidateId>,
}

impl ProviderCall {
    /// The replayable part of a successful call.
    pub fn transcript_record(&self) -> Option<TranscriptRecord> {
        let response = self.response.clone()?;
        Some(TranscriptRecord {
            task_id: self.task_id.clone(),
            round: self.round,
            sample: self.sample,
            seed: self.seed,
            provider_id: self.provider_id.clone(),
            prompt_hash: self.prompt_hash.clone(),
            prompt: self.prompt.clone(),
            response,
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskRoundStats {
    pub task_id: String,
    pub selection: Option<RefinementInput>,
    /// Why no refinement call was made this round, if none was.
    pub skipped: Option<String>,
    pub inserted: Vec<CandidateId>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundOutput {
    pub round: u32,
    pub calls: Vec<ProviderCall>,
    pub tasks: Vec<TaskRoundStats>,
}

impl RoundOutput {
    pub fn prompt_tokens(&self) -> u64 {
        self.calls.iter().map(|c| c.prompt_tokens).sum()
    }

    pub fn completion_tokens(&self) -> u64 {
        self.calls.iter().map(|c| c.completion_tokens).sum()
    }
}

struct Pending {
    task_slot: usize,
    request: GenerationRequest,
    bundle: PromptBundle,
    origin: Origin,
    parents: Vec<CandidateId>,
}

/// Everything a round needs besides the pools.
pub struct Engine {
    pub cfg: RunConfig,
    pub executor: Executor,
    pub profiler: Arc<dyn ProfilerBackend>,
    pub embedder: Embedder,
    pub provider: Arc<dyn GenerationProvider>,
    threads: rayon::ThreadPool,
}

impl Engine {
    pub fn new(
        cfg: RunConfig,
        executor: Executor,
        profiler: Arc<dyn ProfilerBackend>,
        embedder: Embedder,
        provider: Arc<dyn GenerationProvider>,
    ) -> Self {
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .thread_name(|i| format!("effipair-worker-{i}"))
            .build()
            .expect("worker pool builds");
        Self { cfg, executor, profiler, embedder, provider, threads }
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions { summary_budget_bytes: self.cfg.summary_budget_bytes, amdahl_k: self.cfg.amdahl_k }
    }

    /// Evaluates, embeds, and profiles every entry that still needs it.
    fn settle(&self, state: &mut TaskState, errors: &mut Vec<String>) {
        let ids: Vec<CandidateId> = state.pool.entries().iter().map(Candidate::id).collect();
        for id in ids {
            let c = state.pool.get(id).expect("id from pool").clone();
            if c.correctness == Correctness::Unknown {
                let eval = self.executor.evaluate(&state.task, &c.source_arc(), &self.cfg);
                state.pool.update(id, |e| {
                    e.correctness = eval.correctness;
                    e.elapsed = Some(eval.elapsed);
                    e.failure = eval.failure;
                });
            }
            let c = state.pool.get(id).expect("id from pool").clone();
            if self.cfg.mode.uses_pairing()
                && c.ast_vector.is_some()
                && c.embedding.is_none()
                && !state.attempted.contains(&(id, "embed"))
            {
                match self.embedder.embed(c.source()) {
                    Ok(v) => {
                        state.pool.update(id, |e| e.embedding = Some(v));
                    }
                    Err(e) => {
                        state.attempted.insert((id, "embed"));
                        errors.push(format!("embedding candidate {id}: {e}"));
                    }
                }
            }
            if self.cfg.mode.uses_profiling()
                && c.is_correct()
                && c.profile.is_none()
                && !state.attempted.contains(&(id, "profile"))
            {
                match profile_candidate(&self.executor, self.profiler.as_ref(), &state.task, &c, &self.cfg) {
                    Ok(raw) => {
                        let summary = summarize(&raw, c.source());
                        state.pool.update(id, |e| e.profile = Some(summary));
                    }
                    Err(e) => {
                        state.attempted.insert((id, "profile"));
                        errors.push(format!("profiling candidate {id}: {e}"));
                    }
                }
            }
        }
    }

    fn call_all(&self, pending: &[Pending]) -> Vec<Result<Completion, ProviderError>> {
        let reqs: Vec<GenerationRequest> = pending.iter().map(|p| p.request.clone()).collect();
        if self.provider.supports_batch() {
            self.provider.complete_batch(&reqs)
        } else {
            self.threads.install(|| reqs.par_iter().map(|r| self.provider.complete(r)).collect())
        }
    }

    /// Calls the provider for every pending prompt, then inserts and settles
    /// the resulting programs task by task.
    fn dispatch(&self, states: &mut [TaskState], round: u32, pending: Vec<Pending>, stats: &mut [TaskRoundStats]) -> Vec<ProviderCall> {
        let results = self.call_all(&pending);
        let mut per_task: Vec<Vec<(Pending, Result<Completion, ProviderError>)>> =
            (0..states.len()).map(|_| Vec::new()).collect();
        for (p, r) in pending.into_iter().zip(results) {
            per_task[p.task_slot].push((p, r));
        }
        let provider_id = self.provider.id().to_string();
        let calls: Vec<Vec<ProviderCall>> = self.threads.install(|| {
            states
                .par_iter_mut()
                .zip(stats.par_iter_mut())
                .zip(per_task.into_par_iter())
                .map(|((state, st), items)| {
                    let mut calls = Vec::new();
                    for (p, result) in items {
                        let mut call = ProviderCall {
                            task_id: state.task.task_id.clone(),
                            round,
                            sample: p.request.sample,
                            seed: p.request.seed,
                            provider_id: provider_id.clone(),
                            prompt_hash: prompt_hash(&p.request.prompt),
                            prompt: p.request.prompt,
                            channels: p.bundle.channels,
                            profile_bytes: p.bundle.profile_bytes,
                            response: None,
                            prompt_tokens: 0,
                            completion_tokens: 0,
                            error: None,
                            extraction_note: None,
                            inserted: None,
                            duplicate_of: None,
                        };
                        match result {
                            Err(e) => {
                                warn!(task = %state.task.task_id, round, "provider call failed: {e}");
                                call.error = Some(e.to_string());
                                st.errors.push(format!("provider: {e}"));
                            }
                            Ok(done) => {
                                call.prompt_tokens = done.prompt_tokens;
                                call.completion_tokens = done.completion_tokens;
                                match extract_code(&done.text) {
                                    Err(e) => {
                                        call.error = Some(e.to_string());
                                        st.errors.push(format!("sample {}: {e}", p.request.sample));
                                    }
                                    Ok(prog) => {
                                        call.extraction_note = Some(prog.extraction_note);
                                        let cand = Candidate::new(prog.source, round, p.origin, p.parents);
                                        match state.pool.insert(cand) {
                                            InsertResult::Inserted(id) => {
                                                call.inserted = Some(id);
                                                st.inserted.push(id);
                                            }
                                            InsertResult::RejectedDuplicate { existing } => {
                                                debug!(task = %state.task.task_id, existing, "duplicate rejected");
                                                call.duplicate_of = Some(existing);
                                            }
                                        }
                                    }
                                }
                                call.response = Some(done.text);
                            }
                        }
                        calls.push(call);
                    }
                    self.settle(state, &mut st.errors);
                    calls
                })
                .collect()
        });
        calls.into_iter().flatten().collect()
    }

    /// Round 0: `n_initial` generation samples per task.
    pub fn generation_pass(&self, states: &mut [TaskState]) -> RoundOutput {
        let mut stats: Vec<TaskRoundStats> =
            states.iter().map(|s| TaskRoundStats { task_id: s.task.task_id.clone(), ..Default::default() }).collect();
        let mut pending = Vec::new();
        for (slot, state) in states.iter().enumerate() {
            match build_generation_prompt(&state.task) {
                Err(e) => stats[slot].errors.push(e.to_string()),
                Ok(bundle) => {
                    for sample in 0..self.cfg.n_initial {
                        pending.push(Pending {
                            task_slot: slot,
                            request: GenerationRequest {
                                task_id: state.task.task_id.clone(),
                                round: 0,
                                sample,
                                seed: derive_seed(self.cfg.base_seed, 0, state.index, sample),
                                prompt: bundle.text.clone(),
                            },
                            bundle: bundle.clone(),
                            origin: Origin::Generation,
                            parents: Vec::new(),
                        });
                    }
                }
            }
        }
        let calls = self.dispatch(states, 0, pending, &mut stats);
        RoundOutput { round: 0, calls, tasks: stats }
    }

    fn plan(&self, state: &TaskState, st: &mut TaskRoundStats) -> Option<(RefinementInput, PromptBundle)> {
        let input = match select_round_input(&state.pool, &self.cfg) {
            Ok(i) => i,
            Err(e) => {
                st.skipped = Some(e.to_string());
                return None;
            }
        };
        st.selection = Some(input.clone());
        if self.cfg.strict_pairing && self.cfg.mode.uses_pairing() && input.shape != Shape::Paired {
            st.skipped = Some("strict pairing: no viable pair".into());
            return None;
        }
        let signal = if self.cfg.mode.uses_profiling() && input.shape == Shape::Paired {
            let plus = state.pool.get(input.reference).expect("selected from pool");
            let minus = state.pool.get(input.target()).expect("selected from pool");
            match contrast(plus, minus) {
                Ok(s) => Some(s),
                Err(e) => {
                    st.errors.push(format!("contrast: {e}"));
                    None
                }
            }
        } else {
            None
        };
        match build_efficiency_prompt(&state.task, &state.pool, &input, signal.as_ref(), self.cfg.mode, self.render_options()) {
            Ok(bundle) => Some((input, bundle)),
            Err(e) => {
                st.errors.push(e.to_string());
                st.skipped = Some("prompt could not be built".into());
                None
            }
        }
    }

    /// One refinement round: select, prompt, call, insert, settle.
    pub fn run_round(&self, states: &mut [TaskState], round: u32) -> RoundOutput {
        assert!(round >= 1, "refinement rounds start at 1");
        let mut stats: Vec<TaskRoundStats> =
            states.iter().map(|s| TaskRoundStats { task_id: s.task.task_id.clone(), ..Default::default() }).collect();
        let plans: Vec<Option<(RefinementInput, PromptBundle)>> = self.threads.install(|| {
            states.par_iter().zip(stats.par_iter_mut()).map(|(state, st)| self.plan(state, st)).collect()
        });
        let mut pending = Vec::new();
        for (slot, plan) in plans.into_iter().enumerate() {
            let Some((input, bundle)) = plan else { continue };
            let state = &states[slot];
            let origin = match input.shape {
                Shape::Solo => Origin::RefinementSolo,
                Shape::Paired | Shape::PairedIncorrectFallback => Origin::RefinementPaired,
            };
            let mut parents = vec![input.target()];
            parents.extend(input.exemplar());
            pending.push(Pending {
                task_slot: slot,
                request: GenerationRequest {
                    task_id: state.task.task_id.clone(),
                    round,
                    sample: 0,
                    seed: derive_seed(self.cfg.base_seed, round, state.index, 0),
                    prompt: bundle.text.clone(),
                },
                bundle,
                origin,
                parents,
            });
        }
        let calls = self.dispatch(states, round, pending, &mut stats);
        RoundOutput { round, calls, tasks: stats }
    }
}
