//! Shared helpers for the mini-suite integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use effipair_core::executor::{Executor, FakeBackend};
use effipair_core::pipeline::{load_tasks, run_pipeline, EnvFingerprint, FixedClock, RunManifest, RunSummary, TaskSetId};
use effipair_core::profiler::FakeProfiler;
use effipair_core::refinement::{Engine, GenerationProvider, ReplayProvider, ScriptedProvider};
use effipair_core::similarity::{Embedder, EmbeddingCache, HashedNgramEmbedder};
use effipair_core::{Mode, RunConfig, Task};
use serde::{Deserialize, Serialize};

pub const MODES: [Mode; 4] = [Mode::Baseline, Mode::PairedNoProfiling, Mode::SoloSummary, Mode::Effipair];
pub const FIXED_TIME: &str = "2026-01-01T00:00:00Z";

pub fn suite_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini_suite")
}

pub fn tasks() -> Vec<Task> {
    load_tasks(&suite_dir().join("tasks.json"), None).expect("fixture tasks load")
}

pub fn config(mode: Mode) -> RunConfig {
    RunConfig { mode, n_initial: 3, t_rounds: 3, base_seed: 1, workers: 4, ..RunConfig::default() }
}

pub fn scripted() -> Arc<dyn GenerationProvider> {
    Arc::new(ScriptedProvider::from_file(&suite_dir().join("script.json")).expect("script loads"))
}

pub fn transcript_path(mode: Mode) -> PathBuf {
    suite_dir().join("transcripts").join(format!("{}.jsonl", mode.as_str()))
}

pub fn replay(mode: Mode) -> Arc<dyn GenerationProvider> {
    Arc::new(ReplayProvider::from_file(&transcript_path(mode)).expect("recorded transcript loads"))
}

/// Fake executor, fake profiler, offline hashed embeddings.
pub fn engine(cfg: RunConfig, provider: Arc<dyn GenerationProvider>) -> Engine {
    let workers = cfg.workers;
    Engine::new(
        cfg,
        Executor::new(Arc::new(FakeBackend), workers),
        Arc::new(FakeProfiler),
        Embedder::new(Arc::new(HashedNgramEmbedder::default()), EmbeddingCache::in_memory()),
        provider,
    )
}

pub fn run_with(cfg: RunConfig, provider: Arc<dyn GenerationProvider>, out: &Path) -> RunSummary {
    let tasks = tasks();
    let engine = engine(cfg, provider);
    let clock = FixedClock(FIXED_TIME.into());
    let manifest = RunManifest::new(&engine, TaskSetId::of("mini_suite", &tasks), &clock, EnvFingerprint::current(None));
    run_pipeline(&manifest, tasks, &engine, out, &clock).expect("run succeeds")
}

/// Headline numbers committed alongside the transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Golden {
    pub final_pass_at_1: f64,
    pub final_mean_timing_s: Option<f64>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub provider_calls: usize,
    /// Pass@1 after each round, generation pass first.
    pub pass_at_1_by_round: Vec<f64>,
    pub mean_timing_by_round: Vec<Option<f64>>,
}

pub fn golden() -> BTreeMap<String, Golden> {
    let text = std::fs::read_to_string(suite_dir().join("golden_report.json")).expect("golden report exists");
    serde_json::from_str(&text).expect("golden report parses")
}

pub fn golden_of(summary: &RunSummary, out: &Path) -> Golden {
    let reports: Vec<effipair_core::metrics::RoundReport> =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    Golden {
        final_pass_at_1: summary.final_pass_at_1,
        final_mean_timing_s: summary.final_mean_timing_s,
        prompt_tokens: summary.prompt_tokens,
        completion_tokens: summary.completion_tokens,
        provider_calls: summary.provider_calls,
        pass_at_1_by_round: reports.iter().map(|r| r.pass_at_1).collect(),
        mean_timing_by_round: reports.iter().map(|r| r.mean_timing_s).collect(),
    }
}
