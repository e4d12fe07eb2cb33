//! Inference-time refinement of generated programs driven by contrastive
//! execution feedback.
//!
//! A run samples several candidate programs per task, executes and profiles
//! them, pairs a fast correct reference with a similar slower counterpart,
//! and asks a generation provider to rewrite the slower one using a compact
//! summary of where the two differ. Refined programs flow back into a
//! per-task pool for later rounds.

pub mod executor;
pub mod metrics;
pub mod model;
pub mod pairing;
pub mod pipeline;
pub mod profiler;
pub mod refinement;
pub mod sandbox;
pub mod similarity;

pub use model::{
    BenchmarkKind, Candidate, CandidateId, CandidatePool, Correctness, InsertResult, Mode,
    Origin, RunConfig, Task,
};
