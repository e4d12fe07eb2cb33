//! Prompt construction, provider calls, code extraction, and the round loop.

mod extract;
mod prompt;
mod provider;
mod round;

pub use extract::{extract_code, ExtractError, RefinedProgram};
pub use prompt::{
    build_efficiency_prompt, build_generation_prompt, estimate_tokens, Channels, PromptBundle,
    PromptError, RenderOptions,
};
pub use provider::{
    derive_seed, prompt_hash, read_transcript, Completion, GenerationProvider, GenerationRequest,
    HttpChatProvider, ProviderError, ReplayProvider, ScriptedProvider, TranscriptRecord,
    API_BASE_ENV, API_KEY_ENV, MODEL_ENV,
};
pub use round::{Engine, ProviderCall, RoundOutput, TaskRoundStats, TaskState};
