//! Generation and efficiency prompt assembly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BenchmarkKind, Candidate, CandidatePool, Mode, Task};
use crate::pairing::{RefinementInput, Shape};
use crate::profiler::{render_contrast, render_summary, ContrastSignal};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("task `{task}`: {reason}")]
    TemplateError { task: String, reason: String },
    #[error("mode {mode}: {reason}")]
    ChannelMismatch { mode: Mode, reason: String },
    #[error("candidate {0} is not in the pool")]
    UnknownCandidate(u64),
}

/// Which optional sections a prompt carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub guidance: bool,
    pub candidate_a: bool,
    pub profile_a: bool,
    pub candidate_b: bool,
    pub profile_b: bool,
    pub contrast: bool,
    pub failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub text: String,
    pub channels: Channels,
    /// Bytes of rendered profile and contrast text in the prompt.
    pub profile_bytes: usize,
    pub token_estimate: u64,
}

/// Rough token count used for budgeting and offline providers: ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn bundle(text: String, channels: Channels, profile_bytes: usize) -> PromptBundle {
    let token_estimate = estimate_tokens(&text);
    PromptBundle { text, channels, profile_bytes, token_estimate }
}

fn code_block(language: &str, source: &str) -> String {
    format!("```{}\n{}\n```", language.to_ascii_lowercase(), source.trim_end_matches('\n'))
}

fn interface_requirement(task: &Task) -> String {
    match task.benchmark_kind {
        BenchmarkKind::Enamel => "Keep the required function signature (top-level, no class).".to_string(),
        BenchmarkKind::Mercury => {
            format!("Provide class Solution with the required method `{}`.", task.entry_point)
        }
        BenchmarkKind::Evalperf | BenchmarkKind::Custom => {
            format!("Implement the top-level function named `{}` (no class wrapper).", task.entry_point)
        }
    }
}

fn template_error(task: &Task, reason: &str) -> PromptError {
    PromptError::TemplateError { task: task.task_id.clone(), reason: reason.to_string() }
}

/// First-pass prompt: the benchmark's generation template, no tests.
pub fn build_generation_prompt(task: &Task) -> Result<PromptBundle, PromptError> {
    let lang = &task.language;
    let text = match task.benchmark_kind {
        BenchmarkKind::Enamel => {
            let stub = task.stub.as_deref().unwrap_or(&task.description);
            if stub.trim().is_empty() {
                return Err(template_error(task, "ENAMEL prompt needs a stub or description"));
            }
            format!(
                "Complete the following function.\n\n{stub}\n\nRequirements:\n- {}\n- Return only a {lang} code block.\n",
                interface_requirement(task)
            )
        }
        BenchmarkKind::Mercury => {
            let stub = task.stub.as_deref().ok_or_else(|| template_error(task, "Mercury prompt needs a code stub"))?;
            format!(
                "Task:\n{}\n\nCode Stub:\n{stub}\n\nRequirements:\n- {}\n- Return only a {lang} code block.\n",
                task.description,
                interface_requirement(task)
            )
        }
        BenchmarkKind::Evalperf | BenchmarkKind::Custom => {
            if task.description.trim().is_empty() {
                return Err(template_error(task, "empty task description"));
            }
            format!(
                "{}\n\nRequirements:\n- {}\n- Return only a {lang} code block.\n",
                task.description,
                interface_requirement(task)
            )
        }
    };
    Ok(bundle(text, Channels::default(), 0))
}

/// Rendering limits for profile sections.
#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub summary_budget_bytes: usize,
    pub amdahl_k: f64,
}

fn lookup(pool: &CandidatePool, id: u64) -> Result<&Candidate, PromptError> {
    pool.get(id).ok_or(PromptError::UnknownCandidate(id))
}

/// Refinement prompt for one task.
///
/// Candidate A is the program to rewrite (the slower partner, the incorrect
/// fallback partner, or the solo target). Candidate B is the efficient
/// reference when the input is paired. Profile sections appear only in
/// profiling modes; `contrast` may only be supplied for paired inputs in
/// profiling modes.
pub fn build_efficiency_prompt(
    task: &Task,
    pool: &CandidatePool,
    input: &RefinementInput,
    contrast: Option<&ContrastSignal>,
    mode: Mode,
    opts: RenderOptions,
) -> Result<PromptBundle, PromptError> {
    if !mode.refines() {
        return Err(PromptError::ChannelMismatch { mode, reason: "baseline mode does not refine".into() });
    }
    if contrast.is_some() && !(mode.uses_profiling() && input.shape == Shape::Paired) {
        return Err(PromptError::ChannelMismatch {
            mode,
            reason: format!("contrast supplied for a {} input", input.shape.as_str()),
        });
    }
    if input.shape != Shape::Solo && !mode.uses_pairing() {
        return Err(PromptError::ChannelMismatch { mode, reason: "paired input in a solo mode".into() });
    }

    let target = lookup(pool, input.target())?;
    let exemplar = input.exemplar().map(|id| lookup(pool, id)).transpose()?;
    let profiling = mode.uses_profiling() && input.rung != 4;
    let lang = &task.language;
    let mut ch = Channels { guidance: true, candidate_a: true, ..Channels::default() };
    let mut profile_bytes = 0;

    let mut guidance = match (input.shape, input.rung) {
        (Shape::Paired, _) => {
            "Candidate A and Candidate B solve the same task and are structurally similar. Both pass \
             the tests, but Candidate B is faster. Rewrite Candidate A, adopting the efficient choices \
             of Candidate B where they apply."
                .to_string()
        }
        (Shape::PairedIncorrectFallback, _) => {
            "Candidate A fails the tests. Candidate B is a correct solution to the same task. Fix \
             Candidate A so that it passes, keeping it efficient; Candidate B shows a working approach."
                .to_string()
        }
        (Shape::Solo, 4) => "Candidate A fails the tests. Fix it so that it is correct.".to_string(),
        (Shape::Solo, _) => {
            "Candidate A passes the tests. Make it faster without changing its behavior.".to_string()
        }
    };
    if input.shape != Shape::PairedIncorrectFallback && input.rung != 4 {
        let mut times = Vec::new();
        if let Some(t) = target.mean_elapsed() {
            times.push(format!("Candidate A {t:.6}s"));
        }
        if let Some(t) = exemplar.and_then(Candidate::mean_elapsed) {
            times.push(format!("Candidate B {t:.6}s"));
        }
        if !times.is_empty() && contrast.is_none() {
            guidance.push_str(&format!("\nMeasured mean runtime: {}.", times.join(", ")));
        }
    }
    if let Some(c) = contrast {
        let text = render_contrast(c, opts.summary_budget_bytes, opts.amdahl_k);
        profile_bytes += text.len();
        guidance.push_str("\n\nExecution contrast:\n");
        guidance.push_str(text.trim_end());
        ch.contrast = true;
    }
    if !target.is_correct() {
        if let Some(f) = &target.failure {
            guidance.push_str("\n\nExecution feedback for Candidate A:\n");
            guidance.push_str(&f.render());
            ch.failure = true;
        }
    }

    let mut text = format!(
        "Improve the following {lang} code with correctness as the top priority and efficiency as secondary.\n\n\
         Guidance:\n{guidance}\n\nTask:\n{}\n\nCandidate A:\n{}\n",
        task.description.trim_end(),
        code_block(lang, target.source())
    );
    let summary_a = contrast.map(|c| &c.counterpart_summary).or(target.profile.as_ref());
    if let (true, Some(summary)) = (profiling, summary_a) {
        let rendered = render_summary(summary, opts.summary_budget_bytes, opts.amdahl_k);
        profile_bytes += rendered.len();
        text.push_str(&format!("\nProfile A:\n{}\n", rendered.trim_end()));
        ch.profile_a = true;
    }
    if let Some(b) = exemplar {
        text.push_str(&format!("\nCandidate B:\n{}\n", code_block(lang, b.source())));
        ch.candidate_b = true;
        let summary_b = contrast.map(|c| &c.reference_summary).or(b.profile.as_ref());
        if let (true, Some(summary)) = (profiling, summary_b) {
            let rendered = render_summary(summary, opts.summary_budget_bytes, opts.amdahl_k);
            profile_bytes += rendered.len();
            text.push_str(&format!("\nProfile B:\n{}\n", rendered.trim_end()));
            ch.profile_b = true;
        }
    }
    text.push_str(&format!(
        "\nRequirements:\n- {}\n- Keep the program self-contained and do not include tests.\n- Return only a {lang} code block.\n",
        interface_requirement(task)
    ));
    Ok(bundle(text, ch, profile_bytes))
}
