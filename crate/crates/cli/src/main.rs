use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use effipair_core::executor::{ExecutionBackend, Executor, FakeBackend, SubprocessBackend};
use effipair_core::pipeline::{
    load_tasks, run_pipeline, EnvFingerprint, PipelineError, RunManifest, SystemClock, TaskSetId, EXIT_CONFIG,
    EXIT_FAILURE, EXIT_OK, EXIT_PROVIDER,
};
use effipair_core::profiler::{FakeProfiler, ProfilerBackend, ShimProfiler};
use effipair_core::refinement::{Engine, GenerationProvider, HttpChatProvider, ReplayProvider, ScriptedProvider, API_KEY_ENV};
use effipair_core::sandbox::{kill_all_children, Sandbox};
use effipair_core::similarity::{Embedder, EmbeddingCache, HashedNgramEmbedder, HttpEmbeddingProvider};
use effipair_core::{BenchmarkKind, Mode, RunConfig};
use tracing_subscriber::EnvFilter;

const EMBED_BASE_ENV: &str = "EFFIPAIR_EMBED_BASE";
const EMBED_MODEL_ENV: &str = "EFFIPAIR_EMBED_MODEL";

#[derive(Parser)]
#[command(name = "effipair", version, about = "Refine generated programs with contrastive execution feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, evaluate, and refine candidates for every task.
    Run(Box<RunArgs>),
    /// Load and validate a task file, then print a one-line summary.
    CheckTasks {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        benchmark: Option<BenchmarkKind>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Http,
    Replay,
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbeddingKind {
    /// Offline hashed token n-grams.
    Hashed,
    /// OpenAI-compatible `/embeddings` endpoint.
    Http,
    /// Only vectors already in `--embedding-cache`.
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecutorKind {
    Subprocess,
    Fake,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfilerKind {
    Shim,
    Fake,
}

#[derive(Args)]
struct RunArgs {
    /// Task file (JSON array, or JSON Lines with a `.jsonl` extension).
    #[arg(long)]
    tasks: PathBuf,
    /// Benchmark kind for entries that do not name one.
    #[arg(long)]
    benchmark: Option<BenchmarkKind>,
    #[arg(long, default_value = "effipair")]
    mode: Mode,
    /// Initial samples per task (N).
    #[arg(long, default_value_t = 3)]
    candidates: u32,
    /// Refinement rounds (T).
    #[arg(long, default_value_t = 3)]
    rounds: u32,
    /// Embedding weight in the similarity mixture.
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    /// Similarity threshold for pairing.
    #[arg(long, default_value_t = 0.85)]
    tau: f64,
    #[arg(long, default_value_t = 16)]
    workers: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Defaults to `replay` when `--replay` is given, else `http`.
    #[arg(long)]
    provider: Option<ProviderKind>,
    /// Transcript file to replay.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Scripted responses file for `--provider scripted`.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value = "hashed")]
    embedding_provider: EmbeddingKind,
    /// JSONL embedding cache; in-memory when omitted.
    #[arg(long)]
    embedding_cache: Option<PathBuf>,
    /// Vector length for `--embedding-provider http|replay`.
    #[arg(long, default_value_t = 1536)]
    embedding_dim: usize,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Skip a task's round when no similar correct pair exists.
    #[arg(long)]
    strict_pairing: bool,
    /// Pin sandboxed children to idle cores.
    #[arg(long)]
    pin_cores: bool,
    #[arg(long, default_value = "subprocess")]
    executor: ExecutorKind,
    #[arg(long, default_value = "shim")]
    profiler: ProfilerKind,
    /// Profiling shim script.
    #[arg(long, env = "EFFIPAIR_SHIM")]
    shim: Option<PathBuf>,
    #[arg(long, default_value = "python3")]
    python: PathBuf,
    #[arg(long, default_value_t = 3)]
    timing_runs: u32,
    #[arg(long, default_value_t = 30)]
    correctness_timeout: u64,
    #[arg(long, default_value_t = 120)]
    profiling_timeout: u64,
}

/// A failure with the exit code it maps to.
struct Fatal(i32, anyhow::Error);

fn config(e: impl Into<anyhow::Error>) -> Fatal {
    Fatal(EXIT_CONFIG, e.into())
}

fn python_version(python: &Path) -> Option<String> {
    let out = std::process::Command::new(python).arg("--version").output().ok()?;
    let text = if out.stdout.is_empty() { out.stderr } else { out.stdout };
    Some(String::from_utf8_lossy(&text).trim().to_string())
}

fn build_provider(args: &RunArgs) -> Result<Arc<dyn GenerationProvider>> {
    let kind = args.provider.unwrap_or(if args.replay.is_some() { ProviderKind::Replay } else { ProviderKind::Http });
    Ok(match kind {
        ProviderKind::Replay => {
            let path = args.replay.as_ref().context("--provider replay needs --replay <transcript>")?;
            let p = ReplayProvider::from_file(path)?;
            if p.is_empty() {
                bail!("{} contains no transcript records", path.display());
            }
            Arc::new(p)
        }
        ProviderKind::Scripted => {
            let path = args.script.as_ref().context("--provider scripted needs --script <file>")?;
            Arc::new(ScriptedProvider::from_file(path)?)
        }
        ProviderKind::Http => Arc::new(HttpChatProvider::from_env()?),
    })
}

fn build_embedder(args: &RunArgs) -> Result<Embedder> {
    let cache = match &args.embedding_cache {
        Some(p) => EmbeddingCache::open(p)?,
        None => EmbeddingCache::in_memory(),
    };
    Ok(match args.embedding_provider {
        EmbeddingKind::Hashed => Embedder::new(Arc::new(HashedNgramEmbedder::default()), cache),
        EmbeddingKind::Http => {
            let base = std::env::var(EMBED_BASE_ENV).with_context(|| format!("{EMBED_BASE_ENV} is not set"))?;
            let model = std::env::var(EMBED_MODEL_ENV).with_context(|| format!("{EMBED_MODEL_ENV} is not set"))?;
            let key = std::env::var(API_KEY_ENV).ok();
            Embedder::new(Arc::new(HttpEmbeddingProvider::new(&base, key, &model, args.embedding_dim)?), cache)
        }
        EmbeddingKind::Replay => {
            if cache.is_empty() {
                bail!("--embedding-provider replay needs a non-empty --embedding-cache");
            }
            Embedder::replay_only("replay", args.embedding_dim, cache)
        }
    })
}

fn run(args: RunArgs) -> Result<i32, Fatal> {
    let cfg = RunConfig {
        n_initial: args.candidates,
        t_rounds: args.rounds,
        alpha: args.alpha,
        tau: args.tau,
        workers: args.workers,
        base_seed: args.seed,
        correctness_timeout_s: args.correctness_timeout,
        profiling_timeout_s: args.profiling_timeout,
        timing_runs: args.timing_runs,
        mode: args.mode,
        strict_pairing: args.strict_pairing,
        pin_cores: args.pin_cores,
        ..RunConfig::default()
    };
    cfg.validate().map_err(config)?;
    let tasks = load_tasks(&args.tasks, args.benchmark).map_err(config)?;

    let sandbox = Sandbox::from_env().with_pinning(args.pin_cores);
    let (backend, python): (Arc<dyn ExecutionBackend>, Option<String>) = match args.executor {
        ExecutorKind::Fake => (Arc::new(FakeBackend), None),
        ExecutorKind::Subprocess => {
            let version = python_version(&args.python)
                .ok_or_else(|| config(anyhow::anyhow!("cannot run `{}`", args.python.display())))?;
            (Arc::new(SubprocessBackend::new(&args.python, sandbox.clone())), Some(version))
        }
    };
    let profiler: Arc<dyn ProfilerBackend> = match args.profiler {
        ProfilerKind::Fake => Arc::new(FakeProfiler),
        ProfilerKind::Shim => {
            let shim = match &args.shim {
                Some(s) => s.clone(),
                None if cfg.mode.uses_profiling() => {
                    return Err(config(anyhow::anyhow!("mode {} needs --shim or --profiler fake", cfg.mode.as_str())))
                }
                None => PathBuf::from("shim.py"),
            };
            Arc::new(ShimProfiler::new(&args.python, shim, sandbox))
        }
    };
    let provider = build_provider(&args).map_err(|e| Fatal(EXIT_PROVIDER, e))?;
    let embedder = build_embedder(&args).map_err(config)?;

    let task_set = TaskSetId::of(args.tasks.display().to_string(), &tasks);
    let engine = Engine::new(cfg, Executor::new(backend, args.workers), profiler, embedder, provider);
    let manifest = RunManifest::new(&engine, task_set, &SystemClock, EnvFingerprint::current(python));
    let summary = run_pipeline(&manifest, tasks, &engine, &args.out, &SystemClock).map_err(|e: PipelineError| {
        let code = e.exit_code();
        Fatal(code, e.into())
    })?;
    println!(
        "pass@1 {:.2}  mean timing {}  calls {} ({} failed)  tokens {}/{}  -> {}",
        summary.final_pass_at_1,
        summary.final_mean_timing_s.map_or("n/a".into(), |t| format!("{t:.6}s")),
        summary.provider_calls,
        summary.provider_errors,
        summary.prompt_tokens,
        summary.completion_tokens,
        args.out.display(),
    );
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = ctrlc::set_handler(|| {
        kill_all_children();
        std::process::exit(130);
    }) {
        tracing::warn!("signal handler not installed: {e}");
    }

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(*args),
        Command::CheckTasks { tasks, benchmark } => load_tasks(&tasks, benchmark)
            .map(|t| {
                println!("{} tasks OK", t.len());
                EXIT_OK
            })
            .map_err(config),
    };
    let code = match result {
        Ok(code) => code,
        Err(Fatal(code, e)) => {
            eprintln!("error: {e:#}");
            code
        }
    };
    ExitCode::from(u8::try_from(code).unwrap_or(EXIT_FAILURE as u8))
}
