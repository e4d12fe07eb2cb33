//! Child-process isolation: private scratch directory, captured output,
//! wall-clock timeout enforced by killing the whole process group.

use std::collections::HashSet;
use std::ffi::OsString;
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use tracing::{debug, warn};

/// Environment variable naming the directory under which per-run scratch
/// directories are created.
pub const SCRATCH_ENV: &str = "EFFIPAIR_SCRATCH";

/// Time allowed between the kill signal and the child being reaped.
pub const KILL_GRACE: Duration = Duration::from_secs(2);

const STDOUT_CAP: usize = 8 << 20;
const STDERR_CAP: usize = 64 << 10;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitState {
    Exited(i32),
    Signaled(i32),
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct ChildOutput {
    pub state: ExitState,
    pub stdout: String,
    pub stderr: String,
    pub wall_s: f64,
}

/// One process invocation inside a fresh scratch directory.
#[derive(Debug, Clone)]
pub struct SandboxCommand {
    pub program: OsString,
    pub args: Vec<OsString>,
    /// Files written into the scratch directory before launch.
    pub files: Vec<(String, Vec<u8>)>,
    pub env: Vec<(String, String)>,
    pub timeout: Duration,
}

impl SandboxCommand {
    pub fn new(program: impl Into<OsString>, timeout: Duration) -> Self {
        Self { program: program.into(), args: Vec::new(), files: Vec::new(), env: Vec::new(), timeout }
    }

    pub fn arg(mut self, arg: impl Into<OsString>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn file(mut self, name: &str, contents: impl Into<Vec<u8>>) -> Self {
        self.files.push((name.to_string(), contents.into()));
        self
    }

    pub fn env(mut self, key: &str, value: impl Into<String>) -> Self {
        self.env.push((key.to_string(), value.into()));
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sandbox {
    scratch_root: Option<PathBuf>,
    pin_cores: bool,
}

fn live_groups() -> &'static Mutex<HashSet<i32>> {
    static GROUPS: OnceLock<Mutex<HashSet<i32>>> = OnceLock::new();
    GROUPS.get_or_init(|| Mutex::new(HashSet::new()))
}

/// Kills every process group started by any sandbox in this process.
/// Intended for shutdown paths (signal handlers, fatal errors).
pub fn kill_all_children() {
    let groups = live_groups().lock().unwrap_or_else(|e| e.into_inner());
    for &pgid in groups.iter() {
        // SAFETY: plain syscall on a process group id we created.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
}

struct GroupGuard(i32);

impl GroupGuard {
    fn register(pgid: i32) -> Self {
        live_groups().lock().unwrap_or_else(|e| e.into_inner()).insert(pgid);
        Self(pgid)
    }
}

impl Drop for GroupGuard {
    fn drop(&mut self) {
        // Reap stragglers (background grandchildren) before forgetting the group.
        // SAFETY: plain syscall; ESRCH for an empty group is harmless.
        unsafe {
            libc::kill(-self.0, libc::SIGKILL);
        }
        live_groups().lock().unwrap_or_else(|e| e.into_inner()).remove(&self.0);
    }
}

impl Sandbox {
    /// Uses `$EFFIPAIR_SCRATCH` as the scratch root when set, else the system temp dir.
    pub fn from_env() -> Self {
        Self { scratch_root: std::env::var_os(SCRATCH_ENV).map(PathBuf::from), pin_cores: false }
    }

    pub fn with_scratch_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.scratch_root = Some(root.into());
        self
    }

    /// Best-effort affinity to cores whose recent utilization is below 2%.
    pub fn with_pinning(mut self, on: bool) -> Self {
        self.pin_cores = on;
        self
    }

    pub fn run(&self, cmd: &SandboxCommand) -> io::Result<ChildOutput> {
        let scratch = match &self.scratch_root {
            Some(root) => {
                std::fs::create_dir_all(root)?;
                tempfile::Builder::new().prefix("effipair-").tempdir_in(root)?
            }
            None => tempfile::Builder::new().prefix("effipair-").tempdir()?,
        };
        for (name, contents) in &cmd.files {
            std::fs::write(scratch.path().join(name), contents)?;
        }

        let mut command = Command::new(&cmd.program);
        command
            .args(&cmd.args)
            .current_dir(scratch.path())
            .envs(cmd.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        if self.pin_cores {
            if let Some(core) = next_idle_core() {
                // SAFETY: sched_setaffinity is async-signal-safe and touches only
                // the child's own affinity mask.
                unsafe {
                    command.pre_exec(move || {
                        let mut set: libc::cpu_set_t = std::mem::zeroed();
                        libc::CPU_SET(core, &mut set);
                        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
                        Ok(())
                    });
                }
            }
        }

        let start = Instant::now();
        let mut child = command.spawn()?;
        let _group = GroupGuard::register(child.id() as i32);
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let out_reader = thread::spawn(move || drain(stdout, STDOUT_CAP, false));
        let err_reader = thread::spawn(move || drain(stderr, STDERR_CAP, true));

        let deadline = start + cmd.timeout;
        let state = loop {
            if let Some(status) = child.try_wait()? {
                break match (status.code(), status.signal()) {
                    (Some(code), _) => ExitState::Exited(code),
                    (None, Some(sig)) => ExitState::Signaled(sig),
                    (None, None) => ExitState::Exited(-1),
                };
            }
            if Instant::now() >= deadline {
                debug!(pid = child.id(), "sandbox timeout, killing process group");
                // SAFETY: plain syscall on the child's own process group.
                unsafe {
                    libc::kill(-(child.id() as i32), libc::SIGKILL);
                }
                let reap_deadline = Instant::now() + KILL_GRACE;
                while child.try_wait()?.is_none() {
                    if Instant::now() >= reap_deadline {
                        warn!(pid = child.id(), "child not reaped within grace period");
                        break;
                    }
                    thread::sleep(POLL);
                }
                break ExitState::TimedOut;
            }
            thread::sleep(POLL);
        };
        let wall_s = start.elapsed().as_secs_f64();
        drop(_group);
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        Ok(ChildOutput { state, stdout, stderr, wall_s })
    }
}

/// Reads a pipe to EOF keeping at most `cap` bytes (the head, or the tail when `keep_tail`).
fn drain(mut pipe: impl Read, cap: usize, keep_tail: bool) -> String {
    let mut kept: Vec<u8> = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match pipe.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                kept.extend_from_slice(&buf[..n]);
                if kept.len() > cap {
                    if keep_tail {
                        let excess = kept.len() - cap;
                        kept.drain(..excess);
                    } else {
                        kept.truncate(cap);
                    }
                }
            }
        }
    }
    String::from_utf8_lossy(&kept).into_owned()
}

fn cpu_times() -> Option<Vec<(u64, u64)>> {
    let text = std::fs::read_to_string("/proc/stat").ok()?;
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("cpu") else { continue };
        if rest.starts_with(' ') {
            continue;
        }
        let nums: Vec<u64> = rest.split_whitespace().skip(1).filter_map(|v| v.parse().ok()).collect();
        if nums.len() < 4 {
            continue;
        }
        let idle = nums[3] + nums.get(4).copied().unwrap_or(0);
        out.push((nums.iter().sum(), idle));
    }
    Some(out)
}

fn idle_cores() -> &'static [usize] {
    static CORES: OnceLock<Vec<usize>> = OnceLock::new();
    CORES.get_or_init(|| {
        let Some(a) = cpu_times() else { return Vec::new() };
        thread::sleep(Duration::from_millis(200));
        let Some(b) = cpu_times() else { return Vec::new() };
        a.iter()
            .zip(&b)
            .enumerate()
            .filter_map(|(i, ((ta, ia), (tb, ib)))| {
                let total = tb.saturating_sub(*ta) as f64;
                let busy = total - ib.saturating_sub(*ia) as f64;
                (total > 0.0 && busy / total < 0.02).then_some(i)
            })
            .collect()
    })
}

fn next_idle_core() -> Option<usize> {
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    let cores = idle_cores();
    if cores.is_empty() {
        return None;
    }
    Some(cores[NEXT.fetch_add(1, Ordering::Relaxed) % cores.len()])
}
