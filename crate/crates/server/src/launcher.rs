//! Ways to start a sandbox worker.

use std::io;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use seclab_core::orchestrator::{LaunchSpec, Launcher, WorkerHandle};

use crate::runtime::{run_worker, Fault, WorkerArgs};

pub const ENV_COORDINATOR: &str = "SECLAB_COORDINATOR";
pub const ENV_SANDBOX_ID: &str = "SECLAB_SANDBOX_ID";
pub const ENV_SANDBOX_TOKEN: &str = "SECLAB_SANDBOX_TOKEN";
pub const ENV_SCOPED_ROOT: &str = "SECLAB_SCOPED_ROOT";
/// Fault injection for tests, e.g. `crash:running`.
pub const ENV_FAULT: &str = "SECLAB_FAULT";

/// One OS process per sandbox with a data-segment limit of the memory ceiling.
pub struct ProcessLauncher {
    pub binary: PathBuf,
    pub fault: Option<Fault>,
}

struct ProcessHandle(Child);

impl WorkerHandle for ProcessHandle {
    fn kill(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }

    fn is_alive(&mut self) -> bool {
        matches!(self.0.try_wait(), Ok(None))
    }

    fn describe(&self) -> String {
        format!("pid:{}", self.0.id())
    }
}

impl Launcher for ProcessLauncher {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn WorkerHandle>> {
        let mut cmd = Command::new(&self.binary);
        cmd.env_clear()
            .env(ENV_COORDINATOR, &spec.coordinator)
            .env(ENV_SANDBOX_ID, spec.sandbox_id.to_string())
            .env(ENV_SANDBOX_TOKEN, spec.token.to_hex())
            .env(ENV_SCOPED_ROOT, &spec.scoped_root)
            .current_dir(&spec.scoped_root)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::inherit());
        for var in ["RUST_LOG", "RUST_BACKTRACE", "PATH"] {
            if let Ok(v) = std::env::var(var) {
                cmd.env(var, v);
            }
        }
        if let Some(f) = &self.fault {
            cmd.env(ENV_FAULT, f.to_string());
        }
        let limit = spec.memory_ceiling_mb.saturating_mul(1024 * 1024);
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            // SAFETY: setrlimit is async-signal-safe and touches no memory shared with the parent.
            unsafe {
                cmd.pre_exec(move || {
                    let lim = libc::rlimit { rlim_cur: limit as libc::rlim_t, rlim_max: limit as libc::rlim_t };
                    if libc::setrlimit(libc::RLIMIT_DATA, &lim) != 0 {
                        return Err(io::Error::last_os_error());
                    }
                    Ok(())
                });
            }
        }
        Ok(Box::new(ProcessHandle(cmd.spawn()?)))
    }
}

/// Runs workers as threads of the coordinator. No memory isolation; for tests.
#[derive(Default)]
pub struct ThreadLauncher {
    pub fault: Option<Fault>,
}

struct ThreadHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    name: String,
}

impl WorkerHandle for ThreadHandle {
    fn kill(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    fn is_alive(&mut self) -> bool {
        self.thread.as_ref().map_or(false, |t| !t.is_finished())
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

impl Launcher for ThreadLauncher {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn WorkerHandle>> {
        let args = WorkerArgs {
            coordinator: spec.coordinator.clone(),
            sandbox_id: spec.sandbox_id,
            token: spec.token.clone(),
            scoped_root: spec.scoped_root.clone(),
            fault: self.fault,
            in_process: true,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let name = format!("worker-{}", spec.sandbox_id);
        let thread = std::thread::Builder::new().name(name.clone()).spawn(move || {
            if let Err(e) = run_worker(args, flag) {
                tracing::warn!("worker thread exited: {e}");
            }
        })?;
        Ok(Box::new(ThreadHandle { stop, thread: Some(thread), name: format!("thread:{name}") }))
    }
}
