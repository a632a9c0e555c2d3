//! Wires the platform state to its two listeners and its background loops.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use tokio::net::TcpListener;
use tokio::runtime::Runtime;
use tokio::sync::watch;

use seclab_core::config::{LauncherKind, PlatformConfig};
use seclab_core::orchestrator::Launcher;

use crate::http::{api_router, worker_router};
use crate::launcher::{ProcessLauncher, ThreadLauncher};
use crate::runtime::Fault;
use crate::state::{Platform, StartError};

pub const WORKER_BINARY: &str = "seclab-worker";

#[derive(Default)]
pub struct CoordinatorOptions {
    pub worker_fault: Option<Fault>,
    /// Overrides the launcher chosen by the configuration.
    pub launcher: Option<Arc<dyn Launcher>>,
}

#[derive(Debug, thiserror::Error)]
pub enum CoordinatorError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("worker binary not found; set worker_binary")]
    NoWorkerBinary,
    #[error(transparent)]
    Start(#[from] StartError),
    #[error("runtime: {0}")]
    Runtime(std::io::Error),
}

pub struct Coordinator {
    runtime: Option<Runtime>,
    platform: Arc<Platform>,
    api_addr: SocketAddr,
    worker_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
}

fn default_worker_binary() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?;
    [dir.join(WORKER_BINARY), dir.parent()?.join(WORKER_BINARY)].into_iter().find(|p| p.is_file())
}

fn choose_launcher(config: &PlatformConfig, fault: Option<Fault>) -> Result<Arc<dyn Launcher>, CoordinatorError> {
    Ok(match config.launcher {
        LauncherKind::Thread => Arc::new(ThreadLauncher { fault }),
        LauncherKind::Process => {
            let binary = match &config.worker_binary {
                Some(b) => b.clone(),
                None => default_worker_binary().ok_or(CoordinatorError::NoWorkerBinary)?,
            };
            Arc::new(ProcessLauncher { binary, fault })
        }
    })
}

async fn bind(addr: &str) -> Result<TcpListener, CoordinatorError> {
    TcpListener::bind(addr).await.map_err(|source| CoordinatorError::Bind { addr: addr.to_owned(), source })
}

impl Coordinator {
    pub fn start(config: PlatformConfig, options: CoordinatorOptions) -> Result<Self, CoordinatorError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .thread_name("coordinator")
            .build()
            .map_err(CoordinatorError::Runtime)?;
        let launcher = match options.launcher {
            Some(l) => l,
            None => choose_launcher(&config, options.worker_fault)?,
        };
        let (api, worker) = runtime.block_on(async {
            Ok::<_, CoordinatorError>((bind(&config.listen.api).await?, bind(&config.listen.worker).await?))
        })?;
        let api_addr = api.local_addr().map_err(CoordinatorError::Runtime)?;
        let worker_addr = worker.local_addr().map_err(CoordinatorError::Runtime)?;

        let platform = Arc::new(Platform::open(config, launcher, format!("http://{worker_addr}"))?);
        let (shutdown, rx) = watch::channel(false);

        for (listener, router) in [(api, api_router(platform.clone())), (worker, worker_router(platform.clone()))] {
            let mut rx = rx.clone();
            runtime.spawn(async move {
                let serve = axum::serve(listener, router).with_graceful_shutdown(async move {
                    let _ = rx.wait_for(|s| *s).await;
                });
                if let Err(e) = serve.await {
                    tracing::error!("listener stopped: {e}");
                }
            });
        }
        runtime.spawn(dispatcher(platform.clone(), rx.clone()));
        runtime.spawn(sweeper(platform.clone(), rx));
        tracing::info!(%api_addr, %worker_addr, "coordinator started");
        Ok(Self { runtime: Some(runtime), platform, api_addr, worker_addr, shutdown })
    }

    pub fn api_addr(&self) -> SocketAddr {
        self.api_addr
    }

    pub fn worker_addr(&self) -> SocketAddr {
        self.worker_addr
    }

    pub fn platform(&self) -> &Arc<Platform> {
        &self.platform
    }

    /// Blocks until ctrl-c.
    pub fn wait_for_signal(&self) {
        if let Some(rt) = &self.runtime {
            let _ = rt.block_on(tokio::signal::ctrl_c());
        }
    }

    /// Stops the listeners and loops and terminates every sandbox.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let Some(rt) = self.runtime.take() else { return };
        let _ = self.shutdown.send(true);
        self.platform.orchestrator.terminate_all();
        rt.shutdown_timeout(Duration::from_secs(2));
    }
}

impl Drop for Coordinator {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn dispatcher(platform: Arc<Platform>, mut stop: watch::Receiver<bool>) {
    let period = platform.config.dispatch_period();
    loop {
        let p = platform.clone();
        if tokio::task::spawn_blocking(move || p.dispatch_once(Utc::now())).await.is_err() {
            tracing::error!("dispatch pass panicked");
        }
        let mut wait = period;
        if let Some(at) = platform.next_wakeup() {
            wait = wait.min((at - Utc::now()).to_std().unwrap_or(Duration::ZERO));
        }
        tokio::select! {
            _ = tokio::time::sleep(wait) => {}
            _ = platform.wake.notified() => {}
            _ = stop.wait_for(|s| *s) => return,
        }
    }
}

async fn sweeper(platform: Arc<Platform>, mut stop: watch::Receiver<bool>) {
    let every = platform.config.heartbeat_policy().interval / 4;
    loop {
        tokio::select! {
            _ = tokio::time::sleep(every) => {}
            _ = stop.wait_for(|s| *s) => return,
        }
        let p = platform.clone();
        if tokio::task::spawn_blocking(move || p.sweep_once(Utc::now())).await.is_err() {
            tracing::error!("sweep pass panicked");
        }
    }
}
