use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use seclab_server::runtime::{run_worker, WorkerArgs};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let args = match WorkerArgs::from_env() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("seclab-worker: {e}");
            return ExitCode::from(2);
        }
    };
    match run_worker(args, Arc::new(AtomicBool::new(false))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seclab-worker: {e}");
            ExitCode::FAILURE
        }
    }
}
