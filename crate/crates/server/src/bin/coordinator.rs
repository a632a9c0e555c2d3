use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use seclab_core::config::load_config;
use seclab_server::{Coordinator, CoordinatorOptions};

/// Runs the platform coordinator.
#[derive(Parser)]
#[command(name = "seclab-coordinator", version)]
struct Args {
    /// Platform configuration file.
    #[arg(long, short, default_value = "seclab.toml")]
    config: PathBuf,
    /// Validate the configuration and exit.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let config = match load_config(&args.config) {
        Ok((c, unknown)) => {
            for key in unknown {
                eprintln!("seclab-coordinator: warning: unknown configuration key {key}");
            }
            c
        }
        Err(e) => {
            eprintln!("seclab-coordinator: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    if args.check {
        println!("{}: ok", args.config.display());
        return ExitCode::SUCCESS;
    }
    let coordinator = match Coordinator::start(config, CoordinatorOptions::default()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("seclab-coordinator: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("api listening on {}", coordinator.api_addr());
    println!("worker endpoint on {}", coordinator.worker_addr());
    coordinator.wait_for_signal();
    tracing::info!("shutting down");
    coordinator.shutdown();
    ExitCode::SUCCESS
}
