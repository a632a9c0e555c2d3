//! `seclab`: upload, share, run and inspect jobs on a platform coordinator.
//!
//! Exit codes: 0 success, 1 API or transport error, 2 usage or configuration error,
//! 3 the job ended failed or cancelled.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use seclab_client::{demo, Client, ClientError};
use seclab_core::analytics::{DataSeries, ResultSet};
use seclab_core::api::WorkflowRequest;
use seclab_core::dataprep::Schema;
use seclab_core::ids::{AgreementId, DatasetId, JobId, PrincipalId, SandboxId, WorkflowId};
use seclab_core::scheduler::{JobRecord, JobState, Schedule};
use seclab_core::token::BearerToken;

#[derive(Parser)]
#[command(name = "seclab", version, about = "Client for the secure analytics sandbox platform")]
struct Cli {
    /// Profile file with `endpoint`, `principal` and `token`.
    #[arg(long, global = true, env = "SECLAB_CONFIG")]
    config: Option<PathBuf>,
    /// Coordinator API base URL.
    #[arg(long, global = true, env = "SECLAB_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, global = true, env = "SECLAB_PRINCIPAL")]
    principal: Option<String>,
    /// API token, 64 hex characters.
    #[arg(long, global = true, env = "SECLAB_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Output::Text)]
    output: Output,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt a CSV file locally and upload it as a dataset.
    Upload {
        file: PathBuf,
        #[arg(long)]
        name: Option<String>,
        /// JSON schema file; inferred from the data when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// List datasets visible to you.
    Datasets {
        #[arg(long)]
        owner: Option<String>,
    },
    /// Grant another principal use of one of your datasets.
    Share {
        dataset: DatasetId,
        #[arg(long = "with")]
        consumer: String,
        /// Validity, e.g. `7d` or `12h`.
        #[arg(long, default_value = "30d", value_parser = humantime::parse_duration)]
        ttl: Duration,
    },
    /// Revoke a sharing agreement you granted.
    Revoke { agreement: AgreementId },
    /// List agreements you are party to.
    Agreements,
    /// Validate and store a workflow from a JSON file.
    Workflow {
        file: PathBuf,
        /// Only validate; print the output schema.
        #[arg(long)]
        check: bool,
    },
    /// Submit a job for a stored workflow.
    Run {
        workflow: WorkflowId,
        /// Start time (RFC 3339).
        #[arg(long, conflicts_with = "after")]
        at: Option<chrono::DateTime<chrono::Utc>>,
        /// Start after a delay, e.g. `90s`.
        #[arg(long, value_parser = humantime::parse_duration)]
        after: Option<Duration>,
        /// Block until the job ends and print its results.
        #[arg(long)]
        wait: bool,
        #[arg(long, default_value = "10m", value_parser = humantime::parse_duration)]
        timeout: Duration,
    },
    /// Show one job, or all of yours.
    Status { job: Option<JobId> },
    /// Cancel a job that has not started.
    Cancel { job: JobId },
    /// Fetch and decrypt the results of a completed job.
    Results {
        job: JobId,
        /// Print the visualization series instead of the result set.
        #[arg(long)]
        series: bool,
    },
    /// List your sandboxes.
    Sandboxes,
    /// Terminate one of your sandboxes.
    Terminate { sandbox: SandboxId },
    /// Upload the bundled flight-delay data, run the demo workflow and print the result.
    Demo {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = demo::DEMO_ROWS)]
        rows: usize,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Profile {
    endpoint: Option<String>,
    principal: Option<String>,
    token: Option<String>,
}

enum Failure {
    Usage(String),
    Api(ClientError),
    Job(Box<JobRecord>),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Self::Api(e)
    }
}

type Res<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn connect(cli: &Cli) -> Res<Client> {
    let profile = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Profile::default(),
    };
    let endpoint = cli.endpoint.clone().or(profile.endpoint).unwrap_or_else(|| "http://127.0.0.1:8640".into());
    let principal = cli
        .principal
        .clone()
        .or(profile.principal)
        .ok_or_else(|| usage("no principal; pass --principal or set it in the profile"))?;
    let token: BearerToken = cli
        .token
        .clone()
        .or(profile.token)
        .ok_or_else(|| usage("no token; pass --token, set SECLAB_TOKEN or use a profile"))?
        .parse()
        .map_err(|_| usage("token must be 64 hex characters"))?;
    Ok(Client::new(&endpoint, PrincipalId::from(principal.as_str()), token)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

struct Printer(Output);

impl Printer {
    /// JSON mode prints `value`; text mode prints `text`.
    fn show<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) {
        match self.0 {
            Output::Json => println!("{}", serde_json::to_string_pretty(value).expect("serializable")),
            Output::Text => println!("{}", text()),
        }
    }
}

fn job_line(j: &JobRecord) -> String {
    let mut s = format!("{}  {:<18}  workflow {}", j.job_id, j.state.to_string(), j.workflow_id);
    if let Schedule::At { at } = j.schedule {
        s.push_str(&format!("  at {}", at.to_rfc3339()));
    }
    if let Some(e) = &j.error {
        s.push_str(&format!("  [{}: {}]", e.code, e.message));
    }
    s
}

fn result_text(r: &ResultSet) -> String {
    let mut out = format!("{}\n", r.algorithm);
    for (k, v) in &r.metrics {
        match v {
            Some(v) => out.push_str(&format!("  {k:<14} {v:.6}\n")),
            None => out.push_str(&format!("  {k:<14} undefined\n")),
        }
    }
    for (name, t) in &r.tables {
        out.push_str(&format!("{name}:\n  {}\n", t.columns.join("\t")));
        for row in &t.rows {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("  {}\n", cells.join("\t")));
        }
    }
    out.trim_end().to_owned()
}

fn series_text(s: &DataSeries) -> String {
    let names: Vec<&str> = s.series.iter().map(|n| n.name.as_str()).collect();
    format!("{:?}: {} vs {}, {} points", s.chart_type, names.join(", "), s.x_label, s.x.len())
}

/// Waits for the job; a failed or cancelled job becomes exit code 3.
fn finish(client: &Client, out: &Printer, job: JobId, timeout: Duration) -> Res {
    let j = client.wait_for_job(job, timeout)?;
    match j.state {
        JobState::Completed => {
            let r = client.results(job)?;
            out.show(&r, || result_text(&r));
            Ok(())
        }
        JobState::Failed | JobState::Cancelled => Err(Failure::Job(Box::new(j))),
        _ => Err(usage(format!("job {job} still {} after {}", j.state, humantime::format_duration(timeout)))),
    }
}

fn run(cli: &Cli) -> Res {
    let client = connect(cli)?;
    let out = Printer(cli.output);
    match &cli.command {
        Command::Upload { file, name, schema } => {
            let text = std::fs::read_to_string(file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
            let schema: Option<Schema> = schema.as_deref().map(read_json).transpose()?;
            let name = name.clone().unwrap_or_else(|| {
                file.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
            });
            let d = client.upload_csv(&name, &text, schema.as_ref())?;
            out.show(&d, || format!("{}  {} ({} rows)", d.dataset_id, d.name, d.row_count));
        }
        Command::Datasets { owner } => {
            let owner = owner.as_deref().map(PrincipalId::from);
            let ds = client.datasets(owner.as_ref())?;
            out.show(&ds, || {
                ds.iter().map(|d| format!("{}  {:<24} {:>8} rows  owner {}", d.dataset_id, d.name, d.row_count, d.owner_id)).collect::<Vec<_>>().join("\n")
            });
        }
        Command::Share { dataset, consumer, ttl } => {
            let a = client.grant(*dataset, &PrincipalId::from(consumer.as_str()), *ttl)?;
            out.show(&a, || format!("{}  {} -> {} until {}", a.agreement_id, a.dataset_id, a.consumer_id, a.expires_at.to_rfc3339()));
        }
        Command::Revoke { agreement } => {
            let a = client.revoke(*agreement)?;
            out.show(&a, || format!("{} revoked", a.agreement_id));
        }
        Command::Agreements => {
            let all = client.agreements()?;
            out.show(&all, || {
                all.iter()
                    .map(|a| format!("{}  {:?}  {} {} -> {}", a.agreement_id, a.status, a.dataset_id, a.provider_id, a.consumer_id))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Workflow { file, check } => {
            let req: WorkflowRequest = read_json(file)?;
            if *check {
                let r = client.validate_workflow(&req)?;
                out.show(&r, || {
                    r.output_schema.columns().iter().map(|c| format!("{}: {:?}", c.name, c.ty)).collect::<Vec<_>>().join("\n")
                });
            } else {
                let w = client.create_workflow(&req)?;
                out.show(&w, || format!("{}  {}", w.workflow_id, w.name));
            }
        }
        Command::Run { workflow, at, after, wait, timeout } => {
            let schedule = match (at, after) {
                (Some(at), _) => Schedule::At { at: *at },
                (None, Some(d)) => Schedule::At {
                    at: chrono::Utc::now() + chrono::Duration::from_std(*d).map_err(|_| usage("delay too large"))?,
                },
                (None, None) => Schedule::Immediate,
            };
            let j = client.submit_job(*workflow, schedule)?;
            if *wait {
                return finish(&client, &out, j.job_id, *timeout);
            }
            out.show(&j, || job_line(&j));
        }
        Command::Status { job: Some(id) } => {
            let j = client.job(*id)?;
            out.show(&j, || job_line(&j));
        }
        Command::Status { job: None } => {
            let all = client.jobs()?;
            out.show(&all, || all.iter().map(job_line).collect::<Vec<_>>().join("\n"));
        }
        Command::Cancel { job } => {
            let j = client.cancel_job(*job)?;
            out.show(&j, || job_line(&j));
        }
        Command::Results { job, series: false } => {
            let r = client.results(*job)?;
            out.show(&r, || result_text(&r));
        }
        Command::Results { job, series: true } => {
            let s = client.series(*job)?;
            out.show(&s, || series_text(&s));
        }
        Command::Sandboxes => {
            let all = client.sandboxes()?;
            out.show(&all, || {
                all.iter()
                    .map(|s| format!("{}  {:?}  job {}", s.sandbox_id, s.state, s.current_job.map_or("-".into(), |j| j.to_string())))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Terminate { sandbox } => {
            let s = client.terminate_sandbox(*sandbox)?;
            out.show(&s, || format!("{} {:?}", s.sandbox_id, s.state));
        }
        Command::Demo { seed, rows } => {
            let d = client.upload_csv("flights-demo", &demo::flights_csv(*seed, *rows), None)?;
            let w = client.create_workflow(&demo::workflow(d.dataset_id))?;
            let j = client.submit_job(w.workflow_id, Schedule::Immediate)?;
            if cli.output == Output::Text {
                eprintln!("dataset {}  workflow {}  job {}", d.dataset_id, w.workflow_id, j.job_id);
            }
            return finish(&client, &out, j.job_id, Duration::from_secs(120));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("seclab: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Api(e)) => {
            eprintln!("seclab: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Job(j)) => {
            match cli.output {
                Output::Json => println!("{}", serde_json::to_string_pretty(&j).expect("serializable")),
                Output::Text => eprintln!("seclab: {}", job_line(&j)),
            }
            ExitCode::from(3)
        }
    }
}
