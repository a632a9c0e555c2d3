use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use seclab_client::{demo, Client};
use seclab_core::config::parse_config;
use seclab_core::ids::PrincipalId;
use seclab_core::scheduler::JobState;
use seclab_core::token::BearerToken;
use seclab_server::{Coordinator, CoordinatorOptions};

struct Env {
    dir: tempfile::TempDir,
    coord: Coordinator,
    tokens: Vec<(String, BearerToken)>,
}

fn start() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let tokens: Vec<(String, BearerToken)> =
        ["alice", "bob"].iter().map(|n| (n.to_string(), BearerToken::generate())).collect();
    let mut toml = format!(
        "data_root = \"{0}/data\"\nmaster_key_file = \"{0}/master.key\"\nlauncher = \"thread\"\n\
         [listen]\napi = \"127.0.0.1:0\"\nworker = \"127.0.0.1:0\"\n\
         [heartbeat]\ninterval_ms = 200\n",
        dir.path().display()
    );
    for (id, t) in &tokens {
        toml.push_str(&format!("[[principals]]\nid = \"{id}\"\ntoken = \"{}\"\n", t.to_hex()));
    }
    let (config, _) = parse_config(&toml, dir.path()).unwrap();
    let coord = Coordinator::start(config, CoordinatorOptions::default()).unwrap();
    Env { dir, coord, tokens }
}

impl Env {
    fn endpoint(&self) -> String {
        format!("http://{}", self.coord.api_addr())
    }

    fn seclab(&self, who: usize, args: &[&str]) -> Output {
        let (id, token) = &self.tokens[who];
        Command::new(env!("CARGO_BIN_EXE_seclab"))
            .args(["--endpoint", &self.endpoint(), "--principal", id])
            .env("SECLAB_TOKEN", token.to_hex())
            .args(args)
            .output()
            .unwrap()
    }

    fn client(&self, who: usize) -> Client {
        let (id, token) = &self.tokens[who];
        Client::new(&self.endpoint(), PrincipalId::from(id.as_str()), token.clone()).unwrap()
    }
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&ok(out)).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn demo_prints_a_regression() {
    let env = start();
    let text = ok(&env.seclab(0, &["demo", "--rows", "120"]));
    assert!(text.starts_with("linear_regression"), "{text}");
    assert!(text.contains("taxi_out_min"));
}

#[test]
fn share_and_run_across_principals() {
    let env = start();
    let csv = write(env.dir.path(), "flights.csv", &demo::flights_csv(1, 80));
    let d = json(&env.seclab(0, &["--output", "json", "upload", &csv]));
    let dataset = d["dataset_id"].as_str().unwrap().to_owned();
    assert_eq!(d["name"], "flights");
    assert_eq!(d["row_count"], 80);

    ok(&env.seclab(0, &["share", &dataset, "--with", "bob", "--ttl", "1h"]));
    let listed = json(&env.seclab(1, &["--output", "json", "agreements"]));
    assert_eq!(listed.as_array().unwrap().len(), 1);

    let wf = serde_json::to_string(&demo::workflow(dataset.parse().unwrap())).unwrap();
    let wf_file = write(env.dir.path(), "wf.json", &wf);
    let schema = ok(&env.seclab(1, &["workflow", "--check", &wf_file]));
    assert!(schema.contains("dep_hour"), "{schema}");
    let w = json(&env.seclab(1, &["--output", "json", "workflow", &wf_file]));
    let workflow = w["workflow_id"].as_str().unwrap();

    let r = json(&env.seclab(1, &["--output", "json", "run", workflow, "--wait", "--timeout", "30s"]));
    assert_eq!(r["algorithm"], "linear_regression");
    let jobs = json(&env.seclab(1, &["--output", "json", "status"]));
    let job = jobs[0]["job_id"].as_str().unwrap();
    assert_eq!(jobs[0]["state"], "completed");
    let series = ok(&env.seclab(1, &["results", job, "--series"]));
    assert!(series.contains("points"), "{series}");

    // the provider cannot read the consumer's results
    let out = env.seclab(0, &["results", job]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let env = start();
    let out = Command::new(env!("CARGO_BIN_EXE_seclab"))
        .args(["--endpoint", &env.endpoint(), "status"])
        .env_remove("SECLAB_TOKEN")
        .env_remove("SECLAB_PRINCIPAL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "missing principal is a usage error");
    assert_eq!(env.seclab(0, &["no-such-command"]).status.code(), Some(2));
    let missing = env.seclab(0, &["--config", "/nonexistent/profile.toml", "status"]);
    assert_eq!(missing.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_seclab"))
        .args(["--endpoint", &env.endpoint(), "--principal", "alice", "status"])
        .env("SECLAB_TOKEN", BearerToken::generate().to_hex())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "rejected token is an API error");

    // a job cancelled while the CLI waits on it
    let client = env.client(0);
    let d = client.upload_csv("f", &demo::flights_csv(2, 50), None).unwrap();
    let w = client.create_workflow(&demo::workflow(d.dataset_id)).unwrap();
    let wf = w.workflow_id.to_string();
    let mut child = Command::new(env!("CARGO_BIN_EXE_seclab"))
        .args(["--endpoint", &env.endpoint(), "--principal", "alice", "run", &wf, "--after", "1h", "--wait"])
        .env("SECLAB_TOKEN", env.tokens[0].1.to_hex())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let job = loop {
        if let Some(j) = client.jobs().unwrap().into_iter().next() {
            break j;
        }
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(client.cancel_job(job.job_id).unwrap().state, JobState::Cancelled);
    assert_eq!(child.wait().unwrap().code(), Some(3));
}

#[test]
fn profile_file_supplies_credentials() {
    let env = start();
    let (id, token) = &env.tokens[1];
    let profile = write(
        env.dir.path(),
        "profile.toml",
        &format!("endpoint = \"{}\"\nprincipal = \"{id}\"\ntoken = \"{}\"\n", env.endpoint(), token.to_hex()),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_seclab"))
        .args(["--config", &profile, "--output", "json", "datasets"])
        .env_remove("SECLAB_TOKEN")
        .output()
        .unwrap();
    assert_eq!(json(&out), serde_json::json!([]));
}
