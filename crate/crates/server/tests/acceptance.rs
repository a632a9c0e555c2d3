//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};

use chrono::Utc;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use seclab_client::{demo, Client};
use seclab_core::analytics::{column_stats, kmeans_model, ols_fit, pearson_r, Executor};
use seclab_core::config::{parse_config, PlatformConfig};
use seclab_core::crypto::envelope::{self, EncryptedEnvelope};
use seclab_core::crypto::{
    AgreementLedger, AuditLog, ChannelContext, CryptoError, DatasetKeyBinding, DenialReason, KeyRegistry,
    KeyReleaseRequest, KeyReleaseService, SymmetricKey,
};
use seclab_core::dataprep::csv::read_csv;
use seclab_core::dataprep::{run_pipeline, Column, ColumnDef, ColumnType, Schema, Table, Value};
use seclab_core::ids::{DatasetId, KeyId, PrincipalId};
use seclab_core::orchestrator::SandboxState;
use seclab_core::scheduler::{JobRecord, JobState, Schedule};
use seclab_core::token::BearerToken;
use seclab_oracles::prep::{self as prep_oracle, RowTable};
use seclab_oracles::{gen, numeric};
use seclab_server::runtime::Fault;
use seclab_server::{Coordinator, CoordinatorOptions};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------- crypto

fn test_key(rng: &mut ChaCha8Rng) -> SymmetricKey {
    SymmetricKey::from_parts(KeyId::from_bytes(rng.gen()), "owner".into(), rng.gen())
}

fn crypto_round_trip() -> Outcome {
    const PAYLOADS: usize = 10_000;
    const TAMPERS: usize = 1_000;
    const MAX_LEN: usize = 1 << 20;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
    let mut buf = vec![0u8; MAX_LEN];
    let mut total = 0usize;
    for i in 0..PAYLOADS {
        let len = rng.gen_range(0..=MAX_LEN);
        rng.fill_bytes(&mut buf[..len]);
        let pt = &buf[..len];
        let key = test_key(&mut rng);
        let bytes = envelope::encrypt(pt, &key).map_err(|e| e.to_string())?.to_bytes();
        let back = EncryptedEnvelope::from_bytes(&bytes).and_then(|e| envelope::decrypt(&e, &key));
        ensure(back.as_deref().ok() == Some(pt), || format!("payload {i} ({len} bytes) did not round-trip"))?;
        total += len;
    }

    // Bytes 0..21 are magic, version and key id: they route the envelope and are
    // checked before decryption. Everything after is authenticated content.
    let mut integrity = 0;
    for i in 0..TAMPERS {
        let len = rng.gen_range(0..=64 * 1024);
        rng.fill_bytes(&mut buf[..len]);
        let key = test_key(&mut rng);
        let mut bytes = envelope::encrypt(&buf[..len], &key).map_err(|e| e.to_string())?.to_bytes();
        let pos = rng.gen_range(21..bytes.len());
        bytes[pos] ^= rng.gen_range(1..=255u8);
        match EncryptedEnvelope::from_bytes(&bytes).and_then(|e| envelope::decrypt(&e, &key)) {
            Err(CryptoError::IntegrityFailure) => integrity += 1,
            other => return Err(format!("tamper {i} at byte {pos}: {:?}", other.map(|p| p.len()))),
        }
    }
    let key = test_key(&mut rng);
    let sealed = envelope::encrypt(b"routing", &key).map_err(|e| e.to_string())?.to_bytes();
    for pos in 0..21 {
        let mut bytes = sealed.clone();
        bytes[pos] ^= 0x80;
        let r = EncryptedEnvelope::from_bytes(&bytes).and_then(|e| envelope::decrypt(&e, &key));
        ensure(r.is_err(), || format!("routing byte {pos} mutation accepted"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "{PAYLOADS} payloads ({:.1} GiB) round-tripped, {integrity}/{TAMPERS} tampers -> integrity-failure, {elapsed:.1?}",
        total as f64 / (1u64 << 30) as f64
    ))
}

fn unhex<const N: usize>(s: &str) -> [u8; N] {
    hex::decode(s).expect("hex").try_into().expect("length")
}

// Ciphertexts produced ahead of time with an independent AES-256-GCM implementation.
fn known_answers() -> Outcome {
    let key = |k: [u8; 32]| SymmetricKey::from_parts(KeyId::from_bytes([7; 16]), "owner".into(), k);
    let k3 = unhex::<32>("603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4");
    let pt3 = b"flight_id,delay_min\nAF1234,17\nLH0042,-3\n".to_vec();
    let vectors: Vec<([u8; 32], [u8; 12], Vec<u8>, &str)> = vec![
        (std::array::from_fn(|i| i as u8), std::array::from_fn(|i| i as u8), vec![], "f4c2db1dc38805a37b92171c5d0a81cc"),
        ([0xa5; 32], [0x01; 12], b"abc".to_vec(), "169b9dcea7e0ef2673b443dd4197c8629a3f23"),
        (
            k3,
            unhex::<12>("cafebabefacedbaddecaf888"),
            pt3,
            "c14b811787328e12f2b21e1ebb99b69f6a834ec4540a0b250300897a5a658d950559a73ba2a7360c77db6ddc87a04ed576fb89c5c37b0b43",
        ),
    ];
    for (i, (k, n, pt, expected)) in vectors.iter().enumerate() {
        let e = envelope::encrypt_with_nonce(pt, &key(*k), *n);
        ensure(hex::encode(&e.ciphertext_and_tag) == *expected, || format!("vector {i} differs"))?;
        ensure(envelope::decrypt(&e, &key(*k)).ok().as_ref() == Some(pt), || format!("vector {i} does not decrypt"))?;
    }
    let k4: [u8; 32] = Sha256::digest(b"seclab-kat-4").into();
    let pt4: Vec<u8> = (0..1000u32).map(|i| (i % 251) as u8).collect();
    let e = envelope::encrypt_with_nonce(&pt4, &key(k4), unhex::<12>("78377b525757b494427f8901"));
    ensure(
        hex::encode(Sha256::digest(&e.ciphertext_and_tag))
            == "3f820ab393fdf83311e7a01d43893275e827d9aa86411b946c5c8e2058cbf872",
        || "vector 3 (1000 bytes) differs".into(),
    )?;
    Ok(format!("{} vectors byte-exact", vectors.len() + 1))
}

// ---------------------------------------------------------------- key release

struct OneBinding(DatasetId, KeyId);

impl DatasetKeyBinding for OneBinding {
    fn key_for_dataset(&self, d: &DatasetId) -> Option<KeyId> {
        (*d == self.0).then_some(self.1)
    }
}

fn key_release_matrix() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let audit_path = dir.path().join("audit.jsonl");
    let registry = Arc::new(KeyRegistry::in_memory().map_err(|e| e.to_string())?);
    let ledger = Arc::new(AgreementLedger::in_memory());
    let audit = Arc::new(AuditLog::open(&audit_path).map_err(|e| e.to_string())?);
    let provider: PrincipalId = "provider".into();
    let consumer: PrincipalId = "consumer".into();
    let key = registry.generate(provider.clone()).map_err(|e| e.to_string())?;
    let dataset = DatasetId::new();
    let service =
        KeyReleaseService::new(registry.clone(), ledger.clone(), audit.clone(), Arc::new(OneBinding(dataset, key.key_id)));

    let t0 = Utc::now();
    let now = t0 + chrono::Duration::seconds(10);
    let grant = |ttl_secs| {
        ledger.grant(&provider, &consumer, dataset, &provider, chrono::Duration::seconds(ttl_secs), t0).expect("grant")
    };
    let active = grant(3600);
    let revoked = grant(3600);
    ledger.revoke(revoked.agreement_id, t0 + chrono::Duration::seconds(1)).map_err(|e| e.to_string())?;
    let expired = grant(5);

    let states = [
        ("no-agreement", None, DenialReason::DeniedNoAgreement),
        ("active", Some(active.agreement_id), DenialReason::DeniedUnauthenticated),
        ("revoked", Some(revoked.agreement_id), DenialReason::DeniedRevoked),
        ("expired", Some(expired.agreement_id), DenialReason::DeniedExpired),
    ];
    let mut requests = 0;
    for (name, agreement, denial) in states {
        for authenticated in [true, false] {
            let channel =
                if authenticated { ChannelContext::authenticated(consumer.clone()) } else { ChannelContext::unauthenticated() };
            let req = KeyReleaseRequest::new(key.key_id, consumer.clone(), agreement);
            let resp = service.release_key(&req, &channel, now);
            requests += 1;
            ensure(resp.request_nonce == req.request_nonce, || format!("{name}: nonce not echoed"))?;
            if name == "active" && authenticated {
                let got = resp.key().ok_or_else(|| format!("active/authenticated denied: {:?}", resp.denial()))?;
                ensure(got.key_bytes() == key.key_bytes(), || "released the wrong key".into())?;
            } else {
                let expected = if authenticated { denial } else { DenialReason::DeniedUnauthenticated };
                ensure(resp.denial() == Some(expected), || {
                    format!("{name}/{authenticated}: expected {expected:?}, got {:?}", resp.denial())
                })?;
            }
        }
    }
    let persisted = std::fs::read_to_string(&audit_path).map_err(|e| e.to_string())?.lines().count();
    ensure(audit.len() == requests && persisted == requests, || {
        format!("{requests} requests but {} audit entries ({persisted} persisted)", audit.len())
    })?;
    Ok(format!("8/8 cells as expected, {requests} audit entries for {requests} requests"))
}

// ---------------------------------------------------------------- data prep

fn to_table(t: &RowTable) -> Table {
    let schema = Schema::new(t.columns.iter().map(|(n, ty)| ColumnDef::new(n.clone(), *ty)).collect());
    Table::from_rows(schema, &t.rows).expect("generated rows fit their schema")
}

fn prep_equivalence() -> Outcome {
    const CASES: u64 = 500;
    let mut rows = 0;
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (tables, pipeline) = gen::random_case(&mut rng, 1000, 5);
        let expected = prep_oracle::run(&tables, &pipeline).map_err(|(s, e)| format!("case {seed}: oracle step {s}: {e}"))?;
        let inputs: HashMap<DatasetId, Table> = tables.iter().map(|(id, t)| (*id, to_table(t))).collect();
        let got = run_pipeline(&inputs, &pipeline).map_err(|e| format!("case {seed}: engine: {e}"))?;
        let got = RowTable::from_table(&got);
        ensure(got == expected, || format!("case {seed}: tables differ for {pipeline:?}"))?;
        rows += expected.rows.len();
    }
    Ok(format!("{CASES}/{CASES} cases cell-for-cell equal ({rows} output rows)"))
}

// ---------------------------------------------------------------- analytics

fn float_table(cols: &[(&str, Vec<f64>)]) -> Table {
    let schema = Schema::new(cols.iter().map(|(n, _)| ColumnDef::new(*n, ColumnType::Float64)).collect());
    Table::new(schema, cols.iter().map(|(_, v)| Column::Float64(v.iter().map(|x| Some(*x)).collect())).collect())
        .expect("well-formed table")
}

fn analytics() -> Outcome {
    let mut worst = [0.0f64; 4];
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(20..600);
        let k = rng.gen_range(1..5);
        let beta: Vec<f64> = (0..=k).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|r| beta[0] + r.iter().zip(&beta[1..]).map(|(x, w)| x * w).sum::<f64>() + rng.gen_range(-1.0..1.0))
            .collect();
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let mut cols: Vec<(&str, Vec<f64>)> =
            names.iter().enumerate().map(|(j, nm)| (nm.as_str(), xs.iter().map(|r| r[j]).collect())).collect();
        cols.push(("y", y.clone()));
        let table = float_table(&cols);
        let features: Vec<&str> = names.iter().map(String::as_str).collect();

        // OLS against the normal equations
        let fit = ols_fit(&Executor::new(4), &table, "y", &features).map_err(|e| e.to_string())?;
        let reference = numeric::ols(&xs, &y).ok_or("oracle: singular")?;
        let mut coef = vec![fit.intercept];
        coef.extend(&fit.weights);
        for (a, b) in coef.iter().zip(&reference) {
            let d = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
            worst[0] = worst[0].max(d);
            ensure(d <= 1e-8, || format!("seed {seed}: OLS {a} vs {b}"))?;
        }
        let grad = numeric::mse_gradient(&xs, &y, &coef);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        worst[1] = worst[1].max(gmax);
        ensure(gmax <= 1e-6, || format!("seed {seed}: gradient max-norm {gmax:e}"))?;

        // Pearson against the textbook formula
        let some = |v: &[f64]| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
        let x0: Vec<f64> = xs.iter().map(|r| r[0]).collect();
        let (r, _) = pearson_r(&Executor::new(4), &some(&x0), &some(&y)).map_err(|e| e.to_string())?;
        let expected = numeric::pearson(&x0, &y).ok_or("oracle: undefined r")?;
        worst[2] = worst[2].max((r - expected).abs());
        ensure((r - expected).abs() <= 1e-12, || format!("seed {seed}: pearson {r} vs {expected}"))?;

        // partition counts
        let base = ols_fit(&Executor::sequential(1), &table, "y", &features).map_err(|e| e.to_string())?;
        let base_r = pearson_r(&Executor::sequential(1), &some(&x0), &some(&y)).map_err(|e| e.to_string())?.0;
        let base_s = column_stats(&Executor::sequential(1), &some(&y));
        for p in [1, 2, 4, 8] {
            for exec in [Executor::new(p), Executor::sequential(p)] {
                let f = ols_fit(&exec, &table, "y", &features).map_err(|e| e.to_string())?;
                let s = column_stats(&exec, &some(&y));
                let rr = pearson_r(&exec, &some(&x0), &some(&y)).map_err(|e| e.to_string())?.0;
                let pairs = [(f.intercept, base.intercept), (rr, base_r), (s.mean.unwrap(), base_s.mean.unwrap()), (s.std.unwrap(), base_s.std.unwrap())]
                    .into_iter()
                    .chain(f.weights.iter().copied().zip(base.weights.iter().copied()));
                for (a, b) in pairs {
                    let d = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                    worst[3] = worst[3].max(d);
                    ensure(d <= 1e-12, || format!("seed {seed}: {p} partitions give {a}, one gives {b}"))?;
                }
            }
        }

        // KMeans
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]).collect();
        let kt = float_table(&[("a", pts.iter().map(|p| p[0]).collect()), ("b", pts.iter().map(|p| p[1]).collect())]);
        let clusters = rng.gen_range(1..6);
        let m = kmeans_model(&Executor::new(4), &kt, &["a", "b"], clusters, 50, seed).map_err(|e| e.to_string())?;
        for w in m.inertia_history.windows(2) {
            ensure(w[1] <= w[0] * (1.0 + 1e-12), || format!("seed {seed}: inertia rose {:?}", m.inertia_history))?;
        }
        let again = kmeans_model(&Executor::new(4), &kt, &["a", "b"], clusters, 50, seed).map_err(|e| e.to_string())?;
        ensure(m == again, || format!("seed {seed}: kmeans not deterministic"))?;
        for p in [1, 2, 4, 8] {
            let o = kmeans_model(&Executor::sequential(p), &kt, &["a", "b"], clusters, 50, seed).map_err(|e| e.to_string())?;
            ensure(o.labels == m.labels, || format!("seed {seed}: kmeans labels depend on partitions"))?;
        }
    }
    Ok(format!(
        "40 seeds; worst OLS rel {:.1e}, gradient {:.1e}, pearson {:.1e}, partition rel {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// ---------------------------------------------------------------- end-to-end harness

struct Site {
    base: tempfile::TempDir,
    principals: Vec<(PrincipalId, BearerToken)>,
    config: PlatformConfig,
}

impl Site {
    fn new(names: &[&str], heartbeat_ms: u64, extra: &str) -> Self {
        let base = tempfile::Builder::new().prefix("seclab-acceptance-").tempdir().expect("tempdir");
        let principals: Vec<(PrincipalId, BearerToken)> =
            names.iter().map(|n| (PrincipalId::from(*n), BearerToken::generate())).collect();
        let mut toml = format!(
            r#"
data_root = "{root}/data"
master_key_file = "{root}/master.key"
launcher = "process"
worker_binary = "{worker}"
{extra}

[listen]
api = "127.0.0.1:0"
worker = "127.0.0.1:0"

[budget]
max_sandboxes = 4
memory_ceiling_mb = 1024
job_timeout_secs = 60

[scheduler]
dispatch_period_ms = 100
provision_attempts = 3
provision_backoff_ms = 200
idle_teardown_ms = 5000

[heartbeat]
interval_ms = {heartbeat_ms}
miss_threshold = 3
handshake_timeout_ms = 10000
"#,
            root = base.path().display(),
            worker = env!("CARGO_BIN_EXE_seclab-worker"),
        );
        for (id, token) in &principals {
            let _ = write!(toml, "\n[[principals]]\nid = \"{id}\"\ntoken = \"{}\"\n", token.to_hex());
        }
        let (config, warnings) = parse_config(&toml, base.path()).expect("valid config");
        assert!(warnings.is_empty(), "{warnings:?}");
        Self { base, principals, config }
    }

    fn start(&self, fault: Option<Fault>) -> Coordinator {
        Coordinator::start(self.config.clone(), CoordinatorOptions { worker_fault: fault, launcher: None })
            .expect("coordinator starts")
    }

    fn client(&self, c: &Coordinator, who: usize) -> Client {
        let (id, token) = &self.principals[who];
        Client::new(&format!("http://{}", c.api_addr()), id.clone(), token.clone()).expect("client")
    }
}

/// Uploads demo data for `client` and registers the demo workflow over it.
fn demo_workflow(client: &Client, seed: u64) -> Result<seclab_core::scheduler::WorkflowDefinition, String> {
    let d = client.upload_csv("flights", &demo::flights_csv(seed, 200), None).map_err(|e| e.to_string())?;
    client.create_workflow(&demo::workflow(d.dataset_id)).map_err(|e| e.to_string())
}

fn describe(job: &JobRecord) -> String {
    format!("{} in {} ({:?})", job.job_id, job.state, job.error.as_ref().map(|e| format!("{}: {}", e.code, e.message)))
}

// ---------------------------------------------------------------- scheduling

fn scheduling() -> Outcome {
    const JOBS: usize = 50;
    let site = Site::new(&["p0", "p1", "p2", "p3"], 500, "");
    let coord = site.start(None);
    let clients: Vec<Client> = (0..4).map(|i| site.client(&coord, i)).collect();
    let workflows = clients
        .iter()
        .enumerate()
        .map(|(i, c)| demo_workflow(c, i as u64))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let window_start = Utc::now() + chrono::Duration::seconds(2);
    let mut submitted = Vec::new();
    for i in 0..JOBS {
        let owner = i % 4;
        let at = window_start + chrono::Duration::milliseconds(rng.gen_range(0..10_000));
        let job = clients[owner]
            .submit_job(workflows[owner].workflow_id, Schedule::At { at })
            .map_err(|e| e.to_string())?;
        submitted.push((owner, at, job.job_id));
    }

    let deadline = Instant::now() + Duration::from_secs(25);
    let mut worst_lateness = chrono::Duration::zero();
    let mut done = 0;
    for (owner, at, job_id) in &submitted {
        let left = deadline.saturating_duration_since(Instant::now());
        let job = clients[*owner].wait_for_job(*job_id, left).map_err(|e| e.to_string())?;
        ensure(job.state == JobState::Completed, || format!("not completed: {}", describe(&job)))?;
        let queued = job.entered_at(JobState::Queued).ok_or("never queued")?;
        let fetching = job.entered_at(JobState::Fetching).ok_or("never fetched")?;
        ensure(queued >= *at && fetching >= *at, || format!("{job_id} started {queued} before {at}"))?;
        let finished = job.last_transition_at();
        worst_lateness = worst_lateness.max(finished - *at);
        ensure(finished - *at <= chrono::Duration::seconds(5), || {
            format!("{job_id} finished {} ms after its start time", (finished - *at).num_milliseconds())
        })?;
        done += 1;
    }
    coord.shutdown();
    Ok(format!(
        "{done}/{JOBS} completed, none early, worst T+{} ms, {} CPU(s)",
        worst_lateness.num_milliseconds(),
        std::thread::available_parallelism().map_or(1, |n| n.get())
    ))
}

// ---------------------------------------------------------------- leak scan

/// Counts needle occurrences in every regular file under `root` not under `skip`.
/// Returns the files with hits and the number of files read.
fn scan(root: &Path, skip: &[PathBuf], needles: &[Vec<u8>], since: Option<SystemTime>) -> (Vec<(PathBuf, usize)>, usize) {
    let mut hits = Vec::new();
    let mut files = 0;
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            if skip.iter().any(|s| path.starts_with(s)) {
                continue;
            }
            let Ok(meta) = std::fs::symlink_metadata(&path) else { continue };
            if meta.is_dir() {
                stack.push(path);
                continue;
            }
            if !meta.is_file() || meta.len() > 256 << 20 {
                continue;
            }
            if let (Some(since), Ok(modified)) = (since, meta.modified()) {
                if modified < since {
                    continue;
                }
            }
            let Ok(bytes) = std::fs::read(&path) else { continue };
            files += 1;
            let n: usize = needles
                .iter()
                .map(|needle| bytes.windows(needle.len()).filter(|w| *w == needle.as_slice()).count())
                .sum();
            if n > 0 {
                hits.push((path, n));
            }
        }
    }
    (hits, files)
}

fn sentinel_csv(sentinel: &str) -> String {
    let demo = demo::flights_csv(7, demo::DEMO_ROWS);
    let mut lines = demo.lines();
    let mut out = format!("{}\n", lines.next().expect("header"));
    for line in lines {
        let (id, rest) = line.split_once(',').expect("row");
        let _ = writeln!(out, "{sentinel}-{id},{rest}");
    }
    out
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Int(i) => Some(*i as f64),
        _ => None,
    }
}

fn leak_freedom() -> Outcome {
    let started = SystemTime::now() - Duration::from_secs(1);
    let site = Site::new(&["provider", "consumer"], 500, "");
    let coord = site.start(None);
    let provider = site.client(&coord, 0);
    let consumer = site.client(&coord, 1);

    let sentinel = format!("SNTL{}", hex::encode(rand::thread_rng().gen::<[u8; 12]>()));
    let local = site.base.path().join("provider");
    std::fs::create_dir_all(&local).map_err(|e| e.to_string())?;
    let source = local.join("flights.csv");
    std::fs::write(&source, sentinel_csv(&sentinel)).map_err(|e| e.to_string())?;

    let text = std::fs::read_to_string(&source).map_err(|e| e.to_string())?;
    let dataset = provider.upload_csv("flights", &text, None).map_err(|e| e.to_string())?;
    provider.grant(dataset.dataset_id, consumer.principal(), Duration::from_secs(3600)).map_err(|e| e.to_string())?;
    let request = demo::workflow(dataset.dataset_id);
    let wf = consumer.create_workflow(&request).map_err(|e| e.to_string())?;
    let job = consumer.submit_job(wf.workflow_id, Schedule::Immediate).map_err(|e| e.to_string())?;
    let job = consumer.wait_for_job(job.job_id, Duration::from_secs(30)).map_err(|e| e.to_string())?;
    ensure(job.state == JobState::Completed, || describe(&job))?;
    let results = consumer.results(job.job_id).map_err(|e| e.to_string())?;
    consumer.series(job.job_id).map_err(|e| e.to_string())?;

    // the result matches a local recomputation over the plaintext
    let plain = RowTable::from_table(&read_csv(&text, None).map_err(|e| e.to_string())?);
    let prepared = prep_oracle::run(&HashMap::from([(dataset.dataset_id, plain)]), &request.pipeline)
        .map_err(|(s, e)| format!("oracle step {s}: {e}"))?;
    let col = |name: &str| prepared.columns.iter().position(|(n, _)| n == name).expect("column");
    let (ix, iy) = (col("taxi_out_min"), col("delay_min"));
    let (xs, y): (Vec<Vec<f64>>, Vec<f64>) =
        prepared.rows.iter().filter_map(|r| Some((vec![as_f64(&r[ix])?], as_f64(&r[iy])?))).unzip();
    let beta = numeric::ols(&xs, &y).ok_or("oracle: singular")?;
    let intercept = results.metrics.get("intercept").copied().flatten().ok_or("no intercept")?;
    let weight = results.tables["coefficients"].rows[0][1].as_f64().ok_or("no weight")?;
    ensure(rel_close(intercept, beta[0], 1e-8) && rel_close(weight, beta[1], 1e-8), || {
        format!("result ({intercept}, {weight}) vs local ({}, {})", beta[0], beta[1])
    })?;

    let mut needles = vec![sentinel.clone().into_bytes()];
    for k in coord.platform().registry.export_key_material() {
        needles.push(k.to_vec());
        needles.push(hex::encode(k).into_bytes());
    }
    let active: Vec<PathBuf> = coord
        .platform()
        .orchestrator
        .list()
        .into_iter()
        .filter(|d| d.state != SandboxState::Terminated)
        .map(|d| d.scoped_root)
        .collect();
    let mut skip = active.clone();
    skip.push(local.clone());
    let (during, scanned_during) = scan(site.base.path(), &skip, &needles, None);
    ensure(during.is_empty(), || format!("found secrets while running: {during:?}"))?;

    coord.shutdown();
    let (after, scanned_after) = scan(&std::env::temp_dir(), &[source.clone()], &needles, Some(started));
    ensure(after.is_empty(), || format!("found secrets after teardown: {after:?}"))?;
    let (in_source, _) = scan(&local, &[], &needles[..1], None);
    ensure(in_source.len() == 1, || "sentinel missing from the provider's own file".into())?;
    Ok(format!(
        "result matches local oracle; sentinel + {} key encodings: 0 hits in {scanned_during} files while running ({} active scoped roots excluded), 0 in {scanned_after} files after teardown",
        needles.len() - 1,
        active.len()
    ))
}

// ---------------------------------------------------------------- faults

fn revocation_mid_queue() -> Result<String, String> {
    let site = Site::new(&["provider", "consumer"], 500, "");
    let coord = site.start(None);
    let provider = site.client(&coord, 0);
    let consumer = site.client(&coord, 1);
    let d = provider.upload_csv("flights", &demo::flights_csv(3, 100), None).map_err(|e| e.to_string())?;
    let a = provider.grant(d.dataset_id, consumer.principal(), Duration::from_secs(3600)).map_err(|e| e.to_string())?;
    let wf = consumer.create_workflow(&demo::workflow(d.dataset_id)).map_err(|e| e.to_string())?;
    let at = Utc::now() + chrono::Duration::seconds(2);
    let job = consumer.submit_job(wf.workflow_id, Schedule::At { at }).map_err(|e| e.to_string())?;
    provider.revoke(a.agreement_id).map_err(|e| e.to_string())?;
    let queued = consumer.job(job.job_id).map_err(|e| e.to_string())?;
    ensure(queued.state == JobState::Scheduled, || format!("revoked too late: {}", describe(&queued)))?;
    let job = consumer.wait_for_job(job.job_id, Duration::from_secs(20)).map_err(|e| e.to_string())?;
    let code = job.error.as_ref().map(|e| e.code.as_str());
    ensure(job.state == JobState::Failed && code == Some("key-denied"), || describe(&job))?;
    let detail = job.error.map(|e| e.message).unwrap_or_default();
    coord.shutdown();
    Ok(format!("failed(key-denied: {detail})"))
}

fn worker_kill() -> Result<String, String> {
    const HEARTBEAT_MS: u64 = 500;
    let site = Site::new(&["owner"], HEARTBEAT_MS, "");
    let coord = site.start(Some(Fault::Hang(JobState::Running)));
    let client = site.client(&coord, 0);
    let wf = demo_workflow(&client, 9)?;
    let job = client.submit_job(wf.workflow_id, Schedule::Immediate).map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(20);
    let sandbox = loop {
        let j = client.job(job.job_id).map_err(|e| e.to_string())?;
        if j.state == JobState::Running {
            break j.sandbox_id.ok_or("running job without sandbox")?;
        }
        ensure(!j.state.is_terminal() && Instant::now() < deadline, || format!("never ran: {}", describe(&j)))?;
        std::thread::sleep(Duration::from_millis(20));
    };
    let endpoint = client.sandbox(sandbox).map_err(|e| e.to_string())?.endpoint.unwrap_or_default();
    let pid: i32 = endpoint.strip_prefix("pid:").and_then(|p| p.parse().ok()).ok_or(format!("endpoint {endpoint}"))?;
    // SAFETY: plain kill(2) on a child pid owned by this test's coordinator.
    ensure(unsafe { libc::kill(pid, libc::SIGKILL) } == 0, || "kill failed".into())?;
    let killed = Instant::now();
    let limit = Duration::from_millis(3 * HEARTBEAT_MS);
    let job = loop {
        let j = client.job(job.job_id).map_err(|e| e.to_string())?;
        if j.state.is_terminal() || killed.elapsed() > Duration::from_secs(10) {
            break j;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let took = killed.elapsed();
    ensure(job.state == JobState::Failed, || describe(&job))?;
    ensure(took <= limit, || format!("failed after {took:?}, limit {limit:?}"))?;
    coord.shutdown();
    Ok(format!("failed({}) {} ms after kill (limit {} ms)", job.error.map(|e| e.code).unwrap_or_default(), took.as_millis(), limit.as_millis()))
}

fn coordinator_restart() -> Result<String, String> {
    let site = Site::new(&["owner"], 500, "");
    let coord = site.start(None);
    let client = site.client(&coord, 0);
    let wf = demo_workflow(&client, 11)?;
    let base = Utc::now() + chrono::Duration::seconds(3);
    let mut jobs = Vec::new();
    for i in 0..3 {
        let at = base + chrono::Duration::milliseconds(500 * i);
        jobs.push((at, client.submit_job(wf.workflow_id, Schedule::At { at }).map_err(|e| e.to_string())?.job_id));
    }
    coord.shutdown();

    let coord = site.start(None);
    let client = site.client(&coord, 0);
    for (at, id) in &jobs {
        let j = client.job(*id).map_err(|e| e.to_string())?;
        ensure(j.state == JobState::Scheduled, || format!("after restart: {}", describe(&j)))?;
        let j = client.wait_for_job(*id, Duration::from_secs(20)).map_err(|e| e.to_string())?;
        ensure(j.state == JobState::Completed, || describe(&j))?;
        let queued = j.entered_at(JobState::Queued).ok_or("never queued")?;
        ensure(queued >= *at, || format!("{id} fired early"))?;
        client.results(*id).map_err(|e| e.to_string())?;
    }
    coord.shutdown();
    Ok(format!("{} scheduled jobs survived restart and completed on time", jobs.len()))
}

fn faults() -> Outcome {
    let mut parts = Vec::new();
    let mut failed = false;
    for (name, f) in [
        ("revocation", revocation_mid_queue as fn() -> Result<String, String>),
        ("kill", worker_kill),
        ("restart", coordinator_restart),
    ] {
        match catch_unwind(f) {
            Ok(Ok(s)) => parts.push(format!("{name}: {s}")),
            Ok(Err(e)) => {
                failed = true;
                parts.push(format!("{name}: FAILED {e}"))
            }
            Err(_) => {
                failed = true;
                parts.push(format!("{name}: FAILED (panic)"))
            }
        }
    }
    let text = parts.join("; ");
    if failed {
        Err(text)
    } else {
        Ok(text)
    }
}

// ---------------------------------------------------------------- build surface

fn primary_only() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let manifest = std::fs::read_to_string(root.join("Cargo.toml")).map_err(|e| e.to_string())?;
    let mut crates: Vec<String> = std::fs::read_dir(root.join("crates"))
        .map_err(|e| e.to_string())?
        .flatten()
        .filter(|e| e.path().join("Cargo.toml").is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    crates.sort();
    let ui = |s: &str| {
        let s = s.to_ascii_lowercase();
        s.contains("workbench") || s.contains("ui") && !s.contains("build")
    };
    ensure(!crates.iter().any(|c| ui(c)), || format!("ui crate in workspace: {crates:?}"))?;
    ensure(!manifest.to_ascii_lowercase().contains("workbench"), || "workspace manifest names a workbench".into())?;
    Ok(format!("workspace members: {}", crates.join(", ")))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    // Positional arguments select criteria by substring, as with libtest.
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let _ = tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).with_test_writer().try_init();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("crypto-round-trip", crypto_round_trip),
        ("cipher-known-answers", known_answers),
        ("key-release-matrix", key_release_matrix),
        ("prep-oracle-equivalence", prep_equivalence),
        ("analytics-correctness", analytics),
        ("scheduling", scheduling),
        ("leak-freedom", leak_freedom),
        ("fault-scenarios", faults),
        ("primary-only-build", primary_only),
    ];
    let mut failures = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {secs:>7.2}s  {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name:<26} {secs:>7.2}s  {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
