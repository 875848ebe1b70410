use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use intent_core::dataset::{load_dataset, LabelVocabulary};
use intent_core::embedding::load_embeddings;
use intent_core::metrics::{evaluate, EvalReport};
use intent_core::pipeline::partition;
use intent_core::trainer::load_artifact;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intent"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Dataset, embeddings and model from one toy pipeline run, shared by tests.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        ok(&["generate", "--offline", "--per-class", "20", "--random-combos", "20", "--out", "d.jsonl"], &dir);
        ok(&["embed", "--dataset", "d.jsonl", "--out", "e.jsonl", "--dim", "128", "--provider", "toy"], &dir);
        ok(
            &[
                "train", "--dataset", "d.jsonl", "--embeddings", "e.jsonl", "--out", "m.json",
                "--provider", "toy", "--dim", "128", "--epochs-pretrain", "5", "--epochs-finetune", "20",
            ],
            &dir,
        );
        dir
    })
}

#[test]
fn generate_count_contract_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let v = LabelVocabulary::maritime();
    std::fs::write(
        dir.path().join("combos.json"),
        json!([[v.label(0), v.label(3)], [v.label(7), v.label(2), v.label(5)]]).to_string(),
    )
    .unwrap();
    let args = ["generate", "--offline", "--per-class", "40", "--combos", "combos.json", "--seed", "1"];
    let stdout = ok(&[&args[..], &["--out", "a.jsonl"]].concat(), dir.path());
    ok(&[&args[..], &["--out", "b.jsonl"]].concat(), dir.path());
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|b| **b == b'\n').count(), 322);
    assert!(stdout.contains("multi-label\t2"));
    assert!(stdout.contains("total\t322"));
    let ds = load_dataset(dir.path().join("a.jsonl"), v.clone()).unwrap();
    assert_eq!(ds.samples[321].labels.names(&v), vec![v.label(2), v.label(5), v.label(7)]);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"[["no such label"]]"#).unwrap();
    let out = run(&["generate", "--offline", "--combos", "bad.json", "--out", "x.jsonl"], d);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["generate", "--out", "x.jsonl"], d);
    assert_eq!(out.status.code(), Some(2), "no provider chosen");
    ok(&["generate", "--offline", "--per-class", "3", "--out", "d.jsonl"], d);
    let out = run(&["train", "--dataset", "d.jsonl", "--embeddings", "missing.jsonl", "--out", "m.json"], d);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["predict", "--model", "missing.json", "--text", "hi"], d);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(d.join("m.json"), r#"{"format_version": 999}"#).unwrap();
    let out = run(&["predict", "--model", "m.json", "--text", "hi"], d);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["bogus"], d).status.code(), Some(2));
}

#[test]
fn unreachable_llm_exits_4_after_retries() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "generate", "--endpoint", "http://127.0.0.1:9/v1/chat/completions", "--max-retries", "1",
            "--timeout", "2", "--per-class", "2", "--out", "d.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("retry 1/1"), "{stderr}");
    assert!(!dir.path().join("d.jsonl").exists());
}

fn spawn_mock(router: Router) -> SocketAddr {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(l, router).await.unwrap();
        });
    });
    addr
}

#[test]
fn llm_generation_through_mock_endpoint() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let router = Router::new().route(
        "/v1/chat/completions",
        post(move |headers: axum::http::HeaderMap, Json(body): Json<Value>| {
            let seen = seen.clone();
            async move {
                // The first request fails once to exercise the retry path.
                if seen.fetch_add(1, Ordering::SeqCst) == 0 {
                    return (axum::http::StatusCode::SERVICE_UNAVAILABLE, Json(json!({})));
                }
                assert_eq!(headers["authorization"], "Bearer secret");
                let prompt = body["messages"][0]["content"].as_str().unwrap();
                let label = prompt
                    .lines()
                    .find_map(|l| l.strip_prefix("Class label: "))
                    .unwrap()
                    .to_string();
                let content = (1..=4).map(|i| format!("{i}. {label} query {i}")).collect::<Vec<_>>().join("\n");
                (
                    axum::http::StatusCode::OK,
                    Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]})),
                )
            }
        }),
    );
    let addr = spawn_mock(router);
    let dir = tempfile::tempdir().unwrap();
    let url = format!("http://{addr}/v1/chat/completions");
    let out = bin()
        .args(["generate", "--endpoint", &url, "--auth-token-env", "LLM_TOKEN", "--per-class", "3"])
        .args(["--max-retries", "2", "--out", "d.jsonl"])
        .env("LLM_TOKEN", "secret")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = LabelVocabulary::maritime();
    let ds = load_dataset(dir.path().join("d.jsonl"), v.clone()).unwrap();
    assert_eq!(ds.len(), 24);
    assert_eq!(ds.samples[0].text, format!("{} query 1", v.label(0)));
    assert_eq!(ds.samples[23].text, format!("{} query 3", v.label(7)));
    assert_eq!(calls.load(Ordering::SeqCst), 9);
}

#[test]
fn http_embedding_provider_round_trip() {
    let router = Router::new().route(
        "/embed",
        post(|Json(body): Json<Value>| async move {
            let vectors: Vec<Vec<f64>> = body["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| {
                    let n = t.as_str().unwrap().len() as f64;
                    vec![1.0, n, (n * 0.3).sin()]
                })
                .collect();
            Json(json!({ "vectors": vectors }))
        }),
    );
    let addr = spawn_mock(router);
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let url = format!("http://{addr}/embed");
    let provider = ["--provider", "http", "--dim", "3", "--embed-endpoint", url.as_str()];
    ok(&["generate", "--offline", "--per-class", "4", "--out", "d.jsonl"], d);
    ok(&[&["embed", "--dataset", "d.jsonl", "--out", "e.jsonl"][..], &provider].concat(), d);
    ok(
        &[
            &["train", "--dataset", "d.jsonl", "--embeddings", "e.jsonl", "--out", "m.json"][..],
            &provider,
            &["--epochs-pretrain", "1", "--epochs-finetune", "1"],
        ]
        .concat(),
        d,
    );
    let body: Value = serde_json::from_str(&ok(&["predict", "--model", "m.json", "--text", "hello"], d)).unwrap();
    assert!(!body["labels"].as_array().unwrap().is_empty());
}

#[test]
fn eval_report_matches_library_recomputation() {
    let dir = fixture();
    ok(&["eval", "--model", "m.json", "--dataset", "d.jsonl", "--embeddings", "e.jsonl", "--out", "r.json"], dir);
    let report: EvalReport = serde_json::from_slice(&std::fs::read(dir.join("r.json")).unwrap()).unwrap();

    let artifact = load_artifact(dir.join("m.json")).unwrap();
    let ds = load_dataset(dir.join("d.jsonl"), artifact.vocabulary.clone()).unwrap();
    let e = load_embeddings(dir.join("e.jsonl"), &ds).unwrap();
    let (_, holdout) = partition(ds.len(), &artifact.train_config).unwrap();
    let scores: Vec<Vec<f64>> = holdout.iter().map(|&i| artifact.scores(e[i].embedding.as_slice()).unwrap()).collect();
    let expected = evaluate(&scores, artifact.decision_threshold, &ds.subset(&holdout).truth_matrix()).unwrap();
    assert_eq!(report, expected);

    // Without --embeddings the model's own provider embeds the dataset.
    let table = ok(&["eval", "--model", "m.json", "--dataset", "d.jsonl", "--out", "r2.json"], dir);
    assert_eq!(std::fs::read(dir.join("r.json")).unwrap(), std::fs::read(dir.join("r2.json")).unwrap());
    assert!(table.starts_with("| Accuracy | Hamming Loss | Jaccard | F1 | Precision | Recall | MCC | AUC |"));
}

#[test]
fn predict_returns_labels_and_full_scores() {
    let dir = fixture();
    let out = ok(&["predict", "--model", "m.json", "--text", "ETA of vessel X?"], dir);
    assert!(out.ends_with('\n'));
    let body: Value = serde_json::from_str(&out).unwrap();
    assert!(!body["labels"].as_array().unwrap().is_empty());
    assert_eq!(body["scores"].as_object().unwrap().len(), 8);
    assert_eq!(body["model_version"].as_str().unwrap().len(), 16);
    assert_eq!(run(&["predict", "--model", "m.json", "--text", "  "], dir).status.code(), Some(2));
}

struct Server {
    child: Child,
    base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(dir: &Path) -> Server {
    let mut child = bin()
        .args(["serve", "--model", "m.json", "--addr", "127.0.0.1:0"])
        .current_dir(dir)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap().to_string();
    Server { child, base }
}

fn post_raw(url: &str, body: &str) -> (u16, String) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .unwrap();
    (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
}

#[test]
fn service_status_codes_and_health() {
    let server = start_server(fixture());
    let url = format!("{}/classify", server.base);
    assert_eq!(post_raw(&url, r#"{"text":""}"#).0, 422);
    assert_eq!(post_raw(&url, r#"{"text":"   "}"#).0, 422);
    assert_eq!(post_raw(&url, "not json").0, 400);
    assert_eq!(post_raw(&url, r#"{"txt":"x"}"#).0, 400);
    let (status, body) = post_raw(&url, r#"{"text":"How long will the tanker wait at anchorage?"}"#);
    assert_eq!(status, 200);
    let predicted = ok(
        &["predict", "--model", "m.json", "--text", "How long will the tanker wait at anchorage?"],
        fixture(),
    );
    assert_eq!(body, predicted);

    let mut health = ureq::get(&format!("{}/health", server.base)).call().unwrap();
    assert_eq!(health.status().as_u16(), 200);
    let h: Value = health.body_mut().read_json().unwrap();
    let version = serde_json::from_str::<Value>(&body).unwrap()["model_version"].clone();
    assert_eq!(h["model_version"], version);
}
