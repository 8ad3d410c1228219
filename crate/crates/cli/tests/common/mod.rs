//! Stub chat-completions server and fixture helpers shared by the tests.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

pub fn core_fixture(rel: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn chat_reply(content: &str) -> String {
    json!({
        "id": "stub",
        "model": "stub-model",
        "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }],
        "usage": { "prompt_tokens": 10, "completion_tokens": 5, "total_tokens": 15 }
    })
    .to_string()
}

type Responder = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

struct StubState {
    hits: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
    delay: Duration,
    respond: Box<Responder>,
}

/// A chat-completions endpoint on its own thread and runtime, so it serves
/// blocking tests and async tests alike.
pub struct Stub {
    pub url: String,
    state: Arc<StubState>,
}

impl Stub {
    pub fn start(delay: Duration, respond: impl Fn(usize, &Value) -> (u16, String) + Send + Sync + 'static) -> Stub {
        let state = Arc::new(StubState {
            hits: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            bodies: Mutex::new(Vec::new()),
            delay,
            respond: Box::new(respond),
        });
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let addr: SocketAddr = listener.local_addr().unwrap();
        let app = Router::new()
            .route("/v1/chat/completions", post(handle))
            .with_state(Arc::clone(&state));
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        Stub {
            url: format!("http://{addr}/v1/chat/completions"),
            state,
        }
    }

    /// Answers every request with the completion whose instruction appears
    /// last in the prompt, so demonstrations earlier in the prompt do not
    /// confuse it.
    pub fn canned(answers: Vec<(String, String)>) -> Stub {
        Stub::start(Duration::ZERO, move |_, body| {
            let prompt: String = body["messages"]
                .as_array()
                .map(|ms| ms.iter().filter_map(|m| m["content"].as_str()).collect::<Vec<_>>().join("\n"))
                .unwrap_or_default();
            let best = answers
                .iter()
                .filter_map(|(instr, answer)| prompt.rfind(instr.as_str()).map(|at| (at, answer)))
                .max_by_key(|(at, _)| *at);
            match best {
                Some((_, answer)) => (200, chat_reply(answer)),
                None => (200, chat_reply("Type: Clear.\nResponse: I do not know.\nActions:\n")),
            }
        })
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<Value> {
        self.state.bodies.lock().unwrap().clone()
    }
}

async fn handle(State(st): State<Arc<StubState>>, Json(body): Json<Value>) -> (StatusCode, String) {
    let n = st.hits.fetch_add(1, Ordering::SeqCst);
    let now = st.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    st.max_in_flight.fetch_max(now, Ordering::SeqCst);
    st.bodies.lock().unwrap().push(body.clone());
    if !st.delay.is_zero() {
        tokio::time::sleep(st.delay).await;
    }
    let (status, text) = (st.respond)(n, &body);
    st.in_flight.fetch_sub(1, Ordering::SeqCst);
    (StatusCode::from_u16(status).unwrap(), text)
}

pub fn dkg() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_dkg"))
}

/// Runs the binary, panicking with its output unless it exits with `code`.
pub fn dkg_expect(args: &[&str], code: i32) -> String {
    let out = dkg().args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(
        out.status.code(),
        Some(code),
        "dkg {args:?}\nstdout:\n{stdout}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

/// Writes a dataset with the two worked problems.
pub fn worked_problems_dataset(dir: &std::path::Path) -> PathBuf {
    let mut d = dkg_core::scenario::bundled_dataset();
    d.scenarios.retain(|s| s.id == "p1" || s.id == "p2");
    let path = dir.join("dataset.json");
    std::fs::write(&path, dkg_core::scenario::dataset_to_json(&d)).unwrap();
    path
}

/// Stub answering the worked problems with their published completions.
pub fn worked_problems_stub() -> Stub {
    let d = dkg_core::scenario::bundled_dataset();
    Stub::canned(vec![
        (d.get("p1").unwrap().instruction.clone(), core_fixture("completions/a3_p1.txt")),
        (d.get("p2").unwrap().instruction.clone(), core_fixture("completions/a3_p2.txt")),
    ])
}

/// `run` for both variants, then `score` and `report`. Returns the report
/// text and the score file path.
pub fn end_to_end(dir: &std::path::Path, stub: &Stub) -> (String, PathBuf) {
    let dataset = worked_problems_dataset(dir);
    let dataset = dataset.to_str().unwrap();
    let transcripts = dir.join("transcripts.jsonl");
    let transcripts = transcripts.to_str().unwrap();
    for variant in ["cp", "fscot"] {
        dkg_expect(
            &[
                "run",
                "--dataset",
                dataset,
                "--variant",
                variant,
                "--model",
                "stub-model",
                "--endpoint",
                &stub.url,
                "--transcripts",
                transcripts,
                "--seed",
                "11",
                "--api-key-env",
                "DKG_TEST_KEY_UNSET",
            ],
            0,
        );
    }
    let scores = dir.join("scores.jsonl");
    dkg_expect(
        &[
            "score",
            "--dataset",
            dataset,
            "--transcripts",
            transcripts,
            "--out",
            scores.to_str().unwrap(),
        ],
        0,
    );
    let tables = dir.join("tables");
    let report = dkg_expect(
        &[
            "report",
            "--scores",
            scores.to_str().unwrap(),
            "--out-dir",
            tables.to_str().unwrap(),
        ],
        0,
    );
    (report, scores)
}

/// Metric cells of the performance table rows, in column order.
pub fn performance_cells(report: &str) -> Vec<(String, Vec<String>)> {
    report
        .lines()
        .skip_while(|l| !l.starts_with("Performance"))
        .skip(2)
        .take_while(|l| !l.trim().is_empty())
        .map(|l| {
            let mut cols = l.split_whitespace().map(String::from);
            let subject = cols.next().unwrap();
            let _n = cols.next();
            (subject, cols.collect())
        })
        .collect()
}
