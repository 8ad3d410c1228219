mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{chat_reply, core_fixture, Stub};
use dkg_cli::llm_client::{read_transcript, CallMeta, ClientError, LlmClient, MessageLayout, ModelConfig, Transcript};
use dkg_core::prompt::{build_prompt, Audience, PromptBundle, PromptVariant, Templates};
use dkg_core::scenario::bundled_dataset;

fn prompt(id: &str, variant: PromptVariant) -> PromptBundle {
    let d = bundled_dataset();
    build_prompt(&Templates::bundled(), variant, d.get(id).unwrap(), Audience::Model).unwrap()
}

fn meta(id: &str, seed: Option<u64>) -> CallMeta {
    CallMeta {
        scenario_id: id.to_string(),
        subject: "stub/cp".to_string(),
        seed,
    }
}

fn config(stub: &Stub) -> ModelConfig {
    let mut cfg = ModelConfig::new(&stub.url, "stub-model");
    cfg.backoff_ms = 5;
    cfg.timeout_secs = 5;
    cfg.api_key_env = "DKG_TEST_KEY_UNSET".to_string();
    cfg
}

#[tokio::test]
async fn echoes_canned_answer_and_sends_decoding_config() {
    let canned = core_fixture("completions/a3_p1.txt");
    let text = canned.clone();
    let stub = Stub::start(Duration::ZERO, move |_, _| (200, chat_reply(&text)));
    let client = LlmClient::new(config(&stub), None).unwrap();
    let p = prompt("p1", PromptVariant::Cp);
    let out = client.complete(&p, &meta("p1", Some(7))).await.unwrap();
    assert_eq!(out.completion.raw_text, canned);
    assert_eq!(out.completion.prompt_hash, p.content_hash);
    assert_eq!(out.completion.retries, 0);
    assert_eq!(out.completion.usage.as_ref().unwrap().total_tokens, Some(15));
    let body = &stub.bodies()[0];
    assert_eq!(body["max_tokens"], 512);
    assert_eq!(body["temperature"], 0.2);
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["seed"], 7);
    assert_eq!(body["messages"].as_array().unwrap().len(), 1);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], p.assembled.as_str());
}

#[tokio::test]
async fn system_layout_splits_common_ground() {
    let stub = Stub::start(Duration::ZERO, |_, _| (200, chat_reply("ok")));
    let mut cfg = config(&stub);
    cfg.layout = MessageLayout::SystemUser;
    let client = LlmClient::new(cfg, None).unwrap();
    let p = prompt("p2", PromptVariant::FsCot);
    client.complete(&p, &meta("p2", None)).await.unwrap();
    let body = &stub.bodies()[0];
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], p.common_ground.as_str());
    assert!(body.get("seed").is_none());
}

#[tokio::test]
async fn retries_rate_limits_and_logs_once() {
    let stub = Stub::start(Duration::ZERO, |n, _| {
        if n < 2 {
            (429, "{\"error\":\"slow down\"}".into())
        } else {
            (200, chat_reply("fine"))
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let client = LlmClient::new(config(&stub), Some(Transcript::open(&path).unwrap())).unwrap();
    let out = client.complete(&prompt("p1", PromptVariant::Cp), &meta("p1", None)).await.unwrap();
    assert_eq!(out.completion.retries, 2);
    assert_eq!(stub.hits(), 3);
    let records = read_transcript(&path).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].completion.as_ref().unwrap().retries, 2);
}

#[tokio::test]
async fn rate_limit_exhausts_retries() {
    let stub = Stub::start(Duration::ZERO, |_, _| (429, "{}".into()));
    let mut cfg = config(&stub);
    cfg.max_retries = 2;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let client = LlmClient::new(cfg, Some(Transcript::open(&path).unwrap())).unwrap();
    let err = client.complete(&prompt("p1", PromptVariant::Cp), &meta("p1", None)).await.unwrap_err();
    assert!(matches!(err, ClientError::RateLimited { attempts: 3 }), "{err:?}");
    assert_eq!(stub.hits(), 3);
    let records = read_transcript(&path).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].completion.is_none() && records[0].error.is_some());
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    for (status, expect_auth) in [(401u16, true), (403, true), (400, false), (422, false)] {
        let stub = Stub::start(Duration::ZERO, move |_, _| (status, "{\"error\":\"no\"}".into()));
        let client = LlmClient::new(config(&stub), None).unwrap();
        let err = client.complete(&prompt("p1", PromptVariant::Cp), &meta("p1", None)).await.unwrap_err();
        assert_eq!(stub.hits(), 1, "HTTP {status}");
        match err {
            ClientError::Auth { status: s } => assert!(expect_auth && s == status),
            ClientError::Rejected { status: s, .. } => assert!(!expect_auth && s == status),
            other => panic!("HTTP {status}: {other:?}"),
        }
    }
}

#[tokio::test]
async fn server_errors_are_retried() {
    let stub = Stub::start(Duration::ZERO, |n, _| {
        if n == 0 {
            (503, "busy".into())
        } else {
            (200, chat_reply("ok"))
        }
    });
    let client = LlmClient::new(config(&stub), None).unwrap();
    let out = client.complete(&prompt("p1", PromptVariant::Cp), &meta("p1", None)).await.unwrap();
    assert_eq!((out.completion.retries, stub.hits()), (1, 2));
}

#[tokio::test]
async fn malformed_reply_fails_without_retry() {
    let stub = Stub::start(Duration::ZERO, |_, _| (200, "{\"choices\":[]}".into()));
    let client = LlmClient::new(config(&stub), None).unwrap();
    let err = client.complete(&prompt("p1", PromptVariant::Cp), &meta("p1", None)).await.unwrap_err();
    assert!(matches!(err, ClientError::MalformedServerReply(_)));
    assert_eq!(stub.hits(), 1);
}

#[tokio::test]
async fn slow_server_times_out() {
    let stub = Stub::start(Duration::from_millis(1500), |_, _| (200, chat_reply("late")));
    let mut cfg = config(&stub);
    cfg.timeout_secs = 1;
    cfg.max_retries = 1;
    let client = LlmClient::new(cfg, None).unwrap();
    let err = client.complete(&prompt("p1", PromptVariant::Cp), &meta("p1", None)).await.unwrap_err();
    assert!(matches!(err, ClientError::Timeout { attempts: 2 }), "{err:?}");
}

#[tokio::test]
async fn replay_cache_skips_network() {
    let stub = Stub::start(Duration::ZERO, |n, _| (200, chat_reply(&format!("answer {n}"))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let p = prompt("p1", PromptVariant::Cp);
    {
        let client = LlmClient::new(config(&stub), Some(Transcript::open(&path).unwrap())).unwrap();
        let first = client.complete(&p, &meta("p1", Some(1))).await.unwrap();
        let again = client.complete(&p, &meta("p1", Some(1))).await.unwrap();
        assert!(!first.cached && again.cached);
        assert_eq!(first.completion, again.completion);
        let other_seed = client.complete(&p, &meta("p1", Some(2))).await.unwrap();
        assert!(!other_seed.cached);
        assert_ne!(other_seed.completion.raw_text, first.completion.raw_text);
    }
    assert_eq!(stub.hits(), 2);
    assert_eq!(read_transcript(&path).unwrap().len(), 2);

    // A fresh client rebuilds the cache from the transcript; the endpoint is
    // unreachable, so any request would fail.
    let mut cfg = config(&stub);
    cfg.endpoint = "http://127.0.0.1:9/v1/chat/completions".into();
    cfg.max_retries = 0;
    let client = LlmClient::new(cfg, Some(Transcript::open(&path).unwrap())).unwrap();
    let replayed = client.complete(&p, &meta("p1", Some(1))).await.unwrap();
    assert!(replayed.cached);
    assert_eq!(replayed.completion.raw_text, "answer 0");
    assert_eq!(read_transcript(&path).unwrap().len(), 2);
}

#[tokio::test]
async fn in_flight_requests_are_capped() {
    let stub = Stub::start(Duration::from_millis(100), |_, _| (200, chat_reply("ok")));
    let mut cfg = config(&stub);
    cfg.concurrency = 2;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let client = Arc::new(LlmClient::new(cfg, Some(Transcript::open(&path).unwrap())).unwrap());
    let p = prompt("p1", PromptVariant::Cp);
    let mut tasks = tokio::task::JoinSet::new();
    for seed in 0..6 {
        let client = Arc::clone(&client);
        let p = p.clone();
        tasks.spawn(async move { client.complete(&p, &meta("p1", Some(seed))).await.unwrap() });
    }
    while let Some(r) = tasks.join_next().await {
        r.unwrap();
    }
    assert_eq!(stub.hits(), 6);
    assert_eq!(stub.max_in_flight(), 2);
    assert_eq!(read_transcript(&path).unwrap().len(), 6);
}
