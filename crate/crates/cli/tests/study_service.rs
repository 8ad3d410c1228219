mod common;

use std::path::Path;
use std::sync::Arc;

use common::core_fixture;
use dkg_cli::pipeline::{answers_from_export, score};
use dkg_cli::study::{router, Accepted, Created, ExportRecord, NextResponse, StudyConfig, StudyState};
use dkg_core::prompt::Templates;
use dkg_core::scenario::bundled_dataset;
use dkg_core::{ground_truth_plans, Coord};
use reqwest::StatusCode;
use serde_json::{json, Value};

async fn start(cfg: StudyConfig) -> String {
    let state = StudyState::new(bundled_dataset(), &Templates::bundled(), cfg).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(Arc::new(state))).await.unwrap() });
    format!("http://{addr}")
}

fn memory_only() -> StudyConfig {
    StudyConfig {
        data_dir: None,
        seed: None,
        ui_dir: None,
    }
}

fn persisted(dir: &Path) -> StudyConfig {
    StudyConfig {
        data_dir: Some(dir.to_path_buf()),
        seed: None,
        ui_dir: None,
    }
}

async fn create(http: &reqwest::Client, base: &str, who: &str) -> Created {
    let r = http
        .post(format!("{base}/api/session"))
        .json(&json!({ "participant": who }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    r.json().await.unwrap()
}

async fn next(http: &reqwest::Client, base: &str, id: &str) -> NextResponse {
    let r = http.get(format!("{base}/api/session/{id}/next")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.json().await.unwrap()
}

async fn submit(http: &reqwest::Client, base: &str, id: &str, body: Value) -> reqwest::Response {
    http.post(format!("{base}/api/session/{id}/response"))
        .json(&body)
        .send()
        .await
        .unwrap()
}

fn problem_one_answer() -> Value {
    json!({
        "scenario_id": "p1",
        "response": "I will collect the red and yellow keys and bring them to you at (3,2).",
        "actions": core_fixture("actions/a3_p1.txt"),
    })
}

async fn export(http: &reqwest::Client, base: &str) -> Vec<ExportRecord> {
    let r = http.get(format!("{base}/api/export")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()["content-type"], "application/x-ndjson");
    r.text()
        .await
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[tokio::test]
async fn session_walkthrough() {
    let base = start(memory_only()).await;
    let http = reqwest::Client::new();
    let s = create(&http, &base, "alice").await;
    assert_eq!((s.group, s.scenarios, s.participant.as_str()), (1, 2, "alice"));

    let first = next(&http, &base, &s.id).await;
    let view = first.scenario.unwrap();
    assert_eq!((view.scenario_id.as_str(), view.position, view.total), ("p1", 1, 2));
    assert_eq!(view.frames.len(), 5);
    assert_eq!(view.principal_path.last(), Some(&Coord::new(3, 2)));
    assert_eq!(view.frames.last().unwrap()[3].chars().nth(2), Some('h'));
    assert_eq!(view.instruction, "Can you pass me the red key?");
    assert!(!view.problem_description.contains("Type: <"));
    assert!(view.problem_description.contains("Instruction: Can you pass me the red key?"));

    let r = submit(&http, &base, &s.id, problem_one_answer()).await;
    assert_eq!(r.status(), StatusCode::CREATED);
    let accepted: Accepted = r.json().await.unwrap();
    assert_eq!((accepted.steps, accepted.remaining), (5, 1));
    assert!(accepted.warnings.is_empty());

    let again = submit(&http, &base, &s.id, problem_one_answer()).await;
    assert_eq!(again.status(), StatusCode::CONFLICT);
    let err: Value = again.json().await.unwrap();
    assert_eq!(err["error"], "duplicate_submission");

    assert_eq!(next(&http, &base, &s.id).await.scenario.unwrap().scenario_id, "p2");
    let r = submit(
        &http,
        &base,
        &s.id,
        json!({ "scenario_id": "p2", "response": "Here are both red keys.", "actions": "" }),
    )
    .await;
    assert_eq!(r.status(), StatusCode::CREATED);
    let done = next(&http, &base, &s.id).await;
    assert!(done.done && done.scenario.is_none());

    let other = create(&http, &base, "").await;
    assert_eq!(other.group, 2);
    assert!(other.participant.starts_with("participant-"));
    assert_eq!(next(&http, &base, &other.id).await.scenario.unwrap().scenario_id, "fig1");
}

#[tokio::test]
async fn error_statuses() {
    let base = start(memory_only()).await;
    let http = reqwest::Client::new();
    let r = http.get(format!("{base}/api/session/nope/next")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    assert_eq!(submit(&http, &base, "nope", problem_one_answer()).await.status(), StatusCode::NOT_FOUND);

    let s = create(&http, &base, "bob").await;
    let url = format!("{base}/api/session/{}/response", s.id);
    let raw = http.post(&url).body("{not json").send().await.unwrap();
    assert_eq!(raw.status(), StatusCode::UNPROCESSABLE_ENTITY);
    for body in [
        json!({ "response": "no scenario" }),
        json!({ "scenario_id": "p1", "response": "x", "extra": 1 }),
        json!({ "scenario_id": "fig1", "response": "other group" }),
        json!({ "scenario_id": "missing", "response": "x" }),
        json!({ "scenario_id": "p1", "response": "  ", "actions": "" }),
    ] {
        let r = submit(&http, &base, &s.id, body.clone()).await;
        assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }
    let bad_create = http
        .post(format!("{base}/api/session"))
        .body("[1,2]")
        .send()
        .await
        .unwrap();
    assert_eq!(bad_create.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let empty_create = http.post(format!("{base}/api/session")).send().await.unwrap();
    assert_eq!(empty_create.status(), StatusCode::CREATED);
}

#[tokio::test]
async fn export_scores_without_edits() {
    let base = start(memory_only()).await;
    let http = reqwest::Client::new();
    let s = create(&http, &base, "carol").await;
    next(&http, &base, &s.id).await;
    submit(&http, &base, &s.id, problem_one_answer()).await;

    let records = export(&http, &base).await;
    assert_eq!(records.len(), 1);
    let rec = &records[0];
    assert_eq!((rec.participant.as_str(), rec.scenario_id.as_str()), ("carol", "p1"));
    assert!(rec.served_at.is_some());

    let d = bundled_dataset();
    let gt = ground_truth_plans(d.get("p1").unwrap()).unwrap();
    assert_eq!(rec.response.actions, gt.optimal_plans[0]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("export.jsonl");
    let body = http.get(format!("{base}/api/export")).send().await.unwrap().text().await.unwrap();
    std::fs::write(&path, body).unwrap();
    let scored = score(&d, &answers_from_export(&path).unwrap(), &[]).unwrap();
    assert_eq!(scored.records.len(), 1);
    let r = &scored.records[0];
    assert!(r.human);
    assert_eq!(r.instruction_accuracy, None);
    for v in [
        r.intent_accuracy,
        r.action_feasibility,
        r.action_optimality,
        r.plan_feasibility,
        r.plan_optimality,
    ] {
        assert_eq!(v, 1.0);
    }
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let http = reqwest::Client::new();
    let base = start(persisted(dir.path())).await;
    let a = create(&http, &base, "dana").await;
    let b = create(&http, &base, "eli").await;
    submit(&http, &base, &a.id, problem_one_answer()).await;
    let before = export(&http, &base).await;

    let restarted = start(persisted(dir.path())).await;
    assert_eq!(export(&http, &restarted).await, before);
    let r = submit(&http, &restarted, &a.id, problem_one_answer()).await;
    assert_eq!(r.status(), StatusCode::CONFLICT);
    assert_eq!(next(&http, &restarted, &b.id).await.scenario.unwrap().scenario_id, "fig1");
    // Assignment keeps alternating after the reload.
    assert_eq!(create(&http, &restarted, "fay").await.group, 1);
}

#[tokio::test]
async fn concurrent_sessions_split_evenly() {
    let base = start(memory_only()).await;
    let http = reqwest::Client::new();
    let mut tasks = tokio::task::JoinSet::new();
    for i in 0..10 {
        let (http, base) = (http.clone(), base.clone());
        tasks.spawn(async move {
            let s = create(&http, &base, &format!("p{i}")).await;
            if s.group == 1 {
                let r = submit(&http, &base, &s.id, problem_one_answer()).await;
                assert_eq!(r.status(), StatusCode::CREATED);
            }
            s.group
        });
    }
    let mut groups = Vec::new();
    while let Some(g) = tasks.join_next().await {
        groups.push(g.unwrap());
    }
    assert_eq!(groups.iter().filter(|&&g| g == 1).count(), 5);
    let records = export(&http, &base).await;
    assert_eq!(records.len(), 5);
    let mut sessions: Vec<&str> = records.iter().map(|r| r.session_id.as_str()).collect();
    sessions.dedup();
    assert_eq!(sessions.len(), 5);
}

#[tokio::test]
async fn seed_shifts_assignment() {
    let base = start(StudyConfig {
        seed: Some(1),
        ..memory_only()
    })
    .await;
    let http = reqwest::Client::new();
    assert_eq!(create(&http, &base, "x").await.group, 2);
    assert_eq!(create(&http, &base, "y").await.group, 1);
}

#[tokio::test]
async fn serves_participant_console() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>console</html>").unwrap();
    let base = start(StudyConfig {
        ui_dir: Some(dir.path().to_path_buf()),
        ..memory_only()
    })
    .await;
    let body = reqwest::get(format!("{base}/")).await.unwrap().text().await.unwrap();
    assert_eq!(body, "<html>console</html>");
    let api = reqwest::Client::new().post(format!("{base}/api/session")).send().await.unwrap();
    assert_eq!(api.status(), StatusCode::CREATED);
}
