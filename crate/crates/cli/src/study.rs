//! HTTP service for the participant study: sessions, scenario materials,
//! response intake and export.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use dkg_core::parser::{parse_completion, ParseWarning, ParsedResponse};
use dkg_core::prompt::{build_prompt, Audience, PromptError, PromptVariant, Templates};
use dkg_core::scenario::render_frames;
use dkg_core::{Coord, Dataset};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("scenario {0} was already answered in this session")]
    Duplicate(String),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl StudyError {
    fn status(&self) -> StatusCode {
        match self {
            StudyError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StudyError::Duplicate(_) => StatusCode::CONFLICT,
            StudyError::Malformed(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            StudyError::UnknownSession(_) => "unknown_session",
            StudyError::Duplicate(_) => "duplicate_submission",
            StudyError::Malformed(_) => "malformed_body",
            StudyError::Storage(_) => "storage",
        }
    }
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.kind(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub scenario_id: String,
    /// Text as the parser saw it: the response, then the action lines.
    pub raw_text: String,
    pub parsed: ParsedResponse,
    pub served_at: Option<DateTime<Utc>>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub participant: String,
    pub group: u8,
    pub created_at: DateTime<Utc>,
    /// Scenario ids of the group, in dataset order.
    pub scenarios: Vec<String>,
    pub submissions: Vec<Submission>,
    #[serde(skip)]
    served: HashMap<String, DateTime<Utc>>,
}

impl Session {
    pub fn pending(&self) -> Vec<&str> {
        self.scenarios
            .iter()
            .filter(|id| !self.submissions.iter().any(|s| s.scenario_id == **id))
            .map(String::as_str)
            .collect()
    }
}

/// One accepted submission, ready for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub session_id: String,
    pub participant: String,
    pub group: u8,
    pub scenario_id: String,
    pub raw_text: String,
    pub response: ParsedResponse,
    pub served_at: Option<DateTime<Utc>>,
    pub submitted_at: DateTime<Utc>,
}

/// Lines of a session file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created {
        id: String,
        participant: String,
        group: u8,
        created_at: DateTime<Utc>,
        scenarios: Vec<String>,
    },
    Submitted(Submission),
}

/// What a participant sees for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioView {
    pub scenario_id: String,
    /// 1-based position within the session.
    pub position: usize,
    pub total: usize,
    /// Grid rows per frame of the principal's movement.
    pub frames: Vec<Vec<String>>,
    pub principal_path: Vec<Coord>,
    pub movement_description: String,
    pub instruction: String,
    pub problem_description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub done: bool,
    pub scenario: Option<ScenarioView>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    #[serde(default)]
    participant: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub participant: String,
    pub group: u8,
    pub scenarios: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub scenario_id: String,
    #[serde(default)]
    pub response: String,
    /// Numbered action lines, "1) Collect: red_key at (0,0)." and so on.
    #[serde(default)]
    pub actions: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub scenario_id: String,
    pub steps: usize,
    pub remaining: usize,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    /// Session files go to `<dir>/sessions`; nothing is persisted without it.
    pub data_dir: Option<PathBuf>,
    /// Shifts the alternating group assignment.
    pub seed: Option<u64>,
    /// Static participant console.
    pub ui_dir: Option<PathBuf>,
}

struct Materials {
    problem_description: String,
    frames: Vec<Vec<String>>,
}

struct Store {
    order: Vec<String>,
    sessions: HashMap<String, Session>,
}

pub struct StudyState {
    dataset: Dataset,
    materials: HashMap<String, Materials>,
    cfg: StudyConfig,
    store: Mutex<Store>,
}

impl StudyState {
    /// Precomputes participant materials and reloads any persisted sessions.
    pub fn new(dataset: Dataset, templates: &Templates, cfg: StudyConfig) -> Result<Self, StudyStartError> {
        let mut materials = HashMap::new();
        for s in &dataset.scenarios {
            let bundle = build_prompt(templates, PromptVariant::Cp, s, Audience::Participant)?;
            let frames = render_frames(s).iter().map(|g| g.to_rows()).collect();
            materials.insert(
                s.id.clone(),
                Materials {
                    problem_description: bundle.assembled,
                    frames,
                },
            );
        }
        let mut store = Store {
            order: Vec::new(),
            sessions: HashMap::new(),
        };
        if let Some(dir) = &cfg.data_dir {
            let dir = dir.join("sessions");
            fs::create_dir_all(&dir).map_err(|e| StudyStartError::Storage(dir.clone(), e))?;
            let mut loaded = Vec::new();
            for entry in fs::read_dir(&dir).map_err(|e| StudyStartError::Storage(dir.clone(), e))? {
                let path = entry.map_err(|e| StudyStartError::Storage(dir.clone(), e))?.path();
                if path.extension().is_some_and(|e| e == "jsonl") {
                    loaded.push(load_session(&path)?);
                }
            }
            loaded.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
            for s in loaded {
                store.order.push(s.id.clone());
                store.sessions.insert(s.id.clone(), s);
            }
        }
        Ok(StudyState {
            dataset,
            materials,
            cfg,
            store: Mutex::new(store),
        })
    }

    fn session_path(&self, id: &str) -> Option<PathBuf> {
        self.cfg.data_dir.as_ref().map(|d| d.join("sessions").join(format!("{id}.jsonl")))
    }

    fn persist(&self, id: &str, event: &Event) -> Result<(), StudyError> {
        let Some(path) = self.session_path(id) else {
            return Ok(());
        };
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(line.as_bytes()).and_then(|_| f.sync_data()))
            .map_err(|e| StudyError::Storage(format!("{}: {e}", path.display())))
    }

    pub async fn create_session(&self, participant: Option<String>) -> Result<Created, StudyError> {
        let mut store = self.store.lock().await;
        let n = store.order.len() as u64 + self.cfg.seed.unwrap_or(0);
        let group = (n % 2) as u8 + 1;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let participant = participant
            .filter(|p| !p.trim().is_empty())
            .unwrap_or_else(|| format!("participant-{}", &id[..8]));
        let scenarios: Vec<String> = self
            .dataset
            .scenarios
            .iter()
            .filter(|s| s.group == group)
            .map(|s| s.id.clone())
            .collect();
        let created_at = Utc::now();
        self.persist(
            &id,
            &Event::Created {
                id: id.clone(),
                participant: participant.clone(),
                group,
                created_at,
                scenarios: scenarios.clone(),
            },
        )?;
        let count = scenarios.len();
        store.order.push(id.clone());
        store.sessions.insert(
            id.clone(),
            Session {
                id: id.clone(),
                participant: participant.clone(),
                group,
                created_at,
                scenarios,
                submissions: Vec::new(),
                served: HashMap::new(),
            },
        );
        Ok(Created {
            id,
            participant,
            group,
            scenarios: count,
        })
    }

    pub async fn next(&self, id: &str) -> Result<NextResponse, StudyError> {
        let mut store = self.store.lock().await;
        let session = store
            .sessions
            .get_mut(id)
            .ok_or_else(|| StudyError::UnknownSession(id.to_string()))?;
        let Some(next) = session.pending().first().map(|s| s.to_string()) else {
            return Ok(NextResponse {
                done: true,
                scenario: None,
            });
        };
        let s = self.dataset.get(&next).expect("session scenarios come from the dataset");
        let m = &self.materials[&next];
        session.served.entry(next.clone()).or_insert_with(Utc::now);
        Ok(NextResponse {
            done: false,
            scenario: Some(ScenarioView {
                scenario_id: next,
                position: session.submissions.len() + 1,
                total: session.scenarios.len(),
                frames: m.frames.clone(),
                principal_path: s.principal_moves.clone(),
                movement_description: s.movement_description.clone(),
                instruction: s.instruction.clone(),
                problem_description: m.problem_description.clone(),
            }),
        })
    }

    pub async fn submit(&self, id: &str, req: SubmitRequest) -> Result<Accepted, StudyError> {
        let mut store = self.store.lock().await;
        let session = store
            .sessions
            .get_mut(id)
            .ok_or_else(|| StudyError::UnknownSession(id.to_string()))?;
        if !session.scenarios.contains(&req.scenario_id) {
            return Err(StudyError::Malformed(format!(
                "scenario {} is not assigned to this session",
                req.scenario_id
            )));
        }
        if session.submissions.iter().any(|s| s.scenario_id == req.scenario_id) {
            return Err(StudyError::Duplicate(req.scenario_id));
        }
        if req.response.trim().is_empty() && req.actions.trim().is_empty() {
            return Err(StudyError::Malformed("empty response and actions".into()));
        }
        let raw_text = format!("Response: {}\nActions:\n{}", req.response.trim(), req.actions.trim_end());
        let parsed = parse_completion(&raw_text);
        let sub = Submission {
            scenario_id: req.scenario_id.clone(),
            raw_text,
            served_at: session.served.get(&req.scenario_id).copied(),
            submitted_at: Utc::now(),
            parsed,
        };
        self.persist(id, &Event::Submitted(sub.clone()))?;
        let accepted = Accepted {
            scenario_id: sub.scenario_id.clone(),
            steps: sub.parsed.actions.len(),
            warnings: sub.parsed.parse_warnings.clone(),
            remaining: session.pending().len() - 1,
        };
        session.submissions.push(sub);
        Ok(accepted)
    }

    pub async fn session(&self, id: &str) -> Result<Session, StudyError> {
        let store = self.store.lock().await;
        store
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownSession(id.to_string()))
    }

    /// Every accepted submission, sessions in creation order.
    pub async fn export(&self) -> Vec<ExportRecord> {
        let store = self.store.lock().await;
        let mut out = Vec::new();
        for id in &store.order {
            let s = &store.sessions[id];
            for sub in &s.submissions {
                out.push(ExportRecord {
                    session_id: s.id.clone(),
                    participant: s.participant.clone(),
                    group: s.group,
                    scenario_id: sub.scenario_id.clone(),
                    raw_text: sub.raw_text.clone(),
                    response: sub.parsed.clone(),
                    served_at: sub.served_at,
                    submitted_at: sub.submitted_at,
                });
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum StudyStartError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("session store {0}: {1}")]
    Storage(PathBuf, #[source] std::io::Error),
    #[error("session file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn load_session(path: &Path) -> Result<Session, StudyStartError> {
    let corrupt = |message: String| StudyStartError::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| StudyStartError::Storage(path.to_path_buf(), e))?;
    let mut session: Option<Session> = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let event: Event = serde_json::from_str(line).map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
        match (event, &mut session) {
            (
                Event::Created {
                    id,
                    participant,
                    group,
                    created_at,
                    scenarios,
                },
                None,
            ) => {
                session = Some(Session {
                    id,
                    participant,
                    group,
                    created_at,
                    scenarios,
                    submissions: Vec::new(),
                    served: HashMap::new(),
                })
            }
            (Event::Submitted(sub), Some(s)) => s.submissions.push(sub),
            _ => return Err(corrupt(format!("line {}: out of order event", i + 1))),
        }
    }
    session.ok_or_else(|| corrupt("empty file".into()))
}

async fn create(State(st): State<Arc<StudyState>>, body: Bytes) -> Result<impl IntoResponse, StudyError> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| StudyError::Malformed(e.to_string()))?
    };
    let created = st.create_session(req.participant).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn next(State(st): State<Arc<StudyState>>, UrlPath(id): UrlPath<String>) -> Result<Json<NextResponse>, StudyError> {
    Ok(Json(st.next(&id).await?))
}

async fn session(State(st): State<Arc<StudyState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Session>, StudyError> {
    Ok(Json(st.session(&id).await?))
}

async fn respond(
    State(st): State<Arc<StudyState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<impl IntoResponse, StudyError> {
    // Unknown sessions report 404 even when the body is also bad.
    st.session(&id).await?;
    let req: SubmitRequest = serde_json::from_slice(&body).map_err(|e| StudyError::Malformed(e.to_string()))?;
    let accepted = st.submit(&id, req).await?;
    Ok((StatusCode::CREATED, Json(accepted)))
}

async fn export(State(st): State<Arc<StudyState>>) -> impl IntoResponse {
    let body: String = st
        .export()
        .await
        .iter()
        .map(|r| serde_json::to_string(r).expect("export record serializes") + "\n")
        .collect();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body)
}

pub fn router(state: Arc<StudyState>) -> Router {
    let ui = state.cfg.ui_dir.clone();
    let api = Router::new()
        .route("/api/session", post(create))
        .route("/api/session/{id}", get(session))
        .route("/api/session/{id}/next", get(next))
        .route("/api/session/{id}/response", post(respond))
        .route("/api/export", get(export))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<StudyState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
