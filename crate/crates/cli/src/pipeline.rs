//! The run and score stages, shared by the binary and the tests.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dkg_core::metrics::{apply_overrides, score_scenario, MetricsError, Override, ScoreRecord, Subject};
use dkg_core::parser::{parse_completion, ParsedResponse};
use dkg_core::prompt::{build_prompt, Audience, PromptError, PromptVariant, Templates};
use dkg_core::scenario::ScenarioError;
use dkg_core::{ground_truth_plans, Dataset};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinSet;

use crate::llm_client::{read_transcript, CallMeta, ClientError, LlmClient, ModelConfig, Transcript};
use crate::study::ExportRecord;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Dataset(#[from] ScenarioError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// 1 for invalid input, 2 for I/O and transport failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Dataset(ScenarioError::Io { .. }) => 2,
            CliError::Validation(_) | CliError::Dataset(_) | CliError::Prompt(_) | CliError::Metrics(_) => 1,
            CliError::Client(ClientError::Config(_)) => 1,
            CliError::Client(_) | CliError::Io { .. } => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Dataset(ScenarioError::Io { .. }) => "io",
            CliError::Dataset(_) => "dataset",
            CliError::Prompt(_) => "prompt",
            CliError::Client(e) => e.kind(),
            CliError::Metrics(_) => "metrics",
            CliError::Io { .. } => "io",
        }
    }
}

/// Everything a `run` needs; written next to the transcript.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: PathBuf,
    pub variant: PromptVariant,
    pub model: ModelConfig,
    pub transcripts: PathBuf,
    pub templates: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn check(&self) -> Result<(), CliError> {
        if !self.dataset.is_file() {
            return Err(CliError::io(&self.dataset, "dataset file not found"));
        }
        if let Some(t) = &self.templates {
            if !t.is_dir() {
                return Err(CliError::io(t, "template directory not found"));
            }
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn subject(&self) -> String {
        format!("{}/{}", self.model.model, self.variant)
    }

    pub fn manifest_path(&self) -> PathBuf {
        let mut name = self.transcripts.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        self.transcripts.with_file_name(name)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunSummary {
    pub subject: String,
    pub requested: usize,
    pub cached: usize,
    pub failed: Vec<(String, String)>,
}

pub fn load_templates(dir: Option<&Path>) -> Result<Templates, CliError> {
    Ok(match dir {
        Some(d) => Templates::load(d)?,
        None => Templates::bundled(),
    })
}

/// Queries the model once per scenario, up to the configured number of
/// calls in flight.
pub async fn run(manifest: &RunManifest) -> Result<RunSummary, CliError> {
    manifest.check()?;
    let dataset = dkg_core::load_dataset(&manifest.dataset)?;
    let templates = load_templates(manifest.templates.as_deref())?;
    let path = &manifest.transcripts;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let manifest_json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(manifest.manifest_path(), manifest_json + "\n").map_err(|e| CliError::io(&manifest.manifest_path(), e))?;

    let client = Arc::new(LlmClient::new(manifest.model.clone(), Some(Transcript::open(path)?))?);
    let subject = manifest.subject();
    let mut tasks = JoinSet::new();
    for s in &dataset.scenarios {
        let bundle = build_prompt(&templates, manifest.variant, s, Audience::Model)?;
        let meta = CallMeta {
            scenario_id: s.id.clone(),
            subject: subject.clone(),
            seed: manifest.seed,
        };
        let client = Arc::clone(&client);
        tasks.spawn(async move {
            let r = client.complete(&bundle, &meta).await;
            (meta.scenario_id, r)
        });
    }
    let mut summary = RunSummary {
        subject,
        ..Default::default()
    };
    while let Some(joined) = tasks.join_next().await {
        let (id, result) = joined.expect("model call task panicked");
        match result {
            Ok(o) if o.cached => summary.cached += 1,
            Ok(_) => summary.requested += 1,
            Err(ClientError::Transcript { path, source }) => return Err(CliError::io(&path, source)),
            Err(e) => {
                tracing::error!(scenario = %id, error = %e, "model call failed");
                summary.failed.push((id, e.to_string()));
            }
        }
    }
    summary.failed.sort();
    Ok(summary)
}

/// A response to score, from a transcript or a study export.
#[derive(Clone, Debug)]
pub struct Answer {
    pub subject: Subject,
    pub scenario_id: String,
    pub response: ParsedResponse,
}

/// The latest successful completion per subject and scenario.
pub fn answers_from_transcript(path: &Path) -> Result<Vec<Answer>, CliError> {
    let mut latest: Vec<Answer> = Vec::new();
    for rec in read_transcript(path).map_err(|e| CliError::io(path, e))? {
        let Some(c) = rec.completion else { continue };
        let answer = Answer {
            subject: Subject::model(rec.subject),
            scenario_id: rec.scenario_id,
            response: parse_completion(&c.raw_text),
        };
        match latest
            .iter_mut()
            .find(|a| a.subject == answer.subject && a.scenario_id == answer.scenario_id)
        {
            Some(slot) => *slot = answer,
            None => latest.push(answer),
        }
    }
    Ok(latest)
}

pub fn answers_from_export(path: &Path) -> Result<Vec<Answer>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExportRecord =
            serde_json::from_str(&line).map_err(|e| CliError::io(path, format!("line {}: {e}", i + 1)))?;
        let who = if rec.participant.is_empty() {
            rec.session_id
        } else {
            rec.participant
        };
        out.push(Answer {
            subject: Subject::participant(who),
            scenario_id: rec.scenario_id,
            response: rec.response,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct ScoreOutput {
    pub records: Vec<ScoreRecord>,
    pub warnings: Vec<String>,
}

/// Scores answers against the dataset. Model subjects come first, then
/// participants, each sorted by id; scenarios keep dataset order.
pub fn score(dataset: &Dataset, answers: &[Answer], overrides: &[Override]) -> Result<ScoreOutput, CliError> {
    let mut warnings = Vec::new();
    let mut truth = HashMap::new();
    for s in &dataset.scenarios {
        let gt = ground_truth_plans(s).map_err(|e| CliError::Validation(format!("scenario {}: {e}", s.id)))?;
        truth.insert(s.id.as_str(), gt);
    }
    let position = |id: &str| dataset.scenarios.iter().position(|s| s.id == id);
    let mut keyed = Vec::new();
    for a in answers {
        let Some(pos) = position(&a.scenario_id) else {
            warnings.push(format!("{}: scenario {} is not in the dataset", a.subject.id, a.scenario_id));
            continue;
        };
        let s = &dataset.scenarios[pos];
        let rec = score_scenario(s, &a.response, &truth[s.id.as_str()], &a.subject);
        keyed.push(((a.subject.human, a.subject.id.clone(), pos), rec));
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    let mut records: Vec<ScoreRecord> = keyed.into_iter().map(|(_, r)| r).collect();
    let changed = apply_overrides(&mut records, overrides)?;
    if changed > 0 {
        warnings.push(format!("{changed} records changed by overrides"));
    }
    Ok(ScoreOutput { records, warnings })
}

pub fn read_overrides(path: &Path) -> Result<Vec<Override>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<(), CliError> {
    let body: String = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("score record serializes") + "\n")
        .collect();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}
