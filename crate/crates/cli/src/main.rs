use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use dkg_cli::llm_client::{MessageLayout, ModelConfig, DEFAULT_API_KEY_ENV};
use dkg_cli::pipeline::{
    answers_from_export, answers_from_transcript, load_templates, read_overrides, read_scores, run, score,
    write_scores, CliError, RunManifest,
};
use dkg_cli::report::build_report;
use dkg_cli::study::{serve, StudyConfig, StudyState};
use dkg_core::prompt::{build_prompt, Audience, PromptVariant};
use dkg_core::scenario::{bundled_dataset, corpus_shape_issues};
use dkg_core::{load_dataset, Dataset};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dkg", version, about = "Doors, Keys and Gems instruction-inference harness")]
struct Cli {
    /// Print results and errors as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario dataset.
    Validate {
        dataset: PathBuf,
        /// Treat differences from the 20-scenario study layout as failures.
        #[arg(long)]
        strict_shape: bool,
    },
    /// Print the assembled prompt for one scenario.
    Prompt {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_parser = parse_variant, default_value = "cp")]
        variant: PromptVariant,
        /// Dataset file; the bundled scenarios when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Materials as shown to participants (no instruction-type line).
        #[arg(long)]
        participant: bool,
    },
    /// Query a model over a dataset and append to a transcript.
    Run(RunArgs),
    /// Score transcripts and study exports.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        transcripts: Vec<PathBuf>,
        /// Study export files (JSON lines).
        #[arg(long)]
        participants: Vec<PathBuf>,
        /// JSON list of adjudicated metric overrides.
        #[arg(long)]
        overrides: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Result tables and significance tests from a score file.
    Report {
        #[arg(long)]
        scores: PathBuf,
        /// Directory for the CSV tables.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Start the participant study service.
    Serve {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Where session files are kept.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Static participant console to serve at /.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    variant: PromptVariant,
    #[arg(long)]
    model: String,
    /// Chat-completions URL.
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    temperature: f64,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    #[arg(long, default_value_t = 4)]
    max_retries: u32,
    /// First retry delay in milliseconds.
    #[arg(long, default_value_t = 500)]
    backoff_ms: u64,
    /// Send the common ground as a system message.
    #[arg(long)]
    system_message: bool,
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    #[arg(long)]
    templates: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<PromptVariant, String> {
    PromptVariant::from_name(s).ok_or_else(|| format!("unknown variant {s:?}; expected cp or fscot"))
}

fn dataset_or_bundled(path: Option<&Path>) -> Result<Dataset, CliError> {
    Ok(match path {
        Some(p) => load_dataset(p)?,
        None => bundled_dataset(),
    })
}

fn emit(json_mode: bool, value: serde_json::Value, text: &str) {
    if json_mode {
        println!("{value}");
    } else if !text.is_empty() {
        print!("{text}");
        if !text.ends_with('\n') {
            println!();
        }
    }
}

async fn execute(cli: &Cli) -> Result<(), CliError> {
    let j = cli.json;
    match &cli.command {
        Command::Validate { dataset, strict_shape } => {
            let d = load_dataset(dataset)?;
            let issues = corpus_shape_issues(&d);
            let mut text = format!("{}: {} scenarios valid\n", dataset.display(), d.len());
            for i in &issues {
                text.push_str(&format!("warning: {i}\n"));
            }
            emit(j, json!({ "scenarios": d.len(), "shape_issues": issues }), &text);
            if *strict_shape && !issues.is_empty() {
                return Err(CliError::Validation(format!("{} corpus shape issues", issues.len())));
            }
        }
        Command::Prompt {
            scenario,
            variant,
            dataset,
            templates,
            participant,
        } => {
            let d = dataset_or_bundled(dataset.as_deref())?;
            let s = d
                .get(scenario)
                .ok_or_else(|| CliError::Validation(format!("unknown scenario {scenario}")))?;
            let t = load_templates(templates.as_deref())?;
            let audience = if *participant {
                Audience::Participant
            } else {
                Audience::Model
            };
            let b = build_prompt(&t, *variant, s, audience)?;
            emit(j, serde_json::to_value(&b).expect("bundle serializes"), &b.assembled);
        }
        Command::Run(a) => {
            let mut model = ModelConfig::new(&a.endpoint, &a.model);
            model.temperature = a.temperature;
            model.max_tokens = a.max_tokens;
            model.concurrency = a.concurrency;
            model.timeout_secs = a.timeout;
            model.max_retries = a.max_retries;
            model.backoff_ms = a.backoff_ms;
            model.api_key_env = a.api_key_env.clone();
            if a.system_message {
                model.layout = MessageLayout::SystemUser;
            }
            let manifest = RunManifest {
                dataset: a.dataset.clone(),
                variant: a.variant,
                model,
                transcripts: a.transcripts.clone(),
                templates: a.templates.clone(),
                seed: a.seed,
            };
            let summary = run(&manifest).await?;
            let mut text = format!(
                "{}: {} requested, {} from cache, {} failed\n",
                summary.subject,
                summary.requested,
                summary.cached,
                summary.failed.len()
            );
            for (id, e) in &summary.failed {
                text.push_str(&format!("failed {id}: {e}\n"));
            }
            emit(j, serde_json::to_value(&summary).expect("summary serializes"), &text);
            if !summary.failed.is_empty() {
                return Err(CliError::Io {
                    path: manifest.transcripts,
                    message: format!("{} model calls failed", summary.failed.len()),
                });
            }
        }
        Command::Score {
            dataset,
            transcripts,
            participants,
            overrides,
            out,
        } => {
            let d = load_dataset(dataset)?;
            let mut answers = Vec::new();
            for t in transcripts {
                answers.extend(answers_from_transcript(t)?);
            }
            for p in participants {
                answers.extend(answers_from_export(p)?);
            }
            if answers.is_empty() {
                return Err(CliError::Validation("nothing to score: pass --transcripts or --participants".into()));
            }
            let overrides = match overrides {
                Some(p) => read_overrides(p)?,
                None => Vec::new(),
            };
            let scored = score(&d, &answers, &overrides)?;
            write_scores(out, &scored.records)?;
            for w in &scored.warnings {
                tracing::warn!("{w}");
            }
            let text = format!("{} records written to {}\n", scored.records.len(), out.display());
            emit(j, json!({ "records": scored.records.len(), "warnings": scored.warnings }), &text);
        }
        Command::Report { scores, out_dir } => {
            let records = read_scores(scores)?;
            let report = build_report(&records)?;
            if let Some(dir) = out_dir {
                report.write_csvs(dir).map_err(|e| CliError::io(dir, e))?;
            }
            emit(j, serde_json::to_value(&report).expect("report serializes"), &report.to_text());
        }
        Command::Serve {
            dataset,
            host,
            port,
            data_dir,
            ui_dir,
            seed,
            templates,
        } => {
            let d = dataset_or_bundled(dataset.as_deref())?;
            let t = load_templates(templates.as_deref())?;
            let cfg = StudyConfig {
                data_dir: data_dir.clone(),
                seed: *seed,
                ui_dir: ui_dir.clone(),
            };
            let state = StudyState::new(d, &t, cfg).map_err(|e| CliError::Validation(e.to_string()))?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::Validation(format!("bad address {host}:{port}: {e}")))?;
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .map_err(|e| CliError::io(Path::new(&addr.to_string()), e))?;
            tracing::info!(%addr, "study service listening");
            eprintln!("listening on http://{addr}");
            serve(listener, Arc::new(state))
                .await
                .map_err(|e| CliError::io(Path::new(&addr.to_string()), e))?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(&cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
