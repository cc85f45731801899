//! HTTP API over the engine.
//!
//! Corpus, index and rules are immutable after startup. Sessions are the only
//! mutable state; each sits behind its own mutex so requests against one
//! session are serialized while different sessions proceed independently.

use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex as StdMutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::config::{AppConfig, ConfigError};
use crate::evaluation::{
    ablation, load_dataset, load_replay, render_table, replay_reports, EvaluationError, Sample,
    SettingReport,
};
use crate::manual::{Procedure, Severity, SourceIndex};
use crate::pipeline::{
    context_from_panel, Engine, InputField, InputSetting, PipelineError, ProcedureResponse,
    ProviderError,
};
use crate::situation::{parse_panel_text, DisplayKind, Erratum, InstrumentSnapshot};

/// Error body: `{"code": "...", "message": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }

    fn not_found(code: &str, what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, format!("no {what} `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::MissingInput { .. } | PipelineError::ExtraneousInput { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            PipelineError::Provider {
                source: ProviderError::Situation(_),
                ..
            }
            | PipelineError::Situation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            PipelineError::Provider { .. } | PipelineError::GroundingViolation { .. } => {
                StatusCode::BAD_GATEWAY
            }
            PipelineError::Manual(_) | PipelineError::Retrieval(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<EvaluationError> for ApiError {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::Pipeline { source, .. } => (*source).into(),
            other => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                other.code(),
                other.to_string(),
            ),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(e.status(), "BadRequest", e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    engine: Engine,
    scenarios: Arc<Vec<Sample>>,
    default_setting: InputSetting,
    sessions: Arc<StdMutex<HashMap<String, Arc<Mutex<SessionState>>>>>,
}

impl AppState {
    pub fn new(engine: Engine, scenarios: Vec<Sample>, default_setting: InputSetting) -> Self {
        Self {
            engine,
            scenarios: Arc::new(scenarios),
            default_setting,
            sessions: Arc::default(),
        }
    }

    /// State over the bundled corpus, rules and scenarios.
    pub fn bundled() -> Self {
        Self::new(
            Engine::bundled(),
            crate::bundled::dataset(),
            InputSetting::SnapshotPlusInstruction,
        )
    }

    pub fn from_config(config: &AppConfig) -> Result<Self, ConfigError> {
        let engine = config.engine()?;
        let scenarios = match &config.dataset_path {
            None => crate::bundled::dataset(),
            Some(path) => load_dataset(&crate::config::read(path)?)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?,
        };
        Ok(Self::new(engine, scenarios, config.default_setting))
    }

    fn scenario(&self, id: &str) -> Option<&Sample> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("UnknownSession", "session", id))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/query", post(query))
        .route("/api/manuals", get(manuals))
        .route("/api/procedures/{id}", get(procedure))
        .route("/api/scenarios", get(scenarios))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/instruction", post(session_instruction))
        .route("/api/sessions/{id}/check", post(check_step))
        .route("/api/evaluate", post(evaluate))
        .with_state(state)
}

/// Serve until `shutdown` resolves, then drain in-flight requests.
pub async fn serve_with_shutdown<F>(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: F,
) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Bind the configured port and serve until SIGINT or SIGTERM.
pub async fn serve(config: &AppConfig) -> anyhow::Result<()> {
    let state = AppState::from_config(config)?;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve_with_shutdown(listener, state, shutdown_signal()).await?;
    tracing::info!("shut down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

#[derive(Debug, Clone, Deserialize)]
pub struct QueryRequest {
    pub setting: Option<InputSetting>,
    pub panel: String,
    pub display: DisplayKind,
    pub instruction: Option<String>,
}

async fn query(
    State(state): State<AppState>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> ApiResult<ProcedureResponse> {
    let Json(req) = body?;
    let setting = req.setting.unwrap_or(state.default_setting);
    let ctx = context_from_panel(setting, &req.panel, req.display, req.instruction.as_deref())?;
    let engine = state.engine.clone();
    let response = blocking(move || Ok(engine.respond(&ctx)?)).await?;
    Ok(Json(response))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectionSummary {
    pub number: String,
    pub title: String,
    pub page: u32,
    pub procedures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChapterSummary {
    pub number: u32,
    pub title: String,
    pub sections: Vec<SectionSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManualSummary {
    pub id: String,
    pub title: String,
    pub procedure_count: usize,
    pub chapters: Vec<ChapterSummary>,
}

async fn manuals(State(state): State<AppState>) -> Json<Vec<ManualSummary>> {
    let list = state
        .engine
        .corpus()
        .manuals()
        .map(|m| ManualSummary {
            id: m.id.clone(),
            title: m.title.clone(),
            procedure_count: m.procedures().count(),
            chapters: m
                .chapters
                .iter()
                .map(|c| ChapterSummary {
                    number: c.number,
                    title: c.title.clone(),
                    sections: c
                        .sections
                        .iter()
                        .map(|s| SectionSummary {
                            number: s.number.to_string(),
                            title: s.title.clone(),
                            page: s.page,
                            procedures: s.procedures.iter().map(|p| p.id.clone()).collect(),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    Json(list)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcedureDetail {
    pub procedure: Procedure,
    pub excerpt: String,
    pub citation: SourceIndex,
}

async fn procedure(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<ProcedureDetail> {
    let corpus = state.engine.corpus();
    let p = corpus
        .procedure(&id)
        .ok_or_else(|| ApiError::not_found("UnknownProcedure", "procedure", &id))?;
    let excerpt = corpus
        .verbatim_excerpt(&p.source)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string()))?;
    Ok(Json(ProcedureDetail {
        excerpt: excerpt.to_string(),
        citation: p.source.clone(),
        procedure: p.clone(),
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub id: String,
    pub display: DisplayKind,
    pub panel: String,
    pub snapshot: InstrumentSnapshot,
    pub errata: Vec<Erratum>,
    pub instruction: String,
    pub expected_class: Severity,
    pub expected_procedure_id: Option<String>,
}

impl Scenario {
    fn from_sample(s: &Sample) -> Self {
        let reading = parse_panel_text(&s.panel, s.display);
        Self {
            id: s.id.clone(),
            display: s.display,
            panel: s.panel.clone(),
            snapshot: reading.snapshot,
            errata: reading.errata,
            instruction: s.instruction.clone(),
            expected_class: s.expected_condition.class,
            expected_procedure_id: s.expected_procedure_id.clone(),
        }
    }
}

async fn scenarios(State(state): State<AppState>) -> Json<Vec<Scenario>> {
    Json(state.scenarios.iter().map(Scenario::from_sample).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRef {
    pub procedure_id: String,
    pub ordinal: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub instruction: String,
    pub response: ProcedureResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub scenario_id: Option<String>,
    pub setting: InputSetting,
    pub display: DisplayKind,
    pub panel: String,
    pub transcript: Vec<TranscriptEntry>,
    pub checked_steps: BTreeSet<StepRef>,
    /// Procedures in the transcript whose steps are all checked.
    pub completed: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct CreateSession {
    pub scenario_id: Option<String>,
    pub setting: Option<InputSetting>,
    pub panel: Option<String>,
    pub display: Option<DisplayKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

async fn create_session(
    State(state): State<AppState>,
    body: Option<Json<CreateSession>>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let setting = req.setting.unwrap_or(state.default_setting);
    let (panel, display) = match (&req.scenario_id, req.panel) {
        (Some(id), None) => {
            let s = state
                .scenario(id)
                .ok_or_else(|| ApiError::not_found("UnknownScenario", "scenario", id))?;
            (s.panel.clone(), req.display.unwrap_or(s.display))
        }
        (None, Some(panel)) => (panel, req.display.unwrap_or(DisplayKind::EngineWarning)),
        (Some(_), Some(_)) => {
            return Err(ApiError::from(PipelineError::ExtraneousInput {
                setting,
                field: InputField::Snapshot,
            }))
        }
        (None, None) => {
            return Err(ApiError::from(PipelineError::MissingInput {
                setting,
                field: InputField::Snapshot,
            }))
        }
    };
    let session_id = uuid::Uuid::new_v4().to_string();
    let session = SessionState {
        session_id: session_id.clone(),
        scenario_id: req.scenario_id,
        setting,
        display,
        panel,
        transcript: Vec::new(),
        checked_steps: BTreeSet::new(),
        completed: Vec::new(),
    };
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(session_id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id })))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<SessionState> {
    let session = state.session(&id)?;
    let guard = session.lock().await;
    Ok(Json(guard.clone()))
}

#[derive(Debug, Clone, Deserialize)]
pub struct InstructionRequest {
    pub text: String,
}

async fn session_instruction(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<InstructionRequest>, JsonRejection>,
) -> ApiResult<ProcedureResponse> {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let mut guard = session.lock().await;
    let ctx = context_from_panel(guard.setting, &guard.panel, guard.display, Some(&req.text))?;
    let engine = state.engine.clone();
    let response = blocking(move || Ok(engine.respond(&ctx)?)).await?;
    guard.transcript.push(TranscriptEntry {
        instruction: req.text,
        response: response.clone(),
    });
    let completed = completed_procedures(&state.engine, &guard);
    guard.completed = completed;
    Ok(Json(response))
}

#[derive(Debug, Clone, Deserialize)]
pub struct CheckRequest {
    pub procedure_id: String,
    pub ordinal: u32,
    /// Target state; omitted means toggle.
    pub checked: Option<bool>,
}

async fn check_step(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<CheckRequest>, JsonRejection>,
) -> ApiResult<SessionState> {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let mut guard = session.lock().await;
    let in_transcript = guard
        .transcript
        .iter()
        .any(|t| t.response.top_procedure() == Some(req.procedure_id.as_str()));
    if !in_transcript {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "StepConflict",
            format!(
                "procedure `{}` is not in this session's transcript",
                req.procedure_id
            ),
        ));
    }
    let procedure = state
        .engine
        .corpus()
        .procedure(&req.procedure_id)
        .ok_or_else(|| ApiError::not_found("UnknownProcedure", "procedure", &req.procedure_id))?;
    if !procedure.steps.iter().any(|s| s.ordinal == req.ordinal) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "StepConflict",
            format!(
                "procedure `{}` has no step {}",
                req.procedure_id, req.ordinal
            ),
        ));
    }
    let step = StepRef {
        procedure_id: req.procedure_id,
        ordinal: req.ordinal,
    };
    let checked = req.checked.unwrap_or(!guard.checked_steps.contains(&step));
    if checked {
        guard.checked_steps.insert(step);
    } else {
        guard.checked_steps.remove(&step);
    }
    let completed = completed_procedures(&state.engine, &guard);
    guard.completed = completed;
    Ok(Json(guard.clone()))
}

fn completed_procedures(engine: &Engine, session: &SessionState) -> Vec<String> {
    let ids: BTreeSet<&str> = session
        .transcript
        .iter()
        .filter_map(|t| t.response.top_procedure())
        .collect();
    ids.into_iter()
        .filter(|id| {
            engine.corpus().procedure(id).is_some_and(|p| {
                p.steps.iter().all(|s| {
                    session.checked_steps.contains(&StepRef {
                        procedure_id: id.to_string(),
                        ordinal: s.ordinal,
                    })
                })
            })
        })
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct EvaluateRequest {
    /// Inline JSON Lines dataset.
    pub dataset: Option<String>,
    pub dataset_path: Option<PathBuf>,
    /// Inline per-trial records to replay instead of running the pipeline.
    pub replay: Option<String>,
    pub settings: Option<Vec<InputSetting>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateResponse {
    pub reports: Vec<SettingReport>,
    pub table: String,
}

async fn evaluate(
    State(state): State<AppState>,
    body: Result<Json<EvaluateRequest>, JsonRejection>,
) -> ApiResult<EvaluateResponse> {
    let Json(req) = body?;
    let reports = blocking(move || {
        if let Some(replay) = &req.replay {
            return Ok(replay_reports(&load_replay(replay)?)?);
        }
        let samples = match (&req.dataset, &req.dataset_path) {
            (Some(text), _) => load_dataset(text)?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "IoError",
                        format!("{}: {e}", path.display()),
                    )
                })?;
                load_dataset(&text)?
            }
            (None, None) => state.scenarios.as_ref().clone(),
        };
        let settings = req.settings.unwrap_or_else(|| InputSetting::ALL.to_vec());
        let engine = &state.engine;
        Ok(ablation(
            &samples,
            &settings,
            engine.provider(),
            engine.index(),
            engine.corpus(),
        )?)
    })
    .await?;
    Ok(Json(EvaluateResponse {
        table: render_table(&reports),
        reports,
    }))
}
