//! HTTP front end: sessions, state commands, asynchronous optimization runs,
//! traces, descriptions, chat and cost-field rasters.

pub mod error;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use railtrace_core::explain::agent::{agent_turn, default_tools, AgentRun, AgentState};
use railtrace_core::explain::lm::LmClient;
use railtrace_core::explain::{describe_run, parse_commands, DescriptionType};
use railtrace_core::geometry::sample_curve;
use railtrace_core::optimize::{run_optimization, OptRun, OptimizerConfig};
use railtrace_core::scenario::{apply_commands, generate_scenario, Scenario, StateCommand};
use railtrace_core::simulator::cost_raster;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

pub use error::ApiError;
use session::{ProgressEmitter, RunEntry, RunStatus, Session, SessionStore};

/// Points returned with each state for drawing the track.
pub const CURVE_SAMPLES: usize = 200;
pub const MAX_COSTFIELD_RES: usize = 512;

pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub lm: Option<LmClient>,
    /// Concurrent optimization runs across all sessions.
    pub workers: usize,
    /// Finished runs are saved under `<dir>/<session>/<run>` when set.
    pub data_dir: Option<PathBuf>,
}

pub struct AppState {
    sessions: SessionStore,
    lm: Option<LmClient>,
    workers: Arc<Semaphore>,
    data_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(lm: Option<LmClient>, workers: usize, data_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            sessions: SessionStore::default(),
            lm,
            workers: Arc::new(Semaphore::new(workers.max(1))),
            data_dir,
        })
    }

    fn lm(&self) -> Result<&LmClient, ApiError> {
        self.lm.as_ref().ok_or_else(ApiError::lm_unavailable)
    }

    async fn session(&self, id: &str) -> Result<session::SessionHandle, ApiError> {
        self.sessions.get(id).await.ok_or_else(|| ApiError::not_found("session", id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/state", get(get_state))
        .route("/api/sessions/{id}/commands", post(post_commands))
        .route("/api/sessions/{id}/commands/parse", post(parse_command_text))
        .route("/api/sessions/{id}/optimize", post(start_optimization))
        .route("/api/sessions/{id}/runs/{rid}", get(run_status))
        .route("/api/sessions/{id}/runs/{rid}/trace", get(run_trace))
        .route("/api/sessions/{id}/runs/{rid}/description", get(run_description))
        .route("/api/sessions/{id}/costfield", get(cost_field))
        .route("/api/sessions/{id}/chat", post(chat))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config.lm, config.workers, config.data_dir);
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type ApiResult<T> = Result<T, ApiError>;

fn unprocessable(code: &'static str, e: impl ToString) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, e.to_string())
}

fn state_body(id: &str, s: &Scenario) -> ApiResult<Value> {
    let curve = sample_curve(&s.ctrl_points, CURVE_SAMPLES).map_err(|e| unprocessable("invalid_state", e))?;
    let curve: Vec<[f64; 2]> = curve.iter().map(|p| [p.x, p.y]).collect();
    Ok(json!({ "id": id, "scenario": s, "curve": curve }))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    seed: Option<u64>,
    obstacles: Option<usize>,
    ctrl_points: Option<usize>,
    scenario: Option<Scenario>,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))?
    };
    let scenario = match req.scenario {
        Some(s) => {
            s.validate().map_err(|e| unprocessable("invalid_scenario", e))?;
            s
        }
        None => generate_scenario(
            req.seed.unwrap_or(0),
            req.obstacles.unwrap_or(20),
            req.ctrl_points.unwrap_or(16),
        )
        .map_err(|e| unprocessable("invalid_scenario", e))?,
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let body = state_body(&id, &scenario)?;
    app.sessions.insert(Session::new(id, scenario)).await;
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let handle = app.session(&id).await?;
    let s = handle.lock().await;
    Ok(Json(state_body(&id, &s.scenario)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandsBody {
    commands: Vec<StateCommand>,
}

async fn post_commands(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<CommandsBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(body) = body?;
    let handle = app.session(&id).await?;
    let mut s = handle.lock().await;
    let next = apply_commands(&s.scenario, &body.commands).map_err(|e| unprocessable("invalid_command", e))?;
    s.scenario = next;
    Ok(Json(state_body(&id, &s.scenario)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParseBody {
    text: String,
}

async fn parse_command_text(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ParseBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(body) = body?;
    app.session(&id).await?;
    let commands = parse_commands(&body.text, app.lm()?).await?;
    Ok(Json(json!({ "commands": commands })))
}

async fn start_optimization(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let config: OptimizerConfig = if body.iter().all(u8::is_ascii_whitespace) {
        OptimizerConfig::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))?
    };
    config.validate().map_err(|e| unprocessable("invalid_config", e))?;
    let handle = app.session(&id).await?;
    let (run_id, scenario, progress) = {
        let mut s = handle.lock().await;
        if let Some(active) = s.active_run() {
            return Err(ApiError::new(StatusCode::CONFLICT, "run_active", "a run is already active for this session")
                .with_detail(json!({ "run_id": active })));
        }
        let run_id = s.allocate_run_id();
        let entry = RunEntry::queued(run_id.clone(), config.clone());
        let progress = entry.progress.clone();
        s.runs.insert(run_id.clone(), entry);
        (run_id, s.scenario.clone(), progress)
    };

    let app2 = app.clone();
    let rid = run_id.clone();
    tokio::spawn(async move {
        let _permit = app2.workers.clone().acquire_owned().await.expect("worker pool open");
        set_status(&handle, &rid, RunStatus::Running).await;
        let data_dir = app2.data_dir.clone().map(|d| d.join(&id).join(&rid));
        let outcome = tokio::task::spawn_blocking(move || {
            let run = run_optimization(&scenario, &config, &mut ProgressEmitter(progress)).map_err(|e| e.to_string())?;
            let trace = run.render_trace(config.update_rate).map_err(|e| e.to_string())?.to_jsonl();
            let persist_error = data_dir.and_then(|d| run.save(&d).err().map(|e| e.to_string()));
            Ok::<_, String>((run, trace, persist_error))
        })
        .await
        .unwrap_or_else(|e| Err(format!("worker panicked: {e}")));
        let mut s = handle.lock().await;
        if let Some(entry) = s.runs.get_mut(&rid) {
            match outcome {
                Ok((run, trace, persist_error)) => {
                    entry.status = RunStatus::Done;
                    entry.run = Some(Arc::new(run));
                    entry.trace = Some(Arc::new(trace));
                    entry.persist_error = persist_error;
                }
                Err(e) => {
                    entry.status = RunStatus::Failed;
                    entry.error = Some(e);
                }
            }
        }
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "run_id": run_id, "status": RunStatus::Queued })),
    )
        .into_response())
}

async fn set_status(handle: &session::SessionHandle, rid: &str, status: RunStatus) {
    if let Some(entry) = handle.lock().await.runs.get_mut(rid) {
        entry.status = status;
    }
}

fn relative(initial: f64, last: f64) -> f64 {
    if initial == 0.0 {
        0.0
    } else {
        (initial - last) / initial
    }
}

fn run_metrics(run: &OptRun) -> Value {
    let (a, b) = (run.initial_reward(), run.final_reward());
    json!({
        "initial": a,
        "final": b,
        "relative_savings": { "time": relative(a.time, b.time), "cost": relative(a.cost, b.cost) },
        "wall_clock_secs": run.wall_clock_secs,
    })
}

async fn find_run(app: &AppState, id: &str, rid: &str) -> ApiResult<RunEntry> {
    let handle = app.session(id).await?;
    let s = handle.lock().await;
    s.runs.get(rid).cloned().ok_or_else(|| ApiError::not_found("run", rid))
}

async fn run_status(State(app): State<Arc<AppState>>, Path((id, rid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let entry = find_run(&app, &id, &rid).await?;
    Ok(Json(json!({
        "run_id": entry.id,
        "status": entry.status,
        "progress": entry.fraction_done(),
        "completed_iterations": entry.progress.load(std::sync::atomic::Ordering::Relaxed),
        "steps": entry.config.steps,
        "config": entry.config,
        "metrics": entry.run.as_deref().map(run_metrics),
        "error": entry.error,
        "persist_error": entry.persist_error,
    })))
}

fn finished(entry: &RunEntry) -> ApiResult<Arc<OptRun>> {
    match (&entry.status, &entry.run) {
        (RunStatus::Done, Some(run)) => Ok(run.clone()),
        (RunStatus::Failed, _) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "run_failed",
            entry.error.clone().unwrap_or_default(),
        )),
        _ => Err(ApiError::new(StatusCode::CONFLICT, "run_not_done", "the run has not finished")
            .with_detail(json!({ "status": entry.status }))),
    }
}

async fn run_trace(State(app): State<Arc<AppState>>, Path((id, rid)): Path<(String, String)>) -> ApiResult<Response> {
    let entry = find_run(&app, &id, &rid).await?;
    finished(&entry)?;
    let trace = entry.trace.expect("done runs carry a trace");
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], trace.as_str().to_owned()).into_response())
}

#[derive(Deserialize)]
struct DescriptionQuery {
    #[serde(rename = "type", default = "default_description")]
    kind: String,
}

fn default_description() -> String {
    "updates".into()
}

async fn run_description(
    State(app): State<Arc<AppState>>,
    Path((id, rid)): Path<(String, String)>,
    query: Result<Query<DescriptionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = query?;
    let kind = DescriptionType::parse(&q.kind).ok_or_else(|| {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", format!("unknown description type `{}`", q.kind))
            .with_detail(json!({ "allowed": ["full", "steps", "updates"] }))
    })?;
    let entry = find_run(&app, &id, &rid).await?;
    let run = finished(&entry)?;
    let lm = if kind.needs_lm() { Some(app.lm()?) } else { None };
    let d = describe_run(&run, kind, lm).await?;
    Ok(Json(json!({ "type": kind.name(), "steps": d.steps, "summary": d.summary, "text": d.text() })))
}

#[derive(Deserialize)]
struct CostQuery {
    #[serde(default = "default_res")]
    res: usize,
}

fn default_res() -> usize {
    100
}

async fn cost_field(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<CostQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = query?;
    if !(1..=MAX_COSTFIELD_RES).contains(&q.res) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_query",
            format!("res must be in 1..={MAX_COSTFIELD_RES}"),
        ));
    }
    let scenario = app.session(&id).await?.lock().await.scenario.clone();
    let values = tokio::task::spawn_blocking(move || cost_raster(&scenario, q.res))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Json(json!({ "res": q.res, "values": values, "min": min, "max": max })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatBody {
    message: String,
}

async fn chat(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ChatBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(body) = body?;
    let handle = app.session(&id).await?;
    let lm = app.lm()?;
    let mut s = handle.lock().await;
    let mut agent = AgentState::new(s.scenario.clone());
    agent.next_run = s.next_run;
    for entry in s.runs.values() {
        if let (RunStatus::Done, Some(run)) = (entry.status, &entry.run) {
            agent.runs.push(AgentRun {
                id: entry.id.clone(),
                label: entry.id.clone(),
                run: (**run).clone(),
            });
        }
    }
    let known = agent.runs.len();
    let turn = agent_turn(&s.transcript, &body.message, &default_tools(), &mut agent, lm)
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "lm_error", e.to_string()))?;

    s.scenario = agent.scenario;
    s.next_run = agent.next_run;
    for r in agent.runs.into_iter().skip(known) {
        let mut entry = RunEntry::queued(r.id.clone(), r.run.config.clone());
        entry.trace = Some(Arc::new(
            r.run
                .render_trace(r.run.config.update_rate)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
                .to_jsonl(),
        ));
        entry.progress.store(r.run.config.steps, std::sync::atomic::Ordering::Relaxed);
        entry.status = RunStatus::Done;
        entry.run = Some(Arc::new(r.run));
        s.runs.insert(r.id, entry);
    }
    s.transcript = turn.history;
    Ok(Json(json!({
        "reply": turn.reply,
        "outcome": turn.outcome,
        "tool_events": turn.tool_events,
    })))
}
