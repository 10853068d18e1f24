//! HTTP review service: serves shortlists from a completed run, records
//! expert decisions and reports the running footprint.
//!
//! Every route is available both at the root (`/components`) and scoped to
//! a session id (`/sessions/{sid}/components`). The scoped form answers 404
//! when the id is not the loaded session.

pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use ecolink_core::pipeline::DatasheetDecision;
use ecolink_core::{ActivityId, ComponentId, MappingDecision, Mode};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

pub use session::{DecideError, ReviewSession, SessionError, SessionInputs};

pub const API_VERSION: u32 = 1;
pub const DEFAULT_REVIEWER: &str = "expert";

/// Shared state. Reads take the lock shared; decisions take it exclusively,
/// so the log has a single writer and a response is only sent after the
/// in-memory state reflects the appended record.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<RwLock<Option<ReviewSession>>>,
    reviewer: Arc<str>,
}

impl AppState {
    pub fn new(session: Option<ReviewSession>) -> Self {
        Self {
            inner: Arc::new(RwLock::new(session)),
            reviewer: Arc::from(DEFAULT_REVIEWER),
        }
    }

    pub fn with_reviewer(mut self, reviewer: &str) -> Self {
        self.reviewer = Arc::from(reviewer);
        self
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"v": API_VERSION, "error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type Params = Option<Path<HashMap<String, String>>>;

fn param<'a>(params: &'a Params, key: &str) -> Option<&'a str> {
    params
        .as_ref()
        .and_then(|p| p.0.get(key))
        .map(String::as_str)
}

/// Runs `f` against the loaded session after checking the scope.
fn with_session<R>(
    state: &AppState,
    params: &Params,
    f: impl FnOnce(&ReviewSession) -> Result<R, ApiError>,
) -> Result<R, ApiError> {
    let guard = state.inner.read().unwrap_or_else(|e| e.into_inner());
    let session = check_scope(guard.as_ref(), params)?;
    f(session)
}

fn check_scope<'a>(
    session: Option<&'a ReviewSession>,
    params: &Params,
) -> Result<&'a ReviewSession, ApiError> {
    let sid = param(params, "sid");
    match session {
        Some(s) if sid.is_none_or(|sid| sid == s.id()) => Ok(s),
        Some(_) => Err(ApiError::not_found(format!(
            "unknown session {}",
            sid.unwrap_or_default()
        ))),
        None if sid.is_some() => Err(ApiError::not_found(format!(
            "unknown session {}",
            sid.unwrap_or_default()
        ))),
        None => Err(ApiError::new(
            StatusCode::CONFLICT,
            "no_run_loaded",
            "no run report is loaded",
        )),
    }
}

fn component_param(params: &Params) -> ComponentId {
    ComponentId::from(param(params, "id").unwrap_or_default())
}

fn with_v(mut body: Value) -> Json<Value> {
    body["v"] = json!(API_VERSION);
    Json(body)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCandidate {
    pub activity_id: ActivityId,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Decided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub component_id: ComponentId,
    pub name: String,
    pub material: String,
    pub supplier: String,
    pub quantity: f64,
    pub status: Status,
    pub top_candidate: Option<TopCandidate>,
    pub decision: Option<MappingDecision>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub activity_id: ActivityId,
    pub name: String,
    pub unit: String,
    pub emission_factor: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub component_id: ComponentId,
    pub mode: Option<Mode>,
    pub query_text: Option<String>,
    pub candidates: Vec<RankedCandidate>,
    pub datasheet: Option<DatasheetDecision>,
    pub error: Option<String>,
    pub decision: Option<MappingDecision>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DecisionRequest {
    pub activity_id: ActivityId,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub reviewer: Option<String>,
}

fn name_of(session: &ReviewSession, id: &ActivityId) -> String {
    session
        .activity(id)
        .map(|a| a.name.clone())
        .unwrap_or_default()
}

pub fn component_summaries(session: &ReviewSession) -> Vec<ComponentSummary> {
    session
        .bom()
        .iter()
        .map(|e| {
            let record = session.record(&e.id);
            let decision = session.decision(&e.id).cloned();
            ComponentSummary {
                component_id: e.id.clone(),
                name: e.name.clone(),
                material: e.material.clone(),
                supplier: e.supplier.clone(),
                quantity: e.quantity,
                status: if decision.is_some() {
                    Status::Decided
                } else {
                    Status::Pending
                },
                top_candidate: record
                    .and_then(|r| r.candidates.first())
                    .map(|c| TopCandidate {
                        activity_id: c.activity_id.clone(),
                        name: name_of(session, &c.activity_id),
                        score: c.score,
                    }),
                decision,
                error: match record {
                    Some(r) => r.error.clone(),
                    None => Some("component is not in the run report".into()),
                },
            }
        })
        .collect()
}

pub fn candidate_view(session: &ReviewSession, id: &ComponentId) -> Option<CandidateView> {
    session.entry(id)?;
    let record = session.record(id);
    Some(CandidateView {
        component_id: id.clone(),
        mode: record.map(|r| r.mode),
        query_text: record.and_then(|r| r.query_text.clone()),
        candidates: record
            .map(|r| {
                r.candidates
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let a = session.activity(&c.activity_id);
                        RankedCandidate {
                            rank: i + 1,
                            activity_id: c.activity_id.clone(),
                            name: a.map(|a| a.name.clone()).unwrap_or_default(),
                            unit: a.map(|a| a.unit.clone()).unwrap_or_default(),
                            emission_factor: a.map_or(f64::NAN, |a| a.emission_factor),
                            score: c.score,
                        }
                    })
                    .collect()
            })
            .unwrap_or_default(),
        datasheet: record.and_then(|r| r.datasheet.clone()),
        error: match record {
            Some(r) => r.error.clone(),
            None => Some("component is not in the run report".into()),
        },
        decision: session.decision(id).cloned(),
    })
}

async fn health() -> Json<Value> {
    Json(json!({"v": API_VERSION, "status": "ok"}))
}

async fn get_session(
    State(state): State<AppState>,
    params: Params,
) -> Result<Json<Value>, ApiError> {
    with_session(&state, &params, |s| {
        Ok(with_v(json!({
            "session_id": s.id(),
            "components": s.bom().len(),
            "activities": s.db().len(),
            "decisions": s.history().len(),
        })))
    })
}

async fn list_components(
    State(state): State<AppState>,
    params: Params,
) -> Result<Json<Value>, ApiError> {
    with_session(&state, &params, |s| {
        Ok(with_v(
            json!({"session_id": s.id(), "components": component_summaries(s)}),
        ))
    })
}

async fn get_candidates(
    State(state): State<AppState>,
    params: Params,
) -> Result<Json<Value>, ApiError> {
    let id = component_param(&params);
    with_session(&state, &params, |s| {
        let view = candidate_view(s, &id)
            .ok_or_else(|| ApiError::not_found(format!("unknown component {id}")))?;
        Ok(with_v(serde_json::to_value(view).expect("view serializes")))
    })
}

async fn post_decision(
    State(state): State<AppState>,
    params: Params,
    body: Result<Json<DecisionRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let id = component_param(&params);
    let mut guard = state.inner.write().unwrap_or_else(|e| e.into_inner());
    check_scope(guard.as_ref(), &params)?;
    let session = guard.as_mut().expect("scope checked");
    if session.entry(&id).is_none() {
        return Err(ApiError::not_found(format!("unknown component {id}")));
    }
    let Json(req) = body.map_err(|e| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_body",
            e.body_text(),
        )
    })?;
    let reviewer = req.reviewer.as_deref().unwrap_or(&state.reviewer);
    let decision = session
        .decide(
            &id,
            &req.activity_id,
            req.source.as_deref(),
            reviewer,
            Utc::now(),
        )
        .map_err(|e| match e {
            DecideError::UnknownComponent(_) => ApiError::not_found(e.to_string()),
            DecideError::UnknownActivity(_) => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_activity",
                e.to_string(),
            ),
            DecideError::InvalidSource(_) => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_source",
                e.to_string(),
            ),
            DecideError::Log(_) => ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "log_write_failed",
                e.to_string(),
            ),
        })?;
    Ok(with_v(json!({"decision": decision})))
}

async fn get_footprint(
    State(state): State<AppState>,
    params: Params,
) -> Result<Json<Value>, ApiError> {
    with_session(&state, &params, |s| {
        let fp = s.footprint().map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "footprint",
                e.to_string(),
            )
        })?;
        Ok(with_v(
            serde_json::to_value(fp).expect("footprint serializes"),
        ))
    })
}

async fn list_activities(
    State(state): State<AppState>,
    params: Params,
) -> Result<Json<Value>, ApiError> {
    with_session(&state, &params, |s| {
        let activities: Vec<Value> = s
            .db()
            .iter()
            .map(|a| json!({"id": a.id, "name": a.name, "unit": a.unit, "emission_factor": a.emission_factor}))
            .collect();
        Ok(with_v(json!({"activities": activities})))
    })
}

fn api() -> Router<AppState> {
    Router::new()
        .route("/session", get(get_session))
        .route("/components", get(list_components))
        .route("/components/{id}/candidates", get(get_candidates))
        .route("/components/{id}/decision", post(post_decision))
        .route("/footprint", get(get_footprint))
        .route("/activities", get(list_activities))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .merge(api())
        .nest("/sessions/{sid}", api())
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub listen: SocketAddr,
    /// Static frontend bundle served for paths the API does not claim.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn app(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let app = router(state);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
