//! The HTTP API. Routing, bearer tokens, idempotency replay and the clock
//! live here; request semantics come from `vrlab_core::wire::handlers`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vrlab_core::archive::export_experiment;
use vrlab_core::experiment::Experiment;
use vrlab_core::ids::{ExperimentId, SessionId, SubmissionId, Timestamp};
use vrlab_core::panel::{PanelExportRecord, SubmissionInput};
use vrlab_core::telemetry::OrientationSample;
use vrlab_core::ultimatum::GameMove;
use vrlab_core::wire::{
    handlers, AdvanceRequest, ApiError, CreateSessionRequest, CreateSessionResponse, HeadsetRequest, RedeemRequest,
    ReviewRequest, SubmissionResponse, SurveyRequest, SweepResponse,
};
use vrlab_core::{Ctx, Lab};

pub const SIM_TIME_HEADER: &str = "x-vrlab-sim-time";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// Bearer token of a session: hex SHA-256 of the server secret followed by
/// the session id.
pub fn session_token(secret: &[u8], session: &SessionId) -> String {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(session.as_str().as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub token_secret: Vec<u8>,
    /// Take request time from the `X-Vrlab-Sim-Time` header (milliseconds
    /// since the epoch) instead of the wall clock.
    pub simulated_clock: bool,
    /// When set, panel and sweep endpoints need this bearer token.
    pub admin_token: Option<String>,
}

/// Archive served by the export endpoint: file name → file text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportBody {
    pub experiment_id: ExperimentId,
    pub files: BTreeMap<String, String>,
}

#[derive(Clone)]
pub struct AppState {
    lab: Arc<RwLock<Lab>>,
    config: Arc<ServerConfig>,
    replies: Arc<Mutex<HashMap<String, (StatusCode, serde_json::Value)>>>,
}

impl AppState {
    pub fn new(lab: Arc<RwLock<Lab>>, config: ServerConfig) -> Self {
        Self { lab, config: Arc::new(config), replies: Arc::default() }
    }

    pub fn lab(&self) -> &Arc<RwLock<Lab>> {
        &self.lab
    }

    fn now(&self, headers: &HeaderMap) -> Result<Timestamp, ApiError> {
        if !self.config.simulated_clock {
            return Ok(Timestamp::now());
        }
        match headers.get(SIM_TIME_HEADER) {
            None => Ok(Timestamp::now()),
            Some(v) => v
                .to_str()
                .ok()
                .and_then(|s| s.trim().parse::<i64>().ok())
                .map(Timestamp::from_millis)
                .ok_or_else(|| ApiError::new(400, "ValidationError", "X-Vrlab-Sim-Time must be integer milliseconds")),
        }
    }

    fn check_session(&self, headers: &HeaderMap, id: &SessionId) -> Result<(), ApiError> {
        let expected = session_token(&self.config.token_secret, id);
        match bearer(headers) {
            Some(t) if t == expected => Ok(()),
            _ => Err(ApiError::new(401, "Unauthorized", format!("missing or wrong bearer token for session {id}"))),
        }
    }

    fn check_admin(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        match &self.config.admin_token {
            Some(expected) if bearer(headers) != Some(expected.as_str()) => {
                Err(ApiError::new(401, "Unauthorized", "admin token required"))
            }
            _ => Ok(()),
        }
    }

    /// Runs a mutating command. With an idempotency key, a repeat of an
    /// earlier request gets the stored reply instead of running again.
    fn mutate<T: Serialize>(
        &self,
        headers: &HeaderMap,
        ok: StatusCode,
        f: impl FnOnce(&mut Lab, Ctx) -> Result<T, vrlab_core::LabError>,
    ) -> Result<Response, ApiError> {
        let now = self.now(headers)?;
        let key = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned);
        let mut replies = self.replies.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((status, body)) = key.as_ref().and_then(|k| replies.get(k)) {
            return Ok((*status, Json(body.clone())).into_response());
        }
        let ctx = Ctx { now, idempotency_key: key.clone() };
        let result = {
            let mut lab = self.lab.write().unwrap_or_else(|e| e.into_inner());
            f(&mut lab, ctx)
        };
        let (status, body) = match result {
            Ok(v) => (ok, serde_json::to_value(v).map_err(|e| ApiError::new(500, "InternalError", e.to_string()))?),
            Err(e) => {
                let e = ApiError::from(e);
                (status_code(e.status), serde_json::to_value(&e.body).expect("error bodies serialize"))
            }
        };
        // only stored when the command was recorded under the key
        if let Some(k) = key {
            if status.is_success() {
                replies.insert(k, (status, body.clone()));
            }
        }
        Ok((status, Json(body)).into_response())
    }

    fn read<T>(&self, f: impl FnOnce(&Lab) -> Result<T, vrlab_core::LabError>) -> Result<T, ApiError> {
        let lab = self.lab.read().unwrap_or_else(|e| e.into_inner());
        f(&lab).map_err(ApiError::from)
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get("authorization")?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

fn status_code(code: u16) -> StatusCode {
    StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

struct Failure(ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (status_code(self.0.status), Json(self.0.body)).into_response()
    }
}

type Reply = Result<Response, Failure>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::new(e.status().as_u16(), "ValidationError", e.body_text()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/headset", post(headset))
        .route("/v1/sessions/{id}/advance", post(advance))
        .route("/v1/sessions/{id}/telemetry", post(telemetry))
        .route("/v1/sessions/{id}/game/moves", post(game_move))
        .route("/v1/sessions/{id}/code", post(redeem))
        .route("/v1/sessions/{id}/survey", post(survey))
        .route("/v1/experiments/{id}", get(experiment))
        .route("/v1/experiments/{id}/export", get(export))
        .route("/v1/panel/submissions", post(submit))
        .route("/v1/panel/submissions/{id}/review", post(review))
        .route("/v1/panel/workers", get(panel_workers))
        .route("/v1/admin/sweep", post(sweep))
        .with_state(state)
}

async fn create_session(State(s): State<AppState>, headers: HeaderMap, req: Result<Json<CreateSessionRequest>, JsonRejection>) -> Reply {
    let req = body(req)?;
    let secret = s.config.token_secret.clone();
    Ok(s.mutate(&headers, StatusCode::CREATED, |lab, ctx| {
        let session = handlers::create_session(lab, &req, ctx)?;
        let token = Some(session_token(&secret, &session.session_id));
        Ok(CreateSessionResponse { session, token })
    })?)
}

async fn get_session(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<SessionId>) -> Reply {
    s.check_session(&headers, &id)?;
    Ok(Json(s.read(|lab| handlers::get_session(lab, &id))?).into_response())
}

async fn headset(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<SessionId>,
    req: Result<Json<HeadsetRequest>, JsonRejection>,
) -> Reply {
    s.check_session(&headers, &id)?;
    let req = body(req)?;
    Ok(s.mutate(&headers, StatusCode::OK, |lab, ctx| handlers::headset(lab, &id, req, ctx))?)
}

async fn advance(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<SessionId>,
    req: Result<Json<AdvanceRequest>, JsonRejection>,
) -> Reply {
    s.check_session(&headers, &id)?;
    let req = body(req)?;
    Ok(s.mutate(&headers, StatusCode::OK, |lab, ctx| handlers::advance(lab, &id, req, ctx))?)
}

async fn telemetry(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<SessionId>,
    req: Result<Json<Vec<OrientationSample>>, JsonRejection>,
) -> Reply {
    s.check_session(&headers, &id)?;
    let batch = body(req)?;
    Ok(s.mutate(&headers, StatusCode::OK, |lab, ctx| handlers::telemetry(lab, &id, &batch, ctx))?)
}

async fn game_move(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<SessionId>,
    req: Result<Json<GameMove>, JsonRejection>,
) -> Reply {
    s.check_session(&headers, &id)?;
    let mv = body(req)?;
    Ok(s.mutate(&headers, StatusCode::OK, |lab, ctx| handlers::game_move(lab, &id, mv, ctx))?)
}

async fn redeem(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<SessionId>,
    req: Result<Json<RedeemRequest>, JsonRejection>,
) -> Reply {
    s.check_session(&headers, &id)?;
    let req = body(req)?;
    Ok(s.mutate(&headers, StatusCode::OK, |lab, ctx| handlers::redeem(lab, &id, &req, ctx))?)
}

async fn survey(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<SessionId>,
    req: Result<Json<SurveyRequest>, JsonRejection>,
) -> Reply {
    s.check_session(&headers, &id)?;
    let req = body(req)?;
    Ok(s.mutate(&headers, StatusCode::OK, |lab, ctx| handlers::survey(lab, &id, req, ctx))?)
}

async fn experiment(State(s): State<AppState>, Path(id): Path<ExperimentId>) -> Reply {
    let exp: Experiment = s.read(|lab| Ok(lab.experiment(&id)?.experiment.clone()))?;
    Ok(Json(exp).into_response())
}

async fn export(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<ExperimentId>) -> Reply {
    s.check_admin(&headers)?;
    let archive = s.read(|lab| export_experiment(lab, &id))?;
    let files = archive.files.into_iter().map(|(name, bytes)| (name, String::from_utf8_lossy(&bytes).into_owned())).collect();
    Ok(Json(ExportBody { experiment_id: id, files }).into_response())
}

async fn submit(State(s): State<AppState>, headers: HeaderMap, req: Result<Json<SubmissionInput>, JsonRejection>) -> Reply {
    s.check_admin(&headers)?;
    let input = body(req)?;
    Ok(s.mutate(&headers, StatusCode::CREATED, |lab, ctx| {
        lab.submit_qualification(&input, ctx).map(|submission_id| SubmissionResponse { submission_id })
    })?)
}

async fn review(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<SubmissionId>,
    req: Result<Json<ReviewRequest>, JsonRejection>,
) -> Reply {
    s.check_admin(&headers)?;
    let req = body(req)?;
    Ok(s.mutate(&headers, StatusCode::OK, |lab, ctx| {
        lab.review_submission(&id, req.decision, &req.note, ctx).map(|_| serde_json::json!({}))
    })?)
}

async fn panel_workers(State(s): State<AppState>, headers: HeaderMap) -> Reply {
    s.check_admin(&headers)?;
    let records: Vec<PanelExportRecord> =
        s.read(|lab| Ok(lab.panel().workers().filter_map(|w| lab.panel().export_record(&w.worker_id)).collect()))?;
    Ok(Json(records).into_response())
}

async fn sweep(State(s): State<AppState>, headers: HeaderMap) -> Reply {
    s.check_admin(&headers)?;
    Ok(s.mutate(&headers, StatusCode::OK, |lab, ctx| lab.sweep(ctx.now).map(|abandoned| SweepResponse { abandoned }))?)
}

/// Abandons idle sessions on the wall clock every `period`.
pub async fn sweep_loop(lab: Arc<RwLock<Lab>>, period: Duration) {
    let mut tick = tokio::time::interval(period);
    loop {
        tick.tick().await;
        let mut lab = lab.write().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = lab.sweep(Timestamp::now()) {
            eprintln!("sweep failed: {e}");
        }
    }
}

/// Serves until the listener fails or ctrl-c arrives.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState, sweep_every: Option<Duration>) -> std::io::Result<()> {
    if let Some(period) = sweep_every {
        tokio::spawn(sweep_loop(state.lab.clone(), period));
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
