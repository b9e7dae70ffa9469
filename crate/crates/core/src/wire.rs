//! Request and response bodies of the HTTP API, the [`LabApi`] trait the
//! simulator drives, and an in-process implementation of it.
//!
//! The handler functions here hold the request semantics; the HTTP server
//! only adds routing, authentication and JSON framing around them.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::experiment::{Experiment, FlowStep};
use crate::ids::{ConditionId, ExperimentId, PostingId, SessionId, SubmissionId, Timestamp, WorkerId};
use crate::instruments::ResponseSet;
use crate::lab::{Ctx, Lab, LabError, SessionEntry};
use crate::panel::{ReviewDecision, SubmissionInput};
use crate::session::{GateStatus, ProtocolEvent, QualityFlag, SessionState};
use crate::telemetry::OrientationSample;
use crate::ultimatum::{GameMove, GameState, OpponentSpec, RoundRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub worker_id: WorkerId,
    pub experiment_id: ExperimentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posting_id: Option<PostingId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameView {
    pub match_index: u32,
    pub round: u32,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opponent: Option<OpponentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<RoundRecord>,
    pub rounds_played: usize,
    pub participant_total: u32,
    pub bot_total: u32,
}

impl GameView {
    pub fn of(g: &GameState) -> Self {
        Self {
            match_index: g.match_index,
            round: g.round,
            complete: g.is_complete(),
            opponent: g.current_opponent().copied(),
            pending: g.pending,
            rounds_played: g.history.len(),
            participant_total: g.participant_total,
            bot_total: g.bot_total,
        }
    }
}

/// What a participant client sees of its session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: SessionId,
    pub experiment_id: ExperimentId,
    pub condition_id: ConditionId,
    pub state: SessionState,
    #[serde(default)]
    pub stimulus_params: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub flow: Vec<FlowStep>,
    #[serde(default)]
    pub quality_flags: Vec<QualityFlag>,
    /// Shown only while the session waits for redemption.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session: SessionView,
    /// Bearer token for the session endpoints; absent in-process.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadsetRequest {
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadsetResponse {
    pub gate: GateStatus,
    pub state: SessionState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvanceRequest {
    pub event: ProtocolEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryResponse {
    pub accepted: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameMoveResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<RoundRecord>,
    pub game: GameView,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedeemRequest {
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRequest {
    pub responses: Vec<ResponseSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub decision: ReviewDecision,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionResponse {
    pub submission_id: SubmissionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub abandoned: Vec<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{status} {}: {}", body.error, body.message)]
pub struct ApiError {
    pub status: u16,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn kind(&self) -> &str {
        &self.body.error
    }

    pub fn new(status: u16, error: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: error.into(), message: message.into() } }
    }
}

/// HTTP status for a lab error.
pub fn http_status(err: &LabError) -> u16 {
    match err.kind() {
        "UnknownExperiment" | "UnknownSession" | "UnknownPosting" | "UnknownSubmission" => 404,
        "NotEligible" => 403,
        "ValidationError" | "SchemaError" | "MissingItem" | "OutOfRange" | "UnknownItem" | "UnknownInstrument"
        | "UnknownSubscale" | "MissingInstrument" | "DuplicateInstrument" | "InvalidSplit" | "CodeMismatch" => 422,
        "StorageError" | "InternalError" => 500,
        _ => 409,
    }
}

impl From<LabError> for ApiError {
    fn from(err: LabError) -> Self {
        ApiError::new(http_status(&err), err.kind(), err.to_string())
    }
}

pub fn session_view(lab: &Lab, entry: &SessionEntry) -> SessionView {
    let s = &entry.session;
    let exp = lab.experiment(&s.experiment_id).map(|e| &e.experiment).ok();
    SessionView {
        session_id: s.session_id.clone(),
        experiment_id: s.experiment_id.clone(),
        condition_id: s.condition_id.clone(),
        state: s.state,
        stimulus_params: exp
            .and_then(|e| e.condition(&s.condition_id))
            .map(|c| c.stimulus_params.clone())
            .unwrap_or_default(),
        flow: exp.map(|e| e.flow.clone()).unwrap_or_default(),
        quality_flags: s.quality_flags.iter().copied().collect(),
        verification_code: s.outstanding_code().map(str::to_owned),
        game: entry.game.as_ref().map(GameView::of),
    }
}

pub mod handlers {
    //! One function per endpoint, shared by the HTTP server and [`LocalApi`].

    use super::*;

    pub fn create_session(lab: &mut Lab, req: &CreateSessionRequest, ctx: Ctx) -> Result<SessionView, LabError> {
        let id = lab.create_session(&req.worker_id, &req.experiment_id, req.posting_id.as_ref(), ctx)?.session.session_id.clone();
        get_session(lab, &id)
    }

    pub fn get_session(lab: &Lab, id: &SessionId) -> Result<SessionView, LabError> {
        Ok(session_view(lab, lab.session(id)?))
    }

    pub fn headset(lab: &mut Lab, id: &SessionId, req: HeadsetRequest, ctx: Ctx) -> Result<HeadsetResponse, LabError> {
        let gate = lab.report_headset(id, req.present, ctx)?;
        Ok(HeadsetResponse { gate, state: lab.session(id)?.session.state })
    }

    pub fn advance(lab: &mut Lab, id: &SessionId, req: AdvanceRequest, ctx: Ctx) -> Result<SessionView, LabError> {
        lab.advance(id, req.event, ctx)?;
        get_session(lab, id)
    }

    pub fn telemetry(lab: &mut Lab, id: &SessionId, batch: &[OrientationSample], ctx: Ctx) -> Result<TelemetryResponse, LabError> {
        let accepted = lab.ingest_telemetry(id, batch, ctx)?;
        Ok(TelemetryResponse { accepted, total: lab.session(id)?.trace.len() })
    }

    pub fn game_move(lab: &mut Lab, id: &SessionId, mv: GameMove, ctx: Ctx) -> Result<GameMoveResponse, LabError> {
        let round = lab.game_move(id, mv, ctx)?;
        let game = lab.session(id)?.game.as_ref().map(GameView::of).ok_or_else(|| LabError::NoGame(id.clone()))?;
        Ok(GameMoveResponse { round, game })
    }

    pub fn redeem(lab: &mut Lab, id: &SessionId, req: &RedeemRequest, ctx: Ctx) -> Result<SessionView, LabError> {
        lab.redeem_code(id, &req.code, ctx)?;
        get_session(lab, id)
    }

    pub fn survey(lab: &mut Lab, id: &SessionId, req: SurveyRequest, ctx: Ctx) -> Result<SessionView, LabError> {
        lab.submit_survey(id, req.responses, ctx)?;
        get_session(lab, id)
    }
}

/// Everything the scripted-participant driver needs: participant calls
/// plus the few administrative calls used to enroll simulated workers and
/// expire idle sessions. `now` is the logical request time; servers
/// running on a wall clock may ignore it.
pub trait LabApi: Send + Sync {
    fn experiment(&self, id: &ExperimentId) -> Result<Experiment, ApiError>;
    fn submit_qualification(&self, input: &SubmissionInput, now: Timestamp) -> Result<SubmissionId, ApiError>;
    fn review(&self, id: &SubmissionId, req: &ReviewRequest, now: Timestamp) -> Result<(), ApiError>;
    fn sweep(&self, now: Timestamp) -> Result<Vec<SessionId>, ApiError>;

    fn create_session(&self, req: &CreateSessionRequest, now: Timestamp) -> Result<CreateSessionResponse, ApiError>;
    fn headset(&self, s: &SessionHandle, present: bool, now: Timestamp) -> Result<HeadsetResponse, ApiError>;
    fn advance(&self, s: &SessionHandle, event: ProtocolEvent, now: Timestamp) -> Result<SessionView, ApiError>;
    fn telemetry(&self, s: &SessionHandle, batch: &[OrientationSample], now: Timestamp) -> Result<TelemetryResponse, ApiError>;
    fn game_move(&self, s: &SessionHandle, mv: GameMove, now: Timestamp) -> Result<GameMoveResponse, ApiError>;
    fn redeem(&self, s: &SessionHandle, code: &str, now: Timestamp) -> Result<SessionView, ApiError>;
    fn survey(&self, s: &SessionHandle, responses: Vec<ResponseSet>, now: Timestamp) -> Result<SessionView, ApiError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionHandle {
    pub session_id: SessionId,
    pub token: Option<String>,
}

/// In-process [`LabApi`] over a shared lab.
#[derive(Debug, Clone)]
pub struct LocalApi {
    lab: Arc<RwLock<Lab>>,
}

impl LocalApi {
    pub fn new(lab: Arc<RwLock<Lab>>) -> Self {
        Self { lab }
    }

    pub fn lab(&self) -> &Arc<RwLock<Lab>> {
        &self.lab
    }

    fn write<T>(&self, f: impl FnOnce(&mut Lab) -> Result<T, LabError>) -> Result<T, ApiError> {
        let mut lab = self.lab.write().unwrap_or_else(|e| e.into_inner());
        f(&mut lab).map_err(ApiError::from)
    }
}

impl LabApi for LocalApi {
    fn experiment(&self, id: &ExperimentId) -> Result<Experiment, ApiError> {
        let lab = self.lab.read().unwrap_or_else(|e| e.into_inner());
        Ok(lab.experiment(id)?.experiment.clone())
    }

    fn submit_qualification(&self, input: &SubmissionInput, now: Timestamp) -> Result<SubmissionId, ApiError> {
        self.write(|lab| lab.submit_qualification(input, now))
    }

    fn review(&self, id: &SubmissionId, req: &ReviewRequest, now: Timestamp) -> Result<(), ApiError> {
        self.write(|lab| lab.review_submission(id, req.decision, &req.note, now).map(|_| ()))
    }

    fn sweep(&self, now: Timestamp) -> Result<Vec<SessionId>, ApiError> {
        self.write(|lab| lab.sweep(now))
    }

    fn create_session(&self, req: &CreateSessionRequest, now: Timestamp) -> Result<CreateSessionResponse, ApiError> {
        self.write(|lab| handlers::create_session(lab, req, now.into())).map(|session| CreateSessionResponse { session, token: None })
    }

    fn headset(&self, s: &SessionHandle, present: bool, now: Timestamp) -> Result<HeadsetResponse, ApiError> {
        self.write(|lab| handlers::headset(lab, &s.session_id, HeadsetRequest { present }, now.into()))
    }

    fn advance(&self, s: &SessionHandle, event: ProtocolEvent, now: Timestamp) -> Result<SessionView, ApiError> {
        self.write(|lab| handlers::advance(lab, &s.session_id, AdvanceRequest { event }, now.into()))
    }

    fn telemetry(&self, s: &SessionHandle, batch: &[OrientationSample], now: Timestamp) -> Result<TelemetryResponse, ApiError> {
        self.write(|lab| handlers::telemetry(lab, &s.session_id, batch, now.into()))
    }

    fn game_move(&self, s: &SessionHandle, mv: GameMove, now: Timestamp) -> Result<GameMoveResponse, ApiError> {
        self.write(|lab| handlers::game_move(lab, &s.session_id, mv, now.into()))
    }

    fn redeem(&self, s: &SessionHandle, code: &str, now: Timestamp) -> Result<SessionView, ApiError> {
        self.write(|lab| handlers::redeem(lab, &s.session_id, &RedeemRequest { code: code.into() }, now.into()))
    }

    fn survey(&self, s: &SessionHandle, responses: Vec<ResponseSet>, now: Timestamp) -> Result<SessionView, ApiError> {
        self.write(|lab| handlers::survey(lab, &s.session_id, SurveyRequest { responses }, now.into()))
    }
}
