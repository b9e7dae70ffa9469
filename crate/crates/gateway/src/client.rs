//! Blocking HTTP client implementing [`LabApi`], used by `vrlab simulate
//! --api` and the HTTP tests.

use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;
use vrlab_core::experiment::Experiment;
use vrlab_core::ids::{ExperimentId, SessionId, SubmissionId, Timestamp};
use vrlab_core::instruments::ResponseSet;
use vrlab_core::panel::{PanelExportRecord, SubmissionInput};
use vrlab_core::session::ProtocolEvent;
use vrlab_core::telemetry::OrientationSample;
use vrlab_core::ultimatum::GameMove;
use vrlab_core::wire::{
    AdvanceRequest, ApiError, CreateSessionRequest, CreateSessionResponse, ErrorBody, GameMoveResponse,
    HeadsetRequest, HeadsetResponse, LabApi, RedeemRequest, ReviewRequest, SessionHandle, SessionView,
    SubmissionResponse, SurveyRequest, SweepResponse, TelemetryResponse,
};

use crate::server::{ExportBody, SIM_TIME_HEADER};

#[derive(Debug, Clone)]
pub struct HttpApi {
    base: String,
    client: Client,
    admin_token: Option<String>,
    /// Send each request's logical time in the simulated-clock header.
    send_time: bool,
}

impl HttpApi {
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_owned(), client: Client::new(), admin_token: None, send_time: true }
    }

    pub fn with_admin_token(mut self, token: Option<String>) -> Self {
        self.admin_token = token;
        self
    }

    pub fn with_sim_time(mut self, send: bool) -> Self {
        self.send_time = send;
        self
    }

    fn post(&self, path: &str, now: Timestamp) -> RequestBuilder {
        self.stamp(self.client.post(format!("{}{path}", self.base)), now)
    }

    fn stamp(&self, req: RequestBuilder, now: Timestamp) -> RequestBuilder {
        if self.send_time {
            req.header(SIM_TIME_HEADER, now.0.to_string())
        } else {
            req
        }
    }

    fn admin(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.admin_token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    fn session_post<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        s: &SessionHandle,
        tail: &str,
        body: &B,
        now: Timestamp,
    ) -> Result<T, ApiError> {
        let mut req = self.post(&format!("/v1/sessions/{}/{tail}", s.session_id), now).json(body);
        if let Some(t) = &s.token {
            req = req.bearer_auth(t);
        }
        send(req)
    }

    pub fn session(&self, s: &SessionHandle) -> Result<SessionView, ApiError> {
        let mut req = self.client.get(format!("{}/v1/sessions/{}", self.base, s.session_id));
        if let Some(t) = &s.token {
            req = req.bearer_auth(t);
        }
        send(req)
    }

    pub fn panel_workers(&self) -> Result<Vec<PanelExportRecord>, ApiError> {
        send(self.admin(self.client.get(format!("{}/v1/panel/workers", self.base))))
    }

    pub fn export(&self, id: &ExperimentId) -> Result<ExportBody, ApiError> {
        send(self.admin(self.client.get(format!("{}/v1/experiments/{id}/export", self.base))))
    }
}

fn send<T: DeserializeOwned>(req: RequestBuilder) -> Result<T, ApiError> {
    let resp = req.send().map_err(|e| ApiError::new(503, "TransportError", e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| ApiError::new(503, "TransportError", e.to_string()))?;
    if status.is_success() {
        serde_json::from_str(&text).map_err(|e| ApiError::new(502, "BadResponse", format!("{e}: {text}")))
    } else {
        let body = serde_json::from_str::<ErrorBody>(&text)
            .unwrap_or_else(|_| ErrorBody { error: "HttpError".into(), message: text });
        Err(ApiError { status: status.as_u16(), body })
    }
}

impl LabApi for HttpApi {
    fn experiment(&self, id: &ExperimentId) -> Result<Experiment, ApiError> {
        send(self.client.get(format!("{}/v1/experiments/{id}", self.base)))
    }

    fn submit_qualification(&self, input: &SubmissionInput, now: Timestamp) -> Result<SubmissionId, ApiError> {
        send::<SubmissionResponse>(self.admin(self.post("/v1/panel/submissions", now)).json(input)).map(|r| r.submission_id)
    }

    fn review(&self, id: &SubmissionId, req: &ReviewRequest, now: Timestamp) -> Result<(), ApiError> {
        send::<serde_json::Value>(self.admin(self.post(&format!("/v1/panel/submissions/{id}/review"), now)).json(req)).map(|_| ())
    }

    fn sweep(&self, now: Timestamp) -> Result<Vec<SessionId>, ApiError> {
        send::<SweepResponse>(self.admin(self.post("/v1/admin/sweep", now))).map(|r| r.abandoned)
    }

    fn create_session(&self, req: &CreateSessionRequest, now: Timestamp) -> Result<CreateSessionResponse, ApiError> {
        send(self.post("/v1/sessions", now).json(req))
    }

    fn headset(&self, s: &SessionHandle, present: bool, now: Timestamp) -> Result<HeadsetResponse, ApiError> {
        self.session_post(s, "headset", &HeadsetRequest { present }, now)
    }

    fn advance(&self, s: &SessionHandle, event: ProtocolEvent, now: Timestamp) -> Result<SessionView, ApiError> {
        self.session_post(s, "advance", &AdvanceRequest { event }, now)
    }

    fn telemetry(&self, s: &SessionHandle, batch: &[OrientationSample], now: Timestamp) -> Result<TelemetryResponse, ApiError> {
        self.session_post(s, "telemetry", batch, now)
    }

    fn game_move(&self, s: &SessionHandle, mv: GameMove, now: Timestamp) -> Result<GameMoveResponse, ApiError> {
        self.session_post(s, "game/moves", &mv, now)
    }

    fn redeem(&self, s: &SessionHandle, code: &str, now: Timestamp) -> Result<SessionView, ApiError> {
        self.session_post(s, "code", &RedeemRequest { code: code.into() }, now)
    }

    fn survey(&self, s: &SessionHandle, responses: Vec<ResponseSet>, now: Timestamp) -> Result<SessionView, ApiError> {
        self.session_post(s, "survey", &SurveyRequest { responses }, now)
    }
}
