//! The service state: panel, experiments and sessions, mutated only through
//! logged events.
//!
//! Every command validates against the current state, builds one event,
//! appends it to the log (and the configured sink) and then applies it.
//! Commands that change nothing append nothing. [`Lab::replay`] folds a log
//! back into the same state.

use std::collections::{BTreeMap, BTreeSet};

use crate::events::{experiment_stream, session_stream, worker_stream, Event, EventRecord, Posting};
use crate::experiment::{assign_condition, Experiment, QualityFilters, SchemaError, StepKind};
use crate::ids::{ConditionId, ExperimentId, InstrumentId, PostingId, SessionId, SubmissionId, Timestamp, WorkerId};
use crate::instruments::{self, InstrumentError, ResponseSet, ScoreVector};
use crate::panel::{DeviceType, Panel, PanelError, ReviewDecision, SubmissionInput, SubmitOutcome, WorkerRecord};
use crate::session::{
    mint_code, AbandonReason, GateStatus, ProtocolEvent, QualityFlag, RedeemCheck, Session, SessionError,
    SessionState, ABANDON_TIMEOUT_MS,
};
use crate::telemetry::{attention_distribution, AttentionDistribution, OrientationSample, TelemetryError, Trace, ZonePartition};
use crate::ultimatum::{self, opponents, AvatarScale, GameConfig, GameError, GameMove, GameState, RoundRecord};

/// Receives every record before it is applied; a failing sink aborts the
/// command.
pub trait EventSink: Send + Sync {
    fn append(&mut self, rec: &EventRecord) -> std::io::Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabOptions {
    /// Secret mixed into verification codes and default assignment seeds.
    pub code_key: u64,
}

/// Per-command context: the logical time of the request and its optional
/// idempotency key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ctx {
    pub now: Timestamp,
    pub idempotency_key: Option<String>,
}

impl Ctx {
    pub fn keyed(now: Timestamp, key: impl Into<String>) -> Self {
        Self { now, idempotency_key: Some(key.into()) }
    }
}

impl From<Timestamp> for Ctx {
    fn from(now: Timestamp) -> Self {
        Self { now, idempotency_key: None }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("unknown experiment {0}")]
    UnknownExperiment(ExperimentId),
    #[error("experiment {0} already exists")]
    ExperimentExists(ExperimentId),
    #[error("experiment {0} is not active")]
    ExperimentInactive(ExperimentId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown posting {0}")]
    UnknownPosting(PostingId),
    #[error("posting {0} is not open")]
    PostingClosed(PostingId),
    #[error("invalid posting: {0}")]
    InvalidPosting(String),
    #[error("worker {worker} is not eligible for {experiment}")]
    NotEligible { worker: WorkerId, experiment: ExperimentId },
    #[error("worker already has active session {0}")]
    ActiveSessionExists(SessionId),
    #[error("session {0} has no game")]
    NoGame(SessionId),
    #[error("session {0} has not finished its game")]
    GameIncomplete(SessionId),
    #[error("no responses for instrument {0}")]
    MissingInstrument(InstrumentId),
    #[error("instrument {0} answered twice")]
    DuplicateInstrument(InstrumentId),
    #[error("{0} sessions are still active")]
    SessionsStillActive(usize),
    #[error("bonuses for {0} were already awarded")]
    BonusesAlreadyAwarded(ExperimentId),
    #[error("request with idempotency key {0:?} was already applied")]
    DuplicateRequest(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl LabError {
    /// Stable machine-readable error name used on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Panel(e) => match e {
                PanelError::Validation(_) => "ValidationError",
                PanelError::DuplicateActiveSubmission { .. } => "DuplicateActiveSubmission",
                PanelError::UnknownSubmission(_) => "UnknownSubmission",
                PanelError::AlreadyReviewed(_) => "AlreadyReviewed",
            },
            LabError::Schema(_) => "SchemaError",
            LabError::Session(e) => match e {
                SessionError::WrongState { .. } => "WrongState",
                SessionError::CodeMismatch { .. } => "CodeMismatch",
                SessionError::AlreadyRedeemed => "AlreadyRedeemed",
            },
            LabError::Instrument(e) => match e {
                InstrumentError::MissingItem { .. } => "MissingItem",
                InstrumentError::OutOfRange { .. } => "OutOfRange",
                InstrumentError::UnknownItem { .. } => "UnknownItem",
                InstrumentError::UnknownInstrument(_) => "UnknownInstrument",
                InstrumentError::UnknownSubscale { .. } => "UnknownSubscale",
            },
            LabError::Telemetry(e) => match e {
                TelemetryError::Validation(_) => "ValidationError",
                TelemetryError::NoTelemetry => "NoTelemetry",
            },
            LabError::Game(e) => match e {
                GameError::MatchOrderViolation { .. } => "MatchOrderViolation",
                GameError::NotYourTurn => "NotYourTurn",
                GameError::NotBotTurn => "NotBotTurn",
                GameError::InvalidSplit { .. } => "InvalidSplit",
                GameError::NoPendingOffer => "NoPendingOffer",
            },
            LabError::UnknownExperiment(_) => "UnknownExperiment",
            LabError::ExperimentExists(_) => "ExperimentExists",
            LabError::ExperimentInactive(_) => "ExperimentInactive",
            LabError::UnknownSession(_) => "UnknownSession",
            LabError::UnknownPosting(_) => "UnknownPosting",
            LabError::PostingClosed(_) => "PostingClosed",
            LabError::InvalidPosting(_) => "ValidationError",
            LabError::NotEligible { .. } => "NotEligible",
            LabError::ActiveSessionExists(_) => "ActiveSessionExists",
            LabError::NoGame(_) => "NoGame",
            LabError::GameIncomplete(_) => "GameIncomplete",
            LabError::MissingInstrument(_) => "MissingInstrument",
            LabError::DuplicateInstrument(_) => "DuplicateInstrument",
            LabError::SessionsStillActive(_) => "SessionsStillActive",
            LabError::BonusesAlreadyAwarded(_) => "BonusesAlreadyAwarded",
            LabError::DuplicateRequest(_) => "DuplicateRequest",
            LabError::Storage(_) => "StorageError",
            LabError::Internal(_) => "InternalError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("gap in stream {stream}: expected offset {expected}, found {found}")]
    GapInLog { stream: String, expected: u64, found: u64 },
    #[error("corrupt record #{index}: {reason}")]
    CorruptRecord { index: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct ExperimentEntry {
    pub experiment: Experiment,
    pub seed: u64,
    pub active: bool,
    pub created_at: Timestamp,
    pub postings: BTreeMap<PostingId, Posting>,
    pub sessions: Vec<SessionId>,
    pub bonuses: Option<BTreeMap<WorkerId, u32>>,
}

#[derive(Debug, Clone)]
pub struct SessionEntry {
    pub session: Session,
    pub assignment_index: u64,
    pub trace: Trace,
    pub game: Option<GameState>,
    pub responses: Vec<ResponseSet>,
    pub scores: Vec<ScoreVector>,
}

pub struct Lab {
    options: LabOptions,
    records: Vec<EventRecord>,
    next_offset: BTreeMap<String, u64>,
    keys: BTreeSet<String>,
    panel: Panel,
    experiments: BTreeMap<ExperimentId, ExperimentEntry>,
    sessions: BTreeMap<SessionId, SessionEntry>,
    active: BTreeMap<(WorkerId, ExperimentId), SessionId>,
    outstanding_codes: BTreeMap<String, SessionId>,
    sink: Option<Box<dyn EventSink>>,
}

impl std::fmt::Debug for Lab {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lab")
            .field("records", &self.records.len())
            .field("experiments", &self.experiments.len())
            .field("sessions", &self.sessions.len())
            .finish_non_exhaustive()
    }
}

fn corrupt(reason: impl Into<String>) -> String {
    reason.into()
}

impl Lab {
    pub fn new(options: LabOptions) -> Self {
        Self {
            options,
            records: Vec::new(),
            next_offset: BTreeMap::new(),
            keys: BTreeSet::new(),
            panel: Panel::new(),
            experiments: BTreeMap::new(),
            sessions: BTreeMap::new(),
            active: BTreeMap::new(),
            outstanding_codes: BTreeMap::new(),
            sink: None,
        }
    }

    pub fn set_sink(&mut self, sink: Box<dyn EventSink>) {
        self.sink = Some(sink);
    }

    pub fn options(&self) -> LabOptions {
        self.options
    }

    /// Rebuilds state from a log. Offsets must be dense per stream.
    pub fn replay(options: LabOptions, records: impl IntoIterator<Item = EventRecord>) -> Result<Self, ReplayError> {
        let mut lab = Self::new(options);
        for (index, rec) in records.into_iter().enumerate() {
            lab.ingest_record(rec).map_err(|e| match e {
                IngestError::Gap { stream, expected, found } => ReplayError::GapInLog { stream, expected, found },
                IngestError::Apply(reason) => ReplayError::CorruptRecord { index, reason },
            })?;
        }
        Ok(lab)
    }

    /// Appends an already-recorded event (replay or import). Does not call
    /// the sink.
    fn ingest_record(&mut self, rec: EventRecord) -> Result<(), IngestError> {
        let expected = self.next_offset.get(&rec.stream).copied().unwrap_or(0);
        if rec.offset != expected {
            return Err(IngestError::Gap { stream: rec.stream, expected, found: rec.offset });
        }
        self.apply(&rec).map_err(IngestError::Apply)?;
        self.next_offset.insert(rec.stream.clone(), expected + 1);
        self.records.push(rec);
        Ok(())
    }

    /// Appends records produced by another instance, writing them to the
    /// sink as well. Used by archive import.
    pub fn import_records(&mut self, records: Vec<EventRecord>) -> Result<(), ReplayError> {
        for (index, rec) in records.into_iter().enumerate() {
            if let Some(sink) = self.sink.as_mut() {
                sink.append(&rec).map_err(|e| ReplayError::CorruptRecord { index, reason: e.to_string() })?;
            }
            self.ingest_record(rec).map_err(|e| match e {
                IngestError::Gap { stream, expected, found } => ReplayError::GapInLog { stream, expected, found },
                IngestError::Apply(reason) => ReplayError::CorruptRecord { index, reason },
            })?;
        }
        Ok(())
    }

    fn check_key(&self, ctx: &Ctx) -> Result<(), LabError> {
        match &ctx.idempotency_key {
            Some(k) if self.keys.contains(k) => Err(LabError::DuplicateRequest(k.clone())),
            _ => Ok(()),
        }
    }

    fn commit(&mut self, stream: String, event: Event, ctx: &Ctx) -> Result<(), LabError> {
        let offset = self.next_offset.get(&stream).copied().unwrap_or(0);
        let rec = EventRecord { stream, offset, recorded_at: ctx.now, idempotency_key: ctx.idempotency_key.clone(), event };
        if let Some(sink) = self.sink.as_mut() {
            sink.append(&rec).map_err(|e| LabError::Storage(e.to_string()))?;
        }
        self.apply(&rec).map_err(LabError::Internal)?;
        self.next_offset.insert(rec.stream.clone(), offset + 1);
        self.records.push(rec);
        Ok(())
    }

    fn apply(&mut self, rec: &EventRecord) -> Result<(), String> {
        let at = rec.recorded_at;
        if let Some(k) = &rec.idempotency_key {
            self.keys.insert(k.clone());
        }
        let stream_id = |prefix: &str| rec.stream.strip_prefix(prefix).map(str::to_owned).ok_or_else(|| {
            corrupt(format!("{:?} event on stream {}", std::mem::discriminant(&rec.event), rec.stream))
        });
        match &rec.event {
            Event::SubmissionReceived { submission } => {
                if self.panel.submission(&submission.submission_id).is_some() {
                    return Err(corrupt(format!("submission {} recorded twice", submission.submission_id)));
                }
                self.panel.insert_submission(submission.clone());
            }
            Event::SubmissionReviewed { review } => {
                self.panel.apply_review(review).map_err(|e| e.to_string())?;
            }
            Event::ExperimentCreated { experiment } => {
                let id = experiment.experiment_id.clone();
                if self.experiments.contains_key(&id) {
                    return Err(corrupt(format!("experiment {id} created twice")));
                }
                let seed = experiment.assignment.seed.ok_or_else(|| corrupt("experiment recorded without seed"))?;
                self.experiments.insert(
                    id,
                    ExperimentEntry {
                        experiment: experiment.clone(),
                        seed,
                        active: false,
                        created_at: at,
                        postings: BTreeMap::new(),
                        sessions: Vec::new(),
                        bonuses: None,
                    },
                );
            }
            Event::ExperimentActivated => {
                let id = ExperimentId::new(stream_id("experiment:")?);
                self.experiment_entry_mut(&id)?.active = true;
            }
            Event::TaskPosted { posting } => {
                let entry = self.experiment_entry_mut(&posting.experiment_id)?;
                entry.postings.insert(posting.posting_id.clone(), posting.clone());
            }
            Event::BonusesAwarded { bonuses } => {
                let id = ExperimentId::new(stream_id("experiment:")?);
                self.experiment_entry_mut(&id)?.bonuses = Some(bonuses.clone());
            }
            Event::SessionCreated {
                session_id,
                worker_id,
                experiment_id,
                condition_id,
                assignment_index,
                posting_id,
                opponents,
            } => {
                if self.sessions.contains_key(session_id) {
                    return Err(corrupt(format!("session {session_id} created twice")));
                }
                let entry = self.experiment_entry_mut(experiment_id)?;
                entry.sessions.push(session_id.clone());
                let session = Session::new(
                    session_id.clone(),
                    worker_id.clone(),
                    experiment_id.clone(),
                    condition_id.clone(),
                    posting_id.clone(),
                    at,
                );
                let game = (!opponents.is_empty()).then(|| GameState::new(GameConfig::standard(opponents.clone())));
                self.active.insert((worker_id.clone(), experiment_id.clone()), session_id.clone());
                self.sessions.insert(
                    session_id.clone(),
                    SessionEntry {
                        session,
                        assignment_index: *assignment_index,
                        trace: Trace::default(),
                        game,
                        responses: Vec::new(),
                        scores: Vec::new(),
                    },
                );
            }
            other => {
                let id = SessionId::new(stream_id("session:")?);
                self.apply_session_event(&id, other, at)?;
            }
        }
        Ok(())
    }

    fn apply_session_event(&mut self, id: &SessionId, event: &Event, at: Timestamp) -> Result<(), String> {
        let defs = {
            let entry = self.sessions.get(id).ok_or_else(|| corrupt(format!("unknown session {id}")))?;
            let exp = &self.experiments.get(&entry.session.experiment_id).ok_or("session without experiment")?.experiment;
            matches!(event, Event::SurveySubmitted { .. })
                .then(|| exp.instruments.iter().filter_map(|i| exp.instrument_def(i)).collect::<Vec<_>>())
        };
        let entry = self.sessions.get_mut(id).expect("checked above");
        let s = &mut entry.session;
        let err = |e: SessionError| e.to_string();
        match event {
            Event::HeadsetVerified => {
                if s.state != SessionState::Created {
                    return Err(corrupt("headset verified twice"));
                }
                s.report_headset(true, at).map_err(err)?;
            }
            Event::VrEntered => s.enter_vr(at).map_err(err)?,
            Event::VrCompleted { code } => {
                s.complete_vr(code.clone(), at).map_err(err)?;
                self.outstanding_codes.insert(code.clone(), id.clone());
            }
            Event::CodeRejected => {
                if s.state != SessionState::VrComplete {
                    return Err(corrupt("code rejected outside VrComplete"));
                }
                s.record_mismatch(at);
            }
            Event::CodeRedeemed { late } => {
                let code = s.outstanding_code().map(str::to_owned);
                s.record_redeemed(*late, at).map_err(err)?;
                if let Some(code) = code {
                    self.outstanding_codes.remove(&code);
                }
            }
            Event::SurveySubmitted { responses } => {
                s.check_survey().map_err(err)?;
                let defs = defs.expect("computed for surveys");
                let mut scores = Vec::with_capacity(responses.len());
                for r in responses {
                    let def = defs
                        .iter()
                        .find(|d| d.instrument_id == r.instrument_id)
                        .ok_or_else(|| corrupt(format!("unknown instrument {}", r.instrument_id)))?;
                    scores.push(instruments::score(def, id, &r.answers).map_err(|e| e.to_string())?);
                }
                s.complete_survey(at).map_err(err)?;
                self.active.remove(&(s.worker_id.clone(), s.experiment_id.clone()));
                entry.responses = responses.clone();
                entry.scores = scores;
            }
            Event::SessionAbandoned { .. } => {
                let code = s.outstanding_code().map(str::to_owned);
                s.abandon(at).map_err(err)?;
                if let Some(code) = code {
                    self.outstanding_codes.remove(&code);
                }
                self.active.remove(&(s.worker_id.clone(), s.experiment_id.clone()));
            }
            Event::TelemetryAppended { samples } => {
                s.check_in_vr("send telemetry").map_err(err)?;
                let fresh = entry.trace.check_batch(samples).map_err(|e| e.to_string())?;
                if fresh.len() != samples.len() {
                    return Err(corrupt("telemetry record repeats stored samples"));
                }
                entry.trace.extend(&fresh);
                entry.session.touch(at);
            }
            Event::GameMoved { mv } => {
                s.check_in_vr("play").map_err(err)?;
                let game = entry.game.as_mut().ok_or("game move on a session without a game")?;
                game.apply(*mv).map_err(|e| e.to_string())?;
                entry.session.touch(at);
            }
            _ => return Err(corrupt("event on wrong stream")),
        }
        Ok(())
    }

    fn experiment_entry_mut(&mut self, id: &ExperimentId) -> Result<&mut ExperimentEntry, String> {
        self.experiments.get_mut(id).ok_or_else(|| corrupt(format!("unknown experiment {id}")))
    }

    // ---- panel ----

    pub fn submit_qualification(&mut self, input: &SubmissionInput, ctx: impl Into<Ctx>) -> Result<SubmissionId, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        match self.panel.check_submission(input, ctx.now)? {
            SubmitOutcome::Existing(id) => Ok(id),
            SubmitOutcome::New(submission) => {
                let id = submission.submission_id.clone();
                self.commit(worker_stream(&input.worker_id), Event::SubmissionReceived { submission: *submission }, &ctx)?;
                Ok(id)
            }
        }
    }

    pub fn review_submission(
        &mut self,
        id: &SubmissionId,
        decision: ReviewDecision,
        note: &str,
        ctx: impl Into<Ctx>,
    ) -> Result<Option<WorkerRecord>, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let review = self.panel.check_review(id, decision, note, ctx.now)?;
        let worker = self.panel.submission(id).expect("checked").worker_id.clone();
        self.commit(worker_stream(&worker), Event::SubmissionReviewed { review }, &ctx)?;
        Ok(self.panel.worker(&worker).filter(|w| &w.submission_id == id).cloned())
    }

    pub fn panel(&self) -> &Panel {
        &self.panel
    }

    pub fn eligible_workers(&self, filter: &BTreeSet<DeviceType>) -> Vec<WorkerId> {
        self.panel.eligible_workers(filter)
    }

    // ---- experiments ----

    /// Registers a validated experiment. A missing assignment seed is
    /// derived from the lab key and the experiment id and stored.
    pub fn create_experiment(&mut self, mut experiment: Experiment, ctx: impl Into<Ctx>) -> Result<ExperimentId, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        experiment.validate()?;
        let id = experiment.experiment_id.clone();
        if self.experiments.contains_key(&id) {
            return Err(LabError::ExperimentExists(id));
        }
        if experiment.assignment.seed.is_none() {
            experiment.assignment.seed = Some(derive_seed(self.options.code_key, id.as_str()));
        }
        self.commit(experiment_stream(&id), Event::ExperimentCreated { experiment }, &ctx)?;
        Ok(id)
    }

    pub fn activate_experiment(&mut self, id: &ExperimentId, ctx: impl Into<Ctx>) -> Result<(), LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let entry = self.experiment(id)?;
        if entry.active {
            return Ok(());
        }
        self.commit(experiment_stream(id), Event::ExperimentActivated, &ctx)
    }

    pub fn experiment(&self, id: &ExperimentId) -> Result<&ExperimentEntry, LabError> {
        self.experiments.get(id).ok_or_else(|| LabError::UnknownExperiment(id.clone()))
    }

    pub fn experiments(&self) -> impl Iterator<Item = &ExperimentEntry> {
        self.experiments.values()
    }

    /// Registers a task-board posting. `eligibility` defaults to the
    /// experiment's device requirements.
    pub fn post_task(
        &mut self,
        experiment_id: &ExperimentId,
        eligibility: Option<BTreeSet<DeviceType>>,
        reward_cents: u32,
        open_duration_days: u32,
        ctx: impl Into<Ctx>,
    ) -> Result<Posting, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let entry = self.experiment(experiment_id)?;
        if !entry.active {
            return Err(LabError::ExperimentInactive(experiment_id.clone()));
        }
        if reward_cents == 0 {
            return Err(LabError::InvalidPosting("reward must be positive".into()));
        }
        if open_duration_days == 0 {
            return Err(LabError::InvalidPosting("posting must stay open at least one day".into()));
        }
        let eligibility = eligibility.unwrap_or_else(|| entry.experiment.device_requirements.clone());
        if eligibility.is_empty() {
            return Err(LabError::InvalidPosting("eligibility filter is empty".into()));
        }
        let posting = Posting {
            posting_id: PostingId::new(format!("{experiment_id}-p{}", entry.postings.len() + 1)),
            experiment_id: experiment_id.clone(),
            eligibility,
            reward_cents,
            open_duration_days,
            posted_at: ctx.now,
        };
        self.commit(experiment_stream(experiment_id), Event::TaskPosted { posting: posting.clone() }, &ctx)?;
        Ok(posting)
    }

    pub fn posting(&self, id: &PostingId) -> Option<&Posting> {
        self.experiments.values().find_map(|e| e.postings.get(id))
    }

    // ---- sessions ----

    pub fn create_session(
        &mut self,
        worker: &WorkerId,
        experiment_id: &ExperimentId,
        posting_id: Option<&PostingId>,
        ctx: impl Into<Ctx>,
    ) -> Result<&SessionEntry, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let entry = self.experiment(experiment_id)?;
        if !entry.active {
            return Err(LabError::ExperimentInactive(experiment_id.clone()));
        }
        let exp = &entry.experiment;
        let not_eligible = || LabError::NotEligible { worker: worker.clone(), experiment: experiment_id.clone() };
        if let Some(pid) = posting_id {
            let posting = entry.postings.get(pid).ok_or_else(|| LabError::UnknownPosting(pid.clone()))?;
            if !posting.is_open(ctx.now) {
                return Err(LabError::PostingClosed(pid.clone()));
            }
            if !self.panel.is_eligible(worker, &posting.eligibility) {
                return Err(not_eligible());
            }
        }
        if !self.panel.is_eligible(worker, &exp.device_requirements) {
            return Err(not_eligible());
        }
        if let Some(existing) = self.active.get(&(worker.clone(), experiment_id.clone())) {
            return Err(LabError::ActiveSessionExists(existing.clone()));
        }
        let index = entry.sessions.len() as u64;
        let session_id = SessionId::new(format!("{experiment_id}.{:05}", index + 1));
        let condition_id = assign_condition(exp, entry.seed, index);
        let opponents = if exp.has_step(StepKind::VrGame) {
            let condition = exp.condition(&condition_id).expect("assigned from the list");
            let scale = match condition.stimulus_params.get("bot_scale").and_then(|v| v.as_str()) {
                Some("Small") => AvatarScale::Small,
                _ => AvatarScale::Large,
            };
            opponents(scale, female_first(entry.seed, index))
        } else {
            Vec::new()
        };
        let event = Event::SessionCreated {
            session_id: session_id.clone(),
            worker_id: worker.clone(),
            experiment_id: experiment_id.clone(),
            condition_id,
            assignment_index: index,
            posting_id: posting_id.cloned(),
            opponents,
        };
        self.commit(session_stream(&session_id), event, &ctx)?;
        Ok(&self.sessions[&session_id])
    }

    pub fn session(&self, id: &SessionId) -> Result<&SessionEntry, LabError> {
        self.sessions.get(id).ok_or_else(|| LabError::UnknownSession(id.clone()))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionEntry> {
        self.sessions.values()
    }

    /// Sessions of one experiment in creation order.
    pub fn sessions_of(&self, id: &ExperimentId) -> Result<impl Iterator<Item = &SessionEntry>, LabError> {
        let entry = self.experiment(id)?;
        Ok(entry.sessions.iter().map(|s| &self.sessions[s]))
    }

    pub fn report_headset(&mut self, id: &SessionId, present: bool, ctx: impl Into<Ctx>) -> Result<GateStatus, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let s = &self.session(id)?.session;
        s.check_headset()?;
        if !present {
            return Ok(GateStatus::ContinueDisabled);
        }
        if s.state == SessionState::Created {
            self.commit(session_stream(id), Event::HeadsetVerified, &ctx)?;
        }
        Ok(GateStatus::ContinueEnabled)
    }

    pub fn advance(&mut self, id: &SessionId, event: ProtocolEvent, ctx: impl Into<Ctx>) -> Result<&Session, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let entry = self.session(id)?;
        entry.session.check_advance(event)?;
        let ev = match event {
            ProtocolEvent::EnterVr => Event::VrEntered,
            ProtocolEvent::CompleteVr => {
                if entry.game.as_ref().is_some_and(|g| !g.is_complete()) {
                    return Err(LabError::GameIncomplete(id.clone()));
                }
                let code = (0u32..)
                    .map(|attempt| mint_code(self.options.code_key, id, attempt))
                    .find(|c| !self.outstanding_codes.contains_key(c))
                    .expect("code space is not exhausted");
                Event::VrCompleted { code }
            }
            ProtocolEvent::Abandon => Event::SessionAbandoned { reason: AbandonReason::Explicit },
        };
        self.commit(session_stream(id), ev, &ctx)?;
        Ok(&self.sessions[id].session)
    }

    /// Redeems a verification code. A mismatch is recorded (three of them
    /// flag the session) and then reported as an error.
    pub fn redeem_code(&mut self, id: &SessionId, code: &str, ctx: impl Into<Ctx>) -> Result<&Session, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let entry = self.session(id)?;
        let window = self.experiment(&entry.session.experiment_id)?.experiment.filters.survey_window_s;
        match entry.session.check_redeem(code, ctx.now, window)? {
            RedeemCheck::Match { late } => {
                self.commit(session_stream(id), Event::CodeRedeemed { late }, &ctx)?;
                Ok(&self.sessions[id].session)
            }
            RedeemCheck::Mismatch { failures } => {
                self.commit(session_stream(id), Event::CodeRejected, &ctx)?;
                Err(SessionError::CodeMismatch { failures }.into())
            }
        }
    }

    /// Stores the exit-survey responses, one set per experiment instrument.
    pub fn submit_survey(&mut self, id: &SessionId, responses: Vec<ResponseSet>, ctx: impl Into<Ctx>) -> Result<&SessionEntry, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let entry = self.session(id)?;
        entry.session.check_survey()?;
        let exp = &self.experiment(&entry.session.experiment_id)?.experiment;
        let mut seen = BTreeSet::new();
        for r in &responses {
            if !exp.instruments.contains(&r.instrument_id) {
                return Err(InstrumentError::UnknownInstrument(r.instrument_id.clone()).into());
            }
            if !seen.insert(&r.instrument_id) {
                return Err(LabError::DuplicateInstrument(r.instrument_id.clone()));
            }
            let def = exp.instrument_def(&r.instrument_id).expect("validated at load");
            instruments::validate_responses(&def, &r.answers)?;
        }
        if let Some(missing) = exp.instruments.iter().find(|i| !seen.contains(i)) {
            return Err(LabError::MissingInstrument(missing.clone()));
        }
        self.commit(session_stream(id), Event::SurveySubmitted { responses }, &ctx)?;
        Ok(&self.sessions[id])
    }

    /// Appends new telemetry samples; returns how many were accepted.
    pub fn ingest_telemetry(&mut self, id: &SessionId, batch: &[OrientationSample], ctx: impl Into<Ctx>) -> Result<usize, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let entry = self.session(id)?;
        entry.session.check_in_vr("send telemetry")?;
        let fresh = entry.trace.check_batch(batch)?;
        let n = fresh.len();
        if n > 0 {
            self.commit(session_stream(id), Event::TelemetryAppended { samples: fresh }, &ctx)?;
        }
        Ok(n)
    }

    pub fn game_move(&mut self, id: &SessionId, mv: GameMove, ctx: impl Into<Ctx>) -> Result<Option<RoundRecord>, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        let entry = self.session(id)?;
        entry.session.check_in_vr("play")?;
        let mut probe = entry.game.clone().ok_or_else(|| LabError::NoGame(id.clone()))?;
        let rec = probe.apply(mv)?;
        self.commit(session_stream(id), Event::GameMoved { mv }, &ctx)?;
        Ok(rec)
    }

    /// Abandons every non-terminal session idle for longer than the
    /// timeout. Returns the affected sessions.
    pub fn sweep(&mut self, now: Timestamp) -> Result<Vec<SessionId>, LabError> {
        self.sweep_with_timeout(now, ABANDON_TIMEOUT_MS)
    }

    pub fn sweep_with_timeout(&mut self, now: Timestamp, timeout_ms: i64) -> Result<Vec<SessionId>, LabError> {
        let stale: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|e| e.session.is_stale(now, timeout_ms))
            .map(|e| e.session.session_id.clone())
            .collect();
        let ctx = Ctx::from(now);
        for id in &stale {
            self.commit(session_stream(id), Event::SessionAbandoned { reason: AbandonReason::Timeout }, &ctx)?;
        }
        Ok(stale)
    }

    // ---- bonuses ----

    /// Bonus per worker for the completed sessions of a game experiment.
    pub fn rank_bonus(&self, id: &ExperimentId) -> Result<BTreeMap<WorkerId, u32>, LabError> {
        let mut totals = Vec::new();
        let mut live = 0;
        for e in self.sessions_of(id)? {
            if !e.session.state.is_terminal() {
                live += 1;
            } else if e.session.state == SessionState::SurveyComplete {
                if let Some(g) = e.game.as_ref().filter(|g| g.is_complete()) {
                    totals.push((e.session.worker_id.clone(), g.participant_total));
                }
            }
        }
        if live > 0 {
            return Err(LabError::SessionsStillActive(live));
        }
        Ok(ultimatum::rank_bonus(&totals))
    }

    pub fn award_bonuses(&mut self, id: &ExperimentId, ctx: impl Into<Ctx>) -> Result<BTreeMap<WorkerId, u32>, LabError> {
        let ctx = ctx.into();
        self.check_key(&ctx)?;
        if self.experiment(id)?.bonuses.is_some() {
            return Err(LabError::BonusesAlreadyAwarded(id.clone()));
        }
        let bonuses = self.rank_bonus(id)?;
        self.commit(experiment_stream(id), Event::BonusesAwarded { bonuses: bonuses.clone() }, &ctx)?;
        Ok(bonuses)
    }

    // ---- derived views ----

    pub fn attention_distribution(&self, id: &SessionId, partition: &ZonePartition) -> Result<AttentionDistribution, LabError> {
        let entry = self.session(id)?;
        Ok(attention_distribution(id, entry.trace.samples(), partition)?)
    }

    /// Zone-1 share per session, grouped by condition. A session counts once
    /// it has finished its VR stage and has telemetry; with
    /// `require_complete_telemetry` its cadence must also be in range.
    pub fn zone1_shares(
        &self,
        id: &ExperimentId,
        partition: &ZonePartition,
        filters: &QualityFilters,
    ) -> Result<BTreeMap<ConditionId, Vec<f64>>, LabError> {
        let mut out: BTreeMap<ConditionId, Vec<f64>> = BTreeMap::new();
        for e in self.sessions_of(id)? {
            if e.session.entered_at(SessionState::VrComplete).is_none() || e.trace.is_empty() {
                continue;
            }
            if filters.require_complete_telemetry && !e.trace.cadence_ok() {
                continue;
            }
            let d = attention_distribution(&e.session.session_id, e.trace.samples(), partition)?;
            out.entry(e.session.condition_id.clone()).or_default().push(d.zone1_share());
        }
        Ok(out)
    }

    /// Whether a completed session survives the quality filters.
    pub fn passes_filters(entry: &SessionEntry, filters: &QualityFilters) -> bool {
        let flags = &entry.session.quality_flags;
        entry.session.state == SessionState::SurveyComplete
            && !flags.contains(&QualityFlag::SuspectCode)
            && !(filters.exclude_late_surveys && flags.contains(&QualityFlag::LateSurvey))
            && (!filters.require_complete_telemetry || entry.trace.cadence_ok())
    }

    /// Subscale scores of completed, unfiltered sessions, grouped by
    /// condition.
    pub fn group_scores(
        &self,
        id: &ExperimentId,
        instrument: &InstrumentId,
        subscale: &str,
        filters: &QualityFilters,
    ) -> Result<BTreeMap<ConditionId, Vec<f64>>, LabError> {
        let exp = &self.experiment(id)?.experiment;
        if !exp.instruments.contains(instrument) {
            return Err(InstrumentError::UnknownInstrument(instrument.clone()).into());
        }
        let def = exp.instrument_def(instrument).expect("validated at load");
        if def.subscale(subscale).is_none() {
            return Err(InstrumentError::UnknownSubscale { instrument: instrument.clone(), subscale: subscale.into() }.into());
        }
        let mut out: BTreeMap<ConditionId, Vec<f64>> = BTreeMap::new();
        for e in self.sessions_of(id)? {
            if !Self::passes_filters(e, filters) {
                continue;
            }
            if let Some(v) = e.scores.iter().find(|s| &s.instrument_id == instrument).map(|s| s.subscale_scores[subscale]) {
                out.entry(e.session.condition_id.clone()).or_default().push(v);
            }
        }
        Ok(out)
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn outstanding_code_count(&self) -> usize {
        self.outstanding_codes.len()
    }
}

enum IngestError {
    Gap { stream: String, expected: u64, found: u64 },
    Apply(String),
}

fn derive_seed(key: u64, experiment: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let d = Sha256::new().chain_update(key.to_le_bytes()).chain_update(b"seed:").chain_update(experiment).finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Opponent gender order for the `index`-th session, a pure function of
/// the experiment seed.
fn female_first(seed: u64, index: u64) -> bool {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x6f70_706f_6e65_6e74);
    rng.set_stream(index);
    rng.random_bool(0.5)
}
