//! The append-only event log. Every state change of a [`crate::Lab`] is one
//! of these events; replaying them in order rebuilds the state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::experiment::Experiment;
use crate::ids::{ConditionId, ExperimentId, PostingId, SessionId, Timestamp, WorkerId};
use crate::instruments::ResponseSet;
use crate::panel::{DeviceType, QualificationSubmission, ReviewRecord};
use crate::session::AbandonReason;
use crate::telemetry::OrientationSample;
use crate::ultimatum::{GameMove, OpponentSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub stream: String,
    /// Dense per stream, starting at 0.
    pub offset: u64,
    pub recorded_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posting {
    pub posting_id: PostingId,
    pub experiment_id: ExperimentId,
    pub eligibility: BTreeSet<DeviceType>,
    pub reward_cents: u32,
    pub open_duration_days: u32,
    pub posted_at: Timestamp,
}

impl Posting {
    pub fn closes_at(&self) -> Timestamp {
        self.posted_at.plus_secs(i64::from(self.open_duration_days) * 86_400)
    }

    pub fn is_open(&self, now: Timestamp) -> bool {
        now >= self.posted_at && now < self.closes_at()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Event {
    SubmissionReceived {
        submission: QualificationSubmission,
    },
    SubmissionReviewed {
        review: ReviewRecord,
    },
    ExperimentCreated {
        experiment: Experiment,
    },
    ExperimentActivated,
    TaskPosted {
        posting: Posting,
    },
    BonusesAwarded {
        bonuses: BTreeMap<WorkerId, u32>,
    },
    SessionCreated {
        session_id: SessionId,
        worker_id: WorkerId,
        experiment_id: ExperimentId,
        condition_id: ConditionId,
        assignment_index: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        posting_id: Option<PostingId>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        opponents: Vec<OpponentSpec>,
    },
    HeadsetVerified,
    VrEntered,
    VrCompleted {
        code: String,
    },
    CodeRejected,
    CodeRedeemed {
        late: bool,
    },
    SurveySubmitted {
        responses: Vec<ResponseSet>,
    },
    SessionAbandoned {
        reason: AbandonReason,
    },
    TelemetryAppended {
        samples: Vec<OrientationSample>,
    },
    GameMoved {
        #[serde(rename = "move")]
        mv: GameMove,
    },
}

pub fn worker_stream(id: &WorkerId) -> String {
    format!("worker:{id}")
}

pub fn experiment_stream(id: &ExperimentId) -> String {
    format!("experiment:{id}")
}

pub fn session_stream(id: &SessionId) -> String {
    format!("session:{id}")
}
