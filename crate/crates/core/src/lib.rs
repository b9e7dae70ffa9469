//! Orchestration core for crowdsourced VR experiments: the qualification
//! panel, experiment definitions, the participant session protocol,
//! telemetry, the Ultimatum Game, questionnaires, the event log with replay
//! and archive export, analysis reports and the scripted-participant
//! simulator.

pub mod analysis;
pub mod archive;
pub mod events;
pub mod experiment;
pub mod ids;
pub mod instruments;
pub mod journal;
pub mod lab;
pub mod panel;
pub mod session;
pub mod sim;
pub mod taskboard;
pub mod telemetry;
pub mod ultimatum;
pub mod wire;

pub use ids::{ConditionId, ExperimentId, InstrumentId, PostingId, SessionId, SubmissionId, Timestamp, WorkerId};
pub use lab::{Ctx, Lab, LabError, LabOptions};
