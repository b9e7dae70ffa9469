//! Declarative experiment definitions and condition assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{is_valid_slug, ConditionId, ExperimentId, InstrumentId};
use crate::instruments::{self, InstrumentDef};
use crate::panel::DeviceType;

pub const SCHEMA_VERSION: u32 = 1;

/// Default survey window: twenty minutes.
pub const DEFAULT_SURVEY_WINDOW_S: u64 = 1200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub schema_version: u32,
    pub experiment_id: ExperimentId,
    pub title: String,
    pub conditions: Vec<Condition>,
    pub flow: Vec<FlowStep>,
    #[serde(default)]
    pub instruments: Vec<InstrumentId>,
    /// Instrument definitions shipped with the config. These take precedence
    /// over the built-in definitions with the same id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instrument_defs: Vec<InstrumentDef>,
    #[serde(default)]
    pub filters: QualityFilters,
    pub payment: Payment,
    pub device_requirements: BTreeSet<DeviceType>,
    #[serde(default)]
    pub assignment: Assignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub condition_id: ConditionId,
    pub label: String,
    #[serde(default)]
    pub stimulus_params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    WebInstructions,
    VrIntro,
    VrStimulus,
    VrGame,
    VrTask,
    VerificationCode,
    ExitSurvey,
}

impl StepKind {
    pub fn is_vr(self) -> bool {
        matches!(self, StepKind::VrIntro | StepKind::VrStimulus | StepKind::VrGame | StepKind::VrTask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowStep {
    pub step_id: String,
    pub kind: StepKind,
    #[serde(default)]
    pub parameters: BTreeMap<String, serde_json::Value>,
}

impl FlowStep {
    pub fn duration_s(&self) -> Option<f64> {
        self.parameters.get("duration_s").and_then(serde_json::Value::as_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityFilters {
    #[serde(default = "default_window")]
    pub survey_window_s: u64,
    /// Drop sessions whose telemetry is missing or whose sampling cadence
    /// fell outside 1–20 Hz.
    #[serde(default)]
    pub require_complete_telemetry: bool,
    /// Drop sessions flagged LateSurvey from grouped scores.
    #[serde(default = "default_true")]
    pub exclude_late_surveys: bool,
}

fn default_window() -> u64 {
    DEFAULT_SURVEY_WINDOW_S
}

fn default_true() -> bool {
    true
}

impl Default for QualityFilters {
    fn default() -> Self {
        Self { survey_window_s: DEFAULT_SURVEY_WINDOW_S, require_complete_telemetry: false, exclude_late_surveys: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payment {
    pub base_cents: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bonus: Option<BonusRange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BonusRange {
    pub low_cents: u32,
    pub high_cents: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AssignmentMethod {
    #[default]
    UniformRandom,
    BlockBalanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    #[serde(default)]
    pub method: AssignmentMethod,
    /// Filled in at registration when absent, so a registered experiment
    /// always carries the seed that produced its assignments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "schema error: {}", self.message)
        } else {
            write!(f, "schema error at {}: {}", self.path, self.message)
        }
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError { path: path.into(), message: message.into() }
}

/// Parses and validates an experiment document.
pub fn load_experiment(document: &str) -> Result<Experiment, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let exp: Experiment = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    exp.validate()?;
    Ok(exp)
}

impl Experiment {
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if !is_valid_slug(self.experiment_id.as_str()) {
            return Err(schema("experiment_id", "must be 1-64 characters of [A-Za-z0-9_-]"));
        }
        if self.conditions.is_empty() {
            return Err(schema("conditions", "at least one condition is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.conditions.iter().enumerate() {
            if !is_valid_slug(c.condition_id.as_str()) {
                return Err(schema(format!("conditions[{i}].condition_id"), "must be 1-64 characters of [A-Za-z0-9_-]"));
            }
            if !seen.insert(&c.condition_id) {
                return Err(schema(
                    format!("conditions[{i}].condition_id"),
                    format!("duplicate condition id {:?}", c.condition_id.as_str()),
                ));
            }
        }
        self.validate_flow()?;
        if self.device_requirements.is_empty() {
            return Err(schema("device_requirements", "at least one device type is required"));
        }
        if self.filters.survey_window_s == 0 {
            return Err(schema("filters.survey_window_s", "must be positive"));
        }
        if let Some(b) = &self.payment.bonus {
            if b.low_cents > b.high_cents {
                return Err(schema("payment.bonus", "low_cents exceeds high_cents"));
            }
        }
        for (i, def) in self.instrument_defs.iter().enumerate() {
            def.validate().map_err(|m| schema(format!("instrument_defs[{i}]"), m))?;
        }
        let mut seen = BTreeSet::new();
        for (i, id) in self.instruments.iter().enumerate() {
            if !seen.insert(id) {
                return Err(schema(format!("instruments[{i}]"), format!("duplicate instrument {:?}", id.as_str())));
            }
            if self.instrument_def(id).is_none() {
                return Err(schema(format!("instruments[{i}]"), format!("unknown instrument {:?}", id.as_str())));
            }
        }
        if self.has_step(StepKind::VrGame) {
            for (i, c) in self.conditions.iter().enumerate() {
                let scale = c.stimulus_params.get("bot_scale").and_then(|v| v.as_str());
                if !matches!(scale, Some("Small" | "Large")) {
                    return Err(schema(
                        format!("conditions[{i}].stimulus_params.bot_scale"),
                        "game experiments need bot_scale \"Small\" or \"Large\" on every condition",
                    ));
                }
            }
        }
        Ok(())
    }

    fn validate_flow(&self) -> Result<(), SchemaError> {
        if self.flow.is_empty() {
            return Err(schema("flow", "at least one step is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, step) in self.flow.iter().enumerate() {
            if step.step_id.is_empty() || !ids.insert(step.step_id.as_str()) {
                return Err(schema(format!("flow[{i}].step_id"), "step ids must be non-empty and unique"));
            }
        }
        let codes: Vec<usize> = self
            .flow
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == StepKind::VerificationCode)
            .map(|(i, _)| i)
            .collect();
        let [code_at] = codes[..] else {
            return Err(schema("flow", format!("exactly one VerificationCode step required, found {}", codes.len())));
        };
        for (i, step) in self.flow.iter().enumerate() {
            if step.kind == StepKind::ExitSurvey && i < code_at {
                return Err(schema(format!("flow[{i}].kind"), "ExitSurvey must come after the VerificationCode step"));
            }
            if step.kind.is_vr() && i > code_at {
                return Err(schema(format!("flow[{i}].kind"), "VR steps must come before the VerificationCode step"));
            }
            if let Some(d) = step.parameters.get("duration_s") {
                if !d.as_f64().is_some_and(|d| d.is_finite() && d >= 0.0) {
                    return Err(schema(format!("flow[{i}].parameters.duration_s"), "must be a non-negative number"));
                }
            }
        }
        Ok(())
    }

    pub fn condition(&self, id: &ConditionId) -> Option<&Condition> {
        self.conditions.iter().find(|c| &c.condition_id == id)
    }

    pub fn has_step(&self, kind: StepKind) -> bool {
        self.flow.iter().any(|s| s.kind == kind)
    }

    /// Total configured duration of the VR steps, in seconds.
    pub fn vr_duration_s(&self) -> f64 {
        self.flow.iter().filter(|s| s.kind.is_vr()).filter_map(FlowStep::duration_s).sum()
    }

    pub fn instrument_def(&self, id: &InstrumentId) -> Option<InstrumentDef> {
        self.instrument_defs
            .iter()
            .find(|d| &d.instrument_id == id)
            .cloned()
            .or_else(|| instruments::builtin(id.as_str()))
    }

    pub fn to_document(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("experiment serializes");
        s.push('\n');
        s
    }
}

/// Picks the condition for the `index`-th session (0-based) of an
/// experiment. The result depends only on the method, the seed, the
/// condition list and `index`.
pub fn assign_condition(exp: &Experiment, seed: u64, index: u64) -> ConditionId {
    let k = exp.conditions.len();
    if k == 1 {
        return exp.conditions[0].condition_id.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = match exp.assignment.method {
        AssignmentMethod::UniformRandom => {
            rng.set_stream(index);
            rng.random_range(0..k)
        }
        AssignmentMethod::BlockBalanced => {
            let k64 = k as u64;
            rng.set_stream(index / k64);
            let mut block: Vec<usize> = (0..k).collect();
            block.shuffle(&mut rng);
            block[(index % k64) as usize]
        }
    };
    exp.conditions[pick].condition_id.clone()
}
