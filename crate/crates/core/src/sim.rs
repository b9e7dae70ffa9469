//! Scripted participants. Each agent drives one session through a
//! [`LabApi`] exactly as a client would and produces synthetic telemetry,
//! game moves and survey answers from its [`AgentProfile`].
//!
//! Every agent draws from its own ChaCha8 stream (`seed`, agent index), and
//! all request times are logical, so a sequential run is a pure function of
//! the seed and the lab's starting state.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::experiment::{load_experiment, Experiment, StepKind};
use crate::ids::{ExperimentId, PostingId, SessionId, Timestamp, WorkerId};
use crate::instruments::ResponseSet;
use crate::panel::{
    DeviceClaim, DeviceType, Demographics, Education, Gender, ReviewDecision, SubmissionInput,
};
use crate::session::{ProtocolEvent, SessionState, ABANDON_TIMEOUT_MS};
use crate::telemetry::{normalize_yaw, OrientationSample};
use crate::ultimatum::GameMove;
use crate::wire::{ApiError, CreateSessionRequest, LabApi, ReviewRequest, SessionHandle, SessionView};

/// Avatars in the Study-3 plaza, evenly spaced around the participant.
pub const PLAZA_AVATARS: usize = 10;
/// Facing count at which the configured attraction weight applies in full.
pub const FULL_CROWD: usize = 8;
pub const SAMPLE_INTERVAL_MS: u64 = 200;
pub const BATCH_SIZE: usize = 25;

/// Bearing of plaza avatar `i`, avatar 0 straight ahead.
pub fn avatar_bearing(i: usize) -> f64 {
    normalize_yaw(i as f64 * 360.0 / PLAZA_AVATARS as f64)
}

/// Seed of the facing order baked into the bundled Study-3 config.
pub const CROWD_LAYOUT_SEED: u64 = 1;

/// Seeded order in which plaza avatars turn to face the participant. A
/// condition with `n` facing avatars uses the first `n`, so larger crowds
/// contain the smaller ones.
pub fn facing_order(seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..PLAZA_AVATARS).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Something in the scene that draws gaze late in a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskCue {
    pub yaw_deg: f64,
    pub appears_at_ms: u64,
    /// Probability of looking at the cue once it is visible.
    pub attention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeAttractionModel {
    pub avatar_bearings: Vec<f64>,
    pub w: f64,
    pub noise_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue: Option<TaskCue>,
}

/// One yaw sample. With probability `w` the participant looks at a
/// uniformly chosen facing avatar, otherwise toward the front; Gaussian
/// noise is added either way. A visible cue takes precedence with its own
/// attention probability.
pub fn sample_gaze(model: &GazeAttractionModel, t_ms: u64, rng: &mut impl Rng) -> f64 {
    let noise = Normal::new(0.0, model.noise_deg).expect("noise sd is finite and non-negative");
    let target = match model.cue {
        Some(cue) if t_ms >= cue.appears_at_ms && rng.random_bool(cue.attention) => cue.yaw_deg,
        _ if !model.avatar_bearings.is_empty() && rng.random_bool(model.w) => {
            model.avatar_bearings[rng.random_range(0..model.avatar_bearings.len())]
        }
        _ => 0.0,
    };
    normalize_yaw(target + noise.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeProfile {
    pub attraction_weight: f64,
    pub noise_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameStrategy {
    pub proposal_mean: f64,
    pub proposal_sd: f64,
    /// Probability of accepting an offer that leaves the agent under half.
    pub accept_unfair_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub mean: f64,
    pub sd: f64,
}

/// Survey answers come from one latent level per subscale, drawn once per
/// agent; each item is that level plus item noise, rounded and clamped to
/// the item's scale. Keys are `instrument.subscale`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveyModel {
    pub item_noise_sd: f64,
    #[serde(default)]
    pub default: BTreeMap<String, Latent>,
    /// Per-condition entries override `default`.
    #[serde(default)]
    pub by_condition: BTreeMap<String, BTreeMap<String, Latent>>,
}

impl SurveyModel {
    fn latent(&self, condition: &str, key: &str) -> Option<Latent> {
        self.by_condition.get(condition).and_then(|m| m.get(key)).or_else(|| self.default.get(key)).copied()
    }
}

/// Deviations from the happy path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    /// Report a missing headset once before the positive report.
    pub headset_absent_first: bool,
    /// Leave after the VR stage without redeeming the code.
    pub skip_redeem: bool,
    /// Seconds between VR completion and redemption; drawn from 60–900 s
    /// when unset.
    pub survey_delay_s: Option<u64>,
    /// Mistyped codes entered before the correct one.
    pub wrong_code_attempts: u32,
    /// Send every telemetry batch twice.
    pub resend_batches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub gaze: GazeProfile,
    pub game: GameStrategy,
    pub survey: SurveyModel,
    #[serde(default)]
    pub script: AgentScript,
}

impl Default for AgentProfile {
    fn default() -> Self {
        Self {
            gaze: GazeProfile { attraction_weight: 0.4, noise_deg: 15.0 },
            game: GameStrategy { proposal_mean: 60.0, proposal_sd: 8.0, accept_unfair_prob: 0.22 },
            survey: default_survey(),
            script: AgentScript::default(),
        }
    }
}

fn latent(mean: f64, sd: f64) -> Latent {
    Latent { mean, sd }
}

fn default_survey() -> SurveyModel {
    let default = [
        ("zipers.positive_affect", latent(3.0, 0.6)),
        ("zipers.negative_affect", latent(2.0, 0.6)),
        ("zipers.focus", latent(3.0, 0.6)),
        ("ssq.nausea", latent(0.4, 0.4)),
        ("ssq.oculomotor", latent(0.5, 0.4)),
        ("ssq.disorientation", latent(0.3, 0.4)),
        ("presence.presence", latent(4.5, 0.8)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    SurveyModel { item_noise_sd: 0.7, default, by_condition: BTreeMap::new() }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("agent {agent}: {step}: {source}")]
    Api { agent: usize, step: &'static str, source: ApiError },
    #[error("{0}")]
    Setup(String),
}

/// One participant as the driver sees it.
#[derive(Debug, Clone)]
pub struct Agent {
    pub index: usize,
    pub worker_id: WorkerId,
    pub profile: AgentProfile,
    pub rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(index: usize, worker_id: WorkerId, profile: AgentProfile, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        Self { index, worker_id, profile, rng }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub agent: usize,
    pub session: SessionView,
    pub finished_at: Timestamp,
}

enum Action {
    Telemetry(Vec<OrientationSample>),
    Move(GameMove),
}

/// Gaze model for one session: attraction scales with the number of facing
/// avatars so that the configured weight is reached at [`FULL_CROWD`].
pub fn session_gaze(profile: &GazeProfile, view: &SessionView, exp: &Experiment) -> GazeAttractionModel {
    let facing: Vec<f64> = view
        .stimulus_params
        .get("facing_avatars")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|i| i.as_u64()).map(|i| avatar_bearing(i as usize)).collect())
        .unwrap_or_default();
    let cue = exp.flow.iter().find(|s| s.kind == StepKind::VrTask).and_then(|s| {
        let p = &s.parameters;
        Some(TaskCue {
            yaw_deg: p.get("cue_yaw_deg")?.as_f64()?,
            appears_at_ms: (p.get("cue_appears_s")?.as_f64()? * 1000.0) as u64,
            attention: p.get("cue_attention").and_then(|v| v.as_f64()).unwrap_or(0.5),
        })
    });
    let w = (profile.attraction_weight * facing.len() as f64 / FULL_CROWD as f64).min(1.0);
    GazeAttractionModel { avatar_bearings: facing, w, noise_deg: profile.noise_deg, cue }
}

/// Length of the VR stage as this session sees it. Steps marked
/// `skip_when_asset_missing` drop out when the condition leaves the asset
/// named by `asset_param` empty.
pub fn vr_duration_for(exp: &Experiment, view: &SessionView) -> f64 {
    exp.flow
        .iter()
        .filter(|s| s.kind.is_vr())
        .filter(|s| {
            let skippable = s.parameters.get("skip_when_asset_missing").and_then(|v| v.as_bool()).unwrap_or(false);
            let asset = s.parameters.get("asset_param").and_then(|v| v.as_str()).and_then(|k| view.stimulus_params.get(k));
            !(skippable && asset.is_none_or(|v| v.is_null()))
        })
        .filter_map(|s| s.duration_s())
        .sum()
}

fn telemetry_batches(model: &GazeAttractionModel, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<(u64, Vec<OrientationSample>)> {
    let n = (duration_s * 1000.0 / SAMPLE_INTERVAL_MS as f64).round() as u64;
    let tilt = Normal::<f64>::new(0.0, 5.0).expect("constant sd");
    let samples: Vec<OrientationSample> = (0..n)
        .map(|seq| {
            let t_ms = seq * SAMPLE_INTERVAL_MS;
            let yaw_deg = sample_gaze(model, t_ms, rng);
            let pitch_deg = tilt.sample(rng).clamp(-90.0, 90.0);
            let roll_deg = (tilt.sample(rng) / 2.0).clamp(-179.0, 179.0);
            OrientationSample { seq, t_ms, yaw_deg, pitch_deg, roll_deg }
        })
        .collect();
    samples.chunks(BATCH_SIZE).map(|c| (c.last().expect("non-empty chunk").t_ms, c.to_vec())).collect()
}

fn game_script(strategy: &GameStrategy, rng: &mut ChaCha8Rng) -> Vec<GameMove> {
    let keep = Normal::new(strategy.proposal_mean, strategy.proposal_sd).expect("valid strategy");
    let mut moves = Vec::new();
    for m in 1..=2 {
        moves.push(GameMove::StartMatch { match_index: m });
        for round in 1..=4 {
            if round % 2 == 1 {
                let k = keep.sample(rng).round().clamp(0.0, 100.0) as u32;
                moves.push(GameMove::Propose { keep_self: k, give_bot: 100 - k });
            } else {
                moves.push(GameMove::BotPropose);
                // filled in once the offer is known
                moves.push(GameMove::Respond { accept: true });
            }
        }
    }
    moves
}

fn survey_answers(model: &SurveyModel, exp: &Experiment, condition: &str, rng: &mut ChaCha8Rng) -> Vec<ResponseSet> {
    let noise = Normal::new(0.0, model.item_noise_sd).expect("valid item noise");
    let mut out = Vec::new();
    for id in &exp.instruments {
        let def = exp.instrument_def(id).expect("validated at load");
        let mut levels: Vec<(&str, f64)> = Vec::new();
        for s in &def.subscales {
            if let Some(l) = model.latent(condition, &format!("{id}.{}", s.name)) {
                let d = Normal::new(l.mean, l.sd).expect("valid latent");
                levels.push((s.name.as_str(), d.sample(rng)));
            }
        }
        let mut answers = BTreeMap::new();
        for item in &def.items {
            let level = def
                .subscales
                .iter()
                .filter(|s| s.item_ids.contains(&item.item_id))
                .find_map(|s| levels.iter().find(|(n, _)| *n == s.name).map(|(_, v)| *v))
                .unwrap_or(f64::from(item.scale_min + item.scale_max) / 2.0);
            let v = (level + noise.sample(rng)).round().clamp(f64::from(item.scale_min), f64::from(item.scale_max));
            answers.insert(item.item_id.clone(), v as i32);
        }
        out.push(ResponseSet { instrument_id: id.clone(), answers });
    }
    out
}

fn mistype(code: &str, attempt: u32) -> String {
    let alphabet = crate::session::CODE_ALPHABET;
    let mut bytes = code.as_bytes().to_vec();
    let i = attempt as usize % bytes.len();
    let pos = alphabet.iter().position(|&c| c == bytes[i]).unwrap_or(0);
    bytes[i] = alphabet[(pos + 1 + attempt as usize) % alphabet.len()];
    String::from_utf8(bytes).expect("ascii alphabet")
}

/// Drives one agent through a whole session starting at `start`. Returns
/// the final view; agents scripted to skip redemption stop at VrComplete.
pub fn run_session(
    api: &dyn LabApi,
    agent: &mut Agent,
    exp: &Experiment,
    posting: Option<&PostingId>,
    start: Timestamp,
) -> Result<SessionRun, SimError> {
    let idx = agent.index;
    let err = |step: &'static str| move |source: ApiError| SimError::Api { agent: idx, step, source };
    let script = agent.profile.script.clone();
    let rng = &mut agent.rng;
    let mut t = start;

    let req = CreateSessionRequest {
        worker_id: agent.worker_id.clone(),
        experiment_id: exp.experiment_id.clone(),
        posting_id: posting.cloned(),
    };
    let created = api.create_session(&req, t).map_err(err("create"))?;
    let view = created.session;
    let handle = SessionHandle { session_id: view.session_id.clone(), token: created.token };

    if script.headset_absent_first {
        t = t.plus_secs(5);
        api.headset(&handle, false, t).map_err(err("headset"))?;
    }
    t = t.plus_secs(20);
    api.headset(&handle, true, t).map_err(err("headset"))?;
    t = t.plus_secs(20);
    api.advance(&handle, ProtocolEvent::EnterVr, t).map_err(err("enter_vr"))?;
    let vr_start = t;

    let duration_s = vr_duration_for(exp, &view);
    let gaze = session_gaze(&agent.profile.gaze, &view, exp);
    let mut actions: Vec<(u64, Action)> = telemetry_batches(&gaze, duration_s, rng)
        .into_iter()
        .map(|(at, b)| (at, Action::Telemetry(b)))
        .collect();
    if view.game.is_some() {
        let moves = game_script(&agent.profile.game, rng);
        let span_ms = ((duration_s * 1000.0) as u64).max(moves.len() as u64);
        let step = span_ms / (moves.len() as u64 + 1);
        actions.extend(moves.into_iter().enumerate().map(|(i, m)| ((i as u64 + 1) * step, Action::Move(m))));
    }
    // stable: telemetry before moves at equal times
    actions.sort_by_key(|(at, a)| (*at, matches!(a, Action::Move(_))));

    let mut unfair_reply = None;
    for (at, action) in actions {
        let now = vr_start.plus_millis(at as i64);
        match action {
            Action::Telemetry(batch) => {
                api.telemetry(&handle, &batch, now).map_err(err("telemetry"))?;
                if script.resend_batches {
                    api.telemetry(&handle, &batch, now).map_err(err("telemetry"))?;
                }
            }
            Action::Move(GameMove::Respond { .. }) => {
                let accept = unfair_reply.take().unwrap_or(true);
                api.game_move(&handle, GameMove::Respond { accept }, now).map_err(err("game"))?;
            }
            Action::Move(mv) => {
                let res = api.game_move(&handle, mv, now).map_err(err("game"))?;
                if let (GameMove::BotPropose, Some(r)) = (mv, res.round) {
                    let fair = r.offer.responder_get * 2 >= r.offer.proposer_keep + r.offer.responder_get;
                    unfair_reply = Some(fair || rng.random_bool(agent.profile.game.accept_unfair_prob));
                }
            }
        }
    }

    t = vr_start.plus_millis((duration_s * 1000.0) as i64 + 5_000);
    let done = api.advance(&handle, ProtocolEvent::CompleteVr, t).map_err(err("complete_vr"))?;
    let code = done.verification_code.clone().ok_or_else(|| SimError::Setup("no code issued".into()))?;
    if script.skip_redeem {
        return Ok(SessionRun { agent: idx, session: done, finished_at: t });
    }

    let delay = script.survey_delay_s.unwrap_or_else(|| rng.random_range(60..=900));
    for attempt in 0..script.wrong_code_attempts {
        let at = t.plus_secs((delay as i64 * i64::from(attempt + 1)) / i64::from(script.wrong_code_attempts + 1));
        match api.redeem(&handle, &mistype(&code, attempt), at) {
            Err(e) if e.kind() == "CodeMismatch" => {}
            Err(e) => return Err(err("redeem")(e)),
            Ok(_) => return Err(SimError::Setup("mistyped code was accepted".into())),
        }
    }
    t = t.plus_secs(delay as i64);
    api.redeem(&handle, &code, t).map_err(err("redeem"))?;

    t = t.plus_secs(rng.random_range(120..=300));
    let responses = survey_answers(&agent.profile.survey, exp, view.condition_id.as_str(), rng);
    let session = api.survey(&handle, responses, t).map_err(err("survey"))?;
    Ok(SessionRun { agent: idx, session, finished_at: t })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimMode {
    /// One agent after another; bit-reproducible.
    Sequential,
    /// Agents spread over this many threads.
    Concurrent { threads: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub start: Timestamp,
    /// Gap between consecutive agents' start times.
    pub stagger_ms: i64,
    pub posting: Option<PostingId>,
    pub mode: SimMode,
}

impl SimConfig {
    pub fn new(seed: u64, start: Timestamp) -> Self {
        Self { seed, start, stagger_ms: 60 * 60 * 1000, posting: None, mode: SimMode::Sequential }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub runs: Vec<SessionRun>,
    /// Sessions the closing sweep abandoned.
    pub abandoned: Vec<SessionId>,
    pub finished_at: Timestamp,
}

/// Runs one agent per worker against `experiment`, then sweeps idle
/// sessions once the abandonment timeout has passed for everyone.
pub fn simulate(
    api: &dyn LabApi,
    experiment: &ExperimentId,
    workers: &[WorkerId],
    profile_for: &(dyn Fn(usize) -> AgentProfile + Sync),
    config: &SimConfig,
) -> Result<SimReport, SimError> {
    let exp = api.experiment(experiment).map_err(|source| SimError::Api { agent: 0, step: "experiment", source })?;
    let agents: Vec<Agent> =
        workers.iter().enumerate().map(|(i, w)| Agent::new(i, w.clone(), profile_for(i), config.seed)).collect();
    let start_of = |i: usize| config.start.plus_millis(config.stagger_ms * i as i64);

    let mut runs = match config.mode {
        SimMode::Sequential => {
            let mut runs = Vec::with_capacity(agents.len());
            for mut a in agents {
                let s = start_of(a.index);
                runs.push(run_session(api, &mut a, &exp, config.posting.as_ref(), s)?);
            }
            runs
        }
        SimMode::Concurrent { threads } => {
            let threads = threads.max(1);
            let mut buckets: Vec<Vec<Agent>> = (0..threads).map(|_| Vec::new()).collect();
            for a in agents {
                buckets[a.index % threads].push(a);
            }
            let results: Vec<Result<Vec<SessionRun>, SimError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = buckets
                    .into_iter()
                    .map(|bucket| {
                        let exp = &exp;
                        scope.spawn(move || {
                            bucket
                                .into_iter()
                                .map(|mut a| {
                                    let s = start_of(a.index);
                                    run_session(api, &mut a, exp, config.posting.as_ref(), s)
                                })
                                .collect::<Result<Vec<_>, _>>()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
            });
            let mut runs = Vec::new();
            for r in results {
                runs.extend(r?);
            }
            runs.sort_by_key(|r| r.agent);
            runs
        }
    };

    let last = runs.iter().map(|r| r.finished_at).max().unwrap_or(config.start);
    let mut abandoned = Vec::new();
    let finished_at = last.plus_millis(ABANDON_TIMEOUT_MS + 1);
    if runs.iter().any(|r| !r.session.state.is_terminal()) {
        abandoned = api.sweep(finished_at).map_err(|source| SimError::Api { agent: 0, step: "sweep", source })?;
        for r in &mut runs {
            if abandoned.contains(&r.session.session_id) {
                r.session.state = SessionState::Abandoned;
            }
        }
    }
    Ok(SimReport { runs, abandoned, finished_at })
}

// ---- panel fixture ----

/// Verified devices of the fixture panel: 242 approved workers.
pub const PANEL_DEVICE_COUNTS: [(DeviceType, usize); 6] = [
    (DeviceType::GearVR, 144),
    (DeviceType::Cardboard, 46),
    (DeviceType::Vive, 18),
    (DeviceType::PSVR, 18),
    (DeviceType::Rift, 10),
    (DeviceType::Daydream, 6),
];
pub const PANEL_SUBMISSIONS: usize = 439;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSubmission {
    pub input: SubmissionInput,
    /// Whether the photographed digits match the worker id.
    pub valid: bool,
}

/// Deterministic qualification batch: 439 submissions, of which the 242
/// with matching digits carry exactly [`PANEL_DEVICE_COUNTS`]. The rest show
/// the wrong last four characters.
pub fn panel_fixture(seed: u64) -> Vec<FixtureSubmission> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut devices: Vec<Option<DeviceType>> =
        PANEL_DEVICE_COUNTS.iter().flat_map(|&(d, n)| std::iter::repeat_n(Some(d), n)).collect();
    devices.resize(PANEL_SUBMISSIONS, None);
    devices.shuffle(&mut rng);
    devices
        .into_iter()
        .enumerate()
        .map(|(i, dev)| {
            let suffix = format!("{:04X}", rng.random::<u16>());
            let worker_id = WorkerId::new(format!("SIMW{i:04}{suffix}"));
            let (device_type, digits) = match dev {
                Some(d) => (d, suffix.clone()),
                None => {
                    let d = PANEL_DEVICE_COUNTS[rng.random_range(0..PANEL_DEVICE_COUNTS.len())].0;
                    let mut wrong = format!("{:04X}", rng.random::<u16>());
                    if wrong == suffix {
                        wrong = format!("{:04X}", rng.random::<u16>() | 1).replace(&suffix, "ZZZZ");
                    }
                    (d, wrong)
                }
            };
            let gender = if rng.random_bool(0.5) { Gender::Male } else { Gender::Female };
            let mut demographics = Demographics::minimal(rng.random_range(18..=65), gender);
            demographics.education = Some(match rng.random_range(0..4) {
                0 => Education::HighSchool,
                1 => Education::SomeCollege,
                2 => Education::Bachelor,
                _ => Education::Master,
            });
            FixtureSubmission {
                input: SubmissionInput {
                    worker_id,
                    claims: vec![DeviceClaim {
                        device_type,
                        photo_asset_id: format!("photo-{i:04}"),
                        claimed_id_digits: digits,
                        acquisition_note: String::new(),
                    }],
                    demographics,
                    pre_approved: false,
                },
                valid: dev.is_some(),
            }
        })
        .collect()
}

/// Submits every fixture entry and reviews it the way a human reviewer
/// would: approve when the digits in the photo match the worker id.
/// Returns the approved workers in submission order.
pub fn enroll(api: &dyn LabApi, fixture: &[FixtureSubmission], start: Timestamp) -> Result<Vec<WorkerId>, SimError> {
    let mut approved = Vec::new();
    for (i, f) in fixture.iter().enumerate() {
        let at = start.plus_secs(60 * i as i64);
        let wrap = |step| move |source| SimError::Api { agent: i, step, source };
        let id = api.submit_qualification(&f.input, at).map_err(wrap("submit_qualification"))?;
        let matches = f.input.claims.iter().all(|c| c.digits_match(&f.input.worker_id));
        let (decision, note) =
            if matches { (ReviewDecision::Approve, "digits match") } else { (ReviewDecision::Reject, "digits do not match worker id") };
        api.review(&id, &ReviewRequest { decision, note: note.into() }, at.plus_secs(30)).map_err(wrap("review"))?;
        if matches {
            approved.push(f.input.worker_id.clone());
        }
    }
    Ok(approved)
}

// ---- study replicas ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Study {
    /// Restorative environments: baseline, nature and urban video.
    Restorative,
    /// Avatar height in an Ultimatum Game negotiation.
    Proteus,
    /// Size of the facing crowd in a plaza.
    Crowd,
}

impl Study {
    pub const ALL: [Study; 3] = [Study::Restorative, Study::Proteus, Study::Crowd];

    pub fn config_document(self) -> &'static str {
        match self {
            Study::Restorative => include_str!("../configs/study1.json"),
            Study::Proteus => include_str!("../configs/study2.json"),
            Study::Crowd => include_str!("../configs/study3.json"),
        }
    }

    pub fn experiment(self) -> Experiment {
        load_experiment(self.config_document()).expect("bundled configs are valid")
    }

    /// Default agent profile for the replica.
    pub fn profile(self) -> AgentProfile {
        let mut p = AgentProfile::default();
        if self == Study::Restorative {
            // The thriller raises negative affect; either restorative video
            // brings it back down by the same amount.
            let conds = [("baseline", 2.2, 2.9), ("nature", 3.3, 1.8), ("urban", 3.3, 1.8)];
            for (c, pos, neg) in conds {
                let m = p.survey.by_condition.entry(c.to_string()).or_default();
                m.insert("zipers.positive_affect".into(), latent(pos, 0.6));
                m.insert("zipers.negative_affect".into(), latent(neg, 0.6));
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bearings_are_evenly_spaced() {
        assert_eq!(avatar_bearing(0), 0.0);
        assert_eq!(avatar_bearing(5), -180.0);
        assert_eq!(avatar_bearing(9), -36.0);
    }

    #[test]
    fn limit_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let back = GazeAttractionModel { avatar_bearings: vec![180.0], w: 1.0, noise_deg: 0.0, cue: None };
        assert!((0..100).all(|t| sample_gaze(&back, t, &mut rng) == -180.0));
        let front = GazeAttractionModel { avatar_bearings: vec![90.0], w: 0.0, noise_deg: 0.0, cue: None };
        assert!((0..100).all(|t| sample_gaze(&front, t, &mut rng) == 0.0));
    }

    #[test]
    fn fixture_counts() {
        let f = panel_fixture(3);
        assert_eq!(f.len(), PANEL_SUBMISSIONS);
        assert_eq!(f.iter().filter(|s| s.valid).count(), 242);
        for s in &f {
            assert_eq!(s.valid, s.input.claims[0].digits_match(&s.input.worker_id));
        }
    }

    #[test]
    fn mistyped_codes_differ() {
        for a in 0..5 {
            assert_ne!(mistype("ABCDEF", a), "ABCDEF");
        }
    }

    #[test]
    fn crowd_layout_is_the_seeded_order() {
        let order = facing_order(CROWD_LAYOUT_SEED);
        for c in &Study::Crowd.experiment().conditions {
            let n = c.stimulus_params["facing_count"].as_u64().unwrap() as usize;
            let facing: Vec<usize> =
                c.stimulus_params["facing_avatars"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
            assert_eq!(facing, order[..n]);
        }
    }

    #[test]
    fn bundled_configs_load() {
        for s in Study::ALL {
            s.experiment();
        }
    }
}
