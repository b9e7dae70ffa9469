//! Random protocol walks against a lab, checked step by step against a
//! hand-written model of the session graph.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrlab_core::experiment::load_experiment;
use vrlab_core::ids::{ExperimentId, SessionId, Timestamp, WorkerId};
use vrlab_core::instruments::ResponseSet;
use vrlab_core::panel::{DeviceClaim, DeviceType, Demographics, Gender, ReviewDecision, SubmissionInput};
use vrlab_core::session::{ProtocolEvent, Session, SessionState};
use vrlab_core::{Lab, LabError, LabOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Headset(bool),
    EnterVr,
    CompleteVr,
    Abandon,
    RedeemRight,
    RedeemWrong,
    Survey,
}

pub const OPS: [Op; 8] =
    [Op::Headset(true), Op::Headset(false), Op::EnterVr, Op::CompleteVr, Op::Abandon, Op::RedeemRight, Op::RedeemWrong, Op::Survey];

/// Model state: mirrors the documented graph without using the crate's
/// transition table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M {
    Created,
    Headset,
    InVr,
    VrDone,
    Unlocked,
    Done,
    Gone,
}

impl M {
    fn as_state(self) -> SessionState {
        match self {
            M::Created => SessionState::Created,
            M::Headset => SessionState::HeadsetVerified,
            M::InVr => SessionState::InVr,
            M::VrDone => SessionState::VrComplete,
            M::Unlocked => SessionState::SurveyUnlocked,
            M::Done => SessionState::SurveyComplete,
            M::Gone => SessionState::Abandoned,
        }
    }
}

/// Expected next model state, or `Err(kind)` for a rejected op.
pub fn model_step(m: M, op: Op, redeemed: bool) -> Result<M, &'static str> {
    use M::*;
    match (op, m) {
        (Op::Headset(true), Created | Headset) => Ok(Headset),
        (Op::Headset(false), Created | Headset) => Ok(m),
        (Op::EnterVr, Headset) => Ok(InVr),
        (Op::CompleteVr, InVr) => Ok(VrDone),
        (Op::Abandon, Done | Gone) => Err("WrongState"),
        (Op::Abandon, _) => Ok(Gone),
        (Op::RedeemRight | Op::RedeemWrong, _) if redeemed => Err("AlreadyRedeemed"),
        (Op::RedeemRight, VrDone) => Ok(Unlocked),
        (Op::RedeemWrong, VrDone) => Err("CodeMismatch"),
        (Op::Survey, Unlocked) => Ok(Done),
        _ => Err("WrongState"),
    }
}

pub const WALK_EXPERIMENT: &str = r#"{
  "schema_version": 1,
  "experiment_id": "walk",
  "title": "walk",
  "conditions": [{"condition_id": "a", "label": "A"}, {"condition_id": "b", "label": "B"}],
  "flow": [
    {"step_id": "vr", "kind": "VrStimulus", "parameters": {"duration_s": 10}},
    {"step_id": "code", "kind": "VerificationCode"},
    {"step_id": "survey", "kind": "ExitSurvey"}
  ],
  "instruments": ["presence"],
  "payment": {"base_cents": 100},
  "device_requirements": ["GearVR"]
}"#;

pub struct Walker {
    pub lab: Lab,
    pub exp: ExperimentId,
    pub worker: WorkerId,
    pub now: Timestamp,
    presence: ResponseSet,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct WalkStats {
    pub walks: u64,
    pub steps: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub early_redeems: u64,
    pub second_redeems: u64,
}

impl Walker {
    pub fn new(key: u64) -> Self {
        let mut lab = Lab::new(LabOptions { code_key: key });
        let worker = WorkerId::from("walker-0001");
        let now = Timestamp::from_millis(1_000);
        let sub = lab
            .submit_qualification(
                &SubmissionInput {
                    worker_id: worker.clone(),
                    claims: vec![DeviceClaim {
                        device_type: DeviceType::GearVR,
                        photo_asset_id: "p".into(),
                        claimed_id_digits: "0001".into(),
                        acquisition_note: String::new(),
                    }],
                    demographics: Demographics::minimal(30, Gender::Female),
                    pre_approved: false,
                },
                now,
            )
            .unwrap();
        lab.review_submission(&sub, ReviewDecision::Approve, "", now).unwrap();
        let exp = lab.create_experiment(load_experiment(WALK_EXPERIMENT).unwrap(), now).unwrap();
        lab.activate_experiment(&exp, now).unwrap();
        let def = vrlab_core::instruments::builtin("presence").unwrap();
        let presence = ResponseSet {
            instrument_id: "presence".into(),
            answers: def.items.iter().map(|i| (i.item_id.clone(), i.scale_min)).collect::<BTreeMap<_, _>>(),
        };
        Self { lab, exp, worker, now, presence }
    }

    fn apply(&mut self, sid: &SessionId, op: Op) -> Result<(), LabError> {
        let now = self.now;
        match op {
            Op::Headset(p) => self.lab.report_headset(sid, p, now).map(|_| ()),
            Op::EnterVr => self.lab.advance(sid, ProtocolEvent::EnterVr, now).map(|_| ()),
            Op::CompleteVr => self.lab.advance(sid, ProtocolEvent::CompleteVr, now).map(|_| ()),
            Op::Abandon => self.lab.advance(sid, ProtocolEvent::Abandon, now).map(|_| ()),
            Op::RedeemRight | Op::RedeemWrong => {
                let s = &self.lab.session(sid)?.session;
                let code = s.verification_code.as_ref().map(|c| c.code.clone()).unwrap_or_else(|| "AAAAAA".into());
                let input = if op == Op::RedeemRight { code } else { wrong(&code) };
                self.lab.redeem_code(sid, &input, now).map(|_| ())
            }
            Op::Survey => self.lab.submit_survey(sid, vec![self.presence.clone()], now).map(|_| ()),
        }
    }

    /// Runs one walk of `len` random ops and checks every step. Returns a
    /// description of the first disagreement.
    pub fn walk(&mut self, rng: &mut ChaCha8Rng, len: usize, stats: &mut WalkStats) -> Result<(), String> {
        self.now = self.now.plus_secs(1);
        let sid = self.lab.create_session(&self.worker, &self.exp, None, self.now).map_err(|e| e.to_string())?.session.session_id.clone();
        let mut m = M::Created;
        let mut redeemed = false;
        for _ in 0..len {
            let op = OPS[rng.random_range(0..OPS.len())];
            self.now = self.now.plus_millis(rng.random_range(0..2_000));
            let before: Session = self.lab.session(&sid).unwrap().session.clone();
            if matches!(op, Op::RedeemRight | Op::RedeemWrong) {
                if !matches!(m, M::VrDone | M::Unlocked | M::Done) && !redeemed {
                    stats.early_redeems += 1;
                }
                if redeemed {
                    stats.second_redeems += 1;
                }
            }
            let expected = model_step(m, op, redeemed);
            let got = self.apply(&sid, op);
            stats.steps += 1;
            let s = &self.lab.session(&sid).unwrap().session;
            match (&expected, &got) {
                (Ok(next), Ok(())) => {
                    stats.accepted += 1;
                    if op == Op::RedeemRight {
                        redeemed = true;
                    }
                    m = *next;
                }
                (Err(kind), Err(e)) if *kind == e.kind() => {
                    stats.rejected += 1;
                    if *kind != "CodeMismatch" && s.transition_log != before.transition_log {
                        return Err(format!("{op:?} was rejected but changed the log"));
                    }
                }
                _ => return Err(format!("{op:?} from {m:?}: expected {expected:?}, got {got:?}")),
            }
            if s.state != m.as_state() {
                return Err(format!("state {:?} but model says {m:?}", s.state));
            }
            if Session::replay_log(&s.transition_log) != Some(s.state) {
                return Err(format!("transition log does not replay to {:?}", s.state));
            }
            let outstanding = usize::from(s.outstanding_code().is_some());
            if outstanding != usize::from(m == M::VrDone) || self.lab.outstanding_code_count() > 1 {
                return Err("more than one unredeemed code".into());
            }
        }
        if !self.lab.session(&sid).unwrap().session.state.is_terminal() {
            self.now = self.now.plus_secs(1);
            self.lab.advance(&sid, ProtocolEvent::Abandon, self.now).map_err(|e| e.to_string())?;
        }
        stats.walks += 1;
        Ok(())
    }
}

fn wrong(code: &str) -> String {
    let mut c: Vec<char> = code.chars().collect();
    c[0] = if c[0] == 'A' { 'B' } else { 'A' };
    c.into_iter().collect()
}

/// `walks` random walks of up to 12 steps under one seed. A fresh lab is
/// used every 2,000 walks to bound memory.
pub fn run_walks(seed: u64, walks: u64) -> Result<WalkStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = WalkStats::default();
    let mut walker = Walker::new(seed);
    for i in 0..walks {
        if i > 0 && i % 2_000 == 0 {
            walker = Walker::new(seed.wrapping_add(i));
        }
        let len = rng.random_range(1..=12);
        walker.walk(&mut rng, len, &mut stats)?;
    }
    Ok(stats)
}
