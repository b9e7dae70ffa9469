//! Per-participant session state machine and verification codes.
//!
//! ```text
//! Created -> HeadsetVerified -> InVr -> VrComplete -> SurveyUnlocked -> SurveyComplete
//!    \____________\______________\________\______________\______-> Abandoned
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{ConditionId, ExperimentId, PostingId, SessionId, Timestamp, WorkerId};

/// Inactivity after which a non-terminal session is abandoned.
pub const ABANDON_TIMEOUT_MS: i64 = 60 * 60 * 1000;

/// Failed redemptions after which a session is flagged SuspectCode.
pub const SUSPECT_AFTER_FAILURES: u32 = 3;

/// Uppercase letters and digits without the confusable O, 0, I and 1.
pub const CODE_ALPHABET: &[u8; 32] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
pub const CODE_LEN: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Created,
    HeadsetVerified,
    InVr,
    VrComplete,
    SurveyUnlocked,
    SurveyComplete,
    Abandoned,
}

impl SessionState {
    pub const ALL: [SessionState; 7] = [
        SessionState::Created,
        SessionState::HeadsetVerified,
        SessionState::InVr,
        SessionState::VrComplete,
        SessionState::SurveyUnlocked,
        SessionState::SurveyComplete,
        SessionState::Abandoned,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::SurveyComplete | SessionState::Abandoned)
    }

    /// Whether `self -> to` is an edge of the transition graph.
    pub fn can_move_to(self, to: SessionState) -> bool {
        use SessionState::*;
        match (self, to) {
            (Created, HeadsetVerified)
            | (HeadsetVerified, InVr)
            | (InVr, VrComplete)
            | (VrComplete, SurveyUnlocked)
            | (SurveyUnlocked, SurveyComplete) => true,
            (from, Abandoned) => !from.is_terminal(),
            _ => false,
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualityFlag {
    LateSurvey,
    SuspectCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateStatus {
    ContinueEnabled,
    ContinueDisabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolEvent {
    EnterVr,
    CompleteVr,
    Abandon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbandonReason {
    Timeout,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: SessionState,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationCode {
    pub code: String,
    pub session_id: SessionId,
    pub issued_at: Timestamp,
    pub redeemed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("cannot {action} in state {state}")]
    WrongState { state: SessionState, action: &'static str },
    #[error("verification code does not match ({failures} failed attempts)")]
    CodeMismatch { failures: u32 },
    #[error("verification code already redeemed")]
    AlreadyRedeemed,
}

/// Outcome of checking a redemption attempt before it is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedeemCheck {
    Match { late: bool },
    Mismatch { failures: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: SessionId,
    pub worker_id: WorkerId,
    pub experiment_id: ExperimentId,
    pub condition_id: ConditionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posting_id: Option<PostingId>,
    pub state: SessionState,
    pub transition_log: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_code: Option<VerificationCode>,
    pub quality_flags: BTreeSet<QualityFlag>,
    pub code_failures: u32,
    pub last_activity: Timestamp,
}

/// Trims and uppercases user input so a code typed in lowercase or with
/// stray whitespace still matches.
pub fn normalize_code(input: &str) -> String {
    input.trim().to_ascii_uppercase()
}

pub fn is_well_formed_code(code: &str) -> bool {
    code.len() == CODE_LEN && code.bytes().all(|b| CODE_ALPHABET.contains(&b))
}

/// Deterministic code for `(key, session, attempt)`. The attempt counter
/// lets the caller draw a fresh code when one collides with an outstanding
/// code of another session.
pub fn mint_code(key: u64, session_id: &SessionId, attempt: u32) -> String {
    let mut h = Sha256::new();
    h.update(key.to_le_bytes());
    h.update(session_id.as_str().as_bytes());
    h.update(attempt.to_le_bytes());
    let digest = h.finalize();
    // 256 is a multiple of the alphabet size, so each byte maps uniformly
    digest[..CODE_LEN].iter().map(|b| CODE_ALPHABET[usize::from(*b) % CODE_ALPHABET.len()] as char).collect()
}

impl Session {
    pub fn new(
        session_id: SessionId,
        worker_id: WorkerId,
        experiment_id: ExperimentId,
        condition_id: ConditionId,
        posting_id: Option<PostingId>,
        at: Timestamp,
    ) -> Self {
        Self {
            session_id,
            worker_id,
            experiment_id,
            condition_id,
            posting_id,
            state: SessionState::Created,
            transition_log: vec![Transition { state: SessionState::Created, at }],
            verification_code: None,
            quality_flags: BTreeSet::new(),
            code_failures: 0,
            last_activity: at,
        }
    }

    fn wrong(&self, action: &'static str) -> SessionError {
        SessionError::WrongState { state: self.state, action }
    }

    /// Moves along one edge of the graph. Timestamps are forced strictly
    /// increasing by bumping a tie or regression to one millisecond after
    /// the previous transition.
    fn transition(&mut self, to: SessionState, at: Timestamp, action: &'static str) -> Result<(), SessionError> {
        if !self.state.can_move_to(to) {
            return Err(self.wrong(action));
        }
        let last = self.transition_log.last().map_or(at, |t| t.at);
        let at = if self.transition_log.is_empty() || at > last { at } else { last.plus_millis(1) };
        self.transition_log.push(Transition { state: to, at });
        self.state = to;
        self.touch(at);
        Ok(())
    }

    pub fn touch(&mut self, at: Timestamp) {
        self.last_activity = self.last_activity.max(at);
    }

    /// When the session reached `state`, if it did.
    pub fn entered_at(&self, state: SessionState) -> Option<Timestamp> {
        self.transition_log.iter().find(|t| t.state == state).map(|t| t.at)
    }

    pub fn check_headset(&self) -> Result<(), SessionError> {
        match self.state {
            SessionState::Created | SessionState::HeadsetVerified => Ok(()),
            _ => Err(self.wrong("report headset")),
        }
    }

    pub fn report_headset(&mut self, present: bool, at: Timestamp) -> Result<GateStatus, SessionError> {
        self.check_headset()?;
        if !present {
            return Ok(GateStatus::ContinueDisabled);
        }
        if self.state == SessionState::Created {
            self.transition(SessionState::HeadsetVerified, at, "report headset")?;
        }
        Ok(GateStatus::ContinueEnabled)
    }

    pub fn check_advance(&self, event: ProtocolEvent) -> Result<SessionState, SessionError> {
        let (to, action) = match event {
            ProtocolEvent::EnterVr => (SessionState::InVr, "enter VR"),
            ProtocolEvent::CompleteVr => (SessionState::VrComplete, "complete VR"),
            ProtocolEvent::Abandon => (SessionState::Abandoned, "abandon"),
        };
        if self.state.can_move_to(to) {
            Ok(to)
        } else {
            Err(self.wrong(action))
        }
    }

    pub fn enter_vr(&mut self, at: Timestamp) -> Result<(), SessionError> {
        self.transition(SessionState::InVr, at, "enter VR")
    }

    /// Completes the VR stage and binds a freshly minted code.
    pub fn complete_vr(&mut self, code: String, at: Timestamp) -> Result<(), SessionError> {
        self.transition(SessionState::VrComplete, at, "complete VR")?;
        let issued_at = self.transition_log.last().expect("just pushed").at;
        self.verification_code =
            Some(VerificationCode { code, session_id: self.session_id.clone(), issued_at, redeemed: false });
        Ok(())
    }

    pub fn abandon(&mut self, at: Timestamp) -> Result<(), SessionError> {
        self.transition(SessionState::Abandoned, at, "abandon")
    }

    /// Checks a redemption attempt without recording it. A redemption is
    /// late when it happens strictly after VrComplete + window.
    pub fn check_redeem(&self, input: &str, at: Timestamp, window_s: u64) -> Result<RedeemCheck, SessionError> {
        if self.verification_code.as_ref().is_some_and(|c| c.redeemed) {
            return Err(SessionError::AlreadyRedeemed);
        }
        if self.state != SessionState::VrComplete {
            return Err(self.wrong("redeem code"));
        }
        let code = self.verification_code.as_ref().expect("VrComplete always carries a code");
        if normalize_code(input) != code.code {
            return Ok(RedeemCheck::Mismatch { failures: self.code_failures + 1 });
        }
        let deadline = code.issued_at.plus_secs(window_s as i64);
        Ok(RedeemCheck::Match { late: at > deadline })
    }

    pub fn record_mismatch(&mut self, at: Timestamp) {
        self.code_failures += 1;
        if self.code_failures >= SUSPECT_AFTER_FAILURES {
            self.quality_flags.insert(QualityFlag::SuspectCode);
        }
        self.touch(at);
    }

    pub fn record_redeemed(&mut self, late: bool, at: Timestamp) -> Result<(), SessionError> {
        self.transition(SessionState::SurveyUnlocked, at, "redeem code")?;
        if let Some(code) = self.verification_code.as_mut() {
            code.redeemed = true;
        }
        if late {
            self.quality_flags.insert(QualityFlag::LateSurvey);
        }
        Ok(())
    }

    /// Checks and records a redemption in one step.
    pub fn redeem(&mut self, input: &str, at: Timestamp, window_s: u64) -> Result<(), SessionError> {
        match self.check_redeem(input, at, window_s)? {
            RedeemCheck::Match { late } => self.record_redeemed(late, at),
            RedeemCheck::Mismatch { failures } => {
                self.record_mismatch(at);
                Err(SessionError::CodeMismatch { failures })
            }
        }
    }

    pub fn check_survey(&self) -> Result<(), SessionError> {
        if self.state == SessionState::SurveyUnlocked {
            Ok(())
        } else {
            Err(self.wrong("submit survey"))
        }
    }

    pub fn complete_survey(&mut self, at: Timestamp) -> Result<(), SessionError> {
        self.transition(SessionState::SurveyComplete, at, "submit survey")
    }

    pub fn check_in_vr(&self, action: &'static str) -> Result<(), SessionError> {
        if self.state == SessionState::InVr {
            Ok(())
        } else {
            Err(self.wrong(action))
        }
    }

    pub fn is_stale(&self, now: Timestamp, timeout_ms: i64) -> bool {
        !self.state.is_terminal() && now.millis() - self.last_activity.millis() > timeout_ms
    }

    /// An outstanding code is one issued but neither redeemed nor orphaned
    /// by abandonment.
    pub fn outstanding_code(&self) -> Option<&str> {
        match (&self.verification_code, self.state) {
            (Some(c), SessionState::VrComplete) if !c.redeemed => Some(&c.code),
            _ => None,
        }
    }

    /// Rebuilds the state reached by following the logged transitions from
    /// Created, or `None` if the log leaves the graph.
    pub fn replay_log(log: &[Transition]) -> Option<SessionState> {
        let (first, rest) = log.split_first()?;
        if first.state != SessionState::Created {
            return None;
        }
        let mut state = first.state;
        let mut at = first.at;
        for t in rest {
            if !state.can_move_to(t.state) || t.at <= at {
                return None;
            }
            state = t.state;
            at = t.at;
        }
        Some(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: Timestamp = Timestamp::from_millis(10_000);

    fn fresh() -> Session {
        Session::new("e.00001".into(), "w".into(), "e".into(), "a".into(), None, T0)
    }

    fn to_vr_complete() -> Session {
        let mut s = fresh();
        s.report_headset(true, T0.plus_secs(1)).unwrap();
        s.enter_vr(T0.plus_secs(2)).unwrap();
        s.complete_vr(mint_code(1, &s.session_id, 0), T0.plus_secs(3)).unwrap();
        s
    }

    #[test]
    fn headset_gate() {
        let mut s = fresh();
        assert_eq!(s.report_headset(false, T0).unwrap(), GateStatus::ContinueDisabled);
        assert_eq!(s.state, SessionState::Created);
        assert_eq!(s.report_headset(true, T0).unwrap(), GateStatus::ContinueEnabled);
        assert_eq!(s.state, SessionState::HeadsetVerified);
        let mut done = to_vr_complete();
        assert!(matches!(done.report_headset(true, T0), Err(SessionError::WrongState { .. })));
    }

    #[test]
    fn advance_rules() {
        let mut s = fresh();
        assert!(s.check_advance(ProtocolEvent::CompleteVr).is_err());
        s.report_headset(true, T0).unwrap();
        s.enter_vr(T0).unwrap();
        assert_eq!(s.state, SessionState::InVr);
        s.complete_vr("ABCDEF".into(), T0).unwrap();
        let code = s.verification_code.as_ref().unwrap();
        assert!(!code.redeemed);
        // equal timestamps were bumped to stay strictly increasing
        assert_eq!(Session::replay_log(&s.transition_log), Some(SessionState::VrComplete));
    }

    #[test]
    fn redeem_inside_window_is_not_late() {
        let mut s = to_vr_complete();
        let code = s.verification_code.clone().unwrap();
        s.redeem(&code.code, code.issued_at.plus_secs(900), 1200).unwrap();
        assert_eq!(s.state, SessionState::SurveyUnlocked);
        assert!(s.quality_flags.is_empty());
    }

    #[test]
    fn redeem_after_window_is_flagged_late() {
        let mut s = to_vr_complete();
        let code = s.verification_code.clone().unwrap();
        s.redeem(&code.code.to_lowercase(), code.issued_at.plus_secs(1500), 1200).unwrap();
        assert_eq!(s.state, SessionState::SurveyUnlocked);
        assert!(s.quality_flags.contains(&QualityFlag::LateSurvey));
    }

    #[test]
    fn window_boundary_is_inclusive() {
        let mut s = to_vr_complete();
        let code = s.verification_code.clone().unwrap();
        s.redeem(&code.code, code.issued_at.plus_secs(1200), 1200).unwrap();
        assert!(s.quality_flags.is_empty());
        let mut s = to_vr_complete();
        s.redeem(&code.code, code.issued_at.plus_millis(1_200_001), 1200).unwrap();
        assert!(s.quality_flags.contains(&QualityFlag::LateSurvey));
    }

    #[test]
    fn second_redemption_fails() {
        let mut s = to_vr_complete();
        let code = s.verification_code.clone().unwrap().code;
        s.redeem(&code, T0.plus_secs(10), 1200).unwrap();
        assert_eq!(s.redeem(&code, T0.plus_secs(11), 1200), Err(SessionError::AlreadyRedeemed));
    }

    #[test]
    fn three_mismatches_flag_suspect() {
        let mut s = to_vr_complete();
        for n in 1..=3 {
            assert_eq!(s.redeem("ZZZZZZ", T0, 1200), Err(SessionError::CodeMismatch { failures: n }));
        }
        assert!(s.quality_flags.contains(&QualityFlag::SuspectCode));
        assert_eq!(s.state, SessionState::VrComplete);
    }

    #[test]
    fn redeem_before_vr_complete_is_wrong_state() {
        let mut s = fresh();
        assert!(matches!(s.redeem("ABCDEF", T0, 1200), Err(SessionError::WrongState { .. })));
    }

    #[test]
    fn survey_requires_unlock() {
        let mut s = to_vr_complete();
        assert!(s.complete_survey(T0).is_err());
        let code = s.verification_code.clone().unwrap().code;
        s.redeem(&code, T0.plus_secs(5), 1200).unwrap();
        s.complete_survey(T0.plus_secs(6)).unwrap();
        assert!(s.state.is_terminal());
        assert!(s.abandon(T0.plus_secs(7)).is_err());
    }

    #[test]
    fn minted_codes_use_the_alphabet() {
        for i in 0..500 {
            let c = mint_code(42, &SessionId::new(format!("x.{i:05}")), 0);
            assert!(is_well_formed_code(&c), "{c}");
            assert!(!c.contains(['O', '0', 'I', '1']));
        }
        assert_ne!(mint_code(1, &"a".into(), 0), mint_code(1, &"a".into(), 1));
    }

    #[test]
    fn staleness() {
        let s = fresh();
        assert!(!s.is_stale(T0.plus_millis(ABANDON_TIMEOUT_MS), ABANDON_TIMEOUT_MS));
        assert!(s.is_stale(T0.plus_millis(ABANDON_TIMEOUT_MS + 1), ABANDON_TIMEOUT_MS));
    }
}
