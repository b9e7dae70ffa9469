//! Qualification pipeline: raw device-ownership submissions, human review,
//! and the resulting panel of verified workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{SubmissionId, Timestamp, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeviceType {
    Cardboard,
    GearVR,
    Rift,
    Vive,
    PSVR,
    Daydream,
    Other,
}

impl DeviceType {
    pub const ALL: [DeviceType; 7] = [
        DeviceType::Cardboard,
        DeviceType::GearVR,
        DeviceType::Rift,
        DeviceType::Vive,
        DeviceType::PSVR,
        DeviceType::Daydream,
        DeviceType::Other,
    ];
}

impl fmt::Display for DeviceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for DeviceType {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceType::ALL
            .into_iter()
            .find(|d| d.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| PanelError::Validation(format!("unknown device type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceClaim {
    pub device_type: DeviceType,
    /// Opaque reference to the uploaded photo; never inspected here.
    pub photo_asset_id: String,
    /// The hand-written characters visible in the photo.
    pub claimed_id_digits: String,
    #[serde(default)]
    pub acquisition_note: String,
}

impl DeviceClaim {
    /// Whether the claimed characters equal the last four characters of the
    /// worker id. Reviewers use this alongside the photo itself.
    pub fn digits_match(&self, worker: &WorkerId) -> bool {
        let id = worker.as_str();
        id.len() >= 4 && id.is_char_boundary(id.len() - 4) && id[id.len() - 4..] == self.claimed_id_digits
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    NonBinary,
    PreferNotToSay,
    SelfDescribed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Asian,
    Hispanic,
    NativeAmerican,
    PacificIslander,
    Multiracial,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Education {
    LessThanHighSchool,
    HighSchool,
    SomeCollege,
    Associate,
    Bachelor,
    Master,
    Professional,
    Doctorate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IncomeBracket {
    Under10k,
    From10kTo30k,
    From30kTo50k,
    From50kTo80k,
    From80kTo100k,
    Over100k,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Settlement {
    Urban,
    Suburban,
    Rural,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub country: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settlement: Option<Settlement>,
}

/// Self-reported demographics. Only age and gender are required.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demographics {
    pub age: u16,
    pub gender: Gender,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<Race>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub education: Option<Education>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub income_bracket: Option<IncomeBracket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Location>,
}

impl Demographics {
    pub fn minimal(age: u16, gender: Gender) -> Self {
        Self {
            age,
            gender,
            gender_text: None,
            race: None,
            education: None,
            occupation: None,
            income_bracket: None,
            location: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionInput {
    pub worker_id: WorkerId,
    pub claims: Vec<DeviceClaim>,
    pub demographics: Demographics,
    /// Set when the worker was cleared by email for a device outside the
    /// survey list; only then may a claim use [`DeviceType::Other`].
    #[serde(default)]
    pub pre_approved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewStatus {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDecision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationSubmission {
    pub submission_id: SubmissionId,
    pub worker_id: WorkerId,
    pub claims: Vec<DeviceClaim>,
    pub demographics: Demographics,
    pub pre_approved: bool,
    pub submitted_at: Timestamp,
    pub content_hash: String,
    pub review: Review,
}

/// The outcome of one review, as recorded in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub submission_id: SubmissionId,
    pub decision: ReviewDecision,
    pub note: String,
    pub reviewed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: WorkerId,
    pub verified_devices: BTreeSet<DeviceType>,
    pub demographics: Demographics,
    pub joined_at: Timestamp,
    pub submission_id: SubmissionId,
}

/// One line of the panel export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelExportRecord {
    pub worker_id: WorkerId,
    pub devices: BTreeSet<DeviceType>,
    pub demographics: Demographics,
    pub submitted_at: Timestamp,
    pub joined_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PanelError {
    #[error("invalid submission: {0}")]
    Validation(String),
    #[error("worker {worker} already has active submission {existing}")]
    DuplicateActiveSubmission { worker: WorkerId, existing: SubmissionId },
    #[error("unknown submission {0}")]
    UnknownSubmission(SubmissionId),
    #[error("submission {0} was already reviewed")]
    AlreadyReviewed(SubmissionId),
}

pub enum SubmitOutcome {
    /// An identical submission is already on file; nothing new to record.
    Existing(SubmissionId),
    New(Box<QualificationSubmission>),
}

fn valid_worker_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn content_hash(input: &SubmissionInput) -> String {
    let canonical = serde_json::to_vec(input).expect("submission serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    submissions: BTreeMap<SubmissionId, QualificationSubmission>,
    by_worker: BTreeMap<WorkerId, Vec<SubmissionId>>,
    workers: BTreeMap<WorkerId, WorkerRecord>,
}

impl Panel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submission(&self, id: &SubmissionId) -> Option<&QualificationSubmission> {
        self.submissions.get(id)
    }

    pub fn submissions(&self) -> impl Iterator<Item = &QualificationSubmission> {
        self.submissions.values()
    }

    pub fn worker(&self, id: &WorkerId) -> Option<&WorkerRecord> {
        self.workers.get(id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerRecord> {
        self.workers.values()
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    /// Validates a submission and decides whether it is new, a retry of an
    /// identical one, or a conflicting duplicate.
    pub fn check_submission(&self, input: &SubmissionInput, now: Timestamp) -> Result<SubmitOutcome, PanelError> {
        if !valid_worker_id(input.worker_id.as_str()) {
            return Err(PanelError::Validation(format!("malformed worker id {:?}", input.worker_id.as_str())));
        }
        if input.claims.is_empty() {
            return Err(PanelError::Validation("at least one device claim is required".into()));
        }
        for (i, claim) in input.claims.iter().enumerate() {
            let digits = &claim.claimed_id_digits;
            if digits.chars().count() != 4 || !digits.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(PanelError::Validation(format!(
                    "claims[{i}].claimed_id_digits must be exactly 4 alphanumeric characters, got {digits:?}"
                )));
            }
            if claim.device_type == DeviceType::Other && !input.pre_approved {
                return Err(PanelError::Validation(format!(
                    "claims[{i}]: device type Other requires a pre-approved submission"
                )));
            }
        }
        if !(18..=120).contains(&input.demographics.age) {
            return Err(PanelError::Validation(format!("age {} outside [18, 120]", input.demographics.age)));
        }

        let hash = content_hash(input);
        for id in self.by_worker.get(&input.worker_id).into_iter().flatten() {
            let existing = &self.submissions[id];
            if existing.review.status == ReviewStatus::Rejected {
                continue;
            }
            if existing.content_hash == hash {
                return Ok(SubmitOutcome::Existing(id.clone()));
            }
            return Err(PanelError::DuplicateActiveSubmission {
                worker: input.worker_id.clone(),
                existing: id.clone(),
            });
        }
        let ordinal = self.by_worker.get(&input.worker_id).map_or(0, Vec::len) + 1;
        Ok(SubmitOutcome::New(Box::new(QualificationSubmission {
            submission_id: SubmissionId::new(format!("{}-q{ordinal}", input.worker_id)),
            worker_id: input.worker_id.clone(),
            claims: input.claims.clone(),
            demographics: input.demographics.clone(),
            pre_approved: input.pre_approved,
            submitted_at: now,
            content_hash: hash,
            review: Review { status: ReviewStatus::Pending, note: None, reviewed_at: None },
        })))
    }

    pub fn insert_submission(&mut self, sub: QualificationSubmission) {
        self.by_worker.entry(sub.worker_id.clone()).or_default().push(sub.submission_id.clone());
        self.submissions.insert(sub.submission_id.clone(), sub);
    }

    pub fn check_review(
        &self,
        id: &SubmissionId,
        decision: ReviewDecision,
        note: impl Into<String>,
        now: Timestamp,
    ) -> Result<ReviewRecord, PanelError> {
        let sub = self.submissions.get(id).ok_or_else(|| PanelError::UnknownSubmission(id.clone()))?;
        if sub.review.status != ReviewStatus::Pending {
            return Err(PanelError::AlreadyReviewed(id.clone()));
        }
        Ok(ReviewRecord { submission_id: id.clone(), decision, note: note.into(), reviewed_at: now })
    }

    /// Records a review. Approval creates the worker's panel record.
    pub fn apply_review(&mut self, rec: &ReviewRecord) -> Result<Option<WorkerRecord>, PanelError> {
        let sub = self
            .submissions
            .get_mut(&rec.submission_id)
            .ok_or_else(|| PanelError::UnknownSubmission(rec.submission_id.clone()))?;
        if sub.review.status != ReviewStatus::Pending {
            return Err(PanelError::AlreadyReviewed(rec.submission_id.clone()));
        }
        sub.review = Review {
            status: match rec.decision {
                ReviewDecision::Approve => ReviewStatus::Approved,
                ReviewDecision::Reject => ReviewStatus::Rejected,
            },
            note: Some(rec.note.clone()),
            reviewed_at: Some(rec.reviewed_at),
        };
        if rec.decision == ReviewDecision::Reject {
            return Ok(None);
        }
        let record = WorkerRecord {
            worker_id: sub.worker_id.clone(),
            verified_devices: sub.claims.iter().map(|c| c.device_type).collect(),
            demographics: sub.demographics.clone(),
            joined_at: rec.reviewed_at,
            submission_id: sub.submission_id.clone(),
        };
        self.workers.insert(record.worker_id.clone(), record.clone());
        Ok(Some(record))
    }

    /// Submit and store in one step; returns the (possibly pre-existing) id.
    pub fn submit(&mut self, input: &SubmissionInput, now: Timestamp) -> Result<SubmissionId, PanelError> {
        match self.check_submission(input, now)? {
            SubmitOutcome::Existing(id) => Ok(id),
            SubmitOutcome::New(sub) => {
                let id = sub.submission_id.clone();
                self.insert_submission(*sub);
                Ok(id)
            }
        }
    }

    pub fn review(
        &mut self,
        id: &SubmissionId,
        decision: ReviewDecision,
        note: &str,
        now: Timestamp,
    ) -> Result<Option<WorkerRecord>, PanelError> {
        let rec = self.check_review(id, decision, note, now)?;
        self.apply_review(&rec)
    }

    pub fn is_eligible(&self, worker: &WorkerId, filter: &BTreeSet<DeviceType>) -> bool {
        self.workers.get(worker).is_some_and(|w| !w.verified_devices.is_disjoint(filter))
    }

    /// Workers owning at least one device in `filter`, ordered by join time
    /// then worker id.
    pub fn eligible_workers(&self, filter: &BTreeSet<DeviceType>) -> Vec<WorkerId> {
        let mut hits: Vec<&WorkerRecord> =
            self.workers.values().filter(|w| !w.verified_devices.is_disjoint(filter)).collect();
        hits.sort_by(|a, b| a.joined_at.cmp(&b.joined_at).then_with(|| a.worker_id.cmp(&b.worker_id)));
        hits.into_iter().map(|w| w.worker_id.clone()).collect()
    }

    pub fn export_record(&self, worker: &WorkerId) -> Option<PanelExportRecord> {
        let w = self.workers.get(worker)?;
        let sub = self.submissions.get(&w.submission_id)?;
        Some(PanelExportRecord {
            worker_id: w.worker_id.clone(),
            devices: w.verified_devices.clone(),
            demographics: w.demographics.clone(),
            submitted_at: sub.submitted_at,
            joined_at: w.joined_at,
        })
    }

    pub fn submissions_of(&self, worker: &WorkerId) -> &[SubmissionId] {
        self.by_worker.get(worker).map_or(&[], Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claim(device: DeviceType, digits: &str) -> DeviceClaim {
        DeviceClaim {
            device_type: device,
            photo_asset_id: "photo-1".into(),
            claimed_id_digits: digits.into(),
            acquisition_note: String::new(),
        }
    }

    fn input(worker: &str, device: DeviceType) -> SubmissionInput {
        SubmissionInput {
            worker_id: worker.into(),
            claims: vec![claim(device, &worker[worker.len() - 4..])],
            demographics: Demographics::minimal(32, Gender::Female),
            pre_approved: false,
        }
    }

    const T0: Timestamp = Timestamp::from_millis(1_000);

    #[test]
    fn happy_path_submission_is_pending() {
        let mut panel = Panel::new();
        let id = panel.submit(&input("A1B2C3D4", DeviceType::GearVR), T0).unwrap();
        assert_eq!(panel.submission(&id).unwrap().review.status, ReviewStatus::Pending);
        assert!(panel.is_empty());
    }

    #[test]
    fn second_submission_while_pending_is_rejected() {
        let mut panel = Panel::new();
        let first = panel.submit(&input("A1B2C3D4", DeviceType::GearVR), T0).unwrap();
        let err = panel.submit(&input("A1B2C3D4", DeviceType::Vive), T0).unwrap_err();
        assert_eq!(err, PanelError::DuplicateActiveSubmission { worker: "A1B2C3D4".into(), existing: first.clone() });
        // an identical retry is idempotent
        assert_eq!(panel.submit(&input("A1B2C3D4", DeviceType::GearVR), T0).unwrap(), first);
    }

    #[test]
    fn malformed_digits_are_a_validation_error() {
        let mut bad = input("A1B2C3D4", DeviceType::GearVR);
        bad.claims[0].claimed_id_digits = "12345".into();
        assert!(matches!(Panel::new().submit(&bad, T0), Err(PanelError::Validation(_))));
        bad.claims[0].claimed_id_digits = "12 4".into();
        assert!(matches!(Panel::new().submit(&bad, T0), Err(PanelError::Validation(_))));
    }

    #[test]
    fn other_device_needs_pre_approval() {
        let mut sub = input("W0000001", DeviceType::Other);
        assert!(matches!(Panel::new().submit(&sub, T0), Err(PanelError::Validation(_))));
        sub.pre_approved = true;
        assert!(Panel::new().submit(&sub, T0).is_ok());
    }

    #[test]
    fn age_bounds() {
        let mut sub = input("W0000001", DeviceType::Rift);
        sub.demographics.age = 17;
        assert!(Panel::new().submit(&sub, T0).is_err());
        sub.demographics.age = 120;
        assert!(Panel::new().submit(&sub, T0).is_ok());
    }

    #[test]
    fn approval_creates_worker_record() {
        let mut panel = Panel::new();
        let id = panel.submit(&input("A1B2C3D4", DeviceType::GearVR), T0).unwrap();
        let rec = panel.review(&id, ReviewDecision::Approve, "photo ok", T0.plus_secs(60)).unwrap().unwrap();
        assert_eq!(rec.verified_devices, BTreeSet::from([DeviceType::GearVR]));
        assert_eq!(rec.joined_at, T0.plus_secs(60));
        assert_eq!(
            panel.review(&id, ReviewDecision::Approve, "again", T0),
            Err(PanelError::AlreadyReviewed(id.clone()))
        );
        assert_eq!(
            panel.review(&"nope".into(), ReviewDecision::Approve, "", T0),
            Err(PanelError::UnknownSubmission("nope".into()))
        );
    }

    #[test]
    fn mismatched_digits_rejected_by_reviewer_creates_no_worker() {
        let mut panel = Panel::new();
        let mut sub = input("A1B2C3D4", DeviceType::GearVR);
        sub.claims[0].claimed_id_digits = "9999".into();
        assert!(!sub.claims[0].digits_match(&sub.worker_id));
        let id = panel.submit(&sub, T0).unwrap();
        assert_eq!(panel.review(&id, ReviewDecision::Reject, "digits do not match", T0).unwrap(), None);
        assert!(panel.worker(&sub.worker_id).is_none());
        // a rejected worker may submit again
        let retry = input("A1B2C3D4", DeviceType::GearVR);
        let second = panel.submit(&retry, T0).unwrap();
        assert_ne!(second, id);
    }

    #[test]
    fn eligibility_ordering_and_empty_panel() {
        let mut panel = Panel::new();
        let filter = BTreeSet::from([DeviceType::GearVR]);
        assert!(panel.eligible_workers(&filter).is_empty());
        for (i, w) in ["W000000C", "W000000B", "W000000A"].iter().enumerate() {
            let id = panel.submit(&input(w, DeviceType::GearVR), T0).unwrap();
            // B and A join at the same instant, C earlier
            let at = if i == 0 { T0 } else { T0.plus_secs(5) };
            panel.review(&id, ReviewDecision::Approve, "", at).unwrap();
        }
        let got: Vec<String> = panel.eligible_workers(&filter).iter().map(|w| w.to_string()).collect();
        assert_eq!(got, ["W000000C", "W000000A", "W000000B"]);
        assert!(panel.eligible_workers(&BTreeSet::from([DeviceType::Vive])).is_empty());
    }
}
