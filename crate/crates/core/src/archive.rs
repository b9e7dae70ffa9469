//! Experiment archives: a directory of JSON-lines files plus a manifest of
//! SHA-256 hashes. `events.jsonl` is the authoritative part; every other
//! file is derived from the state it replays to, which is how import checks
//! an archive for consistency.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::events::{experiment_stream, session_stream, worker_stream, EventRecord};
use crate::ids::{ConditionId, ExperimentId, InstrumentId, SessionId};
use crate::journal::{encode_line, parse_log};
use crate::lab::{Lab, LabError, LabOptions, ReplayError};
use crate::session::{QualityFlag, Session};
use crate::telemetry::OrientationSample;
use crate::ultimatum::{OpponentSpec, RoundRecord};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const FILES: [&str; 8] = [
    "experiment.json",
    "panel.jsonl",
    "sessions.jsonl",
    "telemetry.jsonl",
    "games.jsonl",
    "responses.jsonl",
    "scores.jsonl",
    "events.jsonl",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub experiment_id: ExperimentId,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("archive integrity check failed: {0}")]
    ImportIntegrityError(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("archive conflicts with existing data: {0}")]
    Conflict(String),
    #[error(transparent)]
    Lab(#[from] LabError),
}

#[derive(Serialize)]
struct SessionLine<'a> {
    #[serde(flatten)]
    session: &'a Session,
    assignment_index: u64,
    telemetry_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cadence_hz: Option<f64>,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    opponents: &'a [OpponentSpec],
}

#[derive(Serialize)]
struct TelemetryLine<'a> {
    session_id: &'a SessionId,
    #[serde(flatten)]
    sample: &'a OrientationSample,
}

#[derive(Serialize)]
struct GameLine<'a> {
    session_id: &'a SessionId,
    #[serde(skip_serializing_if = "Option::is_none")]
    opponent: Option<&'a OpponentSpec>,
    #[serde(flatten)]
    round: &'a RoundRecord,
}

#[derive(Serialize)]
struct ResponseLine<'a> {
    session_id: &'a SessionId,
    condition_id: &'a ConditionId,
    instrument_id: &'a InstrumentId,
    answers: &'a BTreeMap<String, i32>,
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    session_id: &'a SessionId,
    condition_id: &'a ConditionId,
    instrument_id: &'a InstrumentId,
    subscale_scores: &'a BTreeMap<String, f64>,
    quality_flags: &'a BTreeSet<QualityFlag>,
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("archive lines serialize");
        out.push(b'\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An archive held in memory: file name → contents, manifest included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Archive {
    pub files: BTreeMap<String, Vec<u8>>,
}

/// Streams that make up an experiment's history: its own stream, its
/// sessions, and the panel records of every eligible or participating
/// worker.
fn experiment_streams(lab: &Lab, id: &ExperimentId) -> Result<BTreeSet<String>, LabError> {
    let entry = lab.experiment(id)?;
    let mut streams = BTreeSet::from([experiment_stream(id)]);
    for w in lab.eligible_workers(&entry.experiment.device_requirements) {
        streams.insert(worker_stream(&w));
    }
    for s in lab.sessions_of(id)? {
        streams.insert(session_stream(&s.session.session_id));
        streams.insert(worker_stream(&s.session.worker_id));
    }
    Ok(streams)
}

pub fn export_experiment(lab: &Lab, id: &ExperimentId) -> Result<Archive, LabError> {
    let entry = lab.experiment(id)?;
    let exp = &entry.experiment;
    let sessions: Vec<_> = lab.sessions_of(id)?.collect();
    let mut files = BTreeMap::new();

    files.insert("experiment.json".to_owned(), exp.to_document().into_bytes());
    let panel = lab.eligible_workers(&exp.device_requirements);
    files.insert("panel.jsonl".to_owned(), jsonl(panel.iter().filter_map(|w| lab.panel().export_record(w))));
    files.insert(
        "sessions.jsonl".to_owned(),
        jsonl(sessions.iter().map(|e| SessionLine {
            session: &e.session,
            assignment_index: e.assignment_index,
            telemetry_samples: e.trace.len(),
            cadence_hz: e.trace.cadence_hz(),
            opponents: e.game.as_ref().map_or(&[][..], |g| &g.config.opponent_specs),
        })),
    );
    files.insert(
        "telemetry.jsonl".to_owned(),
        jsonl(sessions.iter().flat_map(|e| {
            e.trace.samples().iter().map(|sample| TelemetryLine { session_id: &e.session.session_id, sample })
        })),
    );
    files.insert(
        "games.jsonl".to_owned(),
        jsonl(sessions.iter().filter_map(|e| e.game.as_ref().map(|g| (e, g))).flat_map(|(e, g)| {
            g.history.iter().map(|round| GameLine {
                session_id: &e.session.session_id,
                opponent: g.config.opponent_specs.get(round.match_index as usize - 1),
                round,
            })
        })),
    );
    files.insert(
        "responses.jsonl".to_owned(),
        jsonl(sessions.iter().flat_map(|e| {
            e.responses.iter().map(|r| ResponseLine {
                session_id: &e.session.session_id,
                condition_id: &e.session.condition_id,
                instrument_id: &r.instrument_id,
                answers: &r.answers,
            })
        })),
    );
    files.insert(
        "scores.jsonl".to_owned(),
        jsonl(sessions.iter().flat_map(|e| {
            e.scores.iter().map(|s| ScoreLine {
                session_id: &e.session.session_id,
                condition_id: &e.session.condition_id,
                instrument_id: &s.instrument_id,
                subscale_scores: &s.subscale_scores,
                quality_flags: &e.session.quality_flags,
            })
        })),
    );
    let streams = experiment_streams(lab, id)?;
    let mut events = Vec::new();
    for rec in lab.records().iter().filter(|r| streams.contains(&r.stream)) {
        events.extend_from_slice(encode_line(rec).as_bytes());
    }
    files.insert("events.jsonl".to_owned(), events);

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        experiment_id: id.clone(),
        files: FILES
            .iter()
            .map(|name| {
                let bytes = &files[*name];
                ManifestEntry { name: (*name).to_owned(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 }
            })
            .collect(),
    };
    let mut doc = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    doc.push(b'\n');
    files.insert(MANIFEST.to_owned(), doc);
    Ok(Archive { files })
}

impl Archive {
    pub fn write_to(&self, dir: &Path) -> Result<(), ArchiveError> {
        fs::create_dir_all(dir).map_err(|source| ArchiveError::Io { path: dir.to_owned(), source })?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|source| ArchiveError::Io { path, source })?;
        }
        Ok(())
    }

    /// Reads the manifest and every file it lists.
    pub fn read_from(dir: &Path) -> Result<Self, ArchiveError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|source| ArchiveError::Io { path, source })
        };
        let manifest_bytes = read(MANIFEST)?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| ArchiveError::ImportIntegrityError(format!("unreadable manifest: {e}")))?;
        let mut files = BTreeMap::from([(MANIFEST.to_owned(), manifest_bytes)]);
        for entry in &manifest.files {
            if entry.name.contains(['/', '\\']) || entry.name == MANIFEST {
                return Err(ArchiveError::ImportIntegrityError(format!("bad file name {:?}", entry.name)));
            }
            files.insert(entry.name.clone(), read(&entry.name)?);
        }
        Ok(Self { files })
    }

    pub fn manifest(&self) -> Result<Manifest, ArchiveError> {
        let bytes = self.files.get(MANIFEST).ok_or_else(|| ArchiveError::ImportIntegrityError("no manifest".into()))?;
        serde_json::from_slice(bytes).map_err(|e| ArchiveError::ImportIntegrityError(format!("unreadable manifest: {e}")))
    }

    /// Checks that the manifest lists exactly the expected files and that
    /// every hash matches.
    pub fn verify(&self) -> Result<Manifest, ArchiveError> {
        let manifest = self.manifest()?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(ArchiveError::ImportIntegrityError(format!("unsupported format {}", manifest.format_version)));
        }
        let listed: BTreeSet<&str> = manifest.files.iter().map(|f| f.name.as_str()).collect();
        if listed != FILES.iter().copied().collect() {
            return Err(ArchiveError::ImportIntegrityError("manifest does not list the expected files".into()));
        }
        for entry in &manifest.files {
            let bytes = self
                .files
                .get(&entry.name)
                .ok_or_else(|| ArchiveError::ImportIntegrityError(format!("{} missing", entry.name)))?;
            let actual = sha256_hex(bytes);
            if actual != entry.sha256 || bytes.len() as u64 != entry.bytes {
                return Err(ArchiveError::ImportIntegrityError(format!(
                    "{}: expected sha256 {}, found {actual}",
                    entry.name, entry.sha256
                )));
            }
        }
        Ok(manifest)
    }

    pub fn events(&self) -> Result<Vec<EventRecord>, ArchiveError> {
        let bytes = self.files.get("events.jsonl").ok_or_else(|| ArchiveError::ImportIntegrityError("no events".into()))?;
        Ok(parse_log(bytes.as_slice())?)
    }
}

/// Verifies an archive, replays it in isolation, checks that the replayed
/// state reproduces every derived file, and then merges its events into
/// `lab`. Records the lab already holds (same stream and offset) must be
/// identical and are skipped.
pub fn import_archive(lab: &mut Lab, archive: &Archive) -> Result<ExperimentId, ArchiveError> {
    let manifest = archive.verify()?;
    let records = archive.events()?;
    let scratch = Lab::replay(LabOptions { code_key: lab.options().code_key }, records.clone())?;
    let rederived = export_experiment(&scratch, &manifest.experiment_id)
        .map_err(|e| ArchiveError::ImportIntegrityError(format!("events do not contain the experiment: {e}")))?;
    for name in FILES {
        if rederived.files.get(name) != archive.files.get(name) {
            return Err(ArchiveError::ImportIntegrityError(format!("{name} does not match the replayed events")));
        }
    }

    let streams: BTreeSet<&str> = records.iter().map(|r| r.stream.as_str()).collect();
    let existing: HashMap<(&str, u64), &EventRecord> = lab
        .records()
        .iter()
        .filter(|r| streams.contains(r.stream.as_str()))
        .map(|r| ((r.stream.as_str(), r.offset), r))
        .collect();
    let mut fresh = Vec::new();
    for rec in &records {
        match existing.get(&(rec.stream.as_str(), rec.offset)) {
            Some(old) if *old == rec => {}
            Some(_) => return Err(ArchiveError::Conflict(format!("{} offset {} differs", rec.stream, rec.offset))),
            None => fresh.push(rec.clone()),
        }
    }
    drop(existing);
    if fresh.iter().any(|r| r.stream == experiment_stream(&manifest.experiment_id) && r.offset == 0)
        && lab.experiment(&manifest.experiment_id).is_ok()
    {
        return Err(ArchiveError::Conflict(format!("experiment {} already exists", manifest.experiment_id)));
    }
    lab.import_records(fresh)?;
    Ok(manifest.experiment_id)
}
