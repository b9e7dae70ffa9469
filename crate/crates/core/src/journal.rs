//! File-backed event log: one JSON record per line, in global order.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::events::EventRecord;
use crate::lab::{EventSink, Lab, LabOptions, ReplayError};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const KEY_FILE: &str = "lab.key";

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JournalError + '_ {
    move |source| JournalError::Io { path: path.to_owned(), source }
}

/// Parses a JSON-lines log. Blank lines are skipped; anything else that
/// does not parse is reported as a corrupt record.
pub fn parse_log(reader: impl BufRead) -> Result<Vec<EventRecord>, ReplayError> {
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ReplayError::CorruptRecord { index, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| ReplayError::CorruptRecord { index, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<EventRecord>, JournalError> {
    match File::open(path) {
        Ok(f) => Ok(parse_log(BufReader::new(f))?),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(io_err(path)(e)),
    }
}

pub fn encode_line(rec: &EventRecord) -> String {
    let mut line = serde_json::to_string(rec).expect("records serialize");
    line.push('\n');
    line
}

/// Appends each record as one line and flushes before returning.
pub struct Journal {
    file: File,
}

impl Journal {
    pub fn open(path: &Path) -> Result<Self, JournalError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(Self { file })
    }
}

impl EventSink for Journal {
    fn append(&mut self, rec: &EventRecord) -> io::Result<()> {
        self.file.write_all(encode_line(rec).as_bytes())?;
        self.file.flush()
    }
}

/// Reads (or creates) the lab key stored in `dir`.
fn load_key(dir: &Path) -> Result<u64, JournalError> {
    let path = dir.join(KEY_FILE);
    match fs::read_to_string(&path) {
        Ok(s) => s.trim().parse().map_err(|_| JournalError::Io {
            path: path.clone(),
            source: io::Error::new(io::ErrorKind::InvalidData, "lab key is not an unsigned integer"),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let key: u64 = rand::random();
            fs::write(&path, format!("{key}\n")).map_err(io_err(&path))?;
            Ok(key)
        }
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// Opens the lab stored under `dir`, replaying its log and attaching a
/// journal so later commands are persisted.
pub fn open_data_dir(dir: &Path) -> Result<Lab, JournalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let key = load_key(dir)?;
    let path = dir.join(EVENTS_FILE);
    let records = read_log(&path)?;
    let mut lab = Lab::replay(LabOptions { code_key: key }, records)?;
    lab.set_sink(Box::new(Journal::open(&path)?));
    Ok(lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_line_is_corrupt() {
        let text = "{\"stream\":\"experiment:x\",\"offset\":0,\"recorded_at\":1,\"event\":{\"kind\":\"ExperimentActivated\"}}\n{\"stream\":";
        let err = parse_log(text.as_bytes()).unwrap_err();
        assert!(matches!(err, ReplayError::CorruptRecord { index: 1, .. }));
    }

    #[test]
    fn empty_log_is_empty_state() {
        let lab = Lab::replay(LabOptions { code_key: 1 }, parse_log("".as_bytes()).unwrap()).unwrap();
        assert!(lab.records().is_empty());
        assert_eq!(lab.experiments().count(), 0);
    }
}
