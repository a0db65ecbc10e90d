//! Append-only JSONL event journal and state snapshots.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::state::{Event, PipelineState};
use crate::ServiceError;

pub const JOURNAL_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalLine {
    pub seq: u64,
    pub event: Event,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub state: PipelineState,
}

/// What was found on disk when the journal was opened.
#[derive(Debug, Default)]
pub struct Recovered {
    pub lines: Vec<JournalLine>,
    /// Bytes of an incomplete final line that were cut off.
    pub torn_bytes: usize,
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    last_seq: u64,
    fsync: bool,
}

/// Splits journal bytes into parsed lines. An unterminated final line is a
/// torn write and is reported, not parsed; any other bad line is corruption.
pub fn parse_journal(bytes: &[u8]) -> Result<(Vec<JournalLine>, usize), ServiceError> {
    let complete = match bytes.iter().rposition(|b| *b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    let mut lines = Vec::new();
    for (i, raw) in bytes[..complete].split(|b| *b == b'\n').enumerate() {
        if raw.is_empty() {
            continue;
        }
        let corrupt = |reason: String| ServiceError::Corrupt { line: i + 1, reason };
        let text = std::str::from_utf8(raw).map_err(|e| corrupt(e.to_string()))?;
        let line: JournalLine = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        let expected = lines.last().map_or(1, |l: &JournalLine| l.seq + 1);
        if line.seq != expected {
            return Err(corrupt(format!("sequence {} where {expected} was expected", line.seq)));
        }
        lines.push(line);
    }
    Ok((lines, bytes.len() - complete))
}

impl Journal {
    /// Opens or creates the journal in `dir`, truncating a torn final line.
    pub fn open(dir: &Path, fsync: bool) -> Result<(Self, Recovered), ServiceError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(JOURNAL_FILE);
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(&path)?.read_to_end(&mut bytes)?;
        }
        let (lines, torn_bytes) = parse_journal(&bytes)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if torn_bytes > 0 {
            tracing::warn!(bytes = torn_bytes, "dropping torn journal tail");
            file.set_len((bytes.len() - torn_bytes) as u64)?;
            file.sync_all()?;
        }
        let last_seq = lines.last().map_or(0, |l| l.seq);
        Ok((Self { path, file, last_seq, fsync }, Recovered { lines, torn_bytes }))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Writes one event as a single line and returns its sequence number.
    pub fn append(&mut self, event: &Event) -> Result<u64, ServiceError> {
        let seq = self.last_seq + 1;
        let mut line = serde_json::to_vec(&JournalLine { seq, event: event.clone() })
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        self.last_seq = seq;
        Ok(seq)
    }
}

pub fn write_snapshot(dir: &Path, seq: u64, state: &PipelineState) -> Result<(), ServiceError> {
    #[derive(Serialize)]
    struct Borrowed<'a> {
        seq: u64,
        state: &'a PipelineState,
    }
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let mut f = File::create(&tmp)?;
    serde_json::to_writer(&mut f, &Borrowed { seq, state }).map_err(|e| ServiceError::Internal(e.to_string()))?;
    f.sync_all()?;
    std::fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
    Ok(())
}

/// A snapshot that cannot be read is ignored; the journal alone suffices.
pub fn read_snapshot(dir: &Path) -> Option<Snapshot> {
    let text = std::fs::read_to_string(dir.join(SNAPSHOT_FILE)).ok()?;
    match serde_json::from_str(&text) {
        Ok(s) => Some(s),
        Err(e) => {
            tracing::warn!(error = %e, "ignoring unreadable snapshot");
            None
        }
    }
}
