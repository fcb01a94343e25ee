//! Append-only results journal.
//!
//! Same CSV dialect as plans. Header:
//! `seq,kind,session_id,partiNumber,trialNumber,timestamp,<output columns...>`.
//! Every line is appended and synced before the plan file is touched, so
//! the journal doubles as a redo log for crash recovery.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::{self, tokenize};
use crate::error::{Error, Result};
use crate::fault;
use crate::plan::{is_blank, PARTICIPANT_COLUMN, TRIAL_COLUMN};

use super::atomic::sync_parent;

const FIXED_COLUMNS: [&str; 6] = [
    "seq",
    "kind",
    "session_id",
    PARTICIPANT_COLUMN,
    TRIAL_COLUMN,
    "timestamp",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryKind {
    SessionStart,
    Result,
    Skip,
    SessionEnd,
    /// A stale lock left by a dead process was taken over.
    LockStolen,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::SessionStart => "SESSION_START",
            EntryKind::Result => "RESULT",
            EntryKind::Skip => "SKIP",
            EntryKind::SessionEnd => "SESSION_END",
            EntryKind::LockStolen => "LOCK_STOLEN",
        }
    }

    /// RESULT and SKIP carry a trial and its outputs; the rest are markers.
    pub fn is_trial(self) -> bool {
        matches!(self, EntryKind::Result | EntryKind::Skip)
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntryKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "SESSION_START" => EntryKind::SessionStart,
            "RESULT" => EntryKind::Result,
            "SKIP" => EntryKind::Skip,
            "SESSION_END" => EntryKind::SessionEnd,
            "LOCK_STOLEN" => EntryKind::LockStolen,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalEntry {
    pub seq: u64,
    pub kind: EntryKind,
    pub session_id: String,
    pub participant: u64,
    pub trial_number: Option<u64>,
    /// `(output column, value)`; empty for markers.
    pub outputs: Vec<(String, String)>,
    /// ISO-8601 UTC with milliseconds. Informational only.
    pub timestamp: String,
}

impl JournalEntry {
    pub fn output_values(&self) -> Vec<String> {
        self.outputs.iter().map(|(_, v)| v.clone()).collect()
    }
}

pub fn now_timestamp() -> String {
    chrono::Utc::now()
        .format("%Y-%m-%dT%H:%M:%S%.3fZ")
        .to_string()
}

fn header_line(output_columns: &[String]) -> String {
    let mut out = String::new();
    codec::write_record(
        &mut out,
        FIXED_COLUMNS
            .iter()
            .copied()
            .chain(output_columns.iter().map(String::as_str)),
    );
    out
}

fn entry_line(entry: &JournalEntry, output_columns: &[String]) -> String {
    let seq = entry.seq.to_string();
    let participant = entry.participant.to_string();
    let trial = entry
        .trial_number
        .map(|t| t.to_string())
        .unwrap_or_default();
    let values: Vec<&str> = output_columns
        .iter()
        .map(|name| {
            entry
                .outputs
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.as_str())
                .unwrap_or("")
        })
        .collect();
    let mut out = String::new();
    codec::write_record(
        &mut out,
        [
            seq.as_str(),
            entry.kind.as_str(),
            &entry.session_id,
            &participant,
            &trial,
            &entry.timestamp,
        ]
        .into_iter()
        .chain(values),
    );
    out
}

/// Appends one entry and syncs it. A missing or empty file is created with
/// its header first.
pub fn append_journal(path: &Path, output_columns: &[String], entry: &JournalEntry) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::storage(path, e))?;
    let fresh = file.metadata().map_err(|e| Error::storage(path, e))?.len() == 0;
    let line = entry_line(entry, output_columns);
    let mut buf = if fresh {
        header_line(output_columns)
    } else {
        String::new()
    };

    if fault::armed("mid_journal") {
        let mut partial = buf.into_bytes();
        partial.extend_from_slice(&line.as_bytes()[..line.len() / 2]);
        let _ = file.write_all(&partial);
        let _ = file.sync_all();
        fault::crash();
    }
    buf.push_str(&line);
    file.write_all(buf.as_bytes())
        .map_err(|e| Error::storage(path, e))?;
    file.sync_data().map_err(|e| Error::storage(path, e))?;
    if fresh {
        sync_parent(path);
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JournalContents {
    /// Output column names from the header; empty when the file has none.
    pub output_columns: Vec<String>,
    pub entries: Vec<JournalEntry>,
    /// The file ends in a partial line, which was ignored.
    pub torn_tail: bool,
    /// Length of the file up to the end of the last complete line.
    pub clean_len: u64,
}

fn malformed(line: usize, detail: impl Into<String>) -> Error {
    Error::MalformedJournal {
        line,
        detail: detail.into(),
    }
}

/// Reads every complete line. A trailing partial line is reported through
/// `torn_tail` and skipped; damage anywhere earlier is an error. A missing
/// file reads as empty.
pub fn read_journal(path: &Path) -> Result<JournalContents> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(JournalContents::default()),
        Err(e) => return Err(Error::storage(path, e)),
    };
    parse_journal(&bytes)
}

pub fn parse_journal(bytes: &[u8]) -> Result<JournalContents> {
    let body = codec::strip_bom(bytes);
    let offset = (bytes.len() - body.len()) as u64;
    let tokens = tokenize(body, None).map_err(|e| match e {
        Error::MalformedCsv { line, detail } => malformed(line, detail),
        other => other,
    })?;

    let complete: Vec<_> = tokens.records.iter().filter(|r| r.terminated).collect();
    let clean_end = complete.last().map_or(0, |r| r.end);
    let torn_tail = clean_end < body.len();

    let mut contents = JournalContents {
        torn_tail,
        clean_len: offset + clean_end as u64,
        ..Default::default()
    };
    let mut records = complete.into_iter();
    let Some(header) = records.next() else {
        contents.clean_len = 0;
        return Ok(contents);
    };
    let header_cells = header
        .decode()
        .map_err(|_| malformed(header.line, "invalid UTF-8 in header"))?;
    if header_cells.len() < FIXED_COLUMNS.len()
        || header_cells[..FIXED_COLUMNS.len()] != FIXED_COLUMNS
    {
        return Err(malformed(header.line, "unexpected journal header"));
    }
    contents.output_columns = header_cells[FIXED_COLUMNS.len()..].to_vec();
    let width = header_cells.len();

    let mut last_seq = None;
    for record in records {
        let line = record.line;
        let cells = record
            .decode()
            .map_err(|_| malformed(line, "invalid UTF-8"))?;
        if cells.len() != width {
            return Err(malformed(
                line,
                format!("{} cells, header has {width}", cells.len()),
            ));
        }
        let seq: u64 = cells[0]
            .parse()
            .map_err(|_| malformed(line, format!("bad sequence number {:?}", cells[0])))?;
        if last_seq.is_some_and(|prev| seq <= prev) {
            return Err(malformed(
                line,
                format!("sequence number {seq} does not increase"),
            ));
        }
        last_seq = Some(seq);
        let kind: EntryKind = cells[1]
            .parse()
            .map_err(|_| malformed(line, format!("unknown entry kind {:?}", cells[1])))?;
        let participant: u64 = cells[3]
            .parse()
            .map_err(|_| malformed(line, format!("bad partiNumber {:?}", cells[3])))?;
        let (trial_number, outputs) = if kind.is_trial() {
            let trial: u64 = cells[4]
                .parse()
                .map_err(|_| malformed(line, format!("bad trialNumber {:?}", cells[4])))?;
            let outputs: Vec<(String, String)> = contents
                .output_columns
                .iter()
                .cloned()
                .zip(cells[FIXED_COLUMNS.len()..].iter().cloned())
                .collect();
            if let Some((name, _)) = outputs.iter().find(|(_, v)| is_blank(v)) {
                return Err(malformed(
                    line,
                    format!("{kind} entry has empty output {name:?}"),
                ));
            }
            (Some(trial), outputs)
        } else {
            (None, Vec::new())
        };
        contents.entries.push(JournalEntry {
            seq,
            kind,
            session_id: cells[2].clone(),
            participant,
            trial_number,
            outputs,
            timestamp: cells[5].clone(),
        });
    }
    Ok(contents)
}

/// Cuts a torn trailing line off so later appends start on a fresh line.
pub fn truncate_torn_tail(path: &Path, contents: &JournalContents) -> Result<()> {
    if !contents.torn_tail {
        return Ok(());
    }
    let file = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| Error::storage(path, e))?;
    file.set_len(contents.clean_len)
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::storage(path, e))
}

/// Open handle on a journal file that hands out sequence numbers.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    output_columns: Vec<String>,
    next_seq: u64,
}

impl Journal {
    /// Opens (without creating) the journal at `path`, repairing a torn
    /// tail. An existing header must list exactly `output_columns`.
    pub fn open(path: impl Into<PathBuf>, output_columns: &[String]) -> Result<Self> {
        let path = path.into();
        let contents = read_journal(&path)?;
        if !contents.output_columns.is_empty() && contents.output_columns != output_columns {
            return Err(malformed(
                1,
                format!(
                    "journal output columns {:?} do not match plan output columns {:?}",
                    contents.output_columns, output_columns
                ),
            ));
        }
        truncate_torn_tail(&path, &contents)?;
        let next_seq = contents.entries.last().map_or(1, |e| e.seq + 1);
        Ok(Self {
            path,
            output_columns: output_columns.to_vec(),
            next_seq,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(
        &mut self,
        kind: EntryKind,
        session_id: &str,
        participant: u64,
        trial_number: Option<u64>,
        values: &[String],
    ) -> Result<JournalEntry> {
        let entry = JournalEntry {
            seq: self.next_seq,
            kind,
            session_id: session_id.to_string(),
            participant,
            trial_number,
            outputs: self
                .output_columns
                .iter()
                .cloned()
                .zip(values.iter().cloned())
                .collect(),
            timestamp: now_timestamp(),
        };
        append_journal(&self.path, &self.output_columns, &entry)?;
        self.next_seq += 1;
        Ok(entry)
    }
}
