//! Append-only JSON-lines journal with a SHA-256 checksum per entry.
//!
//! Each line is `{"checksum":"<hex>","body":{...}}` where the checksum covers
//! the exact bytes of `body`. An invalid final line is a torn write and is
//! ignored; it is cut off before the next append.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{Event, PipelineError};
use crate::fingerprint::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    checksum: String,
    #[serde(borrow)]
    body: &'a RawValue,
}

fn parse_line(line: &[u8]) -> Option<Entry> {
    let parsed: Line = serde_json::from_slice(line).ok()?;
    if sha256_hex(parsed.body.get().as_bytes()) != parsed.checksum {
        return None;
    }
    serde_json::from_str(parsed.body.get()).ok()
}

/// Journal contents as read from disk.
#[derive(Debug, Clone)]
pub struct JournalRead {
    pub entries: Vec<Entry>,
    /// Byte length of the valid prefix.
    pub valid_len: u64,
    pub torn_tail: bool,
}

pub fn read_journal(path: &Path) -> Result<JournalRead, PipelineError> {
    let bytes = std::fs::read(path)
        .map_err(|e| PipelineError::JournalUnreadable(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    let mut valid_len = 0u64;
    let mut pos = 0usize;
    while pos < bytes.len() {
        let (line, next) = match bytes[pos..].iter().position(|&b| b == b'\n') {
            Some(i) => (&bytes[pos..pos + i], pos + i + 1),
            None => (&bytes[pos..], bytes.len()),
        };
        let complete = next <= bytes.len() && bytes.get(next - 1) == Some(&b'\n');
        let entry = if complete { parse_line(line) } else { None };
        match entry {
            Some(e) if e.seq == entries.len() as u64 => {
                entries.push(e);
                valid_len = next as u64;
            }
            Some(e) => {
                return Err(PipelineError::JournalUnreadable(format!(
                    "entry {} has sequence number {}",
                    entries.len(),
                    e.seq
                )))
            }
            None if next == bytes.len() => {
                return Ok(JournalRead {
                    entries,
                    valid_len,
                    torn_tail: true,
                })
            }
            None => {
                return Err(PipelineError::JournalUnreadable(format!(
                    "entry {} fails to parse or to match its checksum",
                    entries.len()
                )))
            }
        }
        pos = next;
    }
    Ok(JournalRead {
        entries,
        valid_len,
        torn_tail: false,
    })
}

/// Serialized journal line for `entry`, newline included.
pub fn encode_entry(entry: &Entry) -> Vec<u8> {
    let body = serde_json::to_string(entry).expect("entry serializes");
    let mut out = serde_json::to_vec(&Line {
        checksum: sha256_hex(body.as_bytes()),
        body: &RawValue::from_string(body).expect("valid json"),
    })
    .expect("line serializes");
    out.push(b'\n');
    out
}

/// Writer positioned after the last valid entry.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    next_seq: u64,
    valid_len: u64,
}

impl Journal {
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create_new(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_owned(),
            file,
            next_seq: 0,
            valid_len: 0,
        })
    }

    /// Opens for appending and cuts off a torn tail, if any.
    pub fn open(path: &Path, read: &JournalRead) -> io::Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        if file.metadata()?.len() != read.valid_len {
            file.set_len(read.valid_len)?;
            file.sync_data()?;
        }
        Ok(Self {
            path: path.to_owned(),
            file,
            next_seq: read.entries.len() as u64,
            valid_len: read.valid_len,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends and syncs one entry, dropping any torn tail first.
    pub fn append(&mut self, event: Event) -> io::Result<Entry> {
        if self.file.metadata()?.len() != self.valid_len {
            self.file.set_len(self.valid_len)?;
        }
        let entry = Entry {
            seq: self.next_seq,
            event,
        };
        let line = encode_entry(&entry);
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.next_seq += 1;
        self.valid_len += line.len() as u64;
        Ok(entry)
    }
}
