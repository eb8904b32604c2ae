//! Corpus records and JSONL shard reading.
//!
//! A shard is a JSONL file, optionally gzip-compressed (`.gz` suffix), with
//! one document per line. `text` is required; `id`, `source` and `meta` are
//! optional. Missing ids are synthesized as `<shard-name>:<line-number>`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source: None,
            meta: None,
        }
    }
}

#[derive(Deserialize)]
struct RawDocument {
    id: Option<String>,
    text: String,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    meta: Option<BTreeMap<String, String>>,
}

/// One line of a shard that could not be turned into a [`Document`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

/// Parses a single JSONL line; `line` is 1-based.
pub fn parse_document_line(raw: &[u8], shard_name: &str, line: usize) -> Result<Document, MalformedLine> {
    let malformed = |reason: String| MalformedLine { line, reason };
    let text = std::str::from_utf8(raw)
        .map_err(|e| malformed(format!("invalid UTF-8 at byte {}", e.valid_up_to())))?;
    let rec: RawDocument = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    Ok(Document {
        id: rec.id.unwrap_or_else(|| format!("{shard_name}:{line}")),
        text: rec.text,
        source: rec.source,
        meta: rec.meta,
    })
}

pub fn shard_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Opens a shard for line reading, transparently decompressing `.gz` files.
pub fn open_shard(path: &Path) -> io::Result<Box<dyn BufRead + Send>> {
    let file = File::open(path)?;
    let is_gz = path.extension().is_some_and(|e| e == "gz");
    Ok(if is_gz {
        Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::with_capacity(1 << 16, file))
    })
}

/// Streams documents from a reader. Blank lines are ignored; I/O errors abort
/// the iteration, malformed lines are yielded as `Err` and iteration continues.
pub struct ShardReader<R> {
    reader: R,
    name: String,
    line: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> ShardReader<R> {
    pub fn new(reader: R, name: impl Into<String>) -> Self {
        Self {
            reader,
            name: name.into(),
            line: 0,
            buf: Vec::new(),
        }
    }
}

impl<R: BufRead> Iterator for ShardReader<R> {
    type Item = io::Result<Result<Document, MalformedLine>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e)),
            }
            self.line += 1;
            let mut raw = self.buf.as_slice();
            raw = raw.strip_suffix(b"\n").unwrap_or(raw);
            raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            if raw.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            return Some(Ok(parse_document_line(raw, &self.name, self.line)));
        }
    }
}

pub fn read_shard(path: &Path) -> io::Result<ShardReader<Box<dyn BufRead + Send>>> {
    Ok(ShardReader::new(open_shard(path)?, shard_name(path)))
}

/// Reads every well-formed document of a shard, failing on the first malformed line.
pub fn read_documents(path: &Path) -> io::Result<Vec<Document>> {
    read_shard(path)?
        .map(|r| {
            r.and_then(|doc| {
                doc.map_err(|m| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{}:{}: {}", path.display(), m.line, m.reason),
                    )
                })
            })
        })
        .collect()
}

pub fn write_document<W: Write>(out: &mut W, doc: &Document) -> io::Result<()> {
    serde_json::to_writer(&mut *out, doc)?;
    out.write_all(b"\n")
}

pub fn write_documents(path: &Path, docs: &[Document]) -> io::Result<()> {
    let mut out = io::BufWriter::new(File::create(path)?);
    for d in docs {
        write_document(&mut out, d)?;
    }
    out.flush()
}

/// Reads a file fully, decompressing `.gz`.
pub fn read_all(path: &Path) -> io::Result<Vec<u8>> {
    let mut bytes = Vec::new();
    open_shard(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}
