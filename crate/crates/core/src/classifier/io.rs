//! Binary model format.
//!
//! ```text
//! "UFWC" | version: u32
//! config:  dim u32 | lr f64 | word_ngrams u32 | min_count u64 | epochs u32
//!          | bucket u64 | seed u64 | minn u32 | maxn u32 | labels: u32 n, n × str
//! vocab:   u64 n, n × (str, count u64)
//! input:   rows u64 | cols u64 | rows*cols × f32
//! output:  rows u64 | cols u64 | rows*cols × f32
//! checksum u64
//! ```
//!
//! All integers and floats are little-endian; `str` is a u32 byte length
//! followed by UTF-8 bytes. The checksum is the first 8 bytes of the SHA-256
//! of everything before it, read as a little-endian u64.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ClassifierConfig, ClassifierError, ClassifierModel, Matrix, Parameters, VocabEntry, Vocabulary};

pub const MAGIC: &[u8; 4] = b"UFWC";
pub const FORMAT_VERSION: u32 = 1;

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> HashingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)
    }

    fn put_u32(&mut self, v: u32) -> std::io::Result<()> {
        self.put(&v.to_le_bytes())
    }

    fn put_u64(&mut self, v: u64) -> std::io::Result<()> {
        self.put(&v.to_le_bytes())
    }

    fn put_str(&mut self, s: &str) -> std::io::Result<()> {
        self.put_u32(s.len() as u32)?;
        self.put(s.as_bytes())
    }

    fn put_matrix(&mut self, m: &Matrix<f32>) -> std::io::Result<()> {
        self.put_u64(m.rows() as u64)?;
        self.put_u64(m.cols() as u64)?;
        let mut buf = Vec::with_capacity(4 * 4096);
        for chunk in m.as_slice().chunks(4096) {
            buf.clear();
            chunk.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            self.put(&buf)?;
        }
        Ok(())
    }
}

fn checksum(digest_bytes: &[u8]) -> u64 {
    u64::from_le_bytes(digest_bytes[..8].try_into().unwrap())
}

pub fn write_model<W: Write>(model: &ClassifierModel, out: W) -> Result<(), ClassifierError> {
    let mut w = HashingWriter {
        inner: out,
        hasher: Sha256::new(),
    };
    let cfg = model.config();
    w.put(MAGIC)?;
    w.put_u32(FORMAT_VERSION)?;
    w.put_u32(cfg.dim as u32)?;
    w.put(&cfg.lr.to_le_bytes())?;
    w.put_u32(cfg.word_ngrams as u32)?;
    w.put_u64(cfg.min_count)?;
    w.put_u32(cfg.epochs as u32)?;
    w.put_u64(cfg.bucket as u64)?;
    w.put_u64(cfg.seed)?;
    w.put_u32(cfg.minn as u32)?;
    w.put_u32(cfg.maxn as u32)?;
    w.put_u32(cfg.labels.len() as u32)?;
    for label in &cfg.labels {
        w.put_str(label)?;
    }
    w.put_u64(model.vocab().len() as u64)?;
    for e in model.vocab().entries() {
        w.put_str(&e.token)?;
        w.put_u64(e.count)?;
    }
    w.put_matrix(&model.params().input)?;
    w.put_matrix(&model.params().output)?;
    let sum = checksum(&w.hasher.finalize_reset());
    w.inner.write_all(&sum.to_le_bytes())?;
    w.inner.flush()?;
    Ok(())
}

pub fn save_model(model: &ClassifierModel, path: &Path) -> Result<(), ClassifierError> {
    let file = File::create(path)?;
    write_model(model, BufWriter::with_capacity(1 << 20, file))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::CorruptPayload(msg.into())
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("unexpected end of payload at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ClassifierError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, ClassifierError> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows usize"))
    }

    fn f64(&mut self) -> Result<f64, ClassifierError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ClassifierError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }

    fn matrix(&mut self) -> Result<Matrix<f32>, ClassifierError> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| corrupt("matrix size overflow"))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("matrix size overflow"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data).expect("length checked above"))
    }
}

/// Parses a complete model file image.
pub fn read_model(bytes: &[u8]) -> Result<ClassifierModel, ClassifierError> {
    if bytes.len() < MAGIC.len() {
        return Err(corrupt("file shorter than header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(ClassifierError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(corrupt("file shorter than header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ClassifierError::UnsupportedVersion(version));
    }
    if bytes.len() < 16 {
        return Err(corrupt("missing checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if checksum(&Sha256::digest(body)) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let mut c = Cursor { bytes: body, pos: 8 };
    let dim = c.u32()? as usize;
    let lr = c.f64()?;
    let word_ngrams = c.u32()? as usize;
    let min_count = c.u64()?;
    let epochs = c.u32()? as usize;
    let bucket = c.usize()?;
    let seed = c.u64()?;
    let minn = c.u32()? as usize;
    let maxn = c.u32()? as usize;
    let n_labels = c.u32()? as usize;
    let labels = (0..n_labels).map(|_| c.string()).collect::<Result<Vec<_>, _>>()?;
    let config = ClassifierConfig {
        dim,
        lr,
        word_ngrams,
        min_count,
        epochs,
        bucket,
        seed,
        labels,
        minn,
        maxn,
    };
    config.validate().map_err(|e| corrupt(e.to_string()))?;

    let vocab_len = c.usize()?;
    let mut entries = Vec::with_capacity(vocab_len.min(body.len()));
    for _ in 0..vocab_len {
        let token = c.string()?;
        let count = c.u64()?;
        entries.push(VocabEntry { token, count });
    }
    let vocab = Vocabulary::from_entries(entries)?;
    let input = c.matrix()?;
    let output = c.matrix()?;
    if c.pos != body.len() {
        return Err(corrupt("trailing bytes after output matrix"));
    }
    ClassifierModel::from_parts(config, vocab, Parameters { input, output })
}

pub fn load_model(path: &Path) -> Result<ClassifierModel, ClassifierError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train, LabeledExample};
    use crate::tokenize::Tokenizer;

    fn small_model() -> ClassifierModel {
        let data: Vec<_> = (0..30)
            .map(|i| LabeledExample {
                text: if i % 2 == 0 {
                    "red green blue"
                } else {
                    "one two three"
                }
                .into(),
                label: i % 2,
            })
            .collect();
        let cfg = ClassifierConfig {
            dim: 4,
            bucket: 32,
            min_count: 1,
            ..Default::default()
        };
        train(&data, &cfg, &Tokenizer::default()).unwrap()
    }

    fn image(model: &ClassifierModel) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(model, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let model = small_model();
        let bytes = image(&model);
        assert_eq!(&bytes[..4], b"UFWC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(read_model(&bytes).unwrap(), model);
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = image(&small_model());
        for cut in [5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(read_model(&bytes[..cut]), Err(ClassifierError::CorruptPayload(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut bytes = image(&small_model());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            read_model(&bytes),
            Err(ClassifierError::CorruptPayload(_))
        ));
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut bytes = image(&small_model());
        bytes[0] = b'X';
        assert!(matches!(read_model(&bytes), Err(ClassifierError::BadMagic)));
        let mut bytes = image(&small_model());
        bytes[4] = 9;
        assert!(matches!(
            read_model(&bytes),
            Err(ClassifierError::UnsupportedVersion(9))
        ));
    }
}
