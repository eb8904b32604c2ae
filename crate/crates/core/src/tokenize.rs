//! Tokenizers that produce the token stream the classifier featurizes.
//!
//! Two engines are available: `unicode_words`, which splits on Unicode word
//! boundaries and needs no external data, and `vocab_greedy`, which performs
//! greedy longest-match against a vocabulary file (one token per line).

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::fingerprint::sha256_hex;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary file not found: {0}")]
    VocabNotFound(PathBuf),
    #[error("malformed vocabulary at line {line}: {reason}")]
    VocabMalformed { line: usize, reason: String },
    #[error("vocab_greedy tokenizer requires vocab_path")]
    MissingVocabPath,
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    UnicodeWords,
    VocabGreedy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSpec {
    pub kind: TokenizerKind,
    pub vocab_path: Option<PathBuf>,
    pub preserve_structural: bool,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        Self {
            kind: TokenizerKind::UnicodeWords,
            vocab_path: None,
            preserve_structural: true,
        }
    }
}

#[derive(Debug, Clone)]
struct GreedyVocab {
    tokens: HashSet<Box<str>>,
    /// Longest entry, in chars; bounds the match window.
    max_chars: usize,
}

#[derive(Debug, Clone)]
enum Engine {
    UnicodeWords,
    VocabGreedy(GreedyVocab),
}

/// An immutable tokenizer. Cheap to share across threads by reference.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    engine: Engine,
    preserve_structural: bool,
    fingerprint: String,
}

#[inline]
fn is_structural(c: char) -> bool {
    matches!(c, '\n' | '\t' | '\r')
}

pub fn load_tokenizer(spec: &TokenizerSpec) -> Result<Tokenizer, TokenizerError> {
    match spec.kind {
        TokenizerKind::UnicodeWords => Ok(Tokenizer::unicode_words(spec.preserve_structural)),
        TokenizerKind::VocabGreedy => {
            let path = spec.vocab_path.as_ref().ok_or(TokenizerError::MissingVocabPath)?;
            let bytes = fs::read(path).map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => TokenizerError::VocabNotFound(path.clone()),
                _ => TokenizerError::Io {
                    path: path.clone(),
                    source: e,
                },
            })?;
            Tokenizer::from_vocab_bytes(&bytes, spec.preserve_structural)
        }
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::unicode_words(true)
    }
}

impl Tokenizer {
    pub fn unicode_words(preserve_structural: bool) -> Self {
        Self {
            engine: Engine::UnicodeWords,
            preserve_structural,
            fingerprint: sha256_hex(format!("unicode_words:{preserve_structural}").as_bytes()),
        }
    }

    /// Builds a greedy tokenizer from the contents of a vocabulary file.
    pub fn from_vocab_bytes(bytes: &[u8], preserve_structural: bool) -> Result<Self, TokenizerError> {
        let mut tokens = HashSet::new();
        let mut max_chars = 0;
        let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
        if !body.is_empty() {
            for (idx, raw) in body.split(|&b| b == b'\n').enumerate() {
                let line = idx + 1;
                let token = std::str::from_utf8(raw).map_err(|e| TokenizerError::VocabMalformed {
                    line,
                    reason: format!("invalid UTF-8 at byte {}", e.valid_up_to()),
                })?;
                if token.is_empty() {
                    return Err(TokenizerError::VocabMalformed {
                        line,
                        reason: "empty token".into(),
                    });
                }
                max_chars = max_chars.max(token.chars().count());
                if !tokens.insert(Box::from(token)) {
                    return Err(TokenizerError::VocabMalformed {
                        line,
                        reason: format!("duplicate token {token:?}"),
                    });
                }
            }
        }
        let mut provenance = sha256_hex(bytes);
        provenance.push_str(if preserve_structural {
            ":structural"
        } else {
            ":plain"
        });
        Ok(Self {
            engine: Engine::VocabGreedy(GreedyVocab { tokens, max_chars }),
            preserve_structural,
            fingerprint: sha256_hex(provenance.as_bytes()),
        })
    }

    pub fn from_vocab_file(path: &Path, preserve_structural: bool) -> Result<Self, TokenizerError> {
        load_tokenizer(&TokenizerSpec {
            kind: TokenizerKind::VocabGreedy,
            vocab_path: Some(path.to_path_buf()),
            preserve_structural,
        })
    }

    /// Provenance hash covering the engine, its vocabulary bytes and flags.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn kind(&self) -> TokenizerKind {
        match self.engine {
            Engine::UnicodeWords => TokenizerKind::UnicodeWords,
            Engine::VocabGreedy(_) => TokenizerKind::VocabGreedy,
        }
    }

    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        self.for_each_token(text, |t| out.push(t));
        out
    }

    /// Equals `self.tokenize(text).len()` without allocating the tokens.
    pub fn count_tokens(&self, text: &str) -> usize {
        let mut n = 0;
        self.for_each_token(text, |_| n += 1);
        n
    }

    pub fn for_each_token<'a>(&self, text: &'a str, mut emit: impl FnMut(&'a str)) {
        match &self.engine {
            Engine::UnicodeWords => self.words(text, &mut emit),
            Engine::VocabGreedy(vocab) => {
                if self.preserve_structural {
                    let mut start = 0;
                    for (i, c) in text.char_indices() {
                        if is_structural(c) {
                            vocab.segment(&text[start..i], &mut emit);
                            emit(&text[i..i + 1]);
                            start = i + 1;
                        }
                    }
                    vocab.segment(&text[start..], &mut emit);
                } else {
                    vocab.segment(text, &mut emit);
                }
            }
        }
    }

    fn words<'a>(&self, text: &'a str, emit: &mut impl FnMut(&'a str)) {
        let mut offset = 0;
        for segment in text.split_word_bounds() {
            let start = offset;
            offset += segment.len();
            if !segment.chars().all(char::is_whitespace) {
                emit(segment);
            } else if self.preserve_structural {
                for (i, c) in segment.char_indices() {
                    if is_structural(c) {
                        emit(&text[start + i..start + i + 1]);
                    }
                }
            }
        }
    }
}

impl GreedyVocab {
    fn segment<'a>(&self, text: &'a str, emit: &mut impl FnMut(&'a str)) {
        let mut pos = 0;
        // Char boundaries of the current match window, reused across positions.
        let mut ends: Vec<usize> = Vec::with_capacity(self.max_chars.max(1));
        while pos < text.len() {
            ends.clear();
            ends.extend(
                text[pos..]
                    .char_indices()
                    .take(self.max_chars.max(1))
                    .map(|(i, c)| pos + i + c.len_utf8()),
            );
            let end = ends
                .iter()
                .rev()
                .copied()
                .find(|&end| self.tokens.contains(&text[pos..end]))
                .unwrap_or(ends[0]);
            emit(&text[pos..end]);
            pos = end;
        }
    }
}
