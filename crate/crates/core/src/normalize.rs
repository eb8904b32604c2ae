//! Text preprocessing shared by classifier training and inference.
//!
//! The same [`NormalizePolicy`] must be applied on both sides, otherwise the
//! n-gram features seen at inference drift away from the ones the model was
//! trained on.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::char::canonical_combining_class;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("invalid UTF-8 at byte offset {position}")]
    InvalidUtf8 { position: usize },
    #[error("max_consecutive_newlines must be at least 1")]
    InvalidPolicy,
}

/// Preprocessing switches. All fields default to the pipeline settings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizePolicy {
    pub lowercase: bool,
    pub strip_diacritics: bool,
    pub collapse_spaces: bool,
    pub max_consecutive_newlines: usize,
}

impl Default for NormalizePolicy {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_diacritics: true,
            collapse_spaces: true,
            max_consecutive_newlines: 2,
        }
    }
}

impl NormalizePolicy {
    pub fn validate(&self) -> Result<(), NormalizeError> {
        if self.max_consecutive_newlines == 0 {
            return Err(NormalizeError::InvalidPolicy);
        }
        Ok(())
    }
}

/// Normalizes raw bytes, rejecting invalid UTF-8 instead of replacing it.
pub fn normalize_text(raw: &[u8], policy: &NormalizePolicy) -> Result<String, NormalizeError> {
    policy.validate()?;
    let text = std::str::from_utf8(raw).map_err(|e| NormalizeError::InvalidUtf8 {
        position: e.valid_up_to(),
    })?;
    Ok(normalize_str(text, policy))
}

/// Normalizes text that is already known to be valid UTF-8.
///
/// Steps run in a fixed order: full Unicode lowercasing, NFD decomposition
/// with removal of nonspacing marks, collapsing of U+0020 runs and finally
/// capping of `\n` runs. Lowercasing goes first because some uppercase
/// letters (e.g. U+0130) lowercase into a base letter plus a combining mark.
///
/// A `max_consecutive_newlines` of zero is treated as 1.
pub fn normalize_str(text: &str, policy: &NormalizePolicy) -> String {
    let lowered;
    let needs_lowering = !text.is_ascii() || text.bytes().any(|b| b.is_ascii_uppercase());
    let text = if policy.lowercase && needs_lowering {
        lowered = text.to_lowercase();
        lowered.as_str()
    } else {
        text
    };

    let max_newlines = policy.max_consecutive_newlines.max(1);
    let mut out = String::with_capacity(text.len());
    let mut spaces = 0usize;
    let mut newlines = 0usize;
    let mut push = |c: char, out: &mut String| {
        match c {
            ' ' if policy.collapse_spaces => {
                spaces += 1;
                newlines = 0;
                if spaces > 1 {
                    return;
                }
            }
            '\n' => {
                newlines += 1;
                spaces = 0;
                if newlines > max_newlines {
                    return;
                }
            }
            _ => {
                spaces = 0;
                newlines = 0;
            }
        }
        out.push(c);
    };

    if policy.strip_diacritics {
        if text.is_ascii() {
            // ASCII has no decompositions and no marks.
            text.chars().for_each(|c| push(c, &mut out));
        } else {
            let stripped: String = text.nfd().filter(|&c| !is_nonspacing_mark(c)).collect();
            if stripped.chars().any(|c| canonical_combining_class(c) != 0) {
                // Dropping a mark can bring two combining characters together
                // out of canonical order; reorder so the result is a fixed point.
                stripped.nfd().for_each(|c| push(c, &mut out));
            } else {
                stripped.chars().for_each(|c| push(c, &mut out));
            }
        }
    } else {
        text.chars().for_each(|c| push(c, &mut out));
    }
    out
}

#[inline]
fn is_nonspacing_mark(c: char) -> bool {
    !c.is_ascii() && get_general_category(c) == GeneralCategory::NonspacingMark
}
