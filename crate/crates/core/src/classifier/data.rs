use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, ClassifierError};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledExample {
    pub text: String,
    /// Index into `ClassifierConfig::labels`.
    pub label: usize,
}

const LABEL_PREFIX: &str = "__label__";

#[derive(Serialize, Deserialize)]
struct LabeledRecord<'a> {
    label: std::borrow::Cow<'a, str>,
    text: std::borrow::Cow<'a, str>,
}

/// Parses `__label__<name> <text>`. The text is everything after the first space.
pub fn parse_labeled_line(line: &str, config: &ClassifierConfig) -> Result<LabeledExample, String> {
    let rest = line
        .strip_prefix(LABEL_PREFIX)
        .ok_or_else(|| format!("line does not start with {LABEL_PREFIX}"))?;
    let (name, text) = rest.split_once(' ').unwrap_or((rest, ""));
    let label = config
        .label_index(name)
        .ok_or_else(|| format!("unknown label {name:?}"))?;
    Ok(LabeledExample {
        text: text.to_owned(),
        label,
    })
}

/// Reads training examples, one per line, in either the `__label__` format or
/// as JSON objects carrying `label` and `text` keys. Blank lines are skipped.
pub fn read_training_file<R: BufRead>(
    reader: R,
    config: &ClassifierConfig,
) -> Result<Vec<LabeledExample>, ClassifierError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| ClassifierError::MalformedExample {
            line: idx + 1,
            reason,
        };
        let example = if line.starts_with('{') {
            let rec: LabeledRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            let label = config
                .label_index(&rec.label)
                .ok_or_else(|| ClassifierError::UnknownLabel(rec.label.to_string()))?;
            LabeledExample {
                text: rec.text.into_owned(),
                label,
            }
        } else {
            parse_labeled_line(line, config).map_err(malformed)?
        };
        out.push(example);
    }
    Ok(out)
}

/// Writes examples as JSON lines (`{"label": .., "text": ..}`), which keeps
/// newlines and tabs inside the text intact.
pub fn write_training_jsonl<W: Write>(
    examples: &[LabeledExample],
    config: &ClassifierConfig,
    mut out: W,
) -> std::io::Result<()> {
    for ex in examples {
        let rec = LabeledRecord {
            label: config.labels[ex.label].as_str().into(),
            text: ex.text.as_str().into(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
