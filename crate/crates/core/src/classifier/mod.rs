//! Supervised linear classifier over averaged hashed n-gram embeddings.
//!
//! A document is tokenized, mapped to feature rows (vocabulary unigrams plus
//! hashed word n-grams), and the mean of those rows is fed through a linear
//! layer and a softmax over the two quality labels.

mod data;
mod features;
mod io;
mod model;
mod train;
mod vocab;

pub use data::{parse_labeled_line, read_training_file, write_training_jsonl, LabeledExample};
pub use features::{featurize, fnv1a32, ngram_hash, token_hash, NGRAM_HASH_MULTIPLIER};
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use model::{
    example_gradient, softmax, ClassifierModel, ExampleGradient, Matrix, Parameters, Prediction, Real,
};
pub use train::{sgd_step, train, train_with_report, TrainReport};
pub use vocab::{build_vocab, VocabEntry, Vocabulary};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no token reaches min_count {min_count}")]
    EmptyVocabulary { min_count: u64 },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("malformed training record at line {line}: {reason}")]
    MalformedExample { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not a classifier model file")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt model payload: {0}")]
    CorruptPayload(String),
}

/// Training hyperparameters. Defaults follow the pipeline recipe: 256-dim
/// embeddings, lr 0.1, word n-grams up to 3, min count 5, 3 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub lr: f64,
    pub word_ngrams: usize,
    pub min_count: u64,
    pub epochs: usize,
    pub bucket: usize,
    pub seed: u64,
    /// Ordered label names; index 0 is the negative class, index 1 the positive class.
    pub labels: Vec<String>,
    /// Character subword n-gram bounds. Only 0 (disabled) is supported.
    pub minn: usize,
    pub maxn: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            lr: 0.1,
            word_ngrams: 3,
            min_count: 5,
            epochs: 3,
            bucket: 2_000_000,
            seed: 0,
            labels: vec!["negative".into(), "positive".into()],
            minn: 0,
            maxn: 0,
        }
    }
}

impl ClassifierConfig {
    pub const NEGATIVE: usize = 0;
    pub const POSITIVE: usize = 1;

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |msg: &str| Err(ClassifierError::InvalidConfig(msg.to_owned()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.word_ngrams == 0 {
            return bad("word_ngrams must be >= 1");
        }
        if self.min_count == 0 {
            return bad("min_count must be >= 1");
        }
        if self.bucket == 0 {
            return bad("bucket must be >= 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.labels.len() != 2 {
            return bad("exactly 2 labels are required");
        }
        if self.labels[0] == self.labels[1] || self.labels.iter().any(|l| l.is_empty()) {
            return bad("labels must be distinct and non-empty");
        }
        if self.minn != 0 || self.maxn != 0 {
            return bad("character subword n-grams are not supported (minn/maxn must be 0)");
        }
        Ok(())
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ClassifierConfig::default();
        cfg.validate().unwrap();
        assert_eq!(
            (cfg.dim, cfg.word_ngrams, cfg.min_count, cfg.epochs),
            (256, 3, 5, 3)
        );
        assert_eq!(cfg.lr, 0.1);
    }

    #[test]
    fn rejects_bad_values() {
        for cfg in [
            ClassifierConfig {
                dim: 0,
                ..Default::default()
            },
            ClassifierConfig {
                lr: 0.0,
                ..Default::default()
            },
            ClassifierConfig {
                labels: vec!["a".into()],
                ..Default::default()
            },
            ClassifierConfig {
                labels: vec!["a".into(), "a".into()],
                ..Default::default()
            },
            ClassifierConfig {
                maxn: 3,
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(ClassifierError::InvalidConfig(_))));
        }
    }
}
