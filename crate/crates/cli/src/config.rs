//! Shared config file.
//!
//! ```json
//! {
//!   "log_level": "info",
//!   "workers": 8,
//!   "seed": 0,
//!   "normalize": {"lowercase": true, "strip_diacritics": true,
//!                 "collapse_spaces": true, "max_consecutive_newlines": 2},
//!   "tokenizer": {"kind": "unicode_words", "vocab_path": null, "preserve_structural": true},
//!   "classifier": {"dim": 256, "lr": 0.1, "word_ngrams": 3, "min_count": 5,
//!                  "epochs": 3, "bucket": 2000000},
//!   "filter": {"threshold": 0.5, "length_edges": [0, 32, 64]},
//!   "verify": {"candidate_weight_bp": 3000, "n_epoch": 3, "rounding_mode": "as_written_max"},
//!   "report": {"margin": 0.1, "grouping": {"groups": [...], "overall": "Overall"}}
//! }
//! ```
//!
//! Every section is optional. A relative `vocab_path` resolves against the
//! config file's directory.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use ufw_core::classifier::ClassifierConfig;
use ufw_core::filter::default_length_edges;
use ufw_core::normalize::NormalizePolicy;
use ufw_core::tokenize::TokenizerSpec;
use ufw_core::verify::{MetricGrouping, PlanConfig, DEFAULT_MARGIN};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub log_level: Option<String>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub normalize: NormalizePolicy,
    pub tokenizer: TokenizerSpec,
    pub classifier: ClassifierConfig,
    pub filter: FilterSection,
    pub verify: PlanConfig,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub threshold: f64,
    pub length_edges: Vec<u64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            length_edges: default_length_edges(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub margin: f64,
    pub grouping: MetricGrouping,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            grouping: MetricGrouping::default(),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self =
            serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))?;
        if let (Some(vocab), Some(dir)) = (&config.tokenizer.vocab_path, path.parent()) {
            if vocab.is_relative() {
                config.tokenizer.vocab_path = Some(dir.join(vocab));
            }
        }
        Ok(config)
    }
}
