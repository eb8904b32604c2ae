//! Verification planning and benchmark reports.
//!
//! Candidate data is checked by mixing it into a short annealing run of a
//! nearly-trained model. This module sizes that run, lays out the token
//! schedule, and compares the resulting benchmark scores with a baseline.
//! It never launches training.

mod plan;
mod report;

pub use plan::{
    compose_mixture, plan_anneal, plan_steps, round_steps, step_count, AnnealPlan, MixtureSchedule,
    PlanConfig, RoundingMode, ScheduleEntry, ShardTokens, Source, StepCount, BASIS_POINTS, CANONICAL_STEPS,
    MIN_STEPS, SHARE_TOLERANCE,
};
pub use report::{
    eval_report, EvalReport, EvalScores, GroupReport, MetricDiff, MetricGroup, MetricGrouping, ReportFormat,
    Verdict, CHINESE_METRICS, DEFAULT_MARGIN, ENGLISH_METRICS,
};

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::document::{open_shard, shard_name, ShardReader};
use crate::normalize::{normalize_str, NormalizePolicy};
use crate::tokenize::Tokenizer;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("candidate token count must be positive")]
    NonPositiveTokens,
    #[error("n_epoch must be within [3, 5], got {0}")]
    InvalidEpochs(u32),
    #[error("invalid plan configuration: {0}")]
    InvalidConfig(String),
    #[error("token arithmetic overflows 64 bits")]
    Overflow,
    #[error("plan needs {needed} default tokens, manifest has {available}")]
    InsufficientDefaultTokens { needed: u64, available: u64 },
    #[error("plan needs {needed} candidate tokens, more than {n_epoch} passes over {available}")]
    CandidateEpochOverflow {
        needed: u64,
        available: u64,
        n_epoch: u32,
    },
    #[error("run {run:?} is missing metrics {metrics:?}")]
    MissingMetric { run: String, metrics: Vec<String> },
    #[error("score {score} for {metric} is outside [0, 100]")]
    ScoreOutOfRange { metric: String, score: f64 },
    #[error("invalid metric grouping: {0}")]
    InvalidGrouping(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Token count of a JSONL shard under `tokenizer`, after normalization when
/// a policy is given. Malformed records are skipped.
pub fn count_shard_tokens(
    path: &Path,
    tokenizer: &Tokenizer,
    policy: Option<&NormalizePolicy>,
) -> Result<ShardTokens, VerifyError> {
    let name = shard_name(path);
    let mut tokens = 0u64;
    for record in ShardReader::new(open_shard(path)?, name.clone()) {
        if let Ok(doc) = record? {
            tokens += match policy {
                Some(p) => tokenizer.count_tokens(&normalize_str(&doc.text, p)),
                None => tokenizer.count_tokens(&doc.text),
            } as u64;
        }
    }
    Ok(ShardTokens { shard: name, tokens })
}
