//! Multi-round filtering workflow with a crash-safe journal.
//!
//! A round assembles a training set from the seed pool, trains a classifier,
//! scores a seeded sample of the raw pool and plans the verification run for
//! the kept part. It then waits for benchmark scores, which arrive as files.
//! An improved verdict before the last round folds the scored sample back
//! into the pool as two inferred categories and starts the next round.
//!
//! ```text
//! <run>/config.json
//! <run>/journal.jsonl
//! <run>/rounds/<n>/{training_set.jsonl, model.ufwc, sample_scores.jsonl,
//!                   anneal_plan.json, eval_report.json}
//! <run>/.lock
//! ```
//!
//! Relative paths in the config resolve against the run directory. Every
//! artifact is written before the journal entry that references it, and
//! each entry records the artifact's SHA-256.

mod journal;

pub use journal::{encode_entry, read_journal, Entry, Journal, JournalRead};

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    read_model, read_training_file, train, write_model, write_training_jsonl, ClassifierConfig,
    ClassifierError,
};
use crate::document::{open_shard, shard_name, Document, ShardReader};
use crate::filter::Scorer;
use crate::fingerprint::{file_sha256_hex, sha256_hex};
use crate::normalize::{normalize_str, NormalizePolicy};
use crate::seedpool::{Polarity, PoolStore, SeedCategory, SeedPoolError};
use crate::tokenize::{load_tokenizer, Tokenizer, TokenizerError, TokenizerSpec};
use crate::verify::{
    eval_report, plan_anneal, EvalScores, MetricGrouping, PlanConfig, ShardTokens, VerifyError,
    DEFAULT_MARGIN,
};

pub const CONFIG_FILE: &str = "config.json";
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("round {round}: {source}")]
    InRound {
        round: u32,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("run state is corrupt: {0}")]
    StateCorrupt(String),
    #[error("journal is unreadable: {0}")]
    JournalUnreadable(String),
    #[error("run directory {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("run directory {0} is already initialized")]
    AlreadyInitialized(PathBuf),
    #[error("cannot {action} while {status}")]
    InvalidTransition { status: Status, action: &'static str },
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    SeedPool(#[from] SeedPoolError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn in_round(round: u32) -> impl FnOnce(PipelineError) -> PipelineError {
    move |e| match e {
        e @ PipelineError::InRound { .. } => e,
        e => PipelineError::InRound {
            round,
            source: Box::new(e),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_rounds: u32,
    /// Raw documents drawn for verification scoring each round.
    pub sample_size: usize,
    pub target_training_set: usize,
    pub balance: f64,
    pub threshold: f64,
    /// Verdict margin in percentage points.
    pub margin: f64,
    pub seed: u64,
    pub pool_dir: PathBuf,
    /// JSONL shards of the raw pool the verification sample is drawn from.
    pub raw_shards: Vec<PathBuf>,
    /// Default-mixture shards for the annealing plan.
    pub default_manifest: Vec<ShardTokens>,
    pub normalize: NormalizePolicy,
    pub tokenizer: TokenizerSpec,
    pub classifier: ClassifierConfig,
    pub verify: PlanConfig,
    pub grouping: MetricGrouping,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_rounds: 2,
            sample_size: 10_000,
            target_training_set: 600_000,
            balance: 0.5,
            threshold: 0.5,
            margin: DEFAULT_MARGIN,
            seed: 0,
            pool_dir: PathBuf::from("pool"),
            raw_shards: Vec::new(),
            default_manifest: Vec::new(),
            normalize: NormalizePolicy::default(),
            tokenizer: TokenizerSpec::default(),
            classifier: ClassifierConfig::default(),
            verify: PlanConfig::default(),
            grouping: MetricGrouping::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.max_rounds < 1 {
            return bad("max_rounds must be at least 1".into());
        }
        if self.sample_size == 0 {
            return bad("sample_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must be within [0, 1], got {}", self.threshold));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        self.normalize
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.classifier.validate()?;
        self.verify.validate()?;
        self.grouping.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingTrainingSet,
    AwaitingClassifier,
    AwaitingVerification,
    VerdictReady,
    Promoted,
    Rejected,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("status serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Promoted | Status::Rejected)
    }
}

/// A file in the run directory and its SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Init {
        run_id: String,
        config_sha256: String,
        max_rounds: u32,
        pool_version: u64,
    },
    TrainingSet {
        round: u32,
        training_set: Artifact,
    },
    Classifier {
        round: u32,
        model: Artifact,
        sample_scores: Artifact,
        anneal_plan: Artifact,
    },
    ReportIngested {
        round: u32,
        eval_report: Artifact,
        improved: bool,
    },
    NextRound {
        round: u32,
        pool_version: u64,
    },
    Promoted {
        round: u32,
    },
    Rejected {
        round: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub pool_version: u64,
    pub training_set: Option<Artifact>,
    pub model: Option<Artifact>,
    pub sample_scores: Option<Artifact>,
    pub anneal_plan: Option<Artifact>,
    pub eval_report: Option<Artifact>,
    pub improved: Option<bool>,
}

impl RoundRecord {
    fn new(round: u32, pool_version: u64) -> Self {
        Self {
            round,
            pool_version,
            training_set: None,
            model: None,
            sample_scores: None,
            anneal_plan: None,
            eval_report: None,
            improved: None,
        }
    }

    fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        [
            &self.training_set,
            &self.model,
            &self.sample_scores,
            &self.anneal_plan,
            &self.eval_report,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Promotion {
    pub round: u32,
    pub model_sha256: String,
}

/// State reconstructed from the journal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub config_sha256: String,
    pub max_rounds: u32,
    pub round: u32,
    pub status: Status,
    pub rounds: Vec<RoundRecord>,
    pub promoted: Option<Promotion>,
    pub journal_entries: u64,
}

impl RunState {
    pub fn current(&self) -> &RoundRecord {
        self.rounds.last().expect("a run always has a round")
    }

    fn current_mut(&mut self) -> &mut RoundRecord {
        self.rounds.last_mut().expect("a run always has a round")
    }

    pub fn pool_version(&self) -> u64 {
        self.current().pool_version
    }

    fn last_improved_round(&self) -> Option<u32> {
        self.rounds
            .iter()
            .rev()
            .find(|r| r.improved == Some(true))
            .map(|r| r.round)
    }

    /// Replays journal entries; any out-of-order event is corruption.
    pub fn replay(entries: &[Entry]) -> Result<Self, PipelineError> {
        let mut iter = entries.iter();
        let mut state = match iter.next().map(|e| &e.event) {
            Some(Event::Init {
                run_id,
                config_sha256,
                max_rounds,
                pool_version,
            }) => RunState {
                run_id: run_id.clone(),
                config_sha256: config_sha256.clone(),
                max_rounds: *max_rounds,
                round: 1,
                status: Status::AwaitingTrainingSet,
                rounds: vec![RoundRecord::new(1, *pool_version)],
                promoted: None,
                journal_entries: 1,
            },
            Some(other) => {
                return Err(PipelineError::StateCorrupt(format!(
                    "journal starts with {other:?}"
                )))
            }
            None => return Err(PipelineError::JournalUnreadable("journal has no entries".into())),
        };
        for entry in iter {
            state
                .apply(&entry.event)
                .map_err(|m| PipelineError::StateCorrupt(format!("entry {}: {m}", entry.seq)))?;
            state.journal_entries += 1;
        }
        Ok(state)
    }

    fn apply(&mut self, event: &Event) -> Result<(), String> {
        let round = match event {
            Event::Init { .. } => return Err("duplicate init".into()),
            Event::TrainingSet { round, .. }
            | Event::Classifier { round, .. }
            | Event::ReportIngested { round, .. }
            | Event::Promoted { round }
            | Event::Rejected { round } => *round,
            Event::NextRound { round, .. } => round.wrapping_sub(1),
        };
        if round != self.round {
            return Err(format!("event for round {round} during round {}", self.round));
        }
        let illegal = |s: &RunState| Err(format!("{event:?} not allowed while {}", s.status));
        match (self.status, event) {
            (Status::AwaitingTrainingSet, Event::TrainingSet { training_set, .. }) => {
                self.current_mut().training_set = Some(training_set.clone());
                self.status = Status::AwaitingClassifier;
            }
            (
                Status::AwaitingClassifier,
                Event::Classifier {
                    model,
                    sample_scores,
                    anneal_plan,
                    ..
                },
            ) => {
                let cur = self.current_mut();
                cur.model = Some(model.clone());
                cur.sample_scores = Some(sample_scores.clone());
                cur.anneal_plan = Some(anneal_plan.clone());
                self.status = Status::AwaitingVerification;
            }
            (
                Status::AwaitingVerification,
                Event::ReportIngested {
                    eval_report,
                    improved,
                    ..
                },
            ) => {
                let cur = self.current_mut();
                cur.eval_report = Some(eval_report.clone());
                cur.improved = Some(*improved);
                self.status = Status::VerdictReady;
            }
            (Status::VerdictReady, Event::NextRound { round, pool_version }) => {
                if self.current().improved != Some(true) || self.round >= self.max_rounds {
                    return illegal(self);
                }
                self.round = *round;
                self.rounds.push(RoundRecord::new(*round, *pool_version));
                self.status = Status::AwaitingTrainingSet;
            }
            (Status::VerdictReady, Event::Promoted { .. }) => {
                let target = match self.current().improved {
                    Some(true) if self.round >= self.max_rounds => self.round,
                    Some(false) => self.last_improved_round().ok_or("no improved round to promote")?,
                    _ => return illegal(self),
                };
                let model = self.rounds[target as usize - 1]
                    .model
                    .as_ref()
                    .ok_or("promoted round has no model")?;
                self.promoted = Some(Promotion {
                    round: target,
                    model_sha256: model.sha256.clone(),
                });
                self.status = Status::Promoted;
            }
            (Status::VerdictReady, Event::Rejected { .. }) => {
                if self.last_improved_round().is_some() {
                    return illegal(self);
                }
                self.status = Status::Rejected;
            }
            _ => return illegal(self),
        }
        Ok(())
    }

    fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.rounds.iter().flat_map(RoundRecord::artifacts)
    }
}

fn resolve(run_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        run_dir.join(p)
    }
}

fn round_seed(seed: u64, round: u32, stream: u64) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(u64::from(round) + 1);
    h ^= stream.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h
}

fn load_config(run_dir: &Path) -> Result<(PipelineConfig, String), PipelineError> {
    let path = run_dir.join(CONFIG_FILE);
    let bytes =
        fs::read(&path).map_err(|e| PipelineError::StateCorrupt(format!("{}: {e}", path.display())))?;
    let config: PipelineConfig = serde_json::from_slice(&bytes)?;
    Ok((config, sha256_hex(&bytes)))
}

fn verify_state(run_dir: &Path, state: &RunState, config_sha: &str) -> Result<(), PipelineError> {
    if state.config_sha256 != config_sha {
        return Err(PipelineError::StateCorrupt(format!(
            "{CONFIG_FILE} does not match its journaled fingerprint"
        )));
    }
    for a in state.artifacts() {
        let path = run_dir.join(&a.path);
        match file_sha256_hex(&path) {
            Ok(d) if d == a.sha256 => {}
            Ok(_) => {
                return Err(PipelineError::StateCorrupt(format!(
                    "artifact {} does not match its fingerprint",
                    a.path.display()
                )))
            }
            Err(e) => {
                return Err(PipelineError::StateCorrupt(format!(
                    "artifact {} is unreadable: {e}",
                    a.path.display()
                )))
            }
        }
    }
    Ok(())
}

/// Reconstructs and checks the run state without taking the writer lock.
pub fn resume(run_dir: &Path) -> Result<RunState, PipelineError> {
    let read = read_journal(&run_dir.join(JOURNAL_FILE))?;
    let state = RunState::replay(&read.entries)?;
    let (_, config_sha) = load_config(run_dir)?;
    verify_state(run_dir, &state, &config_sha)?;
    Ok(state)
}

fn write_artifact(run_dir: &Path, rel: PathBuf, bytes: &[u8]) -> Result<Artifact, PipelineError> {
    let path = run_dir.join(&rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.clone().into_os_string();
    tmp.push(".tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(Artifact {
        path: rel,
        sha256: sha256_hex(bytes),
    })
}

/// One line of `sample_scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    #[serde(flatten)]
    pub document: Document,
    pub score: f64,
    pub kept: bool,
}

/// Seeded uniform sample of up to `size` documents, in corpus order.
pub fn sample_documents(shards: &[PathBuf], size: usize, seed: u64) -> Result<Vec<Document>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<(u64, Document)> = Vec::with_capacity(size);
    let mut seen = 0u64;
    for path in shards {
        let name = shard_name(path);
        for record in ShardReader::new(open_shard(path)?, name.clone()) {
            let doc = match record? {
                Ok(doc) => doc,
                Err(bad) => {
                    warn!("{name}:{}: skipping malformed record: {}", bad.line, bad.reason);
                    continue;
                }
            };
            if reservoir.len() < size {
                reservoir.push((seen, doc));
            } else {
                let j = rng.gen_range(0..=seen);
                if (j as usize) < size {
                    reservoir[j as usize] = (seen, doc);
                }
            }
            seen += 1;
        }
    }
    if reservoir.len() < size {
        warn!(
            "raw pool has {} documents, fewer than the sample size {size}",
            reservoir.len()
        );
    }
    reservoir.sort_unstable_by_key(|(i, _)| *i);
    Ok(reservoir.into_iter().map(|(_, d)| d).collect())
}

/// Inferred category names for a round.
pub fn inferred_category_name(round: u32, polarity: Polarity) -> String {
    format!("round{round}-inferred-{polarity}")
}

/// Single-writer handle on a run directory.
#[derive(Debug)]
pub struct Pipeline {
    dir: PathBuf,
    config: PipelineConfig,
    state: RunState,
    journal: Journal,
    _lock: File,
}

fn acquire_lock(dir: &Path) -> Result<File, PipelineError> {
    let lock = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(dir.join(LOCK_FILE))?;
    match lock.try_lock() {
        Ok(()) => Ok(lock),
        Err(fs::TryLockError::WouldBlock) => Err(PipelineError::Locked(dir.to_owned())),
        Err(fs::TryLockError::Error(e)) => Err(e.into()),
    }
}

impl Pipeline {
    /// Creates a run directory and journals the first round.
    pub fn init(dir: &Path, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        fs::create_dir_all(dir)?;
        let lock = acquire_lock(dir)?;
        let journal_path = dir.join(JOURNAL_FILE);
        if journal_path.exists() {
            // A crash inside a previous init can leave a journal without a
            // single valid entry; that run never started.
            match read_journal(&journal_path) {
                Ok(read) if read.entries.is_empty() => fs::remove_file(&journal_path)?,
                _ => return Err(PipelineError::AlreadyInitialized(dir.to_owned())),
            }
        }
        let pool = PoolStore::open(resolve(dir, &config.pool_dir))?;
        let pool_version = pool
            .latest_version()?
            .ok_or_else(|| PipelineError::InvalidConfig("seed pool has no stored version".into()))?;
        let mut bytes = serde_json::to_vec_pretty(&config)?;
        bytes.push(b'\n');
        let config_sha256 = write_artifact(dir, PathBuf::from(CONFIG_FILE), &bytes)?.sha256;
        let mut journal = Journal::create(&journal_path)?;
        let entry = journal.append(Event::Init {
            run_id: config_sha256[..16].to_owned(),
            config_sha256,
            max_rounds: config.max_rounds,
            pool_version,
        })?;
        let state = RunState::replay(&[entry])?;
        info!("initialized run {} at pool version {pool_version}", state.run_id);
        Ok(Self {
            dir: dir.to_owned(),
            config,
            state,
            journal,
            _lock: lock,
        })
    }

    /// Opens an existing run for writing, checking every artifact.
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        let lock = acquire_lock(dir)?;
        let journal_path = dir.join(JOURNAL_FILE);
        let read = read_journal(&journal_path)?;
        if read.torn_tail {
            warn!("ignoring torn final line in {}", journal_path.display());
        }
        let state = RunState::replay(&read.entries)?;
        let (config, config_sha) = load_config(dir)?;
        verify_state(dir, &state, &config_sha)?;
        let journal = Journal::open(&journal_path, &read)?;
        Ok(Self {
            dir: dir.to_owned(),
            config,
            state,
            journal,
            _lock: lock,
        })
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, event: Event) -> Result<(), PipelineError> {
        let mut next = self.state.clone();
        next.apply(&event).map_err(PipelineError::StateCorrupt)?;
        self.journal.append(event)?;
        next.journal_entries += 1;
        info!("round {}: now {}", next.round, next.status);
        self.state = next;
        Ok(())
    }

    fn round_dir(&self) -> PathBuf {
        PathBuf::from("rounds").join(self.state.round.to_string())
    }

    fn tokenizer(&self) -> Result<Tokenizer, PipelineError> {
        let mut spec = self.config.tokenizer.clone();
        spec.vocab_path = spec.vocab_path.map(|p| resolve(&self.dir, &p));
        Ok(load_tokenizer(&spec)?)
    }

    fn pool(&self) -> Result<PoolStore, PipelineError> {
        Ok(PoolStore::open(resolve(&self.dir, &self.config.pool_dir))?)
    }

    /// Performs the next automatic transition. Waiting for a report and the
    /// terminal states are not automatic.
    pub fn advance(&mut self) -> Result<&RunState, PipelineError> {
        let round = self.state.round;
        let step = match self.state.status {
            Status::AwaitingTrainingSet => self.build_training_set(),
            Status::AwaitingClassifier => self.build_classifier(),
            Status::VerdictReady => self.conclude_round(),
            status => Err(PipelineError::InvalidTransition {
                status,
                action: "advance",
            }),
        };
        step.map_err(in_round(round))?;
        Ok(&self.state)
    }

    /// Advances until the run waits for a report or finishes.
    pub fn run_round(&mut self) -> Result<&RunState, PipelineError> {
        loop {
            match self.state.status {
                Status::AwaitingVerification | Status::Promoted | Status::Rejected => return Ok(&self.state),
                _ => {
                    self.advance()?;
                }
            }
        }
    }

    fn build_training_set(&mut self) -> Result<(), PipelineError> {
        let manifest = self.pool()?.load(self.state.pool_version())?;
        let seed = round_seed(self.config.seed, self.state.round, 0);
        let mut examples =
            manifest.assemble_training_set(self.config.target_training_set, self.config.balance, seed)?;
        for ex in &mut examples {
            ex.text = normalize_str(&ex.text, &self.config.normalize);
        }
        let mut bytes = Vec::new();
        write_training_jsonl(&examples, &self.config.classifier, &mut bytes)?;
        let artifact = write_artifact(&self.dir, self.round_dir().join("training_set.jsonl"), &bytes)?;
        self.record(Event::TrainingSet {
            round: self.state.round,
            training_set: artifact,
        })
    }

    fn build_classifier(&mut self) -> Result<(), PipelineError> {
        let round = self.state.round;
        let training = self
            .state
            .current()
            .training_set
            .clone()
            .expect("set before classifier");
        let file = BufReader::new(File::open(self.dir.join(&training.path))?);
        let examples = read_training_file(file, &self.config.classifier)?;
        let tokenizer = self.tokenizer()?;
        let model = train(&examples, &self.config.classifier, &tokenizer)?;
        let mut model_bytes = Vec::new();
        write_model(&model, &mut model_bytes)?;
        let model_artifact = write_artifact(&self.dir, self.round_dir().join("model.ufwc"), &model_bytes)?;

        let shards: Vec<PathBuf> = self
            .config
            .raw_shards
            .iter()
            .map(|p| resolve(&self.dir, p))
            .collect();
        let sample = sample_documents(
            &shards,
            self.config.sample_size,
            round_seed(self.config.seed, round, 1),
        )?;
        let scorer = Scorer::new(
            read_model(&model_bytes)?,
            tokenizer,
            self.config.normalize.clone(),
        );
        let mut scores = Vec::new();
        let mut kept_tokens = 0u64;
        let mut kept_count = 0usize;
        for doc in sample {
            let s = scorer.score_text(&doc.text);
            let kept = s.score >= self.config.threshold;
            if kept {
                kept_tokens += s.tokens;
                kept_count += 1;
            }
            serde_json::to_writer(
                &mut scores,
                &SampleScore {
                    document: doc,
                    score: s.score,
                    kept,
                },
            )?;
            scores.push(b'\n');
        }
        let scores_artifact =
            write_artifact(&self.dir, self.round_dir().join("sample_scores.jsonl"), &scores)?;
        info!("round {round}: classifier kept {kept_count} sampled documents ({kept_tokens} tokens)");

        let candidate = vec![ShardTokens {
            shard: format!("round{round}-kept"),
            tokens: kept_tokens,
        }];
        let fingerprints = BTreeMap::from([
            ("model".to_owned(), model_artifact.sha256.clone()),
            ("sample_scores".to_owned(), scores_artifact.sha256.clone()),
            ("pool_version".to_owned(), self.state.pool_version().to_string()),
        ]);
        let plan_config = PlanConfig {
            seed: round_seed(self.config.seed, round, 2),
            ..self.config.verify.clone()
        };
        let plan = plan_anneal(
            candidate,
            self.config.default_manifest.clone(),
            &plan_config,
            fingerprints,
        )?;
        let mut plan_bytes = serde_json::to_vec_pretty(&plan)?;
        plan_bytes.push(b'\n');
        let plan_artifact =
            write_artifact(&self.dir, self.round_dir().join("anneal_plan.json"), &plan_bytes)?;
        self.record(Event::Classifier {
            round,
            model: model_artifact,
            sample_scores: scores_artifact,
            anneal_plan: plan_artifact,
        })
    }

    /// Compares benchmark scores of the verification run against a baseline
    /// and journals the verdict.
    pub fn ingest_report(
        &mut self,
        baseline: &EvalScores,
        candidate: &EvalScores,
    ) -> Result<&RunState, PipelineError> {
        let round = self.state.round;
        if self.state.status != Status::AwaitingVerification {
            return Err(PipelineError::InvalidTransition {
                status: self.state.status,
                action: "ingest a report",
            });
        }
        let mut step = || -> Result<(), PipelineError> {
            let report = eval_report(baseline, candidate, &self.config.grouping, self.config.margin)?;
            let mut bytes = serde_json::to_vec_pretty(&report)?;
            bytes.push(b'\n');
            let artifact = write_artifact(&self.dir, self.round_dir().join("eval_report.json"), &bytes)?;
            self.record(Event::ReportIngested {
                round,
                eval_report: artifact,
                improved: report.improved(),
            })
        };
        step().map_err(in_round(round))?;
        Ok(&self.state)
    }

    fn conclude_round(&mut self) -> Result<(), PipelineError> {
        let round = self.state.round;
        let improved = self.state.current().improved == Some(true);
        if improved && round < self.state.max_rounds {
            let version = self.fold_sample()?;
            return self.record(Event::NextRound {
                round: round + 1,
                pool_version: version,
            });
        }
        if improved || self.state.last_improved_round().is_some() {
            self.record(Event::Promoted { round })
        } else {
            self.record(Event::Rejected { round })
        }
    }

    /// Adds the scored sample to the pool as this round's inferred
    /// categories, in one new version whose parent is this round's version.
    fn fold_sample(&mut self) -> Result<u64, PipelineError> {
        let round = self.state.round;
        let store = self.pool()?;
        let base = store.load(self.state.pool_version())?;
        let scores = self
            .state
            .current()
            .sample_scores
            .clone()
            .expect("set before verdict");
        let mut kept = Vec::new();
        let mut rejected = Vec::new();
        for line in fs::read_to_string(self.dir.join(&scores.path))?.lines() {
            let s: SampleScore = serde_json::from_str(line)?;
            if s.kept {
                kept.push(s.document)
            } else {
                rejected.push(s.document)
            }
        }
        let source = format!("round{round}-classifier");
        let added = [(Polarity::Positive, kept), (Polarity::Negative, rejected)]
            .into_iter()
            .filter_map(|(polarity, docs)| {
                if docs.is_empty() {
                    warn!("round {round}: no {polarity} documents inferred; category skipped");
                    return None;
                }
                Some(SeedCategory::new(
                    inferred_category_name(round, polarity),
                    polarity,
                    &source,
                    docs,
                ))
            });
        let next = base.with_categories(added)?;
        match store.load(next.version) {
            Ok(existing) if existing == next => {
                info!("pool version {} already holds this fold", next.version);
            }
            Ok(_) => {
                return Err(SeedPoolError::VersionConflict {
                    version: next.version,
                    latest: store.latest_version()?.unwrap_or(next.version),
                }
                .into())
            }
            Err(SeedPoolError::VersionNotFound(_)) => store.save(&next)?,
            Err(e) => return Err(e.into()),
        }
        Ok(next.version)
    }
}
