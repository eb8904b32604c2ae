//! Threshold filtering of sharded corpora with a trained classifier.
//!
//! A document is kept when its positive-label probability is at least the
//! threshold. Shards are the unit of parallelism and of checkpointing: each
//! finished shard is appended to a ledger, and a rerun over the same output
//! directory skips shards whose content and scoring setup are unchanged.

mod manifest;
mod stats;

pub use manifest::{intersect, KeepManifest};
pub use stats::{default_length_edges, FilterStats, TokenLengthReport, TokenLengthStats, SCORE_BINS};

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{write_model, ClassifierModel};
use crate::document::{open_shard, shard_name, Document, MalformedLine, ShardReader};
use crate::fingerprint::{combine_unordered, file_sha256_hex};
use crate::normalize::{normalize_str, NormalizePolicy};
use crate::tokenize::Tokenizer;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("threshold must be within [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("worker count must be at least 1")]
    InvalidWorkers,
    #[error("histogram bin edges must be non-empty and strictly increasing")]
    InvalidEdges,
    #[error("shards {0:?} map to the same output name")]
    DuplicateShardName(String),
    #[error("shard {shard} is unreadable: {source}")]
    ShardUnreadable {
        shard: String,
        #[source]
        source: io::Error,
    },
    #[error("intersect needs at least 2 manifests, got {0}")]
    TooFewManifests(usize),
    #[error("corpus fingerprint mismatch: {expected} vs {found}")]
    CorpusMismatch { expected: String, found: String },
    #[error("malformed keep-manifest: {0}")]
    BadManifest(String),
    #[error("document id {0:?} cannot be written to a keep-manifest")]
    InvalidId(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Score record for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub id: String,
    /// Probability of the positive label.
    pub score: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextScore {
    pub score: f64,
    pub tokens: u64,
    pub features: usize,
}

/// Model, tokenizer and normalization bundled for scoring. Immutable and
/// shared by reference across workers.
#[derive(Debug)]
pub struct Scorer {
    model: ClassifierModel,
    tokenizer: Tokenizer,
    policy: NormalizePolicy,
    fingerprint: String,
}

impl Scorer {
    pub fn new(model: ClassifierModel, tokenizer: Tokenizer, policy: NormalizePolicy) -> Self {
        let mut hasher = Sha256::new();
        write_model(&model, &mut hasher).expect("hashing cannot fail");
        hasher.update(tokenizer.fingerprint().as_bytes());
        hasher.update(serde_json::to_vec(&policy).expect("policy serializes"));
        let fingerprint = hex::encode(hasher.finalize());
        Self {
            model,
            tokenizer,
            policy,
            fingerprint,
        }
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn policy(&self) -> &NormalizePolicy {
        &self.policy
    }

    /// Covers the model bytes, tokenizer and normalization policy.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn score_text(&self, text: &str) -> TextScore {
        let normalized = normalize_str(text, &self.policy);
        let tokens = self.tokenizer.tokenize(&normalized);
        let ids = self.model.features(&tokens);
        TextScore {
            score: self.model.positive_probability(&ids),
            tokens: tokens.len() as u64,
            features: ids.len(),
        }
    }
}

fn check_threshold(threshold: f64) -> Result<(), FilterError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(FilterError::InvalidThreshold(threshold))
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, FilterError> {
    if workers == 0 {
        return Err(FilterError::InvalidWorkers);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| FilterError::Io(io::Error::other(e)))
}

/// Scores records in order, updating `stats` and handing each scored
/// document to `emit`. Malformed records are counted and skipped.
fn process_records<I, E>(
    scorer: &Scorer,
    shard: &str,
    records: I,
    threshold: f64,
    stats: &mut FilterStats,
    mut emit: E,
) -> Result<(), ShardError>
where
    I: Iterator<Item = io::Result<Result<Document, MalformedLine>>>,
    E: FnMut(Document, ScoredDocument) -> io::Result<()>,
{
    for record in records {
        let doc = match record.map_err(ShardError::Input)? {
            Ok(doc) => doc,
            Err(bad) => {
                warn!("{shard}:{}: skipping malformed record: {}", bad.line, bad.reason);
                stats.record_malformed();
                continue;
            }
        };
        let s = scorer.score_text(&doc.text);
        let kept = s.score >= threshold;
        if doc.text.is_empty() {
            stats.empty_documents += 1;
        }
        if s.features == 0 {
            stats.zero_feature_documents += 1;
            info!(
                "{shard}: document {:?} has no features; scored {} ({})",
                doc.id,
                s.score,
                if kept { "kept" } else { "rejected" }
            );
        }
        stats.record(s.score, s.tokens, kept);
        let scored = ScoredDocument {
            id: doc.id.clone(),
            score: s.score,
            kept,
        };
        emit(doc, scored).map_err(ShardError::Output)?;
    }
    Ok(())
}

enum ShardError {
    Input(io::Error),
    Output(io::Error),
}

/// Result of scoring one in-memory shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardResult {
    pub kept: Vec<ScoredDocument>,
    pub rejected: Vec<ScoredDocument>,
    pub stats: FilterStats,
}

/// Scores one in-memory shard, preserving document order in both streams.
pub fn score_documents(
    scorer: &Scorer,
    docs: &[Document],
    threshold: f64,
) -> Result<ShardResult, FilterError> {
    check_threshold(threshold)?;
    let mut stats = FilterStats::new(default_length_edges()).expect("default edges are valid");
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let records = docs.iter().cloned().map(|d| Ok(Ok(d)));
    let outcome = process_records(scorer, "memory", records, threshold, &mut stats, |_, s| {
        if s.kept {
            kept.push(s)
        } else {
            rejected.push(s)
        }
        Ok(())
    });
    debug_assert!(outcome.is_ok());
    Ok(ShardResult {
        kept,
        rejected,
        stats,
    })
}

/// Scores in-memory shards on `workers` threads, one task per shard.
/// Results come back in shard order.
pub fn score_shards_parallel(
    scorer: &Scorer,
    shards: &[Vec<Document>],
    threshold: f64,
    workers: usize,
) -> Result<Vec<ShardResult>, FilterError> {
    check_threshold(threshold)?;
    let pool = thread_pool(workers)?;
    pool.install(|| {
        shards
            .par_iter()
            .map(|docs| score_documents(scorer, docs, threshold))
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    pub length_edges: Vec<u64>,
}

impl ScoreOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            workers: 1,
            length_edges: default_length_edges(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardFailure {
    pub shard: String,
    pub error: String,
}

/// Summary of a (possibly resumed) scoring run over files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRun {
    pub threshold: f64,
    pub scorer_fingerprint: String,
    /// Order-independent combination of the processed shards' content digests.
    pub corpus_fingerprint: String,
    pub stats: FilterStats,
    pub completed: Vec<String>,
    /// Subset of `completed` restored from the ledger instead of rescored.
    pub resumed: Vec<String>,
    pub failed: Vec<ShardFailure>,
    pub keep_manifest: PathBuf,
}

impl CorpusRun {
    pub fn partial(&self) -> bool {
        !self.failed.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LedgerEntry {
    shard: String,
    digest: String,
    run_key: String,
    stats: FilterStats,
}

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const KEEP_MANIFEST_FILE: &str = "keep_manifest.txt";
pub const SUMMARY_FILE: &str = "summary.json";

/// Output file stem for a shard: its file name minus `.gz` and `.jsonl`.
pub fn output_stem(path: &Path) -> String {
    let name = shard_name(path);
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    name.strip_suffix(".jsonl").unwrap_or(name).to_owned()
}

fn read_ledger(path: &Path) -> Result<HashMap<String, LedgerEntry>, FilterError> {
    let mut out = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    for line in BufReader::new(file).lines() {
        let line = line?;
        // A torn final line from an interrupted append is ignored.
        if let Ok(entry) = serde_json::from_str::<LedgerEntry>(&line) {
            out.insert(entry.shard.clone(), entry);
        }
    }
    Ok(out)
}

fn run_key(scorer: &Scorer, threshold: f64, edges: &[u64]) -> String {
    let mut h = Sha256::new();
    h.update(scorer.fingerprint().as_bytes());
    h.update(threshold.to_le_bytes());
    edges.iter().for_each(|e| h.update(e.to_le_bytes()));
    hex::encode(h.finalize())
}

struct ShardPaths {
    kept: PathBuf,
    rejected: PathBuf,
    ids: PathBuf,
}

impl ShardPaths {
    fn new(out_dir: &Path, stem: &str) -> Self {
        Self {
            kept: out_dir.join("kept").join(format!("{stem}.jsonl")),
            rejected: out_dir.join("rejected").join(format!("{stem}.jsonl")),
            ids: out_dir.join("kept").join(format!("{stem}.ids")),
        }
    }

    fn all(&self) -> [&PathBuf; 3] {
        [&self.kept, &self.rejected, &self.ids]
    }

    fn exist(&self) -> bool {
        self.all().iter().all(|p| p.exists())
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tmp");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct OutputRecord<'a> {
    #[serde(flatten)]
    doc: &'a Document,
    score: f64,
}

fn score_shard_file(
    scorer: &Scorer,
    path: &Path,
    threshold: f64,
    edges: &[u64],
    paths: &ShardPaths,
) -> Result<FilterStats, ShardError> {
    let name = shard_name(path);
    let reader = open_shard(path).map_err(ShardError::Input)?;
    let create = |p: &Path| File::create(tmp_path(p)).map(|f| BufWriter::with_capacity(1 << 16, f));
    let mut kept = create(&paths.kept).map_err(ShardError::Output)?;
    let mut rejected = create(&paths.rejected).map_err(ShardError::Output)?;
    let mut ids = create(&paths.ids).map_err(ShardError::Output)?;
    let mut stats = FilterStats::new(edges.to_vec()).expect("edges validated by caller");

    let outcome = process_records(
        scorer,
        &name,
        ShardReader::new(reader, name.clone()),
        threshold,
        &mut stats,
        |doc, scored| {
            let out = if scored.kept {
                if doc.id.contains(['\n', '\r']) {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("document id {:?} contains a line break", doc.id),
                    ));
                }
                writeln!(ids, "{}", doc.id)?;
                &mut kept
            } else {
                &mut rejected
            };
            serde_json::to_writer(
                &mut *out,
                &OutputRecord {
                    doc: &doc,
                    score: scored.score,
                },
            )?;
            out.write_all(b"\n")
        },
    );
    if let Err(e) = outcome {
        for p in paths.all() {
            let _ = fs::remove_file(tmp_path(p));
        }
        return Err(e);
    }
    for mut w in [kept, rejected, ids] {
        w.flush().map_err(ShardError::Output)?;
        w.get_ref().sync_all().map_err(ShardError::Output)?;
    }
    for p in paths.all() {
        fs::rename(tmp_path(p), p).map_err(ShardError::Output)?;
    }
    Ok(stats)
}

/// Scores every shard into `opts.out_dir`:
///
/// ```text
/// kept/<stem>.jsonl, rejected/<stem>.jsonl   documents plus a "score" field
/// kept/<stem>.ids                            kept ids of the shard
/// ledger.jsonl                               completed shards
/// keep_manifest.txt                          sorted kept ids of the corpus
/// summary.json                               this CorpusRun
/// ```
///
/// Unreadable shards are reported in [`CorpusRun::failed`] while the rest
/// are processed; output errors abort the run.
pub fn score_corpus(
    scorer: &Scorer,
    shards: &[PathBuf],
    threshold: f64,
    opts: &ScoreOptions,
) -> Result<CorpusRun, FilterError> {
    check_threshold(threshold)?;
    if TokenLengthStats::new(opts.length_edges.clone()).is_none() {
        return Err(FilterError::InvalidEdges);
    }
    let pool = thread_pool(opts.workers)?;
    let out = &opts.out_dir;
    fs::create_dir_all(out.join("kept"))?;
    fs::create_dir_all(out.join("rejected"))?;

    let mut stems: HashMap<String, &Path> = HashMap::new();
    for s in shards {
        if stems.insert(output_stem(s), s).is_some() {
            return Err(FilterError::DuplicateShardName(output_stem(s)));
        }
    }

    let key = run_key(scorer, threshold, &opts.length_edges);
    let ledger_path = out.join(LEDGER_FILE);
    let ledger = read_ledger(&ledger_path)?;
    let ledger_file = Mutex::new(OpenOptions::new().create(true).append(true).open(&ledger_path)?);

    enum Outcome {
        Done {
            digest: String,
            stats: FilterStats,
            resumed: bool,
        },
        Failed(String),
    }

    let outcomes: Vec<Result<Outcome, FilterError>> = pool.install(|| {
        shards
            .par_iter()
            .map(|path| {
                let name = shard_name(path);
                let stem = output_stem(path);
                let paths = ShardPaths::new(out, &stem);
                let digest = match file_sha256_hex(path) {
                    Ok(d) => d,
                    Err(e) => {
                        warn!("shard {name} is unreadable: {e}");
                        return Ok(Outcome::Failed(e.to_string()));
                    }
                };
                if let Some(entry) = ledger.get(&stem) {
                    if entry.digest == digest && entry.run_key == key && paths.exist() {
                        info!("shard {name} already complete, skipping");
                        return Ok(Outcome::Done {
                            digest,
                            stats: entry.stats.clone(),
                            resumed: true,
                        });
                    }
                }
                match score_shard_file(scorer, path, threshold, &opts.length_edges, &paths) {
                    Ok(stats) => {
                        let entry = LedgerEntry {
                            shard: stem,
                            digest: digest.clone(),
                            run_key: key.clone(),
                            stats: stats.clone(),
                        };
                        let mut line = serde_json::to_vec(&entry)?;
                        line.push(b'\n');
                        let mut f = ledger_file.lock().unwrap();
                        f.write_all(&line)?;
                        f.sync_data()?;
                        Ok(Outcome::Done {
                            digest,
                            stats,
                            resumed: false,
                        })
                    }
                    Err(ShardError::Input(e)) => {
                        warn!("shard {name} is unreadable: {e}");
                        Ok(Outcome::Failed(e.to_string()))
                    }
                    Err(ShardError::Output(e)) => Err(e.into()),
                }
            })
            .collect()
    });

    let mut stats = FilterStats::new(opts.length_edges.clone()).expect("validated above");
    let mut digests = Vec::new();
    let mut completed = Vec::new();
    let mut resumed = Vec::new();
    let mut failed = Vec::new();
    let mut kept_ids = Vec::new();
    for (path, outcome) in shards.iter().zip(outcomes) {
        let name = shard_name(path);
        match outcome? {
            Outcome::Done {
                digest,
                stats: s,
                resumed: r,
            } => {
                stats.merge(&s);
                digests.push(digest);
                let ids_path = ShardPaths::new(out, &output_stem(path)).ids;
                for line in BufReader::new(File::open(ids_path)?).lines() {
                    kept_ids.push(line?);
                }
                if r {
                    resumed.push(name.clone());
                }
                completed.push(name);
            }
            Outcome::Failed(error) => failed.push(ShardFailure { shard: name, error }),
        }
    }

    let corpus_fingerprint = combine_unordered(&digests);
    let manifest = KeepManifest::new(corpus_fingerprint.clone(), kept_ids);
    let manifest_path = out.join(KEEP_MANIFEST_FILE);
    manifest.write(BufWriter::new(File::create(&manifest_path)?))?;

    let run = CorpusRun {
        threshold,
        scorer_fingerprint: scorer.fingerprint().to_owned(),
        corpus_fingerprint,
        stats,
        completed,
        resumed,
        failed,
        keep_manifest: manifest_path,
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_vec_pretty(&run)?)?;
    Ok(run)
}

/// Token-length distribution over shards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LengthRun {
    pub stats: TokenLengthStats,
    pub malformed: u64,
    pub failed: Vec<ShardFailure>,
}

impl LengthRun {
    pub fn report(&self) -> TokenLengthReport {
        self.stats.report()
    }
}

/// Counts tokens per document across shards. Text is normalized first when
/// a policy is given.
pub fn token_length_histogram(
    shards: &[PathBuf],
    tokenizer: &Tokenizer,
    bin_edges: &[u64],
    policy: Option<&NormalizePolicy>,
    workers: usize,
) -> Result<LengthRun, FilterError> {
    let empty = TokenLengthStats::new(bin_edges.to_vec()).ok_or(FilterError::InvalidEdges)?;
    let pool = thread_pool(workers)?;
    let per_shard: Vec<Result<(TokenLengthStats, u64), (String, io::Error)>> = pool.install(|| {
        shards
            .par_iter()
            .map(|path| {
                let name = shard_name(path);
                let mut stats = empty.clone();
                let mut malformed = 0;
                let reader = open_shard(path).map_err(|e| (name.clone(), e))?;
                for record in ShardReader::new(reader, name.clone()) {
                    match record.map_err(|e| (name.clone(), e))? {
                        Ok(doc) => {
                            let n = match policy {
                                Some(p) => tokenizer.count_tokens(&normalize_str(&doc.text, p)),
                                None => tokenizer.count_tokens(&doc.text),
                            };
                            stats.record(n as u64);
                        }
                        Err(bad) => {
                            warn!("{name}:{}: skipping malformed record: {}", bad.line, bad.reason);
                            malformed += 1;
                        }
                    }
                }
                Ok((stats, malformed))
            })
            .collect()
    });
    let mut run = LengthRun {
        stats: empty,
        malformed: 0,
        failed: Vec::new(),
    };
    for r in per_shard {
        match r {
            Ok((s, m)) => {
                run.stats.merge(&s);
                run.malformed += m;
            }
            Err((shard, e)) => {
                warn!("shard {shard} is unreadable: {e}");
                run.failed.push(ShardFailure {
                    shard,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{build_vocab, ClassifierConfig, Parameters};

    fn uniform_scorer() -> Scorer {
        let config = ClassifierConfig {
            dim: 4,
            bucket: 8,
            min_count: 1,
            ..Default::default()
        };
        let vocab = build_vocab([vec!["a"]], 1).unwrap();
        let params = Parameters::init(vocab.len() + config.bucket, 2, config.dim, 0);
        let model = ClassifierModel::from_parts(config, vocab, params).unwrap();
        Scorer::new(model, Tokenizer::default(), NormalizePolicy::default())
    }

    #[test]
    fn half_score_is_kept_at_half_threshold() {
        let scorer = uniform_scorer();
        let docs = vec![Document::new("1", "a b"), Document::new("2", "")];
        let r = score_documents(&scorer, &docs, 0.5).unwrap();
        assert_eq!(r.kept.len(), 2);
        assert!(r.kept.iter().all(|d| d.score == 0.5));
        assert_eq!(r.stats.empty_documents, 1);
        assert_eq!(r.stats.zero_feature_documents, 1);
        let strict = score_documents(&scorer, &docs, 0.51).unwrap();
        assert_eq!(strict.rejected.len(), 2);
    }

    #[test]
    fn empty_corpus() {
        let scorer = uniform_scorer();
        let dir = tempfile::tempdir().unwrap();
        let run = score_corpus(&scorer, &[], 0.5, &ScoreOptions::new(dir.path())).unwrap();
        assert_eq!(run.stats.documents_total, 0);
        assert_eq!(run.stats.documents_kept, 0);
        assert!(!run.partial());
    }

    #[test]
    fn invalid_arguments() {
        let scorer = uniform_scorer();
        assert!(matches!(
            score_documents(&scorer, &[], 1.5),
            Err(FilterError::InvalidThreshold(_))
        ));
        assert!(matches!(
            score_shards_parallel(&scorer, &[], 0.5, 0),
            Err(FilterError::InvalidWorkers)
        ));
    }

    #[test]
    fn output_stems() {
        assert_eq!(output_stem(Path::new("/a/part-1.jsonl.gz")), "part-1");
        assert_eq!(output_stem(Path::new("x.txt")), "x.txt");
    }
}
