//! Categorized positive/negative seed data and balanced training-set assembly.
//!
//! Manifests are immutable values: every change yields a new manifest whose
//! `parent_version` points at the one it was derived from.

mod store;

pub use store::PoolStore;

use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{ClassifierConfig, LabeledExample};
use crate::document::Document;
use crate::fingerprint::sha256_hex;

pub const MIN_RESAMPLE_FACTOR: u32 = 3;
pub const MAX_RESAMPLE_FACTOR: u32 = 5;

#[derive(Debug, Error)]
pub enum SeedPoolError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("category name {0:?} exists in both polarities; specify the polarity")]
    AmbiguousCategory(String),
    #[error("category {name:?} already exists among {polarity} categories")]
    DuplicateCategory { name: String, polarity: Polarity },
    #[error("resample factor {0} outside [{MIN_RESAMPLE_FACTOR}, {MAX_RESAMPLE_FACTOR}]")]
    FactorOutOfRange(u32),
    #[error("category {0:?} has no documents")]
    EmptyCategory(String),
    #[error("no {0} categories in the pool")]
    NoCategories(Polarity),
    #[error(
        "insufficient seed data: {polarity} category {category:?} needs {quota} documents \
         but has an effective size of {effective} ({documents} docs x factor {factor})"
    )]
    InsufficientSeedData {
        polarity: Polarity,
        category: String,
        quota: usize,
        effective: usize,
        documents: usize,
        factor: u32,
    },
    #[error("balance must be within [0, 1], got {0}")]
    InvalidBalance(f64),
    #[error("target size {target} x balance {balance} is not a whole number of examples")]
    InexactBalance { target: usize, balance: f64 },
    #[error("manifest version {0} not found")]
    VersionNotFound(u64),
    #[error("manifest version {version} must be greater than the latest stored version {latest}")]
    VersionConflict { version: u64, latest: u64 },
    #[error("pool store is corrupt: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn label(self) -> usize {
        match self {
            Polarity::Positive => ClassifierConfig::POSITIVE,
            Polarity::Negative => ClassifierConfig::NEGATIVE,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

impl std::str::FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" | "pos" => Ok(Polarity::Positive),
            "negative" | "neg" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCategory {
    pub name: String,
    pub polarity: Polarity,
    /// Provenance tag, e.g. the corpus the documents came from.
    pub source: String,
    /// Content digest of the document shard in the pool store.
    pub shard: String,
    pub document_count: usize,
    pub resample_factor: u32,
    pub underrepresented: bool,
    #[serde(skip)]
    pub documents: Vec<Document>,
}

/// Digest of a category's documents as serialized to its JSONL shard.
pub fn documents_digest(documents: &[Document]) -> String {
    sha256_hex(&documents_jsonl(documents))
}

pub(crate) fn documents_jsonl(documents: &[Document]) -> Vec<u8> {
    let mut buf = Vec::new();
    for d in documents {
        crate::document::write_document(&mut buf, d).expect("writing to a Vec cannot fail");
    }
    buf
}

impl SeedCategory {
    pub fn new(
        name: impl Into<String>,
        polarity: Polarity,
        source: impl Into<String>,
        documents: Vec<Document>,
    ) -> Self {
        Self {
            name: name.into(),
            polarity,
            source: source.into(),
            shard: documents_digest(&documents),
            document_count: documents.len(),
            resample_factor: 1,
            underrepresented: false,
            documents,
        }
    }

    /// Size counted against quotas: documents times resample factor.
    pub fn effective_size(&self) -> usize {
        self.documents.len() * self.resample_factor as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPoolManifest {
    pub version: u64,
    pub parent_version: Option<u64>,
    pub categories: Vec<SeedCategory>,
}

impl Default for SeedPoolManifest {
    fn default() -> Self {
        Self::new()
    }
}

impl SeedPoolManifest {
    /// The empty root manifest, version 0.
    pub fn new() -> Self {
        Self {
            version: 0,
            parent_version: None,
            categories: Vec::new(),
        }
    }

    fn successor(&self, categories: Vec<SeedCategory>) -> Self {
        Self {
            version: self.version + 1,
            parent_version: Some(self.version),
            categories,
        }
    }

    pub fn categories_of(&self, polarity: Polarity) -> impl Iterator<Item = &SeedCategory> {
        self.categories.iter().filter(move |c| c.polarity == polarity)
    }

    pub fn category(&self, name: &str, polarity: Option<Polarity>) -> Result<&SeedCategory, SeedPoolError> {
        self.find(name, polarity).map(|i| &self.categories[i])
    }

    fn find(&self, name: &str, polarity: Option<Polarity>) -> Result<usize, SeedPoolError> {
        let mut hits = self
            .categories
            .iter()
            .enumerate()
            .filter(|(_, c)| c.name == name && polarity.is_none_or(|p| p == c.polarity))
            .map(|(i, _)| i);
        match (hits.next(), hits.next()) {
            (None, _) => Err(SeedPoolError::UnknownCategory(name.to_owned())),
            (Some(i), None) => Ok(i),
            (Some(_), Some(_)) => Err(SeedPoolError::AmbiguousCategory(name.to_owned())),
        }
    }

    /// New version with `category` appended.
    pub fn with_category(&self, category: SeedCategory) -> Result<Self, SeedPoolError> {
        self.with_categories([category])
    }

    /// New version with all of `added` appended, as a single step.
    pub fn with_categories(
        &self,
        added: impl IntoIterator<Item = SeedCategory>,
    ) -> Result<Self, SeedPoolError> {
        let mut categories = self.categories.clone();
        for category in added {
            if categories
                .iter()
                .any(|c| c.polarity == category.polarity && c.name == category.name)
            {
                return Err(SeedPoolError::DuplicateCategory {
                    name: category.name,
                    polarity: category.polarity,
                });
            }
            categories.push(category);
        }
        Ok(self.successor(categories))
    }

    /// New version with the category flagged underrepresented and resampled
    /// `factor` times, `factor` in `[3, 5]`.
    pub fn mark_underrepresented(
        &self,
        name: &str,
        polarity: Option<Polarity>,
        factor: u32,
    ) -> Result<Self, SeedPoolError> {
        if !(MIN_RESAMPLE_FACTOR..=MAX_RESAMPLE_FACTOR).contains(&factor) {
            return Err(SeedPoolError::FactorOutOfRange(factor));
        }
        let idx = self.find(name, polarity)?;
        let mut categories = self.categories.clone();
        categories[idx].resample_factor = factor;
        categories[idx].underrepresented = true;
        Ok(self.successor(categories))
    }

    /// Draws a balanced, shuffled training set.
    ///
    /// `floor(target_size * balance)` examples are positive and the rest
    /// negative. Within a polarity every category gets the same quota, with
    /// the remainder going one each to categories in name order. A category
    /// with `n` documents and quota `q` contributes every document
    /// `q / n` times plus `q % n` distinct documents drawn at random, so no
    /// document repeats more than its resample factor allows.
    pub fn assemble_training_set(
        &self,
        target_size: usize,
        balance: f64,
        seed: u64,
    ) -> Result<Vec<LabeledExample>, SeedPoolError> {
        let plan = self.quotas(target_size, balance)?;
        let mut out = Vec::with_capacity(target_size);
        for (category, quota) in plan {
            let mut rng = ChaCha8Rng::seed_from_u64(category_seed(seed, category));
            let n = category.documents.len();
            let label = category.polarity.label();
            for _ in 0..quota / n {
                out.extend(category.documents.iter().map(|d| LabeledExample {
                    text: d.text.clone(),
                    label,
                }));
            }
            let mut extra = index::sample(&mut rng, n, quota % n).into_vec();
            extra.sort_unstable();
            out.extend(extra.into_iter().map(|i| LabeledExample {
                text: category.documents[i].text.clone(),
                label,
            }));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        out.shuffle(&mut rng);
        Ok(out)
    }

    /// Per-category quotas in assembly order (positives first, then by name).
    pub fn quotas(
        &self,
        target_size: usize,
        balance: f64,
    ) -> Result<Vec<(&SeedCategory, usize)>, SeedPoolError> {
        if !(0.0..=1.0).contains(&balance) {
            return Err(SeedPoolError::InvalidBalance(balance));
        }
        let exact = target_size as f64 * balance;
        let positives = exact.round();
        if (exact - positives).abs() > 1e-9 * exact.max(1.0) {
            return Err(SeedPoolError::InexactBalance {
                target: target_size,
                balance,
            });
        }
        let positives = positives as usize;
        let mut plan = Vec::new();
        for (polarity, total) in [
            (Polarity::Positive, positives),
            (Polarity::Negative, target_size - positives),
        ] {
            if total == 0 {
                continue;
            }
            let mut cats: Vec<&SeedCategory> = self.categories_of(polarity).collect();
            if cats.is_empty() {
                return Err(SeedPoolError::NoCategories(polarity));
            }
            cats.sort_by(|a, b| a.name.cmp(&b.name));
            let k = cats.len();
            for (i, cat) in cats.into_iter().enumerate() {
                let quota = total / k + usize::from(i < total % k);
                if cat.documents.is_empty() {
                    return Err(SeedPoolError::EmptyCategory(cat.name.clone()));
                }
                if quota > cat.effective_size() {
                    return Err(SeedPoolError::InsufficientSeedData {
                        polarity,
                        category: cat.name.clone(),
                        quota,
                        effective: cat.effective_size(),
                        documents: cat.documents.len(),
                        factor: cat.resample_factor,
                    });
                }
                plan.push((cat, quota));
            }
        }
        Ok(plan)
    }
}

fn category_seed(seed: u64, category: &SeedCategory) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(category.polarity.to_string().as_bytes());
    h.update([0]);
    h.update(category.name.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn docs(prefix: &str, n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("{prefix}-{i}"), format!("{prefix} text {i}")))
            .collect()
    }

    fn pool(pos: &[(&str, usize)], neg: &[(&str, usize)]) -> SeedPoolManifest {
        let mut m = SeedPoolManifest::new();
        for &(name, n) in pos {
            m = m
                .with_category(SeedCategory::new(name, Polarity::Positive, "test", docs(name, n)))
                .unwrap();
        }
        for &(name, n) in neg {
            m = m
                .with_category(SeedCategory::new(name, Polarity::Negative, "test", docs(name, n)))
                .unwrap();
        }
        m
    }

    #[test]
    fn mark_sets_factor_and_version() {
        let m = pool(&[("books", 10)], &[("web", 10)]);
        let marked = m.mark_underrepresented("books", None, 4).unwrap();
        let cat = marked.category("books", None).unwrap();
        assert_eq!(cat.effective_size(), 40);
        assert!(cat.underrepresented);
        assert_eq!(marked.version, m.version + 1);
        assert_eq!(marked.parent_version, Some(m.version));
    }

    #[test]
    fn mark_errors() {
        let m = pool(&[("books", 10)], &[("books", 3)]);
        assert!(matches!(
            m.mark_underrepresented("books", Some(Polarity::Positive), 2),
            Err(SeedPoolError::FactorOutOfRange(2))
        ));
        assert!(matches!(
            m.mark_underrepresented("missing", None, 3),
            Err(SeedPoolError::UnknownCategory(_))
        ));
        assert!(matches!(
            m.mark_underrepresented("books", None, 3),
            Err(SeedPoolError::AmbiguousCategory(_))
        ));
        assert!(m
            .mark_underrepresented("books", Some(Polarity::Negative), 5)
            .is_ok());
    }

    #[test]
    fn duplicate_names_within_polarity_are_rejected() {
        let m = pool(&[("a", 1)], &[]);
        let err = m
            .with_category(SeedCategory::new("a", Polarity::Positive, "x", docs("a", 1)))
            .unwrap_err();
        assert!(matches!(err, SeedPoolError::DuplicateCategory { .. }));
    }

    #[test]
    fn quotas_spread_remainder_by_name() {
        let m = pool(&[("c", 10), ("a", 10), ("b", 10)], &[("n", 20)]);
        let q: Vec<_> = m
            .quotas(20, 0.5)
            .unwrap()
            .into_iter()
            .map(|(c, q)| (c.name.as_str(), q))
            .collect();
        assert_eq!(q, [("a", 4), ("b", 3), ("c", 3), ("n", 10)]);
    }

    #[test]
    fn exact_cover_with_resampling() {
        let m = pool(&[("small", 4)], &[("big", 20)])
            .mark_underrepresented("small", None, 5)
            .unwrap();
        let set = m.assemble_training_set(40, 0.5, 9).unwrap();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ex in set.iter().filter(|e| e.label == 1) {
            *counts.entry(ex.text.as_str()).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 5));
    }

    #[test]
    fn shortfall_is_reported() {
        let m = pool(&[("small", 9)], &[("big", 20)]);
        let err = m.assemble_training_set(20, 0.5, 0).unwrap_err();
        assert!(matches!(
            err,
            SeedPoolError::InsufficientSeedData {
                quota: 10,
                effective: 9,
                ..
            }
        ));
    }

    #[test]
    fn missing_polarity_and_bad_balance() {
        let m = pool(&[("a", 10)], &[]);
        assert!(matches!(
            m.assemble_training_set(10, 0.5, 0),
            Err(SeedPoolError::NoCategories(Polarity::Negative))
        ));
        assert!(m.assemble_training_set(10, 1.0, 0).is_ok());
        assert!(matches!(
            m.assemble_training_set(11, 0.5, 0),
            Err(SeedPoolError::InexactBalance { .. })
        ));
        assert!(matches!(
            m.assemble_training_set(10, 1.5, 0),
            Err(SeedPoolError::InvalidBalance(_))
        ));
    }

    #[test]
    fn assembly_is_deterministic_and_seeded() {
        let m = pool(&[("a", 50), ("b", 17)], &[("n", 100)]);
        let x = m.assemble_training_set(60, 0.5, 1).unwrap();
        assert_eq!(x, m.assemble_training_set(60, 0.5, 1).unwrap());
        assert_ne!(x, m.assemble_training_set(60, 0.5, 2).unwrap());
    }

    #[test]
    fn manifest_json_omits_documents() {
        let m = pool(&[("a", 2)], &[]);
        let json = serde_json::to_string(&m).unwrap();
        assert!(!json.contains("a text"));
        assert!(json.contains(&m.categories[0].shard));
    }
}
