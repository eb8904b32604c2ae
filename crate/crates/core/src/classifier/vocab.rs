use std::collections::HashMap;

use super::ClassifierError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub token: String,
    pub count: u64,
}

/// Tokens that reached `min_count`, with dense row ids in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds the index from entries listed in row order.
    pub fn from_entries(entries: Vec<VocabEntry>) -> Result<Self, ClassifierError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (row, e) in entries.iter().enumerate() {
            if index.insert(e.token.clone(), row).is_some() {
                return Err(ClassifierError::CorruptPayload(format!(
                    "duplicate vocabulary token {:?}",
                    e.token
                )));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn count(&self, token: &str) -> Option<u64> {
        self.row(token).map(|r| self.entries[r].count)
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }
}

/// Counts tokens across the corpus and keeps those seen at least `min_count` times.
pub fn build_vocab<C, D, S>(corpus: C, min_count: u64) -> Result<Vocabulary, ClassifierError>
where
    C: IntoIterator<Item = D>,
    D: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    // token -> (first occurrence, count)
    let mut counts: HashMap<String, (usize, u64)> = HashMap::new();
    let mut docs = 0usize;
    for doc in corpus {
        docs += 1;
        for token in doc {
            let token = token.as_ref();
            if let Some(slot) = counts.get_mut(token) {
                slot.1 += 1;
            } else {
                let order = counts.len();
                counts.insert(token.to_owned(), (order, 1));
            }
        }
    }
    if docs == 0 {
        return Err(ClassifierError::EmptyCorpus);
    }
    let mut kept: Vec<(usize, String, u64)> = counts
        .into_iter()
        .filter(|(_, (_, c))| *c >= min_count)
        .map(|(t, (order, c))| (order, t, c))
        .collect();
    if kept.is_empty() {
        return Err(ClassifierError::EmptyVocabulary { min_count });
    }
    kept.sort_unstable_by_key(|(order, _, _)| *order);
    let entries = kept
        .into_iter()
        .map(|(_, token, count)| VocabEntry { token, count })
        .collect();
    Vocabulary::from_entries(entries)
}
