//! Keep-manifests: the sorted ids a classifier kept, tagged with the corpus
//! fingerprint so that manifests from different corpora are never combined.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::FilterError;

const HEADER_PREFIX: &str = "# corpus-fingerprint: ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepManifest {
    pub fingerprint: String,
    /// Sorted, unique.
    pub ids: Vec<String>,
}

impl KeepManifest {
    pub fn new(fingerprint: impl Into<String>, ids: impl IntoIterator<Item = String>) -> Self {
        let mut ids: Vec<String> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        Self {
            fingerprint: fingerprint.into(),
            ids,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), FilterError> {
        writeln!(out, "{HEADER_PREFIX}{}", self.fingerprint)?;
        for id in &self.ids {
            if id.contains(['\n', '\r']) {
                return Err(FilterError::InvalidId(id.clone()));
            }
            writeln!(out, "{id}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, FilterError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| FilterError::BadManifest("empty manifest".into()))?;
        let fingerprint = header
            .strip_prefix(HEADER_PREFIX)
            .ok_or_else(|| FilterError::BadManifest(format!("bad header line {header:?}")))?
            .trim()
            .to_owned();
        let ids = lines.collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(fingerprint, ids))
    }
}

/// Ids present in every manifest, sorted. Requires at least two manifests
/// over the same corpus.
pub fn intersect(manifests: &[KeepManifest]) -> Result<KeepManifest, FilterError> {
    let [first, rest @ ..] = manifests else {
        return Err(FilterError::TooFewManifests(0));
    };
    if rest.is_empty() {
        return Err(FilterError::TooFewManifests(1));
    }
    if let Some(other) = rest.iter().find(|m| m.fingerprint != first.fingerprint) {
        return Err(FilterError::CorpusMismatch {
            expected: first.fingerprint.clone(),
            found: other.fingerprint.clone(),
        });
    }
    let others: Vec<HashSet<&str>> = rest
        .iter()
        .map(|m| m.ids.iter().map(String::as_str).collect())
        .collect();
    let ids = first
        .ids
        .iter()
        .filter(|id| others.iter().all(|set| set.contains(id.as_str())))
        .cloned();
    Ok(KeepManifest::new(first.fingerprint.clone(), ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(ids: &[&str]) -> KeepManifest {
        KeepManifest::new("fp", ids.iter().map(|s| s.to_string()))
    }

    #[test]
    fn basic_intersection() {
        let out = intersect(&[m(&["a", "b", "c"]), m(&["d", "c", "b"])]).unwrap();
        assert_eq!(out.ids, vec!["b", "c"]);
        let same = m(&["x", "y"]);
        assert_eq!(intersect(&[same.clone(), same.clone()]).unwrap(), same);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            intersect(&[m(&["a"])]),
            Err(FilterError::TooFewManifests(1))
        ));
        let other = KeepManifest::new("other", vec!["a".to_string()]);
        assert!(matches!(
            intersect(&[m(&["a"]), other]),
            Err(FilterError::CorpusMismatch { .. })
        ));
    }

    #[test]
    fn file_format_round_trip() {
        let manifest = m(&["b", "a", "a"]);
        let mut buf = Vec::new();
        manifest.write(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "# corpus-fingerprint: fp\na\nb\n"
        );
        assert_eq!(KeepManifest::read(buf.as_slice()).unwrap(), manifest);
        assert!(KeepManifest::read("a\nb\n".as_bytes()).is_err());
    }
}
