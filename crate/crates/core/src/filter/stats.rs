use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const SCORE_BINS: usize = 100;

/// Default token-length bin edges: 0, then powers of two from 32 to 32768.
pub fn default_length_edges() -> Vec<u64> {
    std::iter::once(0).chain((5..=15).map(|p| 1u64 << p)).collect()
}

/// Token-length distribution. Bin `i` covers `[edges[i], edges[i+1])`; the
/// last bin is open-ended. Lengths below `edges[0]` land in `underflow`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLengthStats {
    pub edges: Vec<u64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub documents: u64,
    pub token_sum: u64,
    /// Exact length -> document count, for quantiles.
    pub lengths: BTreeMap<u64, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLengthReport {
    pub edges: Vec<u64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub documents: u64,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
}

impl TokenLengthStats {
    /// `edges` must be non-empty and strictly increasing.
    pub fn new(edges: Vec<u64>) -> Option<Self> {
        if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
            return None;
        }
        Some(Self {
            counts: vec![0; edges.len()],
            edges,
            underflow: 0,
            documents: 0,
            token_sum: 0,
            lengths: BTreeMap::new(),
        })
    }

    pub fn record(&mut self, tokens: u64) {
        self.documents += 1;
        self.token_sum += tokens;
        *self.lengths.entry(tokens).or_default() += 1;
        match self.edges.partition_point(|&e| e <= tokens) {
            0 => self.underflow += 1,
            i => self.counts[i - 1] += 1,
        }
    }

    /// Adds another distribution over the same edges.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(
            self.edges, other.edges,
            "cannot merge histograms with different edges"
        );
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        self.underflow += other.underflow;
        self.documents += other.documents;
        self.token_sum += other.token_sum;
        for (&len, &n) in &other.lengths {
            *self.lengths.entry(len).or_default() += n;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.documents == 0 {
            0.0
        } else {
            self.token_sum as f64 / self.documents as f64
        }
    }

    /// Nearest-rank quantile: the smallest length covering `ceil(q * n)` documents.
    pub fn quantile(&self, q: f64) -> u64 {
        if self.documents == 0 {
            return 0;
        }
        let rank = ((q * self.documents as f64).ceil() as u64).clamp(1, self.documents);
        let mut seen = 0;
        for (&len, &n) in &self.lengths {
            seen += n;
            if seen >= rank {
                return len;
            }
        }
        unreachable!("rank never exceeds total count")
    }

    pub fn report(&self) -> TokenLengthReport {
        TokenLengthReport {
            edges: self.edges.clone(),
            counts: self.counts.clone(),
            underflow: self.underflow,
            documents: self.documents,
            mean: self.mean(),
            p50: self.quantile(0.5),
            p90: self.quantile(0.9),
            p99: self.quantile(0.99),
        }
    }
}

/// Counters for one scoring run, mergeable across shards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    /// Every record seen, including malformed ones.
    pub documents_total: u64,
    pub documents_kept: u64,
    pub documents_rejected: u64,
    pub malformed: u64,
    pub empty_documents: u64,
    pub zero_feature_documents: u64,
    pub tokens_total: u64,
    pub tokens_kept: u64,
    /// 100 uniform bins over [0, 1]; a score of exactly 1 falls in the last bin.
    pub score_histogram: Vec<u64>,
    pub token_lengths: TokenLengthStats,
}

impl FilterStats {
    pub fn new(length_edges: Vec<u64>) -> Option<Self> {
        Some(Self {
            documents_total: 0,
            documents_kept: 0,
            documents_rejected: 0,
            malformed: 0,
            empty_documents: 0,
            zero_feature_documents: 0,
            tokens_total: 0,
            tokens_kept: 0,
            score_histogram: vec![0; SCORE_BINS],
            token_lengths: TokenLengthStats::new(length_edges)?,
        })
    }

    pub fn score_bin(score: f64) -> usize {
        ((score * SCORE_BINS as f64) as usize).min(SCORE_BINS - 1)
    }

    pub fn record(&mut self, score: f64, tokens: u64, kept: bool) {
        self.documents_total += 1;
        self.tokens_total += tokens;
        if kept {
            self.documents_kept += 1;
            self.tokens_kept += tokens;
        } else {
            self.documents_rejected += 1;
        }
        self.score_histogram[Self::score_bin(score)] += 1;
        self.token_lengths.record(tokens);
    }

    pub fn record_malformed(&mut self) {
        self.documents_total += 1;
        self.malformed += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.documents_total += other.documents_total;
        self.documents_kept += other.documents_kept;
        self.documents_rejected += other.documents_rejected;
        self.malformed += other.malformed;
        self.empty_documents += other.empty_documents;
        self.zero_feature_documents += other.zero_feature_documents;
        self.tokens_total += other.tokens_total;
        self.tokens_kept += other.tokens_kept;
        self.score_histogram
            .iter_mut()
            .zip(&other.score_histogram)
            .for_each(|(a, b)| *a += b);
        self.token_lengths.merge(&other.token_lengths);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_documents_mean_and_bins() {
        let mut s = TokenLengthStats::new(vec![0, 4, 10]).unwrap();
        s.record(3);
        s.record(5);
        assert_eq!(s.mean(), 4.0);
        assert_eq!(s.counts, vec![1, 1, 0]);
        assert_eq!(s.quantile(0.5), 3);
        assert_eq!(s.quantile(0.9), 5);
    }

    #[test]
    fn empty_document_lands_in_first_bin() {
        let mut s = TokenLengthStats::new(default_length_edges()).unwrap();
        s.record(0);
        assert_eq!(s.counts[0], 1);
        assert_eq!(s.mean(), 0.0);
        assert_eq!(s.report().p99, 0);
    }

    #[test]
    fn underflow_and_overflow() {
        let mut s = TokenLengthStats::new(vec![5, 10]).unwrap();
        s.record(1);
        s.record(10);
        s.record(1_000);
        assert_eq!((s.underflow, s.counts.clone()), (1, vec![0, 2]));
    }

    #[test]
    fn edges_must_increase() {
        assert!(TokenLengthStats::new(vec![]).is_none());
        assert!(TokenLengthStats::new(vec![0, 5, 5]).is_none());
    }

    #[test]
    fn score_bins_cover_closed_interval() {
        assert_eq!(FilterStats::score_bin(0.0), 0);
        assert_eq!(FilterStats::score_bin(0.5), 50);
        assert_eq!(FilterStats::score_bin(0.999), 99);
        assert_eq!(FilterStats::score_bin(1.0), 99);
    }

    #[test]
    fn stats_round_trip_through_json() {
        let mut s = FilterStats::new(default_length_edges()).unwrap();
        s.record(0.7, 12, true);
        s.record_malformed();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<FilterStats>(&json).unwrap(), s);
    }
}
