use super::{ClassifierConfig, Vocabulary};

pub const NGRAM_HASH_MULTIPLIER: u64 = 116_049_371;

const FNV32_OFFSET: u32 = 2_166_136_261;
const FNV32_PRIME: u32 = 16_777_619;

/// 32-bit FNV-1a.
pub fn fnv1a32(bytes: &[u8]) -> u32 {
    bytes
        .iter()
        .fold(FNV32_OFFSET, |h, &b| (h ^ b as u32).wrapping_mul(FNV32_PRIME))
}

/// Token hash fed into n-gram hashing: FNV-1a over UTF-8, zero-extended.
#[inline]
pub fn token_hash(token: &str) -> u64 {
    fnv1a32(token.as_bytes()) as u64
}

/// Hash of a word n-gram from its token hashes. `None` for fewer than 2 tokens.
pub fn ngram_hash(token_hashes: &[u64]) -> Option<u64> {
    match token_hashes {
        [] | [_] => None,
        [first, rest @ ..] => Some(rest.iter().fold(*first, |h, &t| {
            h.wrapping_mul(NGRAM_HASH_MULTIPLIER).wrapping_add(t)
        })),
    }
}

/// Maps tokens to input-matrix rows.
///
/// In-vocabulary unigrams map to their vocabulary row. Every contiguous
/// n-gram of length 2..=`word_ngrams` maps to `V + hash % bucket`; tokens
/// outside the vocabulary still contribute their hash to those n-grams.
pub fn featurize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, config: &ClassifierConfig) -> Vec<usize> {
    let mut ids = Vec::with_capacity(tokens.len() * config.word_ngrams.max(1));
    ids.extend(tokens.iter().filter_map(|t| vocab.row(t.as_ref())));
    if config.word_ngrams < 2 || tokens.len() < 2 {
        return ids;
    }
    let hashes: Vec<u64> = tokens.iter().map(|t| token_hash(t.as_ref())).collect();
    let base = vocab.len();
    let bucket = config.bucket as u64;
    for (i, &first) in hashes.iter().enumerate() {
        let mut h = first;
        for &next in hashes.iter().skip(i + 1).take(config.word_ngrams - 1) {
            h = h.wrapping_mul(NGRAM_HASH_MULTIPLIER).wrapping_add(next);
            ids.push(base + (h % bucket) as usize);
        }
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::build_vocab;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a32(b""), 2_166_136_261);
        assert_eq!(fnv1a32(b"a"), 3_826_002_220);
        // Published FNV-1a test vector.
        assert_eq!(fnv1a32(b"foobar"), 0xbf9c_f968);
    }

    #[test]
    fn ngram_hash_needs_two_tokens() {
        assert_eq!(ngram_hash(&[]), None);
        assert_eq!(ngram_hash(&[7]), None);
        assert_eq!(ngram_hash(&[1, 2]), Some(NGRAM_HASH_MULTIPLIER + 2));
    }

    #[test]
    fn unigrams_only_when_word_ngrams_is_one() {
        let vocab = build_vocab([vec!["a", "b"]], 1).unwrap();
        let cfg = ClassifierConfig {
            word_ngrams: 1,
            bucket: 10,
            ..Default::default()
        };
        assert_eq!(featurize(&["a", "b"], &vocab, &cfg), vec![0, 1]);
        assert!(featurize::<&str>(&[], &vocab, &cfg).is_empty());
    }

    #[test]
    fn oov_tokens_still_shape_ngrams() {
        let vocab = build_vocab([vec!["a"]], 1).unwrap();
        let cfg = ClassifierConfig {
            word_ngrams: 2,
            bucket: 1000,
            ..Default::default()
        };
        let ids = featurize(&["a", "zzz"], &vocab, &cfg);
        let h = ngram_hash(&[token_hash("a"), token_hash("zzz")]).unwrap();
        assert_eq!(ids, vec![0, 1 + (h % 1000) as usize]);
    }
}
