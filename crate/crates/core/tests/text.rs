use proptest::prelude::*;
use ufw_core::normalize::{normalize_str, normalize_text, NormalizeError, NormalizePolicy};
use ufw_core::tokenize::{load_tokenizer, Tokenizer, TokenizerError, TokenizerKind, TokenizerSpec};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

/// Char-by-char reference with no fast paths.
fn reference(text: &str, max_newlines: usize) -> String {
    let stripped: Vec<char> = text
        .to_lowercase()
        .nfd()
        .filter(|&c| get_general_category(c) != GeneralCategory::NonspacingMark)
        .collect::<String>()
        .nfd()
        .collect();
    let mut out = String::new();
    for c in stripped {
        if c == ' ' && out.ends_with(' ') {
            continue;
        }
        if c == '\n' && out.ends_with(&"\n".repeat(max_newlines)) {
            continue;
        }
        out.push(c);
    }
    out
}

fn fuzz_text() -> impl Strategy<Value = String> {
    let pieces = prop::sample::select(vec![
        "a", "Z", "É", "é", "e\u{301}", "\u{308}", "İ", "ß", "Ω", "Ж", "中文", "日本", "ﬁ", "ǅ", " ", "  ",
        "\n", "\n\n\n", "\t", "\r\n", "\u{a0}", "٣", "😀", "\u{200d}", "ẞ", "ｗ",
    ]);
    prop::collection::vec(pieces, 0..40).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_reference_and_is_idempotent(text in fuzz_text(), cap in 1usize..4) {
        let policy = NormalizePolicy { max_consecutive_newlines: cap, ..NormalizePolicy::default() };
        let once = normalize_str(&text, &policy);
        prop_assert_eq!(&once, &reference(&text, cap));
        prop_assert_eq!(normalize_str(&once, &policy), once.clone());
        prop_assert!(!once.contains("  "));
        prop_assert!(!once.contains(&"\n".repeat(cap + 1)));
        prop_assert_eq!(once.matches('\t').count(), text.matches('\t').count());
        prop_assert_eq!(once.matches('\r').count(), text.matches('\r').count());
    }

    #[test]
    fn arbitrary_strings_are_fixed_points_after_one_pass(text in any::<String>()) {
        let p = NormalizePolicy::default();
        let once = normalize_str(&text, &p);
        prop_assert_eq!(normalize_str(&once, &p), once);
    }

    #[test]
    fn count_matches_tokenize(text in fuzz_text()) {
        for tok in [Tokenizer::unicode_words(true), Tokenizer::unicode_words(false)] {
            prop_assert_eq!(tok.count_tokens(&text), tok.tokenize(&text).len());
        }
    }
}

#[test]
fn invalid_utf8_is_reported_with_offset() {
    assert_eq!(
        normalize_text(b"ok\xff", &NormalizePolicy::default()),
        Err(NormalizeError::InvalidUtf8 { position: 2 })
    );
    let zero = NormalizePolicy {
        max_consecutive_newlines: 0,
        ..NormalizePolicy::default()
    };
    assert_eq!(normalize_text(b"x", &zero), Err(NormalizeError::InvalidPolicy));
}

#[test]
fn switches_turn_steps_off() {
    let off = NormalizePolicy {
        lowercase: false,
        strip_diacritics: false,
        collapse_spaces: false,
        max_consecutive_newlines: 5,
    };
    assert_eq!(normalize_str("Crème  Brûlée\n\n\n", &off), "Crème  Brûlée\n\n\n");
}

#[test]
fn structural_tokens_are_kept() {
    let tok = Tokenizer::unicode_words(true);
    assert_eq!(
        tok.tokenize("one two\n\tthree"),
        ["one", "two", "\n", "\t", "three"]
    );
    let plain = Tokenizer::unicode_words(false);
    assert_eq!(plain.tokenize("one two\n\tthree"), ["one", "two", "three"]);
}

#[test]
fn greedy_vocab_prefers_longest_match() {
    let tok = Tokenizer::from_vocab_bytes("new\nnewyork\nyork\ncity\n".as_bytes(), true).unwrap();
    assert_eq!(tok.kind(), TokenizerKind::VocabGreedy);
    assert_eq!(tok.tokenize("newyorkcity\nnew"), ["newyork", "city", "\n", "new"]);
    assert_ne!(tok.fingerprint(), Tokenizer::default().fingerprint());
}

#[test]
fn vocab_errors() {
    assert!(matches!(
        Tokenizer::from_vocab_bytes(b"a\n\nb", true),
        Err(TokenizerError::VocabMalformed { line: 2, .. })
    ));
    assert!(matches!(
        Tokenizer::from_vocab_bytes(b"a\na", true),
        Err(TokenizerError::VocabMalformed { line: 2, .. })
    ));
    let spec = TokenizerSpec {
        kind: TokenizerKind::VocabGreedy,
        vocab_path: None,
        preserve_structural: true,
    };
    assert!(matches!(
        load_tokenizer(&spec),
        Err(TokenizerError::MissingVocabPath)
    ));
    let spec = TokenizerSpec {
        vocab_path: Some("/nonexistent/vocab.txt".into()),
        ..spec
    };
    assert!(matches!(
        load_tokenizer(&spec),
        Err(TokenizerError::VocabNotFound(_))
    ));
}
