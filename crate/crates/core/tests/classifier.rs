use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ufw_core::classifier::{
    build_vocab, example_gradient, featurize, read_model, sgd_step, train, write_model, ClassifierConfig,
    ClassifierError, LabeledExample, Parameters,
};
use ufw_core::tokenize::Tokenizer;

/// Byte-at-a-time FNV-1a written against the published constants.
fn fnv_oracle(s: &str) -> u64 {
    let mut h: u64 = 0x811c9dc5;
    for b in s.bytes() {
        h ^= b as u64;
        h = (h * 0x01000193) & 0xffff_ffff;
    }
    h
}

fn featurize_oracle(
    tokens: &[&str],
    vocab_rows: &dyn Fn(&str) -> Option<usize>,
    v: usize,
    n: usize,
    bucket: u64,
) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens.iter().filter_map(|t| vocab_rows(t)).collect();
    for len in 2..=n {
        for start in 0..tokens.len() {
            if start + len > tokens.len() {
                continue;
            }
            let mut h = fnv_oracle(tokens[start]);
            for t in &tokens[start + 1..start + len] {
                h = h.wrapping_mul(116_049_371).wrapping_add(fnv_oracle(t));
            }
            ids.push(v + (h % bucket) as usize);
        }
    }
    ids.sort_unstable();
    ids
}

#[test]
fn featurize_matches_reference_hashing() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words = ["alpha", "beta", "γάμμα", "δ", "\n", "x", "longer-token", "日本"];
    let vocab = build_vocab([words.iter().take(5)], 1).unwrap();
    for n in 1..=4 {
        let config = ClassifierConfig {
            word_ngrams: n,
            bucket: 997,
            ..ClassifierConfig::default()
        };
        for _ in 0..200 {
            let len = rng.gen_range(0..12);
            let tokens: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect();
            let mut got = featurize(&tokens, &vocab, &config);
            got.sort_unstable();
            let want = featurize_oracle(&tokens, &|t| vocab.row(t), vocab.len(), n, 997);
            assert_eq!(got, want, "{tokens:?} n={n}");
        }
    }
}

/// Loss computed from scratch in f64: mean embedding, logits, log-sum-exp.
fn loss_oracle(input: &[Vec<f64>], output: &[Vec<f64>], ids: &[usize], label: usize) -> f64 {
    let dim = output[0].len();
    let mut hidden = vec![0.0; dim];
    for &id in ids {
        for d in 0..dim {
            hidden[d] += input[id][d] / ids.len() as f64;
        }
    }
    let logits: Vec<f64> = output
        .iter()
        .map(|w| w.iter().zip(&hidden).map(|(a, b)| a * b).sum())
        .collect();
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 8;
    let rows = 12;
    let mut params: Parameters<f64> = Parameters::init(rows, 2, dim, 3);
    for w in params.output.as_mut_slice() {
        *w = rng.gen_range(-0.5..0.5);
    }
    for w in params.input.as_mut_slice() {
        *w = rng.gen_range(-0.5..0.5);
    }
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(1..6);
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..rows)).collect();
        let label = rng.gen_range(0..2);
        let g = example_gradient(&params, &ids, label);
        let input: Vec<Vec<f64>> = (0..rows).map(|r| params.input.row(r).to_vec()).collect();
        let output: Vec<Vec<f64>> = (0..2).map(|r| params.output.row(r).to_vec()).collect();

        let (is_output, row, col) = if rng.gen_bool(0.5) {
            (true, rng.gen_range(0..2), rng.gen_range(0..dim))
        } else {
            (false, ids[rng.gen_range(0..n)], rng.gen_range(0..dim))
        };
        let eval = |delta: f64| {
            let (mut i, mut o) = (input.clone(), output.clone());
            if is_output {
                o[row][col] += delta;
            } else {
                i[row][col] += delta;
            }
            loss_oracle(&i, &o, &ids, label)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = if is_output {
            g.logit_grad[row] * g.hidden[col]
        } else {
            let occurrences = ids.iter().filter(|&&i| i == row).count() as f64;
            g.hidden_grad[col] * occurrences / n as f64
        };
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn sgd_step_lowers_the_loss() {
    let mut params: Parameters<f64> = Parameters::init(6, 2, 4, 0);
    let ids = [0, 3, 3];
    let before = example_gradient(&params, &ids, 1).loss;
    sgd_step(&mut params, &ids, 1, 0.5);
    sgd_step(&mut params, &ids, 1, 0.5);
    assert!(example_gradient(&params, &ids, 1).loss < before);
}

fn corpus(seed: u64, per_class: usize) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..per_class * 2 {
        let label = i % 2;
        let prefix = if label == 1 { "pos" } else { "neg" };
        let words: Vec<String> = (0..30)
            .map(|_| format!("{prefix}{}", rng.gen_range(0..50)))
            .collect();
        out.push(LabeledExample {
            text: words.join(" "),
            label,
        });
    }
    out
}

#[test]
fn separable_corpus_is_learned_and_models_round_trip() {
    let config = ClassifierConfig {
        dim: 16,
        bucket: 5000,
        lr: 0.5,
        epochs: 10,
        ..ClassifierConfig::default()
    };
    let tok = Tokenizer::default();
    let model = train(&corpus(1, 60), &config, &tok).unwrap();
    let held_out = corpus(2, 40);
    let correct = held_out
        .iter()
        .filter(|ex| model.predict(&ex.text, &tok).label == ex.label)
        .count();
    assert_eq!(correct, held_out.len());

    let mut bytes = Vec::new();
    write_model(&model, &mut bytes).unwrap();
    let loaded = read_model(&bytes).unwrap();
    assert_eq!(loaded.params(), model.params());
    assert_eq!(loaded.config(), model.config());

    let again = train(&corpus(1, 60), &config, &tok).unwrap();
    let mut bytes2 = Vec::new();
    write_model(&again, &mut bytes2).unwrap();
    assert_eq!(bytes, bytes2);

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(read_model(&flipped).is_err());
    assert!(read_model(&bytes[..bytes.len() - 3]).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(read_model(&bad_magic).is_err());
}

#[test]
fn training_errors() {
    let tok = Tokenizer::default();
    assert!(matches!(
        train(&[], &ClassifierConfig::default(), &tok),
        Err(ClassifierError::EmptyDataset)
    ));
    let bad = ClassifierConfig {
        dim: 0,
        ..ClassifierConfig::default()
    };
    assert!(train(&corpus(1, 2), &bad, &tok).is_err());
}
