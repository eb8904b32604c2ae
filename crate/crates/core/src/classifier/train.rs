use log::debug;

use super::{
    build_vocab, example_gradient, featurize, ClassifierConfig, ClassifierError, ClassifierModel,
    LabeledExample, Parameters, Real,
};
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean loss over each epoch's examples, measured before each update.
    pub epoch_losses: Vec<f64>,
    /// Examples with no features; they contribute no update.
    pub skipped_examples: usize,
}

/// One SGD update on a single example; returns the pre-update loss.
///
/// Output rows move along `-lr * logit_grad[k] * hidden`; every occurrence of
/// an input row moves along `-lr * hidden_grad / n`. The hidden gradient is
/// taken against the output weights as they were before this step.
pub fn sgd_step<T: Real>(params: &mut Parameters<T>, ids: &[usize], label: usize, lr: T) -> T {
    let g = example_gradient(params, ids, label);
    for (k, &gk) in g.logit_grad.iter().enumerate() {
        let scale = lr * gk;
        for (w, &h) in params.output.row_mut(k).iter_mut().zip(&g.hidden) {
            *w -= scale * h;
        }
    }
    if !ids.is_empty() {
        let scale = lr / T::from(ids.len()).unwrap();
        for &id in ids {
            for (w, &hg) in params.input.row_mut(id).iter_mut().zip(&g.hidden_grad) {
                *w -= scale * hg;
            }
        }
    }
    g.loss
}

pub fn train(
    dataset: &[LabeledExample],
    config: &ClassifierConfig,
    tokenizer: &Tokenizer,
) -> Result<ClassifierModel, ClassifierError> {
    train_with_report(dataset, config, tokenizer).map(|(m, _)| m)
}

/// Sequential, deterministic SGD with a learning rate that decays linearly
/// from `config.lr` to zero over all processed examples.
pub fn train_with_report(
    dataset: &[LabeledExample],
    config: &ClassifierConfig,
    tokenizer: &Tokenizer,
) -> Result<(ClassifierModel, TrainReport), ClassifierError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if let Some(bad) = dataset.iter().find(|ex| ex.label >= config.labels.len()) {
        return Err(ClassifierError::UnknownLabel(bad.label.to_string()));
    }

    let tokenized: Vec<Vec<&str>> = dataset.iter().map(|ex| tokenizer.tokenize(&ex.text)).collect();
    let vocab = build_vocab(tokenized.iter().map(|t| t.iter()), config.min_count)?;
    let features: Vec<Vec<usize>> = tokenized
        .iter()
        .map(|tokens| featurize(tokens, &vocab, config))
        .collect();
    drop(tokenized);

    let mut params: Parameters<f32> = Parameters::init(
        vocab.len() + config.bucket,
        config.labels.len(),
        config.dim,
        config.seed,
    );

    let total = (config.epochs * dataset.len()) as f64;
    let mut processed = 0usize;
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0f64;
        let mut counted = 0usize;
        for (ex, ids) in dataset.iter().zip(&features) {
            let lr = config.lr * (1.0 - processed as f64 / total);
            processed += 1;
            if ids.is_empty() {
                if epoch == 0 {
                    report.skipped_examples += 1;
                }
                continue;
            }
            loss_sum += sgd_step(&mut params, ids, ex.label, lr as f32) as f64;
            counted += 1;
        }
        let mean = if counted == 0 {
            0.0
        } else {
            loss_sum / counted as f64
        };
        debug!(
            "epoch {}: mean loss {:.6} over {} examples",
            epoch + 1,
            mean,
            counted
        );
        report.epoch_losses.push(mean);
    }

    let model = ClassifierModel::from_parts(config.clone(), vocab, params)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Matrix;

    fn tiny_config() -> ClassifierConfig {
        ClassifierConfig {
            dim: 8,
            bucket: 64,
            min_count: 1,
            epochs: 1,
            ..Default::default()
        }
    }

    #[test]
    fn singleton_loss_decreases() {
        let ex = LabeledExample {
            text: "good text here".into(),
            label: 1,
        };
        let dataset = vec![ex; 20];
        let (_, report) = train_with_report(&dataset, &tiny_config(), &Tokenizer::default()).unwrap();
        let mut params: Parameters<f64> = Parameters::init(3 + 64, 2, 8, 0);
        let first = sgd_step(&mut params, &[0, 1, 2], 1, 0.1);
        let second = sgd_step(&mut params, &[0, 1, 2], 1, 0.1);
        assert!(second < first);
        assert!(report.epoch_losses[0] < std::f64::consts::LN_2);
    }

    #[test]
    fn first_step_from_zero_output_has_ln2_loss() {
        let mut params: Parameters<f64> = Parameters::init(4, 2, 3, 1);
        let loss = sgd_step(&mut params, &[0, 2], 0, 0.5);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        // Output rows moved; input rows were untouched because output was zero.
        assert!(params.output.as_slice().iter().any(|&w| w != 0.0));
        let fresh: Parameters<f64> = Parameters::init(4, 2, 3, 1);
        assert_eq!(params.input, fresh.input);
    }

    #[test]
    fn duplicate_ids_get_repeated_updates() {
        let input = Matrix::from_vec(2, 1, vec![1.0f64, 1.0]).unwrap();
        let output = Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        let mut params = Parameters { input, output };
        let g = example_gradient(&params, &[0, 0, 1], 1);
        sgd_step(&mut params, &[0, 0, 1], 1, 1.0);
        let step = g.hidden_grad[0] / 3.0;
        assert!((params.input.row(0)[0] - (1.0 - 2.0 * step)).abs() < 1e-12);
        assert!((params.input.row(1)[0] - (1.0 - step)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let tok = Tokenizer::default();
        assert!(matches!(
            train(&[], &tiny_config(), &tok),
            Err(ClassifierError::EmptyDataset)
        ));
        let bad = [LabeledExample {
            text: "x".into(),
            label: 2,
        }];
        assert!(matches!(
            train(&bad, &tiny_config(), &tok),
            Err(ClassifierError::UnknownLabel(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<_> = (0..40)
            .map(|i| LabeledExample {
                text: if i % 2 == 0 {
                    "alpha beta gamma"
                } else {
                    "delta epsilon zeta"
                }
                .into(),
                label: i % 2,
            })
            .collect();
        let tok = Tokenizer::default();
        let a = train(&data, &tiny_config(), &tok).unwrap();
        let b = train(&data, &tiny_config(), &tok).unwrap();
        assert_eq!(a, b);
    }
}
