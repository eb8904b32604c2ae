use std::fmt::Debug;
use std::ops::{AddAssign, SubAssign};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{featurize, ClassifierConfig, Vocabulary};
use crate::tokenize::Tokenizer;

/// Scalar type of the parameter matrices. Models are stored as `f32`;
/// `f64` instances are used for numerical checks.
pub trait Real: Float + AddAssign + SubAssign + Debug + Send + Sync + 'static {}

impl<T: Float + AddAssign + SubAssign + Debug + Send + Sync + 'static> Real for T {}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (rows.checked_mul(cols) == Some(data.len())).then_some(Self { rows, cols, data })
    }

    /// Uniform entries in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::from(rng.gen_range(-bound..=bound)).unwrap())
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from(x).unwrap()).collect(),
        }
    }
}

/// Input embeddings (`V + bucket` rows) and output weights (one row per label).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub input: Matrix<T>,
    pub output: Matrix<T>,
}

impl<T: Real> Parameters<T> {
    /// Input rows uniform in `[-1/dim, 1/dim]`, output rows zero.
    pub fn init(input_rows: usize, labels: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            input: Matrix::uniform(input_rows, dim, 1.0 / dim as f64, &mut rng),
            output: Matrix::zeros(labels, dim),
        }
    }

    /// Mean of the input rows for `ids`; zero for an empty id list.
    pub fn hidden(&self, ids: &[usize]) -> Vec<T> {
        let mut hidden = vec![T::zero(); self.input.cols()];
        if ids.is_empty() {
            return hidden;
        }
        // Eight rows per pass keeps several independent row loads in flight;
        // with a large bucket table nearly every row is a cache miss.
        let dim = hidden.len();
        let mut chunks = ids.chunks_exact(8);
        for c in &mut chunks {
            let rows: [&[T]; 8] = std::array::from_fn(|i| &self.input.row(c[i])[..dim]);
            for (d, h) in hidden.iter_mut().enumerate() {
                *h += ((rows[0][d] + rows[1][d]) + (rows[2][d] + rows[3][d]))
                    + ((rows[4][d] + rows[5][d]) + (rows[6][d] + rows[7][d]));
            }
        }
        for &id in chunks.remainder() {
            for (h, &x) in hidden.iter_mut().zip(self.input.row(id)) {
                *h += x;
            }
        }
        let n = T::from(ids.len()).unwrap();
        hidden.iter_mut().for_each(|h| *h = *h / n);
        hidden
    }

    pub fn logits(&self, hidden: &[T]) -> Vec<T> {
        (0..self.output.rows())
            .map(|k| dot(self.output.row(k), hidden))
            .collect()
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss and gradient pieces for one example under softmax cross-entropy.
///
/// With `n = ids.len()`, the full gradients are:
/// `dL/d output[k] = logit_grad[k] * hidden` and, for each occurrence of an
/// id in `ids`, `dL/d input[id] += hidden_grad / n`.
#[derive(Debug, Clone)]
pub struct ExampleGradient<T> {
    pub loss: T,
    pub probs: Vec<T>,
    pub hidden: Vec<T>,
    /// `p_k - [k == label]`.
    pub logit_grad: Vec<T>,
    /// `sum_k logit_grad[k] * output[k]`.
    pub hidden_grad: Vec<T>,
}

pub fn example_gradient<T: Real>(params: &Parameters<T>, ids: &[usize], label: usize) -> ExampleGradient<T> {
    let hidden = params.hidden(ids);
    let logits = params.logits(&hidden);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = logits
        .iter()
        .map(|&z| (z - max).exp())
        .fold(T::zero(), |a, b| a + b)
        .ln()
        + max;
    let loss = log_sum - logits[label];
    let probs = softmax(&logits);
    let logit_grad: Vec<T> = probs
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == label { p - T::one() } else { p })
        .collect();
    let mut hidden_grad = vec![T::zero(); hidden.len()];
    for (k, &g) in logit_grad.iter().enumerate() {
        for (hg, &w) in hidden_grad.iter_mut().zip(params.output.row(k)) {
            *hg += g * w;
        }
    }
    ExampleGradient {
        loss,
        probs,
        hidden,
        logit_grad,
        hidden_grad,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Argmax label index; ties resolve to the lower index.
    pub label: usize,
    pub probability: f64,
    pub distribution: Vec<f64>,
}

/// A trained quality classifier. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    vocab: Vocabulary,
    params: Parameters<f32>,
}

impl ClassifierModel {
    /// Assembles a model, checking that matrix shapes agree with the config and vocabulary.
    pub fn from_parts(
        config: ClassifierConfig,
        vocab: Vocabulary,
        params: Parameters<f32>,
    ) -> Result<Self, super::ClassifierError> {
        config.validate()?;
        let rows = vocab.len() + config.bucket;
        let shape_ok = params.input.rows() == rows
            && params.input.cols() == config.dim
            && params.output.rows() == config.labels.len()
            && params.output.cols() == config.dim;
        if !shape_ok {
            return Err(super::ClassifierError::CorruptPayload(format!(
                "matrix shapes {}x{} / {}x{} do not match config (expected {}x{} / {}x{})",
                params.input.rows(),
                params.input.cols(),
                params.output.rows(),
                params.output.cols(),
                rows,
                config.dim,
                config.labels.len(),
                config.dim
            )));
        }
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &Parameters<f32> {
        &self.params
    }

    pub fn features<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        featurize(tokens, &self.vocab, &self.config)
    }

    pub fn predict(&self, text: &str, tokenizer: &Tokenizer) -> Prediction {
        self.predict_tokens(&tokenizer.tokenize(text))
    }

    pub fn predict_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Prediction {
        self.predict_features(&self.features(tokens))
    }

    pub fn predict_features(&self, ids: &[usize]) -> Prediction {
        let hidden = self.params.hidden(ids);
        let logits: Vec<f64> = (0..self.params.output.rows())
            .map(|k| {
                self.params
                    .output
                    .row(k)
                    .iter()
                    .zip(&hidden)
                    .map(|(&w, &h)| w as f64 * h as f64)
                    .sum()
            })
            .collect();
        let distribution = softmax(&logits);
        let mut label = 0;
        for (k, &p) in distribution.iter().enumerate() {
            if p > distribution[label] {
                label = k;
            }
        }
        Prediction {
            label,
            probability: distribution[label],
            distribution,
        }
    }

    /// Probability of the positive label, the quantity thresholded by filtering.
    pub fn positive_probability(&self, ids: &[usize]) -> f64 {
        self.predict_features(ids).distribution[ClassifierConfig::POSITIVE]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::build_vocab;

    fn untrained(dim: usize) -> ClassifierModel {
        let config = ClassifierConfig {
            dim,
            bucket: 16,
            ..Default::default()
        };
        let vocab = build_vocab([vec!["a", "b"]], 1).unwrap();
        let params = Parameters::init(vocab.len() + config.bucket, 2, dim, 7);
        ClassifierModel::from_parts(config, vocab, params).unwrap()
    }

    #[test]
    fn zero_output_is_uniform() {
        let model = untrained(4);
        let p = model.predict_tokens(&["a", "b", "c"]);
        assert_eq!(p.distribution, vec![0.5, 0.5]);
        assert_eq!(p.label, 0);
    }

    #[test]
    fn zero_features_is_uniform() {
        let model = untrained(4);
        assert_eq!(model.positive_probability(&[]), 0.5);
    }

    #[test]
    fn init_bounds_and_determinism() {
        let p: Parameters<f32> = Parameters::init(10, 2, 8, 42);
        assert!(p.input.as_slice().iter().all(|x| x.abs() <= 1.0 / 8.0));
        assert!(p.output.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(p, Parameters::init(10, 2, 8, 42));
        assert_ne!(p, Parameters::init(10, 2, 8, 43));
    }

    #[test]
    fn hidden_is_mean_with_duplicates() {
        let input = Matrix::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 6.0]).unwrap();
        let params = Parameters {
            input,
            output: Matrix::zeros(2, 2),
        };
        assert_eq!(params.hidden(&[0, 1, 1]), vec![7.0 / 3.0, 14.0 / 3.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let config = ClassifierConfig {
            dim: 4,
            bucket: 16,
            ..Default::default()
        };
        let vocab = build_vocab([vec!["a"]], 1).unwrap();
        let params = Parameters::init(3, 2, 4, 0);
        assert!(ClassifierModel::from_parts(config, vocab, params).is_err());
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0f64, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }
}
