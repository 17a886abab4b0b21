//! Binary sentence filter: a softmax classifier over mean-pooled token
//! embeddings that decides whether a sentence may contain any span.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{segment_sentences, Document, Sentence};
use crate::encoder::{apply_dropout, Embedder, EmbedderConfig, Provider};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::{AdamW, AdamWConfig};

pub trait SentenceFilter {
    /// Probability that the sentence contains at least one span.
    fn positive_probability(&self, sentence: &Sentence) -> Result<f64>;

    fn threshold(&self) -> f64;

    fn keep(&self, sentence: &Sentence) -> Result<bool> {
        Ok(self.positive_probability(sentence)? >= self.threshold())
    }
}

/// Keeps sentences whose positive probability reaches the threshold, in order.
pub fn filter_sentences<F: SentenceFilter + ?Sized>(filter: &F, sentences: Vec<Sentence>) -> Result<Vec<Sentence>> {
    let mut kept = Vec::with_capacity(sentences.len());
    for s in sentences {
        if filter.keep(&s)? {
            kept.push(s);
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterExample {
    pub sentence: Sentence,
    pub positive: bool,
}

/// Labels each sentence positive iff it overlaps a trigger or argument span.
pub fn build_filter_dataset(corpus: &[Document]) -> Vec<FilterExample> {
    corpus
        .iter()
        .flat_map(|doc| {
            segment_sentences(doc).into_iter().map(move |sentence| {
                let positive = doc
                    .trigger_spans
                    .iter()
                    .chain(&doc.argument_spans)
                    .any(|s| s.overlaps(sentence.start, sentence.end));
                FilterExample { sentence, positive }
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig {
                learning_rate: 1e-5,
                weight_decay: 0.01,
                ..AdamWConfig::default()
            },
            batch_size: 16,
            epochs: 5,
            dropout: 0.1,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!("filter threshold {} outside (0, 1)", self.threshold)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("filter batch size and epochs must be positive"));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::invalid("filter learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct FilterState {
    embedder: EmbedderConfig,
    weights: Matrix,
    bias: Vec<f64>,
    threshold: f64,
    config: FilterConfig,
}

#[derive(Debug, Clone)]
pub struct FilterModel {
    pub embedder: EmbedderConfig,
    /// `d × 2`; column 1 is the positive class.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub threshold: f64,
    pub config: FilterConfig,
    provider: Provider,
}

impl FilterModel {
    pub fn pooled(&self, sentence: &Sentence) -> Result<Vec<f64>> {
        mean_pool(&self.provider.embed(sentence)?)
    }

    fn probability_of(&self, pooled: &[f64]) -> f64 {
        softmax2(logits(&self.weights, &self.bias, pooled))[1]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let state = FilterState {
            embedder: self.embedder.clone(),
            weights: self.weights.clone(),
            bias: self.bias.clone(),
            threshold: self.threshold,
            config: self.config.clone(),
        };
        checkpoint::write(path, "filter", &state)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let state: FilterState = checkpoint::read(path, "filter")?;
        let provider = state.embedder.build()?;
        if state.weights.rows() != provider.dim() || state.weights.cols() != 2 || state.bias.len() != 2 {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: "filter weights do not match the embedder dimension".into(),
            });
        }
        Ok(Self {
            embedder: state.embedder,
            weights: state.weights,
            bias: state.bias,
            threshold: state.threshold,
            config: state.config,
            provider,
        })
    }
}

impl SentenceFilter for FilterModel {
    fn positive_probability(&self, sentence: &Sentence) -> Result<f64> {
        if sentence.is_empty() {
            return Ok(0.0);
        }
        Ok(self.probability_of(&self.pooled(sentence)?))
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

fn mean_pool(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() == 0 {
        return Err(Error::invalid("cannot pool an empty sentence"));
    }
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    let n = m.rows() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

fn logits(weights: &Matrix, bias: &[f64], x: &[f64]) -> [f64; 2] {
    let mut z = [bias[0], bias[1]];
    for (k, &xk) in x.iter().enumerate() {
        z[0] += xk * weights.get(k, 0);
        z[1] += xk * weights.get(k, 1);
    }
    z
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

/// Trains the filter with softmax cross-entropy and AdamW.
pub fn train_filter(examples: &[FilterExample], embedder: &EmbedderConfig, config: &FilterConfig) -> Result<FilterModel> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("no sentences to train the filter on".into()));
    }
    let positives = examples.iter().filter(|e| e.positive).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::invalid("filter training data must contain both classes"));
    }
    let provider = embedder.build()?;
    let pooled = examples
        .iter()
        .filter(|e| !e.sentence.is_empty())
        .map(|e| Ok((mean_pool(&provider.embed(&e.sentence)?)?, e.positive)))
        .collect::<Result<Vec<_>>>()?;

    let d = provider.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = Matrix::zeros(d, 2);
    let mut bias = vec![0.0; 2];
    let mut opt = AdamW::new(config.optimizer, &[d * 2, 2]);
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut gw = Matrix::zeros(d, 2);
            let mut gb = [0.0; 2];
            for &i in batch {
                let (x, positive) = &pooled[i];
                let x = apply_dropout(&Matrix::from_vec(1, d, x.clone()), config.dropout, &mut rng)?;
                let x = x.row(0);
                let p = softmax2(logits(&weights, &bias, x));
                let target = [f64::from(!*positive), f64::from(*positive)];
                for c in 0..2 {
                    let g = (p[c] - target[c]) / batch.len() as f64;
                    gb[c] += g;
                    for (k, &xk) in x.iter().enumerate() {
                        gw.add_to(k, c, xk * g);
                    }
                }
            }
            opt.step(&mut [weights.as_mut_slice(), &mut bias], &[gw.as_slice(), &gb]);
        }
    }
    Ok(FilterModel {
        embedder: embedder.clone(),
        weights,
        bias,
        threshold: config.threshold,
        config: config.clone(),
        provider,
    })
}
