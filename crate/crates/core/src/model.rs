//! The two-head tagger: a shared token representation feeding a trigger CRF
//! and an argument CRF, trained on the weighted sum of the two NLLs.

use std::collections::HashSet;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bio::{decode_bio, repair_bio, LabelScheme};
use crate::checkpoint;
use crate::corpus::{segment_sentences, split_overlong, AnnotatedSpan, Document, Sentence};
use crate::crf::{nll_gradients, weighted_nll_gradients, CrfGradients, CrfHead};
use crate::dataset::{label_corpus, LabeledSentence, MAX_TOKENS};
use crate::encoder::{apply_dropout, Embedder, EmbedderConfig, Provider};
use crate::error::{Error, Result};
use crate::filter::SentenceFilter;
use crate::matrix::Matrix;
use crate::optim::{AdamW, AdamWConfig};
use crate::sampling::{class_weights, oversample_indices, sentence_weights, weighted_sampler, Strategy};

/// Sentences per sorting bucket, in batches.
const BUCKET_BATCHES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Weight of the trigger loss.
    pub alpha: f64,
    /// Weight of the argument loss.
    pub beta: f64,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub max_tokens: usize,
    pub seed: u64,
    pub strategy: Strategy,
    /// Mask transitions that cannot occur in valid BIO.
    pub constrained_transitions: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            optimizer: AdamWConfig::default(),
            batch_size: 8,
            epochs: 5,
            dropout: 0.1,
            max_tokens: MAX_TOKENS,
            seed: 0,
            strategy: Strategy::None,
            constrained_transitions: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max tokens must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        self.strategy.validate()
    }
}

#[derive(Debug, Clone)]
pub struct MultiOutputModel {
    pub embedder: EmbedderConfig,
    pub trigger_scheme: LabelScheme,
    pub argument_scheme: LabelScheme,
    pub trigger: CrfHead,
    pub argument: CrfHead,
    pub max_tokens: usize,
    provider: Provider,
}

/// Spans predicted for one document, numbered `T1…` per subtask.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentPrediction {
    pub triggers: Vec<AnnotatedSpan>,
    pub arguments: Vec<AnnotatedSpan>,
}

impl MultiOutputModel {
    /// Fresh model with randomly initialised heads.
    pub fn new<R: Rng + ?Sized>(embedder: &EmbedderConfig, max_tokens: usize, rng: &mut R) -> Result<Self> {
        let provider = embedder.build()?;
        let (ts, args) = (LabelScheme::trigger(), LabelScheme::argument());
        let d = provider.dim();
        let trigger = CrfHead::random(d, ts.num_tags(), rng);
        let argument = CrfHead::random(d, args.num_tags(), rng);
        Self::from_parts(embedder.clone(), provider, ts, args, trigger, argument, max_tokens)
    }

    fn from_parts(
        embedder: EmbedderConfig,
        provider: Provider,
        trigger_scheme: LabelScheme,
        argument_scheme: LabelScheme,
        trigger: CrfHead,
        argument: CrfHead,
        max_tokens: usize,
    ) -> Result<Self> {
        let d = provider.dim();
        for (head, scheme) in [(&trigger, &trigger_scheme), (&argument, &argument_scheme)] {
            if head.dim() != d || head.num_tags() != scheme.num_tags() {
                return Err(Error::Dimension(format!(
                    "{} head is {}×{}, expected {}×{}",
                    scheme.task,
                    head.dim(),
                    head.num_tags(),
                    d,
                    scheme.num_tags()
                )));
            }
            if head.transitions.rows() != scheme.num_tags() || head.bias.len() != scheme.num_tags() {
                return Err(Error::Dimension(format!("{} head parameter shapes disagree", scheme.task)));
            }
        }
        Ok(Self {
            embedder,
            trigger_scheme,
            argument_scheme,
            trigger,
            argument,
            max_tokens,
            provider,
        })
    }

    pub fn provider(&self) -> &Provider {
        &self.provider
    }

    pub fn set_constrained(&mut self, on: bool) {
        self.trigger.constrained = on.then(|| self.trigger_scheme.clone());
        self.argument.constrained = on.then(|| self.argument_scheme.clone());
    }

    /// Unrepaired Viterbi tags of both heads for one sentence segment.
    pub fn sentence_tags(&self, sentence: &Sentence) -> Result<(Vec<usize>, Vec<usize>)> {
        if sentence.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let h = self.provider.embed(sentence)?;
        Ok((self.trigger.decode(&h)?, self.argument.decode(&h)?))
    }

    /// Segments, filters, tags and decodes one document.
    pub fn predict(&self, doc: &Document, filter: Option<&dyn SentenceFilter>) -> Result<DocumentPrediction> {
        let mut out = DocumentPrediction::default();
        for segment in tagging_segments(doc, filter, self.max_tokens)? {
            let (tr, arg) = self.sentence_tags(&segment)?;
            out.triggers
                .extend(decode_bio(&segment, &repair_bio(&tr, &self.trigger_scheme), &self.trigger_scheme)?);
            out.arguments
                .extend(decode_bio(&segment, &repair_bio(&arg, &self.argument_scheme), &self.argument_scheme)?);
        }
        number_spans(&mut out.triggers);
        number_spans(&mut out.arguments);
        Ok(out)
    }
}

/// Sentences that survive the filter, split into segments of at most
/// `max_tokens` tokens.
pub fn tagging_segments(doc: &Document, filter: Option<&dyn SentenceFilter>, max_tokens: usize) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for sentence in segment_sentences(doc) {
        if let Some(f) = filter {
            if !f.keep(&sentence)? {
                continue;
            }
        }
        out.extend(split_overlong(&sentence, max_tokens).into_iter().filter(|s| !s.is_empty()));
    }
    Ok(out)
}

pub(crate) fn number_spans(spans: &mut [AnnotatedSpan]) {
    for (i, s) in spans.iter_mut().enumerate() {
        s.id = format!("T{}", i + 1);
    }
}

/// `α·l_tr + β·l_arg`.
pub fn joint_loss(l_tr: f64, l_arg: f64, alpha: f64, beta: f64) -> Result<f64> {
    if l_tr < 0.0 || l_arg < 0.0 {
        return Err(Error::invalid(format!("losses must be non-negative, got {l_tr} and {l_arg}")));
    }
    Ok(alpha * l_tr + beta * l_arg)
}

/// A labeled sentence with its (undropped) token embeddings.
#[derive(Debug, Clone)]
pub struct EncodedSentence {
    pub labeled: LabeledSentence,
    pub embeddings: Matrix,
}

pub fn encode_sentences(model: &MultiOutputModel, labeled: Vec<LabeledSentence>) -> Result<Vec<EncodedSentence>> {
    labeled
        .into_iter()
        .map(|l| {
            let embeddings = model.provider.embed(&l.sentence)?;
            Ok(EncodedSentence { labeled: l, embeddings })
        })
        .collect()
}

/// Per-tag loss weights of both heads (label-weighted strategy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagWeights {
    pub trigger: Vec<f64>,
    pub argument: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub trigger: CrfGradients,
    pub argument: CrfGradients,
}

fn zero_gradients(head: &CrfHead) -> CrfGradients {
    let (d, c) = (head.dim(), head.num_tags());
    CrfGradients {
        weights: Matrix::zeros(d, c),
        bias: vec![0.0; c],
        transitions: Matrix::zeros(c, c),
        emissions: Matrix::zeros(0, c),
    }
}

fn accumulate_head(
    head: &CrfHead,
    h: &Matrix,
    gold: &[usize],
    weights: Option<&[f64]>,
    scale: f64,
    acc: &mut CrfGradients,
) -> Result<f64> {
    let e = head.emissions(h)?;
    let t = head.effective_transitions();
    let g = match weights {
        Some(w) => weighted_nll_gradients(&e, &t, gold, w)?,
        None => nll_gradients(&e, &t, gold)?,
    };
    let (dw, db) = head.linear_gradients(h, &g.emissions);
    acc.weights.add_scaled(&dw, scale);
    for (a, b) in acc.bias.iter_mut().zip(&db) {
        *a += scale * b;
    }
    acc.transitions.add_scaled(&g.transitions, scale);
    Ok(g.loss.max(0.0))
}

/// Mean joint loss over the batch and its gradients for both heads.
///
/// One dropout mask is drawn per sentence and shared by the two heads. A
/// head whose loss weight is zero is skipped and gets zero gradients.
pub fn forward_loss<R: Rng + ?Sized>(
    model: &MultiOutputModel,
    batch: &[&EncodedSentence],
    config: &TrainingConfig,
    weights: Option<&TagWeights>,
    rng: &mut R,
) -> Result<(f64, ModelGradients)> {
    let mut grads = ModelGradients {
        trigger: zero_gradients(&model.trigger),
        argument: zero_gradients(&model.argument),
    };
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let n = ex.embeddings.rows();
        let l = &ex.labeled;
        if l.trigger_tags.len() != n || l.argument_tags.len() != n {
            return Err(Error::Dimension(format!(
                "{} tokens but {} trigger / {} argument tags",
                n,
                l.trigger_tags.len(),
                l.argument_tags.len()
            )));
        }
        let h = apply_dropout(&ex.embeddings, config.dropout, rng)?;
        let l_tr = if config.alpha > 0.0 {
            let w = weights.map(|w| w.trigger.as_slice());
            accumulate_head(&model.trigger, &h, &l.trigger_tags, w, config.alpha * inv, &mut grads.trigger)?
        } else {
            0.0
        };
        let l_arg = if config.beta > 0.0 {
            let w = weights.map(|w| w.argument.as_slice());
            accumulate_head(&model.argument, &h, &l.argument_tags, w, config.beta * inv, &mut grads.argument)?
        } else {
            0.0
        };
        total += joint_loss(l_tr, l_arg, config.alpha, config.beta)?;
    }
    Ok((total * inv, grads))
}

/// Which documents of the corpus a run trains on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSelector {
    pub id: String,
    pub doc_ids: Option<Vec<String>>,
}

impl SubsetSelector {
    pub fn all() -> Self {
        Self {
            id: "full".into(),
            doc_ids: None,
        }
    }

    pub fn of(id: impl Into<String>, doc_ids: Vec<String>) -> Self {
        Self {
            id: id.into(),
            doc_ids: Some(doc_ids),
        }
    }

    pub fn select<'a>(&self, corpus: &'a [Document]) -> Result<Vec<&'a Document>> {
        match &self.doc_ids {
            None => Ok(corpus.iter().collect()),
            Some(ids) => {
                let known: HashSet<&str> = corpus.iter().map(|d| d.doc_id.as_str()).collect();
                if let Some(missing) = ids.iter().find(|id| !known.contains(id.as_str())) {
                    return Err(Error::invalid(format!("subset {} names unknown document {missing}", self.id)));
                }
                let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
                Ok(corpus.iter().filter(|d| wanted.contains(d.doc_id.as_str())).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub subset_id: String,
    pub strategy: String,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub training_sentences: usize,
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub model: MultiOutputModel,
    pub config: TrainingConfig,
    pub metadata: RunMetadata,
}

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    embedder: EmbedderConfig,
    trigger_scheme: LabelScheme,
    argument_scheme: LabelScheme,
    trigger: CrfHead,
    argument: CrfHead,
    max_tokens: usize,
    config: TrainingConfig,
    metadata: RunMetadata,
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let m = &ckpt.model;
    let body = CheckpointBody {
        embedder: m.embedder.clone(),
        trigger_scheme: m.trigger_scheme.clone(),
        argument_scheme: m.argument_scheme.clone(),
        trigger: m.trigger.clone(),
        argument: m.argument.clone(),
        max_tokens: m.max_tokens,
        config: ckpt.config.clone(),
        metadata: ckpt.metadata.clone(),
    };
    checkpoint::write(path, "model", &body)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let body: CheckpointBody = checkpoint::read(path, "model")?;
    let provider = body.embedder.build()?;
    let model = MultiOutputModel::from_parts(
        body.embedder,
        provider,
        body.trigger_scheme,
        body.argument_scheme,
        body.trigger,
        body.argument,
        body.max_tokens,
    )
    .map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(ModelCheckpoint {
        model,
        config: body.config,
        metadata: body.metadata,
    })
}

/// Shuffles, sorts by length within buckets of `BUCKET_BATCHES` batches,
/// cuts into batches and shuffles the batch order.
fn make_batches<R: Rng + ?Sized>(mut order: Vec<usize>, lengths: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    order.shuffle(rng);
    for bucket in order.chunks_mut(batch_size * BUCKET_BATCHES) {
        bucket.sort_by_key(|&i| lengths[i]);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

fn apply_step(opt: &mut AdamW, head: &mut CrfHead, g: &CrfGradients) {
    opt.step(
        &mut [head.weights.as_mut_slice(), &mut head.bias, head.transitions.as_mut_slice()],
        &[g.weights.as_slice(), &g.bias, g.transitions.as_slice()],
    );
}

fn head_sizes(head: &CrfHead) -> [usize; 3] {
    let (d, c) = (head.dim(), head.num_tags());
    [d * c, c, c * c]
}

/// Trains one model on the selected subset of `corpus`.
pub fn train(
    corpus: &[Document],
    embedder: &EmbedderConfig,
    config: &TrainingConfig,
    subset: &SubsetSelector,
) -> Result<ModelCheckpoint> {
    config.validate()?;
    let docs: Vec<Document> = subset.select(corpus)?.into_iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MultiOutputModel::new(embedder, config.max_tokens, &mut rng)?;
    model.set_constrained(config.constrained_transitions);

    let labeled = label_corpus(&docs, &model.trigger_scheme, &model.argument_scheme, config.max_tokens)?;
    if labeled.is_empty() {
        return Err(Error::EmptyCorpus(format!("subset {} has no sentences", subset.id)));
    }
    let tag_weights = match config.strategy {
        Strategy::LabelWeighted => Some(TagWeights {
            trigger: class_weights(labeled.iter().map(|l| l.trigger_tags.as_slice()), model.trigger_scheme.num_tags())?,
            argument: class_weights(labeled.iter().map(|l| l.argument_tags.as_slice()), model.argument_scheme.num_tags())?,
        }),
        _ => None,
    };
    let base_order: Vec<usize> = match &config.strategy {
        Strategy::Oversample { ratios } => oversample_indices(&labeled, ratios, &model.trigger_scheme)?,
        _ => (0..labeled.len()).collect(),
    };
    let sampler_weights = match &config.strategy {
        Strategy::WeightedSampler {
            positive_weight,
            negative_weight,
        } => Some(sentence_weights(&labeled, *positive_weight, *negative_weight)),
        _ => None,
    };
    let examples = encode_sentences(&model, labeled)?;
    let lengths: Vec<usize> = examples.iter().map(|e| e.embeddings.rows()).collect();
    info!(
        "training on {} sentences from {} documents (subset {}, strategy {}, seed {})",
        examples.len(),
        docs.len(),
        subset.id,
        config.strategy.name(),
        config.seed
    );

    let mut opt_tr = AdamW::new(config.optimizer, &head_sizes(&model.trigger));
    let mut opt_arg = AdamW::new(config.optimizer, &head_sizes(&model.argument));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = match &sampler_weights {
            Some(w) => weighted_sampler(w, &mut rng, examples.len())?,
            None => base_order.clone(),
        };
        let batches = make_batches(order, &lengths, config.batch_size, &mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in batches {
            let refs: Vec<&EncodedSentence> = batch.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = forward_loss(&model, &refs, config, tag_weights.as_ref(), &mut rng)?;
            if config.alpha > 0.0 {
                apply_step(&mut opt_tr, &mut model.trigger, &grads.trigger);
            }
            if config.beta > 0.0 {
                apply_step(&mut opt_arg, &mut model.argument, &grads.argument);
            }
            sum += loss * refs.len() as f64;
            count += refs.len();
        }
        let mean = sum / count as f64;
        debug!("epoch {} mean loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    if !(model.trigger.is_finite() && model.argument.is_finite()) {
        return Err(Error::invalid("training diverged: non-finite parameters"));
    }
    let metadata = RunMetadata {
        seed: config.seed,
        subset_id: subset.id.clone(),
        strategy: config.strategy.name().to_string(),
        final_loss: *epoch_losses.last().expect("epochs ≥ 1"),
        epoch_losses,
        training_sentences: examples.len(),
    };
    Ok(ModelCheckpoint {
        model,
        config: config.clone(),
        metadata,
    })
}
