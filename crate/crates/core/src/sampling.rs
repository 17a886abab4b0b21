//! Class-imbalance strategies and k-fold subset generation.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bio::LabelScheme;
use crate::dataset::LabeledSentence;
use crate::error::{Error, Result};

/// How training sentences are presented to the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    None,
    /// Inverse-frequency tag weights in the loss.
    LabelWeighted,
    /// Sentences containing a trigger of class `c` repeated `ratios[c]` times
    /// (max over the classes present).
    Oversample { ratios: BTreeMap<String, u32> },
    /// Sampling with replacement, span-bearing sentences weighted higher.
    WeightedSampler { positive_weight: f64, negative_weight: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::LabelWeighted => "label-weighted",
            Strategy::Oversample { .. } => "oversample",
            Strategy::WeightedSampler { .. } => "weighted-sampler",
        }
    }

    /// Ratios in the order Drug, Alcohol, Tobacco, Cannabis.
    pub fn oversample_ratios(drug: u32, alcohol: u32, tobacco: u32, cannabis: u32) -> Self {
        let ratios = [("Drug", drug), ("Alcohol", alcohol), ("Tobacco", tobacco), ("Cannabis", cannabis)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Strategy::Oversample { ratios }
    }

    pub fn weighted_sampler() -> Self {
        Strategy::WeightedSampler {
            positive_weight: 3.0,
            negative_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Oversample { ratios } => {
                if let Some((k, _)) = ratios.iter().find(|(_, &v)| v < 1) {
                    return Err(Error::invalid(format!("oversampling ratio for {k} must be ≥ 1")));
                }
            }
            Strategy::WeightedSampler {
                positive_weight,
                negative_weight,
            } => {
                if !(*positive_weight > 0.0 && *negative_weight > 0.0) {
                    return Err(Error::invalid("sampling weights must be positive"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// `total / (C · count(tag))`; tags never seen get the largest computed weight.
pub fn class_weights<'a>(tag_sequences: impl IntoIterator<Item = &'a [usize]>, num_tags: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; num_tags];
    for seq in tag_sequences {
        for &t in seq {
            if t >= num_tags {
                return Err(Error::invalid(format!("tag index {t} ≥ {num_tags}")));
            }
            counts[t] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyCorpus("no tags to weight".into()));
    }
    let computed: Vec<Option<f64>> = counts
        .iter()
        .map(|&c| (c > 0).then(|| total as f64 / (num_tags as f64 * c as f64)))
        .collect();
    let max = computed.iter().flatten().copied().fold(f64::MIN, f64::max);
    Ok(computed.into_iter().map(|w| w.unwrap_or(max)).collect())
}

/// Number of copies of each sentence under the max-ratio rule.
pub fn oversample_counts(
    sentences: &[LabeledSentence],
    ratios: &BTreeMap<String, u32>,
    scheme: &LabelScheme,
) -> Result<Vec<usize>> {
    Strategy::Oversample { ratios: ratios.clone() }.validate()?;
    Ok(sentences
        .iter()
        .map(|s| {
            s.trigger_categories(scheme)
                .into_iter()
                .map(|c| ratios.get(&scheme.categories[c]).copied().unwrap_or(1) as usize)
                .max()
                .unwrap_or(1)
        })
        .collect())
}

/// Indices of the expanded sentence list; copies are adjacent.
pub fn oversample_indices(
    sentences: &[LabeledSentence],
    ratios: &BTreeMap<String, u32>,
    scheme: &LabelScheme,
) -> Result<Vec<usize>> {
    let counts = oversample_counts(sentences, ratios, scheme)?;
    Ok(counts
        .into_iter()
        .enumerate()
        .flat_map(|(i, n)| std::iter::repeat_n(i, n))
        .collect())
}

pub fn oversample(
    sentences: &[LabeledSentence],
    ratios: &BTreeMap<String, u32>,
    scheme: &LabelScheme,
) -> Result<Vec<LabeledSentence>> {
    Ok(oversample_indices(sentences, ratios, scheme)?
        .into_iter()
        .map(|i| sentences[i].clone())
        .collect())
}

pub fn sentence_weights(sentences: &[LabeledSentence], positive: f64, negative: f64) -> Vec<f64> {
    sentences
        .iter()
        .map(|s| if s.has_spans() { positive } else { negative })
        .collect()
}

/// Draws `epoch_size` indices with replacement, proportionally to `weights`.
pub fn weighted_sampler<R: Rng + ?Sized>(weights: &[f64], rng: &mut R, epoch_size: usize) -> Result<Vec<usize>> {
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid("sampling weights must be positive and finite"));
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((0..epoch_size).map(|_| dist.sample(rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub held_out: Vec<String>,
}

/// Shuffles documents by `seed`, cuts them into `k` parts whose sizes differ
/// by at most one, and returns for each part the fold that leaves it out.
pub fn kfold_subsets(doc_ids: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!("k = {k}, need at least 2 folds")));
    }
    if doc_ids.len() < k {
        return Err(Error::invalid(format!("{} documents cannot fill {k} folds", doc_ids.len())));
    }
    let mut shuffled: Vec<&String> = doc_ids.iter().collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (doc_ids.len() / k, doc_ids.len() % k);
    let mut parts = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        parts.push(&shuffled[at..at + size]);
        at += size;
    }
    Ok(parts
        .iter()
        .enumerate()
        .map(|(index, part)| {
            let excluded: HashSet<&String> = part.iter().copied().collect();
            Fold {
                index,
                train: doc_ids.iter().filter(|d| !excluded.contains(d)).cloned().collect(),
                held_out: part.iter().map(|d| (*d).clone()).collect(),
            }
        })
        .collect())
}

/// Writes `fold_<i>.train.txt` and `fold_<i>.heldout.txt`, one doc id per line.
pub fn write_fold_manifests(dir: &Path, folds: &[Fold]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for fold in folds {
        for (suffix, ids) in [("train", &fold.train), ("heldout", &fold.held_out)] {
            let path = dir.join(format!("fold_{}.{suffix}.txt", fold.index));
            let mut body = ids.join("\n");
            body.push('\n');
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
