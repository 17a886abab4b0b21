//! Run configuration files: one `key = value` per line, `#` starts a comment.
//! Absent keys keep their defaults. Unknown keys and unparsable values are
//! errors that name the key and line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::encoder::{EmbedderConfig, ProviderKind};
use crate::ensemble::TieBreak;
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::model::TrainingConfig;
use crate::sampling::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub embedder: EmbedderConfig,
    pub filter: FilterConfig,
    pub tie_break: TieBreak,
    pub folds: usize,
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub gold_dir: Option<PathBuf>,
    pub predictions_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub filter_checkpoint: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub members: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            embedder: EmbedderConfig::default(),
            filter: FilterConfig::default(),
            tie_break: TieBreak::default(),
            folds: 5,
            corpus_dir: None,
            output_dir: None,
            gold_dir: None,
            predictions_dir: None,
            checkpoint: None,
            filter_checkpoint: None,
            train_manifest: None,
            members: Vec::new(),
        }
    }
}

/// Every key accepted in a configuration file.
pub const KEYS: &[&str] = &[
    "corpus_dir",
    "output_dir",
    "gold_dir",
    "predictions_dir",
    "checkpoint",
    "filter_checkpoint",
    "train_manifest",
    "members",
    "seed",
    "alpha",
    "beta",
    "learning_rate",
    "weight_decay",
    "batch_size",
    "epochs",
    "dropout",
    "max_tokens",
    "constrained_transitions",
    "strategy",
    "oversample_ratios",
    "positive_weight",
    "negative_weight",
    "embedder",
    "embedding_dim",
    "embedding_window",
    "embedding_seed",
    "embeddings_path",
    "filter_learning_rate",
    "filter_weight_decay",
    "filter_batch_size",
    "filter_epochs",
    "filter_dropout",
    "filter_threshold",
    "folds",
    "tie_break",
];

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        key: key.to_string(),
        message: format!("cannot parse {raw:?}"),
    })
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            key: key.to_string(),
            message: format!("expected true or false, got {raw:?}"),
        }),
    }
}

/// `Drug:9, Alcohol:3, Tobacco:2, Cannabis:2`.
fn parse_ratios(line: usize, key: &str, raw: &str) -> Result<BTreeMap<String, u32>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (label, n) = item.split_once(':').ok_or_else(|| Error::Config {
                line,
                key: key.to_string(),
                message: format!("expected Label:ratio, got {item:?}"),
            })?;
            Ok((label.trim().to_string(), value(line, key, n.trim())?))
        })
        .collect()
}

/// Parses a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut strategy: Option<(usize, String)> = None;
    let mut ratios: Option<BTreeMap<String, u32>> = None;
    let (mut pos_w, mut neg_w) = (None, None);
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, raw)) = line.split_once('=') else {
            return Err(Error::Config {
                line: n,
                key: line.to_string(),
                message: "expected `key = value`".into(),
            });
        };
        let (key, raw) = (key.trim(), raw.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config {
                line: n,
                key: key.to_string(),
                message: "unknown key".into(),
            });
        }
        if let Some(prev) = seen.insert(key.to_string(), n) {
            return Err(Error::Config {
                line: n,
                key: key.to_string(),
                message: format!("already set on line {prev}"),
            });
        }
        let path = || Some(PathBuf::from(raw));
        let t = &mut cfg.training;
        match key {
            "corpus_dir" => cfg.corpus_dir = path(),
            "output_dir" => cfg.output_dir = path(),
            "gold_dir" => cfg.gold_dir = path(),
            "predictions_dir" => cfg.predictions_dir = path(),
            "checkpoint" => cfg.checkpoint = path(),
            "filter_checkpoint" => cfg.filter_checkpoint = path(),
            "train_manifest" => cfg.train_manifest = path(),
            "members" => {
                cfg.members = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
            }
            "seed" => {
                t.seed = value(n, key, raw)?;
                cfg.filter.seed = t.seed;
            }
            "alpha" => t.alpha = value(n, key, raw)?,
            "beta" => t.beta = value(n, key, raw)?,
            "learning_rate" => t.optimizer.learning_rate = value(n, key, raw)?,
            "weight_decay" => t.optimizer.weight_decay = value(n, key, raw)?,
            "batch_size" => t.batch_size = value(n, key, raw)?,
            "epochs" => t.epochs = value(n, key, raw)?,
            "dropout" => {
                t.dropout = value(n, key, raw)?;
                cfg.embedder.dropout = t.dropout;
            }
            "max_tokens" => t.max_tokens = value(n, key, raw)?,
            "constrained_transitions" => t.constrained_transitions = parse_bool(n, key, raw)?,
            "strategy" => strategy = Some((n, raw.to_string())),
            "oversample_ratios" => ratios = Some(parse_ratios(n, key, raw)?),
            "positive_weight" => pos_w = Some(value::<f64>(n, key, raw)?),
            "negative_weight" => neg_w = Some(value::<f64>(n, key, raw)?),
            "embedder" => {
                cfg.embedder.kind = match raw {
                    "hashed" => ProviderKind::Hashed,
                    "precomputed" => ProviderKind::Precomputed,
                    _ => return Err(Error::Config { line: n, key: key.into(), message: format!("unknown embedder {raw:?}") }),
                }
            }
            "embedding_dim" => cfg.embedder.dim = value(n, key, raw)?,
            "embedding_window" => cfg.embedder.window = value(n, key, raw)?,
            "embedding_seed" => cfg.embedder.seed = value(n, key, raw)?,
            "embeddings_path" => cfg.embedder.precomputed_path = path(),
            "filter_learning_rate" => cfg.filter.optimizer.learning_rate = value(n, key, raw)?,
            "filter_weight_decay" => cfg.filter.optimizer.weight_decay = value(n, key, raw)?,
            "filter_batch_size" => cfg.filter.batch_size = value(n, key, raw)?,
            "filter_epochs" => cfg.filter.epochs = value(n, key, raw)?,
            "filter_dropout" => cfg.filter.dropout = value(n, key, raw)?,
            "filter_threshold" => cfg.filter.threshold = value(n, key, raw)?,
            "folds" => cfg.folds = value(n, key, raw)?,
            "tie_break" => {
                cfg.tie_break = TieBreak::parse(raw).ok_or_else(|| Error::Config {
                    line: n,
                    key: key.into(),
                    message: format!("unknown tie-break policy {raw:?}"),
                })?
            }
            _ => unreachable!("key list and match arms disagree"),
        }
    }
    cfg.training.strategy = match strategy {
        None => Strategy::None,
        Some((n, name)) => match name.as_str() {
            "none" => Strategy::None,
            "label-weighted" => Strategy::LabelWeighted,
            "oversample" => match ratios {
                Some(ratios) => Strategy::Oversample { ratios },
                None => Strategy::oversample_ratios(9, 3, 2, 2),
            },
            "weighted-sampler" => Strategy::WeightedSampler {
                positive_weight: pos_w.unwrap_or(3.0),
                negative_weight: neg_w.unwrap_or(1.0),
            },
            _ => {
                return Err(Error::Config {
                    line: n,
                    key: "strategy".into(),
                    message: format!("unknown strategy {name:?}"),
                })
            }
        },
    };
    cfg.training
        .validate()
        .and_then(|_| cfg.embedder.validate())
        .and_then(|_| cfg.filter.validate())
        .map_err(|e| Error::Config {
            line: 0,
            key: "(combined)".into(),
            message: e.to_string(),
        })?;
    if cfg.folds < 2 {
        return Err(Error::Config {
            line: seen.get("folds").copied().unwrap_or(0),
            key: "folds".into(),
            message: "need at least 2 folds".into(),
        });
    }
    Ok(cfg)
}

impl RunConfig {
    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

}

/// The path set for `key`, or an error naming the key.
pub fn required<'a>(key: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| Error::Config {
        line: 0,
        key: key.to_string(),
        message: "required path is missing".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let t = &cfg.training;
        assert_eq!((t.optimizer.learning_rate, t.batch_size, t.dropout, t.epochs, t.max_tokens), (5e-5, 8, 0.1, 5, 512));
        let f = &cfg.filter;
        assert_eq!((f.optimizer.learning_rate, f.batch_size, f.optimizer.weight_decay), (1e-5, 16, 0.01));
        assert!(required("corpus_dir", &cfg.corpus_dir).is_err());
    }

    #[test]
    fn parses_values_and_comments() {
        let cfg = parse_config(
            "# weights\nalpha = 1\nbeta = 1   # both\n\ncorpus_dir = data/train\nstrategy = oversample\n\
             oversample_ratios = Drug:9, Alcohol:3, Tobacco:2, Cannabis:2\nmembers = a.ckpt, b.ckpt\n\
             tie_break = lowest-index\nconstrained_transitions = true\n",
        )
        .unwrap();
        assert_eq!((cfg.training.alpha, cfg.training.beta), (1.0, 1.0));
        assert_eq!(cfg.corpus_dir, Some(PathBuf::from("data/train")));
        assert_eq!(cfg.training.strategy, Strategy::oversample_ratios(9, 3, 2, 2));
        assert_eq!(cfg.members.len(), 2);
        assert_eq!(cfg.tie_break, TieBreak::LowestIndex);
        assert!(cfg.training.constrained_transitions);
    }

    #[test]
    fn errors_name_key_and_line() {
        let err = parse_config("alpha = 1\nepochs = zero\n").unwrap_err();
        match err {
            Error::Config { line, key, .. } => assert_eq!((line, key.as_str()), (2, "epochs")),
            other => panic!("{other}"),
        }
        assert!(matches!(parse_config("colour = red"), Err(Error::Config { line: 1, .. })));
        assert!(parse_config("alpha 1").is_err());
        assert!(parse_config("alpha = 1\nalpha = 2").is_err());
        assert!(parse_config("strategy = magic").is_err());
        assert!(parse_config("epochs = 0").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config("seed = 1").unwrap();
        assert_eq!(a.hash(), parse_config("seed = 1 # same").unwrap().hash());
        assert_ne!(a.hash(), parse_config("seed = 2").unwrap().hash());
        assert_eq!(a.hash().len(), 64);
    }
}
