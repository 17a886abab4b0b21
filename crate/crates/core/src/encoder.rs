//! Token representations.
//!
//! Two providers sit behind the [`Embedder`] trait: a training-free hashed
//! lexical embedder, and a lookup table of vectors exported by an external
//! encoder (see [`PrecomputedEmbedder::parse`] for the file format).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::corpus::{Sentence, Token};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `n × d` matrix of token vectors.
pub type TokenEmbeddings = Matrix;

pub const DEFAULT_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hashed,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub seed: u64,
    /// Number of neighbouring tokens on each side that contribute features.
    pub window: usize,
    pub dropout: f64,
    pub precomputed_path: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Hashed,
            dim: DEFAULT_DIM,
            seed: 0,
            window: 1,
            dropout: 0.1,
            precomputed_path: None,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Provider> {
        self.validate()?;
        match self.kind {
            ProviderKind::Hashed => Ok(Provider::Hashed(HashedEmbedder::new(self.dim, self.seed, self.window))),
            ProviderKind::Precomputed => {
                let path = self
                    .precomputed_path
                    .as_deref()
                    .ok_or_else(|| Error::invalid("precomputed embedder needs a file path"))?;
                Ok(Provider::Precomputed(PrecomputedEmbedder::load(path)?))
            }
        }
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, sentence: &Sentence) -> Result<TokenEmbeddings>;
}

/// Signed feature hashing over lexical features of each token and its
/// neighbours: lowercased form, 3-char prefix, 3-char suffix and word shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedEmbedder {
    dim: usize,
    seed: u64,
    window: usize,
}

const TEMPLATES: usize = 4;

impl HashedEmbedder {
    pub fn new(dim: usize, seed: u64, window: usize) -> Self {
        Self { dim, seed, window }
    }

    pub fn features_per_token(&self) -> usize {
        TEMPLATES * (2 * self.window + 1)
    }

    pub fn embed_tokens(&self, tokens: &[Token]) -> Result<TokenEmbeddings> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot embed an empty token list"));
        }
        let lexical: Vec<[String; TEMPLATES]> = tokens.iter().map(|t| lexical_features(&t.text)).collect();
        let norm = 1.0 / (self.features_per_token() as f64).sqrt();
        let w = self.window as isize;
        let mut out = Matrix::zeros(tokens.len(), self.dim);
        for i in 0..tokens.len() {
            let row = out.row_mut(i);
            for offset in -w..=w {
                let j = i as isize + offset;
                for t in 0..TEMPLATES {
                    let value = if j < 0 {
                        "<s>"
                    } else if j as usize >= tokens.len() {
                        "</s>"
                    } else {
                        lexical[j as usize][t].as_str()
                    };
                    let key = format!("{offset}|{t}|{value}");
                    let h = XxHash64::oneshot(self.seed, key.as_bytes());
                    let bucket = (h % self.dim as u64) as usize;
                    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                    row[bucket] += sign * norm;
                }
            }
        }
        Ok(out)
    }
}

fn lexical_features(token: &str) -> [String; TEMPLATES] {
    let lower = token.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let prefix: String = chars.iter().take(3).collect();
    let suffix: String = chars[chars.len().saturating_sub(3)..].iter().collect();
    [lower, prefix, suffix, word_shape(token)]
}

/// `Varón` → `Xx`, `1-2` → `d-d`, `g/día` → `x/x`.
pub fn word_shape(token: &str) -> String {
    let mut shape = String::new();
    let mut last = None;
    for c in token.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            c
        };
        if last != Some(s) {
            shape.push(s);
            last = Some(s);
        }
    }
    shape
}

impl Embedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &Sentence) -> Result<TokenEmbeddings> {
        self.embed_tokens(&sentence.tokens)
    }
}

/// Vectors keyed by `(doc_id, sentence index, token index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedEmbedder {
    dim: usize,
    table: HashMap<(String, usize, usize), Vec<f64>>,
}

impl PrecomputedEmbedder {
    /// Reads the text format: a `dim=<d>` header line, then one record per
    /// line, `doc_id<TAB>sentence_index<TAB>token_index<TAB>v1 v2 … vd`.
    pub fn parse(content: &str) -> Result<Self> {
        let mut lines = content.lines().enumerate();
        let dim = loop {
            match lines.next() {
                None => return Err(Error::Parse { line: 1, message: "missing `dim=<d>` header".into() }),
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => {
                    break l
                        .trim()
                        .strip_prefix("dim=")
                        .and_then(|d| d.parse::<usize>().ok())
                        .filter(|&d| d > 0)
                        .ok_or_else(|| Error::Parse {
                            line: i + 1,
                            message: format!("expected `dim=<d>` header, found {l:?}"),
                        })?
                }
            }
        };
        let mut table = HashMap::new();
        for (i, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let sentence = fields[1].parse::<usize>().map_err(|_| err(format!("bad sentence index {:?}", fields[1])))?;
            let token = fields[2].parse::<usize>().map_err(|_| err(format!("bad token index {:?}", fields[2])))?;
            let values = fields[3]
                .split_whitespace()
                .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| err("vector contains a non-numeric or non-finite value".into()))?;
            if values.len() != dim {
                return Err(err(format!("vector has {} values, header says {dim}", values.len())));
            }
            table.insert((fields[0].to_string(), sentence, token), values);
        }
        Ok(Self { dim, table })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content)
    }
}

impl Embedder for PrecomputedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &Sentence) -> Result<TokenEmbeddings> {
        let mut out = Matrix::zeros(sentence.tokens.len(), self.dim);
        for i in 0..sentence.tokens.len() {
            let key = (sentence.doc_id.clone(), sentence.index, sentence.token_offset + i);
            let v = self
                .table
                .get(&key)
                .ok_or_else(|| Error::MissingEmbedding(format!("doc {} sentence {} token {}", key.0, key.1, key.2)))?;
            out.row_mut(i).copy_from_slice(v);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub enum Provider {
    Hashed(HashedEmbedder),
    Precomputed(PrecomputedEmbedder),
}

impl Embedder for Provider {
    fn dim(&self) -> usize {
        match self {
            Provider::Hashed(e) => e.dim(),
            Provider::Precomputed(e) => e.dim(),
        }
    }

    fn embed(&self, sentence: &Sentence) -> Result<TokenEmbeddings> {
        match self {
            Provider::Hashed(e) => e.embed(sentence),
            Provider::Precomputed(e) => e.embed(sentence),
        }
    }
}

/// Inverted dropout: each value is zeroed with probability `rate`, survivors
/// are scaled by `1 / (1 - rate)`.
pub fn apply_dropout<R: Rng + ?Sized>(embeddings: &TokenEmbeddings, rate: f64, rng: &mut R) -> Result<TokenEmbeddings> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    let mut out = embeddings.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    let keep = 1.0 / (1.0 - rate);
    for v in out.as_mut_slice() {
        if rng.gen::<f64>() < rate {
            *v = 0.0;
        } else {
            *v *= keep;
        }
    }
    Ok(out)
}
