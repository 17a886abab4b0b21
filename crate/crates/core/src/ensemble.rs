//! Per-word majority voting over several trained models.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bio::{decode_bio, repair_bio, LabelScheme, OUTSIDE};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::filter::SentenceFilter;
use crate::model::{load_checkpoint, number_spans, tagging_segments, DocumentPrediction, MultiOutputModel};

/// How exact ties between the most-voted tags are broken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Any entity tag beats `O`; then the lexicographically smallest tag name.
    #[default]
    PreferEntity,
    /// Smallest tag index.
    LowestIndex,
}

impl TieBreak {
    pub fn name(self) -> &'static str {
        match self {
            TieBreak::PreferEntity => "prefer-entity",
            TieBreak::LowestIndex => "lowest-index",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prefer-entity" => Some(TieBreak::PreferEntity),
            "lowest-index" => Some(TieBreak::LowestIndex),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: Vec<PathBuf>,
    pub tie_break: TieBreak,
}

impl EnsembleConfig {
    pub fn n(&self) -> usize {
        self.members.len()
    }
}

/// Most-voted tag per word. All sequences must have the same length.
pub fn majority_vote(sequences: &[&[usize]], scheme: &LabelScheme, policy: TieBreak) -> Result<Vec<usize>> {
    let Some(first) = sequences.first() else {
        return Err(Error::invalid("majority vote needs at least one sequence"));
    };
    let n = first.len();
    if let Some(bad) = sequences.iter().find(|s| s.len() != n) {
        return Err(Error::Dimension(format!("tag sequences of length {n} and {}", bad.len())));
    }
    let c = scheme.num_tags();
    let names = scheme.tag_names();
    let mut out = Vec::with_capacity(n);
    let mut counts = vec![0usize; c];
    for i in 0..n {
        counts.iter_mut().for_each(|v| *v = 0);
        for s in sequences {
            let tag = s[i];
            if tag >= c {
                return Err(Error::invalid(format!("tag index {tag} outside the {} scheme", scheme.task)));
            }
            counts[tag] += 1;
        }
        let top = *counts.iter().max().expect("non-empty scheme");
        let mut tied = (0..c).filter(|&t| counts[t] == top);
        let winner = match policy {
            TieBreak::LowestIndex => tied.next().expect("some tag has the top count"),
            TieBreak::PreferEntity => tied
                .min_by(|&a, &b| ((a == OUTSIDE), &names[a]).cmp(&((b == OUTSIDE), &names[b])))
                .expect("some tag has the top count"),
        };
        out.push(winner);
    }
    Ok(out)
}

/// Checks that all members can be voted together.
pub fn check_compatible(members: &[MultiOutputModel]) -> Result<()> {
    let Some(first) = members.first() else {
        return Err(Error::invalid("an ensemble needs at least one member"));
    };
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.trigger_scheme != first.trigger_scheme || m.argument_scheme != first.argument_scheme {
            return Err(Error::invalid(format!("ensemble member {i} uses different label schemes")));
        }
        if m.max_tokens != first.max_tokens {
            return Err(Error::invalid(format!(
                "ensemble member {i} splits sentences at {} tokens, member 0 at {}",
                m.max_tokens, first.max_tokens
            )));
        }
    }
    Ok(())
}

/// Tags every kept sentence with each member, votes per head, repairs and decodes.
pub fn ensemble_predict(
    members: &[MultiOutputModel],
    doc: &Document,
    filter: Option<&dyn SentenceFilter>,
    policy: TieBreak,
) -> Result<DocumentPrediction> {
    check_compatible(members)?;
    let lead = &members[0];
    let (ts, args) = (&lead.trigger_scheme, &lead.argument_scheme);
    let mut out = DocumentPrediction::default();
    for segment in tagging_segments(doc, filter, lead.max_tokens)? {
        let tags = members
            .iter()
            .map(|m| m.sentence_tags(&segment))
            .collect::<Result<Vec<_>>>()?;
        let tr: Vec<&[usize]> = tags.iter().map(|(t, _)| t.as_slice()).collect();
        let arg: Vec<&[usize]> = tags.iter().map(|(_, a)| a.as_slice()).collect();
        let tr = repair_bio(&majority_vote(&tr, ts, policy)?, ts);
        let arg = repair_bio(&majority_vote(&arg, args, policy)?, args);
        out.triggers.extend(decode_bio(&segment, &tr, ts)?);
        out.arguments.extend(decode_bio(&segment, &arg, args)?);
    }
    number_spans(&mut out.triggers);
    number_spans(&mut out.arguments);
    Ok(out)
}

/// Loads every member checkpoint of the configuration.
pub fn load_members(config: &EnsembleConfig) -> Result<Vec<MultiOutputModel>> {
    let members = config
        .members
        .iter()
        .map(|p| load_checkpoint(p).map(|c| c.model))
        .collect::<Result<Vec<_>>>()?;
    check_compatible(&members)?;
    Ok(members)
}
