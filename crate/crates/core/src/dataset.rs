//! Sentence-level training examples with gold tags for both heads.

use log::warn;

use crate::bio::{encode_bio, LabelScheme, OUTSIDE};
use crate::corpus::{segment_sentences, split_overlong, AnnotatedSpan, Document, Sentence};
use crate::error::Result;

/// Default sentence token cap.
pub const MAX_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSentence {
    pub sentence: Sentence,
    pub trigger_tags: Vec<usize>,
    pub argument_tags: Vec<usize>,
}

impl LabeledSentence {
    pub fn has_spans(&self) -> bool {
        self.trigger_tags.iter().chain(&self.argument_tags).any(|&t| t != OUTSIDE)
    }

    /// Categories of the trigger spans in this sentence, deduplicated, ascending.
    pub fn trigger_categories(&self, scheme: &LabelScheme) -> Vec<usize> {
        let mut cats: Vec<usize> = self
            .trigger_tags
            .iter()
            .filter(|&&t| scheme.is_begin(t))
            .filter_map(|&t| scheme.category(t))
            .collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }
}

/// Sentences of a document as seen by the taggers: segmented, tokenized
/// and split at `max_tokens`.
pub fn inference_sentences(doc: &Document, max_tokens: usize) -> Vec<Sentence> {
    segment_sentences(doc)
        .iter()
        .flat_map(|s| split_overlong(s, max_tokens))
        .filter(|s| !s.is_empty())
        .collect()
}

fn spans_inside(spans: &[AnnotatedSpan], segment: &Sentence) -> Vec<AnnotatedSpan> {
    spans
        .iter()
        .filter(|s| s.overlaps(segment.start, segment.end))
        .filter(|s| {
            let inside = s.start >= segment.start && s.end <= segment.end;
            if !inside {
                warn!(
                    "{}: span {} [{}, {}) crosses a sentence or segment boundary and is dropped",
                    segment.doc_id, s.id, s.start, s.end
                );
            }
            inside
        })
        .cloned()
        .collect()
}

pub fn label_document(
    doc: &Document,
    trigger_scheme: &LabelScheme,
    argument_scheme: &LabelScheme,
    max_tokens: usize,
) -> Result<Vec<LabeledSentence>> {
    inference_sentences(doc, max_tokens)
        .into_iter()
        .map(|sentence| {
            let trigger_tags = encode_bio(&sentence, &spans_inside(&doc.trigger_spans, &sentence), trigger_scheme)?;
            let argument_tags = encode_bio(&sentence, &spans_inside(&doc.argument_spans, &sentence), argument_scheme)?;
            Ok(LabeledSentence {
                sentence,
                trigger_tags,
                argument_tags,
            })
        })
        .collect()
}

pub fn label_corpus(
    corpus: &[Document],
    trigger_scheme: &LabelScheme,
    argument_scheme: &LabelScheme,
    max_tokens: usize,
) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    for doc in corpus {
        out.extend(label_document(doc, trigger_scheme, argument_scheme, max_tokens)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_document;

    const TEXT: &str =
        "Varón de 51 años con antecedentes de policonsumo de drogas. Actualmente, cannabis 1-2 g/día vía oral.";

    #[test]
    fn labels_note_document() {
        let doc = load_document(
            TEXT,
            "T1\tDrug 52 58\tdrogas\nT2\tCannabis 73 81\tcannabis\n",
            "T3\tAmount 82 87\t1-2 g\nT4\tFrequency 87 91\t/día\nT5\tMethod 92 100\tvía oral\n",
            "note",
        )
        .unwrap();
        let (t, a) = (LabelScheme::trigger(), LabelScheme::argument());
        let labeled = label_document(&doc, &t, &a, MAX_TOKENS).unwrap();
        assert_eq!(labeled.len(), 2);
        assert!(labeled.iter().all(LabeledSentence::has_spans));
        assert_eq!(labeled[0].trigger_categories(&t), vec![t.category_index("Drug").unwrap()]);
        let names: Vec<String> = labeled[1].argument_tags.iter().map(|&x| a.tag_name(x)).collect();
        assert_eq!(names, ["O", "O", "O", "B-Amount", "I-Amount", "B-Method", "I-Method", "O"]);
    }

    #[test]
    fn spans_crossing_a_segment_split_are_dropped() {
        let doc = load_document("uno dos tres cuatro", "T1\tDrug 4 12\tdos tres", "", "d").unwrap();
        let (t, a) = (LabelScheme::trigger(), LabelScheme::argument());
        let labeled = label_document(&doc, &t, &a, 2).unwrap();
        assert_eq!(labeled.len(), 2);
        assert!(labeled.iter().all(|l| !l.has_spans()));
        let whole = label_document(&doc, &t, &a, MAX_TOKENS).unwrap();
        assert!(whole[0].has_spans());
    }
}
