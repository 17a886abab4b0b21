//! BIO tag schemes and conversion between spans and tag sequences.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSpan, CodePointIndex, Sentence, ARGUMENT_LABELS, TRIGGER_LABELS};
use crate::error::{Error, Result};

pub const OUTSIDE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Trigger,
    Argument,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Trigger => "trigger",
            Task::Argument => "argument",
        })
    }
}

/// Tag inventory `{O} ∪ {B-c, I-c}` with `O` at index 0, then `B-c`, `I-c`
/// for each category in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub task: Task,
    pub categories: Vec<String>,
}

impl LabelScheme {
    pub fn new(task: Task, categories: &[&str]) -> Self {
        Self {
            task,
            categories: categories.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn trigger() -> Self {
        Self::new(Task::Trigger, &TRIGGER_LABELS)
    }

    pub fn argument() -> Self {
        Self::new(Task::Argument, &ARGUMENT_LABELS)
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Trigger => Self::trigger(),
            Task::Argument => Self::argument(),
        }
    }

    pub fn num_tags(&self) -> usize {
        2 * self.categories.len() + 1
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    pub fn begin(&self, category: usize) -> usize {
        1 + 2 * category
    }

    pub fn inside(&self, category: usize) -> usize {
        2 + 2 * category
    }

    /// Category of a non-`O` tag.
    pub fn category(&self, tag: usize) -> Option<usize> {
        (tag != OUTSIDE).then(|| (tag - 1) / 2)
    }

    pub fn is_begin(&self, tag: usize) -> bool {
        tag != OUTSIDE && tag % 2 == 1
    }

    pub fn is_inside(&self, tag: usize) -> bool {
        tag != OUTSIDE && tag.is_multiple_of(2)
    }

    pub fn tag_name(&self, tag: usize) -> String {
        match self.category(tag) {
            None => "O".to_string(),
            Some(c) if self.is_begin(tag) => format!("B-{}", self.categories[c]),
            Some(c) => format!("I-{}", self.categories[c]),
        }
    }

    pub fn tag_index(&self, name: &str) -> Option<usize> {
        if name == "O" {
            return Some(OUTSIDE);
        }
        let (prefix, label) = name.split_once('-')?;
        let c = self.category_index(label)?;
        match prefix {
            "B" => Some(self.begin(c)),
            "I" => Some(self.inside(c)),
            _ => None,
        }
    }

    pub fn tag_names(&self) -> Vec<String> {
        (0..self.num_tags()).map(|t| self.tag_name(t)).collect()
    }
}

/// Range of tokens `[first, last]` that overlap `[start, end)`.
fn covered_tokens(sentence: &Sentence, start: usize, end: usize) -> Option<(usize, usize)> {
    let mut hits = sentence
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.start < end && start < t.end)
        .map(|(i, _)| i);
    let first = hits.next()?;
    let last = hits.next_back().unwrap_or(first);
    Some((first, last))
}

/// Encodes the spans that fall inside `sentence` as BIO tags, one per token.
///
/// Spans entirely outside the sentence are ignored. Spans that only partly
/// overlap it are an error. Overlapping spans keep the longer one (earlier
/// start on ties).
pub fn encode_bio(sentence: &Sentence, spans: &[AnnotatedSpan], scheme: &LabelScheme) -> Result<Vec<usize>> {
    let mut candidates = Vec::new();
    for span in spans {
        if !span.overlaps(sentence.start, sentence.end) {
            continue;
        }
        if span.start < sentence.start || span.end > sentence.end {
            return Err(Error::SpanCrossesSentence {
                id: span.id.clone(),
                start: span.start,
                end: span.end,
                sentence_start: sentence.start,
                sentence_end: sentence.end,
            });
        }
        let category = scheme.category_index(&span.label).ok_or_else(|| Error::UnknownLabel {
            label: span.label.clone(),
            expected: scheme.categories.join(", "),
        })?;
        let Some((first, last)) = covered_tokens(sentence, span.start, span.end) else {
            warn!("span {} covers no token and is dropped", span.id);
            continue;
        };
        if sentence.tokens[first].start != span.start || sentence.tokens[last].end != span.end {
            warn!(
                "span {} [{}, {}) snapped to token boundaries [{}, {})",
                span.id, span.start, span.end, sentence.tokens[first].start, sentence.tokens[last].end
            );
        }
        candidates.push((span, category, first, last));
    }
    candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.start.cmp(&b.0.start)));

    let mut tags = vec![OUTSIDE; sentence.tokens.len()];
    let mut taken = vec![false; sentence.tokens.len()];
    for (span, category, first, last) in candidates {
        if taken[first..=last].iter().any(|&t| t) {
            warn!("span {} overlaps a longer span and is dropped", span.id);
            continue;
        }
        taken[first..=last].iter_mut().for_each(|t| *t = true);
        tags[first] = scheme.begin(category);
        for tag in &mut tags[first + 1..=last] {
            *tag = scheme.inside(category);
        }
    }
    Ok(tags)
}

/// Rewrites every `I-c` that does not continue a `B-c`/`I-c` run into `B-c`.
pub fn repair_bio(tags: &[usize], scheme: &LabelScheme) -> Vec<usize> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev = OUTSIDE;
    for &tag in tags {
        let fixed = if scheme.is_inside(tag) && scheme.category(prev) != scheme.category(tag) {
            scheme.begin(scheme.category(tag).expect("inside tags have a category"))
        } else {
            tag
        };
        out.push(fixed);
        prev = fixed;
    }
    out
}

/// Merges `B-c (I-c)*` runs into spans with sentence-level token offsets.
/// Span ids are left empty; callers number them per document.
pub fn decode_bio(sentence: &Sentence, tags: &[usize], scheme: &LabelScheme) -> Result<Vec<AnnotatedSpan>> {
    if tags.len() != sentence.tokens.len() {
        return Err(Error::Dimension(format!(
            "{} tags for {} tokens",
            tags.len(),
            sentence.tokens.len()
        )));
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= scheme.num_tags()) {
        return Err(Error::invalid(format!("tag index {bad} outside a {}-tag scheme", scheme.num_tags())));
    }
    let tags = repair_bio(tags, scheme);
    let index = CodePointIndex::new(&sentence.text);
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize, usize)> = None; // (category, first, last)
    let close = |run: Option<(usize, usize, usize)>, spans: &mut Vec<AnnotatedSpan>| {
        if let Some((cat, first, last)) = run {
            let start = sentence.tokens[first].start;
            let end = sentence.tokens[last].end;
            let range = index
                .byte_range(start - sentence.start, end - sentence.start)
                .expect("tokens lie within their sentence");
            spans.push(AnnotatedSpan::new("", scheme.categories[cat].clone(), start, end, &sentence.text[range]));
        }
    };
    for (i, &tag) in tags.iter().enumerate() {
        if scheme.is_inside(tag) {
            if let Some(run) = open.as_mut() {
                run.2 = i;
            }
            continue;
        }
        close(open.take(), &mut spans);
        if scheme.is_begin(tag) {
            open = Some((scheme.category(tag).unwrap(), i, i));
        }
    }
    close(open.take(), &mut spans);
    Ok(spans)
}

fn check_alignment(alignment: &[usize]) -> Result<usize> {
    let mut expected_next = 0;
    for (i, &w) in alignment.iter().enumerate() {
        let ok = if i == 0 { w == 0 } else { w == expected_next - 1 || w == expected_next };
        if !ok {
            return Err(Error::invalid(format!(
                "sub-token alignment is not monotone and onto at position {i} (word {w})"
            )));
        }
        expected_next = w + 1;
    }
    Ok(expected_next)
}

/// Word-level tags from sub-token tags: each word takes the tag of its first
/// sub-token. `alignment[k]` is the word index of sub-token `k`.
pub fn project_subtokens(subtoken_tags: &[usize], alignment: &[usize]) -> Result<Vec<usize>> {
    if subtoken_tags.len() != alignment.len() {
        return Err(Error::Dimension(format!(
            "{} sub-token tags for an alignment of {}",
            subtoken_tags.len(),
            alignment.len()
        )));
    }
    let words = check_alignment(alignment)?;
    let mut out = Vec::with_capacity(words);
    for (k, &w) in alignment.iter().enumerate() {
        if w == out.len() {
            out.push(subtoken_tags[k]);
        }
    }
    Ok(out)
}

/// How continuation sub-tokens are labeled when expanding word tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SubtokenLabeling {
    /// Continuations of a `B-c`/`I-c` word get `I-c`.
    #[default]
    PropagateInside,
    /// Continuations get `O`; only the first sub-token carries the label.
    FirstOnly,
}

/// Expands word-level tags to sub-token training targets.
pub fn expand_to_subtokens(
    word_tags: &[usize],
    alignment: &[usize],
    scheme: &LabelScheme,
    mode: SubtokenLabeling,
) -> Result<Vec<usize>> {
    let words = check_alignment(alignment)?;
    if words != word_tags.len() {
        return Err(Error::Dimension(format!("alignment covers {words} words, got {} tags", word_tags.len())));
    }
    let mut out = Vec::with_capacity(alignment.len());
    let mut prev_word = usize::MAX;
    for &w in alignment {
        let tag = word_tags[w];
        if w != prev_word {
            out.push(tag);
        } else {
            out.push(match (mode, scheme.category(tag)) {
                (SubtokenLabeling::PropagateInside, Some(c)) => scheme.inside(c),
                _ => OUTSIDE,
            });
        }
        prev_word = w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{segment_sentences, Document};

    const TEXT: &str =
        "Varón de 51 años con antecedentes de policonsumo de drogas. Actualmente, cannabis 1-2 g/día vía oral.";

    fn second_sentence() -> Sentence {
        segment_sentences(&Document::unannotated("d", TEXT)).remove(1)
    }

    #[test]
    fn scheme_sizes() {
        let t = LabelScheme::trigger();
        let a = LabelScheme::argument();
        assert_eq!(t.num_tags(), 9);
        assert_eq!(a.num_tags(), 13);
        assert_eq!(t.tag_name(0), "O");
        for i in 0..a.num_tags() {
            assert_eq!(a.tag_index(&a.tag_name(i)), Some(i));
        }
        assert_eq!(t.tag_index("B-Drug"), Some(7));
        assert_eq!(t.tag_index("X-Drug"), None);
    }

    #[test]
    fn encodes_note_spans() {
        let s = second_sentence();
        let t = LabelScheme::trigger();
        let tags = encode_bio(&s, &[AnnotatedSpan::new("T2", "Cannabis", 73, 81, "cannabis")], &t).unwrap();
        let names: Vec<String> = tags.iter().map(|&x| t.tag_name(x)).collect();
        assert_eq!(names, ["O", "O", "B-Cannabis", "O", "O", "O", "O", "O"]);

        let a = LabelScheme::argument();
        let tags = encode_bio(&s, &[AnnotatedSpan::new("T9", "Method", 92, 100, "vía oral")], &a).unwrap();
        assert_eq!(a.tag_name(tags[5]), "B-Method");
        assert_eq!(a.tag_name(tags[6]), "I-Method");

        assert!(encode_bio(&s, &[], &t).unwrap().iter().all(|&x| x == OUTSIDE));
    }

    #[test]
    fn span_crossing_sentence_is_an_error() {
        let s = second_sentence();
        let span = AnnotatedSpan::new("T5", "Drug", 52, 72, "drogas. Actualmente");
        assert!(matches!(
            encode_bio(&s, &[span], &LabelScheme::trigger()),
            Err(Error::SpanCrossesSentence { .. })
        ));
    }

    #[test]
    fn mid_token_spans_snap_outward_and_overlaps_keep_longer() {
        let s = second_sentence();
        let a = LabelScheme::argument();
        let spans = [
            AnnotatedSpan::new("T3", "Amount", 82, 87, "1-2 g"),
            AnnotatedSpan::new("T4", "Frequency", 87, 91, "/día"),
        ];
        let tags = encode_bio(&s, &spans, &a).unwrap();
        assert_eq!(a.tag_name(tags[3]), "B-Amount");
        assert_eq!(a.tag_name(tags[4]), "I-Amount");
        let decoded = decode_bio(&s, &tags, &a).unwrap();
        assert_eq!(decoded.len(), 1);
        assert_eq!((decoded[0].start, decoded[0].end, decoded[0].text.as_str()), (82, 91, "1-2 g/día"));
    }

    #[test]
    fn decodes() {
        let s = second_sentence();
        let t = LabelScheme::trigger();
        let mut tags = vec![OUTSIDE; s.len()];
        tags[2] = t.tag_index("B-Cannabis").unwrap();
        let spans = decode_bio(&s, &tags, &t).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end, spans[0].text.as_str()), (73, 81, "cannabis"));
        assert!(decode_bio(&s, &vec![OUTSIDE; s.len()], &t).unwrap().is_empty());

        let b = t.tag_index("B-Drug").unwrap();
        tags = vec![OUTSIDE; s.len()];
        tags[0] = b;
        tags[1] = b;
        let spans = decode_bio(&s, &tags, &t).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].end, 71);
        assert_eq!(spans[1].start, 71);
        assert!(decode_bio(&s, &[0], &t).is_err());
    }

    #[test]
    fn repairs() {
        let t = LabelScheme::trigger();
        let ix = |n: &str| t.tag_index(n).unwrap();
        assert_eq!(repair_bio(&[0, ix("I-Drug")], &t), vec![0, ix("B-Drug")]);
        assert_eq!(
            repair_bio(&[ix("B-Drug"), ix("I-Alcohol")], &t),
            vec![ix("B-Drug"), ix("B-Alcohol")]
        );
        let valid = vec![ix("B-Drug"), ix("I-Drug"), 0, ix("B-Tobacco")];
        assert_eq!(repair_bio(&valid, &t), valid);
    }

    #[test]
    fn projects_subtokens() {
        let t = LabelScheme::trigger();
        let b = t.tag_index("B-Cannabis").unwrap();
        let i = t.tag_index("I-Cannabis").unwrap();
        assert_eq!(project_subtokens(&[b, i], &[0, 0]).unwrap(), vec![b]);
        assert_eq!(project_subtokens(&[0, b, 0], &[0, 1, 2]).unwrap(), vec![0, b, 0]);
        let bd = t.tag_index("B-Drug").unwrap();
        assert_eq!(project_subtokens(&[0, bd], &[0, 0]).unwrap(), vec![0]);
        assert!(project_subtokens(&[0, 0, 0], &[0, 1, 0]).is_err());
        assert!(project_subtokens(&[0, 0], &[0, 2]).is_err());
        assert!(project_subtokens(&[0], &[1]).is_err());
    }

    #[test]
    fn expands_to_subtokens() {
        let t = LabelScheme::trigger();
        let b = t.tag_index("B-Cannabis").unwrap();
        let i = t.tag_index("I-Cannabis").unwrap();
        let align = [0, 0, 1];
        assert_eq!(
            expand_to_subtokens(&[b, 0], &align, &t, SubtokenLabeling::PropagateInside).unwrap(),
            vec![b, i, 0]
        );
        assert_eq!(
            expand_to_subtokens(&[b, 0], &align, &t, SubtokenLabeling::FirstOnly).unwrap(),
            vec![b, 0, 0]
        );
        let sub = expand_to_subtokens(&[b, 0], &align, &t, SubtokenLabeling::PropagateInside).unwrap();
        assert_eq!(project_subtokens(&sub, &align).unwrap(), vec![b, 0]);
    }
}
