//! Documents, standoff annotations, sentence segmentation and tokenization.
//!
//! All offsets are counted in Unicode code points. The conversion to byte
//! offsets happens in exactly one place, [`CodePointIndex`].

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRIGGER_LABELS: [&str; 4] = ["Tobacco", "Cannabis", "Alcohol", "Drug"];
pub const ARGUMENT_LABELS: [&str; 6] = ["Type", "Method", "Amount", "Frequency", "Duration", "History"];

pub const TRIGGER_SUFFIX: &str = "trigger.ann";
pub const ARGUMENT_SUFFIX: &str = "argument.ann";

/// Abbreviations that never end a sentence (compared lowercased, without the
/// final period).
const ABBREVIATIONS: &[&str] = &[
    "dr", "dra", "sr", "sra", "srta", "sres", "ud", "uds", "dña", "prof", "profa", "p.ej", "aprox",
    "núm", "pág", "fig", "ej", "vs", "tel", "av",
];

const DETACHED_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '(', ')', '"', '«', '»'];

/// Maps code-point offsets to byte offsets within one string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodePointIndex {
    bytes: Vec<usize>,
}

impl CodePointIndex {
    pub fn new(text: &str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        Self { bytes }
    }

    /// Length in code points.
    pub fn len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Byte range of the code-point range `[start, end)`.
    pub fn byte_range(&self, start: usize, end: usize) -> Option<std::ops::Range<usize>> {
        if start > end || end > self.len() {
            return None;
        }
        Some(self.bytes[start]..self.bytes[end])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedSpan {
    pub id: String,
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl AnnotatedSpan {
    pub fn new(id: impl Into<String>, label: impl Into<String>, start: usize, end: usize, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            start,
            end,
            text: text.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub trigger_spans: Vec<AnnotatedSpan>,
    pub argument_spans: Vec<AnnotatedSpan>,
    index: CodePointIndex,
}

impl Document {
    /// Builds a document and checks every span against the text.
    pub fn new(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        trigger_spans: Vec<AnnotatedSpan>,
        argument_spans: Vec<AnnotatedSpan>,
    ) -> Result<Self> {
        let text = text.into();
        let index = CodePointIndex::new(&text);
        let doc = Self {
            doc_id: doc_id.into(),
            text,
            trigger_spans,
            argument_spans,
            index,
        };
        for span in doc.trigger_spans.iter().chain(&doc.argument_spans) {
            doc.check_span(span)?;
        }
        Ok(doc)
    }

    /// A document without annotations.
    pub fn unannotated(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let index = CodePointIndex::new(&text);
        Self {
            doc_id: doc_id.into(),
            text,
            trigger_spans: Vec::new(),
            argument_spans: Vec::new(),
            index,
        }
    }

    /// Length in code points.
    pub fn char_len(&self) -> usize {
        self.index.len()
    }

    /// Code-point slice `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        self.index.byte_range(start, end).map(|r| &self.text[r])
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    fn check_span(&self, span: &AnnotatedSpan) -> Result<()> {
        let actual = match self.slice(span.start, span.end) {
            Some(s) if span.start < span.end => s,
            _ => {
                return Err(Error::SpanOutOfBounds {
                    id: span.id.clone(),
                    start: span.start,
                    end: span.end,
                    len: self.char_len(),
                })
            }
        };
        if actual != span.text {
            return Err(Error::SpanTextMismatch {
                id: span.id.clone(),
                annotated: span.text.clone(),
                actual: actual.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub doc_id: String,
    /// Ordinal of the sentence within its document.
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub tokens: Vec<Token>,
    /// Position of `tokens[0]` within the unsplit sentence; non-zero only
    /// for continuation segments produced by [`split_overlong`].
    pub token_offset: usize,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub mean_words: f64,
    pub triggers: usize,
    pub arguments: usize,
    pub triggers_per_document: f64,
    pub arguments_per_document: f64,
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "documents = {}", self.documents)?;
        writeln!(f, "mean_words = {:.2}", self.mean_words)?;
        writeln!(f, "triggers = {}", self.triggers)?;
        writeln!(f, "arguments = {}", self.arguments)?;
        writeln!(f, "triggers_per_document = {:.2}", self.triggers_per_document)?;
        writeln!(f, "arguments_per_document = {:.2}", self.arguments_per_document)
    }
}

/// Parses a standoff annotation file.
///
/// Lines that do not start with `T` (notes, relations) and discontinuous
/// spans are skipped with a warning.
pub fn parse_ann(content: &str, expected_labels: &[&str]) -> Result<Vec<AnnotatedSpan>> {
    let mut spans = Vec::new();
    for (lineno, raw) in content.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        if !line.starts_with('T') {
            warn!("annotation line {line_no}: skipping non-text-bound annotation");
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (id, info, text) = (fields[0], fields[1], fields[2]);
        if info.contains(';') {
            warn!("annotation line {line_no}: skipping discontinuous span {id}");
            continue;
        }
        let parts: Vec<&str> = info.split(' ').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `LABEL START END`, found {info:?}"),
            });
        }
        let offset = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("offset {s:?} is not a non-negative integer"),
            })
        };
        let (start, end) = (offset(parts[1])?, offset(parts[2])?);
        if start >= end {
            return Err(Error::Parse {
                line: line_no,
                message: format!("empty or reversed span [{start}, {end})"),
            });
        }
        let label = parts[0];
        if !expected_labels.contains(&label) {
            return Err(Error::UnknownLabel {
                label: label.to_string(),
                expected: expected_labels.join(", "),
            });
        }
        spans.push(AnnotatedSpan::new(id, label, start, end, text));
    }
    Ok(spans)
}

pub fn serialize_ann(spans: &[AnnotatedSpan]) -> String {
    let mut out = String::new();
    for s in spans {
        let _ = writeln!(out, "{}\t{} {} {}\t{}", s.id, s.label, s.start, s.end, s.text);
    }
    out
}

pub fn load_document(txt: &str, trigger_ann: &str, argument_ann: &str, doc_id: &str) -> Result<Document> {
    let triggers = parse_ann(trigger_ann, &TRIGGER_LABELS)?;
    let arguments = parse_ann(argument_ann, &ARGUMENT_LABELS)?;
    Document::new(doc_id, txt, triggers, arguments)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads every `<doc_id>.txt` in `dir`, with `<doc_id>.trigger.ann` and
/// `<doc_id>.argument.ann` when present. Documents are sorted by id.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<Document>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    let mut docs = Vec::with_capacity(stems.len());
    for stem in stems {
        let txt = read(&dir.join(format!("{stem}.txt")))?;
        let optional = |suffix: &str| -> Result<String> {
            let p = dir.join(format!("{stem}.{suffix}"));
            if p.exists() {
                read(&p)
            } else {
                Ok(String::new())
            }
        };
        let trig = optional(TRIGGER_SUFFIX)?;
        let args = optional(ARGUMENT_SUFFIX)?;
        docs.push(load_document(&txt, &trig, &args, &stem).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{stem}: {message}"),
            },
            other => other,
        })?);
    }
    Ok(docs)
}

/// Writes a document and its annotations in the layout read by [`load_corpus_dir`].
pub fn write_document(dir: &Path, doc: &Document) -> Result<()> {
    let write = |name: String, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write(format!("{}.txt", doc.doc_id), &doc.text)?;
    write(format!("{}.{TRIGGER_SUFFIX}", doc.doc_id), &serialize_ann(&doc.trigger_spans))?;
    write(format!("{}.{ARGUMENT_SUFFIX}", doc.doc_id), &serialize_ann(&doc.argument_spans))
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, ')' | '"' | '»' | '\'')
}

fn is_opener(c: char) -> bool {
    matches!(c, '¿' | '¡' | '(' | '"' | '«')
}

fn starts_sentence(chars: &[char], k: usize) -> bool {
    let c = chars[k];
    if c.is_uppercase() || c.is_numeric() {
        return true;
    }
    is_opener(c) && chars.get(k + 1).is_some_and(|n| n.is_uppercase() || n.is_numeric())
}

fn is_abbreviation(chars: &[char], period: usize) -> bool {
    let mut begin = period;
    while begin > 0 && !chars[begin - 1].is_whitespace() {
        begin -= 1;
    }
    let word: String = chars[begin..period]
        .iter()
        .skip_while(|c| is_opener(**c))
        .collect::<String>()
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits `text` into sentence ranges `[start, end)` (code points). Ranges are
/// trimmed of surrounding whitespace.
pub fn sentence_ranges(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut ranges = Vec::new();
    let mut begin = 0;
    let mut i = 0;
    while i < n {
        if !is_terminator(chars[i]) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < n && (is_terminator(chars[j]) || is_closer(chars[j])) {
            j += 1;
        }
        let mut k = j;
        while k < n && chars[k].is_whitespace() {
            k += 1;
        }
        let boundary = k > j && k < n && starts_sentence(&chars, k) && !(chars[i] == '.' && is_abbreviation(&chars, i));
        if boundary {
            push_trimmed(&chars, begin, j, &mut ranges);
            begin = k;
            i = k;
        } else {
            i = j;
        }
    }
    push_trimmed(&chars, begin, n, &mut ranges);
    ranges
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<(usize, usize)>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        out.push((start, end));
    }
}

/// Segments a document into tokenized sentences.
pub fn segment_sentences(doc: &Document) -> Vec<Sentence> {
    sentence_ranges(&doc.text)
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| {
            let text = doc.slice(start, end).unwrap_or_default().to_string();
            let tokens = tokenize(&text, start);
            Sentence {
                doc_id: doc.doc_id.clone(),
                index,
                start,
                end,
                text,
                tokens,
                token_offset: 0,
            }
        })
        .collect()
}

/// Whitespace tokenizer that detaches punctuation, except between two
/// alphanumeric characters (`1.5`, `3,5` stay whole). Offsets are shifted by
/// `offset` code points.
pub fn tokenize(text: &str, offset: usize) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let chunk = &chars[chunk_start..i];
        let mut word_start: Option<usize> = None;
        for (j, &c) in chunk.iter().enumerate() {
            let internal = j > 0 && j + 1 < chunk.len() && chunk[j - 1].is_alphanumeric() && chunk[j + 1].is_alphanumeric();
            if DETACHED_PUNCTUATION.contains(&c) && !internal {
                if let Some(ws) = word_start.take() {
                    tokens.push(make_token(chunk, ws, j, chunk_start + offset));
                }
                tokens.push(make_token(chunk, j, j + 1, chunk_start + offset));
            } else if word_start.is_none() {
                word_start = Some(j);
            }
        }
        if let Some(ws) = word_start {
            tokens.push(make_token(chunk, ws, chunk.len(), chunk_start + offset));
        }
    }
    tokens
}

fn make_token(chunk: &[char], a: usize, b: usize, base: usize) -> Token {
    Token {
        text: chunk[a..b].iter().collect(),
        start: base + a,
        end: base + b,
    }
}

/// Splits a sentence with more than `cap` tokens into consecutive segments
/// of at most `cap` tokens.
pub fn split_overlong(sentence: &Sentence, cap: usize) -> Vec<Sentence> {
    if cap == 0 || sentence.tokens.len() <= cap {
        return vec![sentence.clone()];
    }
    let index = CodePointIndex::new(&sentence.text);
    sentence
        .tokens
        .chunks(cap)
        .enumerate()
        .map(|(i, toks)| {
            let start = toks[0].start;
            let end = toks[toks.len() - 1].end;
            let range = index
                .byte_range(start - sentence.start, end - sentence.start)
                .expect("tokens lie within their sentence");
            Sentence {
                doc_id: sentence.doc_id.clone(),
                index: sentence.index,
                start,
                end,
                text: sentence.text[range].to_string(),
                tokens: toks.to_vec(),
                token_offset: sentence.token_offset + i * cap,
            }
        })
        .collect()
}

pub fn corpus_stats(corpus: &[Document]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("corpus statistics need at least one document".into()));
    }
    let n = corpus.len() as f64;
    let words: usize = corpus.iter().map(Document::word_count).sum();
    let triggers: usize = corpus.iter().map(|d| d.trigger_spans.len()).sum();
    let arguments: usize = corpus.iter().map(|d| d.argument_spans.len()).sum();
    Ok(CorpusStats {
        documents: corpus.len(),
        mean_words: words as f64 / n,
        triggers,
        arguments,
        triggers_per_document: triggers as f64 / n,
        arguments_per_document: arguments as f64 / n,
    })
}

/// Checks that document ids are unique within a corpus.
pub fn check_unique_ids(corpus: &[Document]) -> Result<()> {
    let mut seen = HashSet::new();
    for d in corpus {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::invalid(format!("duplicate document id {}", d.doc_id)));
        }
    }
    Ok(())
}
