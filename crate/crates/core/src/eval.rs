//! Exact-match span scoring with micro-averaged precision, recall and F1.
//!
//! A prediction is correct only when document, label, start and end all
//! equal a gold span. Matching is one-to-one: a repeated identical
//! prediction matches once and every further copy is a false positive,
//! counted in [`EvalReport::duplicates`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::corpus::{AnnotatedSpan, Document};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EvalSpan {
    pub doc_id: String,
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl EvalSpan {
    pub fn new(doc_id: &str, label: &str, start: usize, end: usize) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            label: label.to_string(),
            start,
            end,
        }
    }

    pub fn from_annotated(doc_id: &str, span: &AnnotatedSpan) -> Self {
        Self::new(doc_id, &span.label, span.start, span.end)
    }
}

/// Spans of a list of documents, tagged with their document id.
pub fn collect_spans<'a, F>(docs: &'a [Document], spans_of: F) -> Vec<EvalSpan>
where
    F: Fn(&'a Document) -> &'a [AnnotatedSpan],
{
    docs.iter()
        .flat_map(|d| spans_of(d).iter().map(move |s| EvalSpan::from_annotated(&d.doc_id, s)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub per_label: BTreeMap<String, Counts>,
    pub overall: Counts,
    /// Identical predictions beyond the first; each is also a false positive.
    pub duplicates: usize,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.overall.precision()
    }

    pub fn recall(&self) -> f64 {
        self.overall.recall()
    }

    pub fn f1(&self) -> f64 {
        self.overall.f1()
    }

    /// Aligned text table, one row per label plus a micro row.
    pub fn table(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
            "label", "tp", "fp", "fn", "precision", "recall", "f1"
        );
        let rows = self.per_label.iter().map(|(l, c)| (l.as_str(), c)).chain([("micro", &self.overall)]);
        for (label, c) in rows {
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
                label,
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f1()
            );
        }
        if self.duplicates > 0 {
            let _ = writeln!(s, "duplicate predictions counted as false positives: {}", self.duplicates);
        }
        s
    }

    /// `key = value` lines under `prefix`: `<prefix>.micro.<field>` and
    /// `<prefix>.label.<Label>.<field>` for tp, fp, fn, precision, recall
    /// and f1, plus `<prefix>.duplicates`.
    pub fn key_values(&self, prefix: &str) -> String {
        let mut s = String::new();
        let mut emit = |scope: String, c: &Counts| {
            let _ = writeln!(s, "{scope}.tp = {}", c.tp);
            let _ = writeln!(s, "{scope}.fp = {}", c.fp);
            let _ = writeln!(s, "{scope}.fn = {}", c.fn_);
            let _ = writeln!(s, "{scope}.precision = {}", c.precision());
            let _ = writeln!(s, "{scope}.recall = {}", c.recall());
            let _ = writeln!(s, "{scope}.f1 = {}", c.f1());
        };
        emit(format!("{prefix}.micro"), &self.overall);
        for (label, c) in &self.per_label {
            emit(format!("{prefix}.label.{label}"), c);
        }
        let _ = writeln!(s, "{prefix}.duplicates = {}", self.duplicates);
        s
    }
}

/// Scores `predicted` against `gold` by one-to-one exact matching.
pub fn micro_prf(gold: &[EvalSpan], predicted: &[EvalSpan]) -> EvalReport {
    let mut remaining: HashMap<&EvalSpan, usize> = HashMap::new();
    for g in gold {
        *remaining.entry(g).or_default() += 1;
    }
    let mut seen: HashMap<&EvalSpan, usize> = HashMap::new();
    let mut report = EvalReport::default();
    for p in predicted {
        let copies = seen.entry(p).or_default();
        *copies += 1;
        if *copies > 1 {
            report.duplicates += 1;
        }
        let counts = report.per_label.entry(p.label.clone()).or_default();
        match remaining.get_mut(p) {
            Some(n) if *n > 0 => {
                *n -= 1;
                counts.tp += 1;
            }
            _ => counts.fp += 1,
        }
    }
    for (g, n) in remaining {
        report.per_label.entry(g.label.clone()).or_default().fn_ += n;
    }
    for c in report.per_label.values() {
        report.overall.add(*c);
    }
    report
}
