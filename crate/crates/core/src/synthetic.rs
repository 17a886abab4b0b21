//! A small generated corpus with planted trigger and argument patterns.
//!
//! Every span word belongs to exactly one label, spans are whole tokens and
//! some sentences carry no span at all. The training split has 25 documents
//! of 2 sentences; the held-out split draws new combinations of the same
//! vocabulary under another seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSpan, Document};
use crate::error::Result;

pub const TRAIN_SEED: u64 = 20_240;
pub const HELD_OUT_SEED: u64 = 77_031;
pub const TRAIN_DOCS: usize = 25;
pub const HELD_OUT_DOCS: usize = 20;
pub const SENTENCES_PER_DOC: usize = 2;

const TRIGGERS: &[(&str, &[&str])] = &[
    ("Tobacco", &["tabaco", "cigarrillos"]),
    ("Cannabis", &["cannabis", "porros"]),
    ("Alcohol", &["alcohol", "cerveza", "vino"]),
    ("Drug", &["cocaína", "heroína", "anfetaminas"]),
];

const TYPES: &[&str] = &["rubio", "negro", "tinto"];
const METHODS: &[&str] = &["fumado", "vía oral", "inhalada", "esnifada"];
const AMOUNTS: &[&str] = &["dos gramos", "tres copas", "cinco paquetes", "dos unidades"];
const FREQUENCIES: &[&str] = &["diariamente", "semanalmente", "a diario", "cada noche"];
const DURATIONS: &[&str] = &["durante 10 años", "durante 3 meses", "desde 2015"];
const HISTORIES: &[&str] = &["Exconsumidor", "Abstinente"];

const NEGATIVES: &[&str] = &[
    "Exploración física sin hallazgos relevantes.",
    "Tensión arterial dentro de la normalidad.",
    "Acude a consulta por dolor abdominal.",
    "Niega alergias medicamentosas conocidas.",
    "Se solicita analítica completa.",
];

/// Pieces of one sentence: literal text or a labeled span.
enum Piece {
    Text(&'static str),
    Trigger(&'static str, &'static str),
    Argument(&'static str, &'static str),
}

fn pick<R: Rng>(rng: &mut R, options: &[&'static str]) -> &'static str {
    options.choose(rng).expect("non-empty option list")
}

fn trigger<R: Rng>(rng: &mut R) -> Piece {
    let (label, words) = TRIGGERS.choose(rng).expect("non-empty");
    Piece::Trigger(label, pick(rng, words))
}

fn argument<R: Rng>(rng: &mut R, label: &'static str, options: &[&'static str]) -> Piece {
    Piece::Argument(label, pick(rng, options))
}

fn positive_sentence<R: Rng>(rng: &mut R) -> Vec<Piece> {
    use Piece::Text;
    match rng.gen_range(0..5) {
        0 => vec![
            Text("Paciente con consumo de"),
            trigger(rng),
            argument(rng, "Method", METHODS),
            argument(rng, "Frequency", FREQUENCIES),
        ],
        1 => vec![
            Text("Refiere consumo de"),
            argument(rng, "Amount", AMOUNTS),
            Text("de"),
            trigger(rng),
            argument(rng, "Frequency", FREQUENCIES),
        ],
        2 => vec![
            argument(rng, "History", HISTORIES),
            Text("de"),
            trigger(rng),
            argument(rng, "Duration", DURATIONS),
        ],
        3 => vec![
            Text("Consume"),
            trigger(rng),
            argument(rng, "Type", TYPES),
            argument(rng, "Amount", AMOUNTS),
            argument(rng, "Frequency", FREQUENCIES),
        ],
        _ => vec![
            Text("Antecedente de consumo de"),
            trigger(rng),
            argument(rng, "Method", METHODS),
            argument(rng, "Duration", DURATIONS),
        ],
    }
}

/// Appends a sentence to `text`, recording span offsets in code points.
fn append_sentence(
    text: &mut String,
    pieces: &[Piece],
    triggers: &mut Vec<AnnotatedSpan>,
    arguments: &mut Vec<AnnotatedSpan>,
) {
    if !text.is_empty() {
        text.push(' ');
    }
    for (i, piece) in pieces.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let start = text.chars().count();
        let (word, target, label) = match piece {
            Piece::Text(w) => (*w, None, ""),
            Piece::Trigger(l, w) => (*w, Some(&mut *triggers), *l),
            Piece::Argument(l, w) => (*w, Some(&mut *arguments), *l),
        };
        text.push_str(word);
        if let Some(list) = target {
            let id = format!("T{}", list.len() + 1);
            list.push(AnnotatedSpan::new(id, label, start, start + word.chars().count(), word));
        }
    }
    text.push('.');
}

/// `docs` documents of two sentences each; about one sentence in five is
/// span-free.
pub fn generate(seed: u64, docs: usize, prefix: &str) -> Result<Vec<Document>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(docs);
    for d in 0..docs {
        let (mut text, mut triggers, mut arguments) = (String::new(), Vec::new(), Vec::new());
        for _ in 0..SENTENCES_PER_DOC {
            if rng.gen_bool(0.2) {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(pick(&mut rng, NEGATIVES));
            } else {
                let pieces = positive_sentence(&mut rng);
                append_sentence(&mut text, &pieces, &mut triggers, &mut arguments);
            }
        }
        out.push(Document::new(format!("{prefix}{:03}", d + 1), text, triggers, arguments)?);
    }
    Ok(out)
}

/// The 50-sentence training corpus.
pub fn training_corpus() -> Result<Vec<Document>> {
    generate(TRAIN_SEED, TRAIN_DOCS, "syn")
}

/// Unseen documents over the same vocabulary.
pub fn held_out_corpus() -> Result<Vec<Document>> {
    generate(HELD_OUT_SEED, HELD_OUT_DOCS, "heldout")
}
