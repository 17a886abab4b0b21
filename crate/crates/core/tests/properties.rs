//! Randomized invariants of the codec, the voting rule and the scorer.

use proptest::prelude::*;

use substance_ner::bio::{decode_bio, encode_bio, repair_bio, LabelScheme};
use substance_ner::corpus::{parse_ann, segment_sentences, serialize_ann, AnnotatedSpan, Document, Sentence, TRIGGER_LABELS};
use substance_ner::crf::{log_partition, marginals};
use substance_ner::matrix::Matrix;
use substance_ner::ensemble::{majority_vote, TieBreak};
use substance_ner::eval::{micro_prf, EvalSpan};

fn sentence_of(words: &[String]) -> Sentence {
    let doc = Document::unannotated("p", words.join(" "));
    let mut sentences = segment_sentences(&doc);
    assert_eq!(sentences.len(), 1);
    sentences.remove(0)
}

/// Lays out `(gap, len, category)` pieces left to right over the tokens.
fn layout(sentence: &Sentence, pieces: &[(usize, usize, usize)], scheme: &LabelScheme) -> Vec<AnnotatedSpan> {
    let mut at = 0;
    let mut spans = Vec::new();
    for &(gap, len, cat) in pieces {
        let first = at + gap;
        let last = first + len - 1;
        if last >= sentence.tokens.len() {
            break;
        }
        let (start, end) = (sentence.tokens[first].start, sentence.tokens[last].end);
        let text: String = sentence.text.chars().skip(start - sentence.start).take(end - start).collect();
        spans.push(AnnotatedSpan::new("", scheme.categories[cat].clone(), start, end, text));
        at = last + 1;
    }
    spans
}

proptest! {
    #[test]
    fn bio_round_trip(
        words in prop::collection::vec("[a-zñáé]{1,6}", 1..14),
        pieces in prop::collection::vec((0usize..3, 1usize..4, 0usize..6), 0..6),
    ) {
        let scheme = LabelScheme::argument();
        let sentence = sentence_of(&words);
        let spans = layout(&sentence, &pieces, &scheme);
        let tags = encode_bio(&sentence, &spans, &scheme).unwrap();
        prop_assert_eq!(decode_bio(&sentence, &tags, &scheme).unwrap(), spans);
    }

    #[test]
    fn repair_is_idempotent_and_leaves_no_stray_inside(tags in prop::collection::vec(0usize..9, 0..30)) {
        let scheme = LabelScheme::trigger();
        let once = repair_bio(&tags, &scheme);
        prop_assert_eq!(repair_bio(&once, &scheme), once.clone());
        for (i, &t) in once.iter().enumerate() {
            if scheme.is_inside(t) {
                prop_assert!(i > 0 && scheme.category(once[i - 1]) == scheme.category(t));
            }
        }
    }

    #[test]
    fn ann_round_trip(
        text in "[a-zA-ZáéíóúñÑ]{1,40}",
        raw in prop::collection::vec((0usize..40, 1usize..8, 0usize..4), 0..8),
    ) {
        let len = text.chars().count();
        let spans: Vec<AnnotatedSpan> = raw
            .iter()
            .enumerate()
            .filter(|(_, (s, l, _))| s + l <= len)
            .map(|(i, &(s, l, c))| {
                let t: String = text.chars().skip(s).take(l).collect();
                AnnotatedSpan::new(format!("T{}", i + 1), TRIGGER_LABELS[c], s, s + l, t)
            })
            .collect();
        let parsed = parse_ann(&serialize_ann(&spans), &TRIGGER_LABELS).unwrap();
        prop_assert_eq!(&parsed, &spans);
        prop_assert!(Document::new("d", text.clone(), parsed, vec![]).is_ok());
    }

    #[test]
    fn vote_ignores_member_order(
        seqs in prop::collection::vec(prop::collection::vec(0usize..9, 6), 1..7),
        rotate in 0usize..7,
    ) {
        let scheme = LabelScheme::trigger();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let mut permuted = refs.clone();
        permuted.rotate_left(rotate % refs.len());
        permuted.reverse();
        prop_assert_eq!(
            majority_vote(&refs, &scheme, TieBreak::PreferEntity).unwrap(),
            majority_vote(&permuted, &scheme, TieBreak::PreferEntity).unwrap()
        );
    }

    #[test]
    fn identical_members_vote_for_themselves(seq in prop::collection::vec(0usize..13, 0..20), n in 1usize..6) {
        let scheme = LabelScheme::argument();
        let refs: Vec<&[usize]> = vec![seq.as_slice(); n];
        prop_assert_eq!(majority_vote(&refs, &scheme, TieBreak::PreferEntity).unwrap(), seq);
    }

    #[test]
    fn swapping_gold_and_predictions_swaps_p_and_r(
        gold in prop::collection::vec((0usize..3, 0usize..4, 0usize..6), 0..12),
        pred in prop::collection::vec((0usize..3, 0usize..4, 0usize..6), 0..12),
    ) {
        let to_spans = |v: &[(usize, usize, usize)]| -> Vec<EvalSpan> {
            v.iter().map(|&(d, l, s)| EvalSpan::new(&format!("d{d}"), TRIGGER_LABELS[l], s, s + 2)).collect()
        };
        let (g, p) = (to_spans(&gold), to_spans(&pred));
        let a = micro_prf(&g, &p);
        let b = micro_prf(&p, &g);
        prop_assert_eq!(a.precision(), b.recall());
        prop_assert_eq!(a.recall(), b.precision());
        prop_assert!((a.f1() - b.f1()).abs() < 1e-12);
        for r in [&a, &b] {
            let (pr, rc) = (r.precision(), r.recall());
            if pr + rc > 0.0 {
                prop_assert!((r.f1() - 2.0 * pr * rc / (pr + rc)).abs() < 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&r.f1()));
        }
    }

    #[test]
    fn marginals_are_distributions(
        n in 1usize..6,
        c in 1usize..5,
        values in prop::collection::vec(-3.0f64..3.0, 60),
    ) {
        let e = Matrix::from_vec(n, c, values[..n * c].to_vec());
        let t = Matrix::from_vec(c, c, values[30..30 + c * c].to_vec());
        let (node, pair, log_z) = marginals(&e, &t).unwrap();
        prop_assert!((log_z - log_partition(&e, &t)).abs() < 1e-12);
        for i in 0..n {
            prop_assert!((node.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!((pair.as_slice().iter().sum::<f64>() - (n - 1) as f64).abs() < 1e-9);
    }
}
