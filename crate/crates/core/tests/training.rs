//! Training, persistence and filter behaviour on the synthetic corpus.

use std::fs;

use substance_ner::corpus::{segment_sentences, Document};
use substance_ner::encoder::EmbedderConfig;
use substance_ner::filter::{build_filter_dataset, train_filter, FilterConfig, SentenceFilter};
use substance_ner::model::{load_checkpoint, save_checkpoint, train, SubsetSelector, TrainingConfig};
use substance_ner::optim::AdamWConfig;
use substance_ner::sampling::Strategy;
use substance_ner::synthetic::training_corpus;

fn config(lr: f64, epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        seed: 3,
        optimizer: AdamWConfig { learning_rate: lr, ..AdamWConfig::default() },
        ..TrainingConfig::default()
    }
}

#[test]
fn loss_falls_at_small_learning_rate() {
    let ckpt = train(&training_corpus().unwrap(), &EmbedderConfig::default(), &config(1e-3, 5), &SubsetSelector::all()).unwrap();
    let l = &ckpt.metadata.epoch_losses;
    assert_eq!(l.len(), 5);
    assert!(l[4] < l[0], "{l:?}");
    assert!(l.iter().all(|&x| x >= 0.0));
}

#[test]
fn zero_beta_leaves_argument_head_untouched() {
    let corpus = training_corpus().unwrap();
    let emb = EmbedderConfig::default();
    let before = train(&corpus, &emb, &TrainingConfig { beta: 0.0, ..config(0.05, 1) }, &SubsetSelector::all()).unwrap();
    let after = train(&corpus, &emb, &TrainingConfig { beta: 0.0, ..config(0.05, 4) }, &SubsetSelector::all()).unwrap();
    assert_eq!(before.model.argument, after.model.argument);
    assert_ne!(before.model.trigger, after.model.trigger);
}

#[test]
fn every_strategy_trains_deterministically() {
    let corpus = training_corpus().unwrap();
    let emb = EmbedderConfig::default();
    for strategy in [
        Strategy::None,
        Strategy::LabelWeighted,
        Strategy::oversample_ratios(9, 3, 2, 2),
        Strategy::weighted_sampler(),
    ] {
        let cfg = TrainingConfig { strategy: strategy.clone(), ..config(0.01, 2) };
        let a = train(&corpus, &emb, &cfg, &SubsetSelector::all()).unwrap();
        let b = train(&corpus, &emb, &cfg, &SubsetSelector::all()).unwrap();
        assert_eq!(a.model.trigger, b.model.trigger, "{}", strategy.name());
        assert_eq!(a.metadata.strategy, strategy.name());
        assert!(a.metadata.final_loss.is_finite());
    }
}

#[test]
fn checkpoint_round_trip() {
    let corpus = training_corpus().unwrap();
    let ids: Vec<String> = corpus.iter().take(20).map(|d| d.doc_id.clone()).collect();
    let subset = SubsetSelector::of("first20", ids);
    let ckpt = train(&corpus, &EmbedderConfig::default(), &config(0.05, 10), &subset).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.metadata, ckpt.metadata);
    assert_eq!(loaded.metadata.subset_id, "first20");
    assert_eq!(loaded.metadata.strategy, "none");
    assert_eq!(loaded.config, ckpt.config);
    let sentences: Vec<_> = corpus.iter().flat_map(segment_sentences).take(20).collect();
    assert_eq!(sentences.len(), 20);
    for s in &sentences {
        assert_eq!(loaded.model.sentence_tags(s).unwrap(), ckpt.model.sentence_tags(s).unwrap());
    }

    let bytes = fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&cut).is_err());
}

#[test]
fn filter_on_synthetic_corpus() {
    let corpus = training_corpus().unwrap();
    let ds = build_filter_dataset(&corpus);
    let recount = corpus
        .iter()
        .flat_map(|d: &Document| {
            segment_sentences(d).into_iter().map(move |s| {
                d.trigger_spans
                    .iter()
                    .chain(&d.argument_spans)
                    .any(|sp| sp.start < s.end && s.start < sp.end)
            })
        })
        .filter(|&p| p)
        .count();
    assert_eq!(ds.iter().filter(|e| e.positive).count(), recount);

    let cfg = FilterConfig {
        optimizer: AdamWConfig { learning_rate: 0.05, weight_decay: 0.01, ..AdamWConfig::default() },
        epochs: 40,
        ..FilterConfig::default()
    };
    let filter = train_filter(&ds, &EmbedderConfig::default(), &cfg).unwrap();
    let correct = ds.iter().filter(|e| filter.keep(&e.sentence).unwrap() == e.positive).count();
    assert_eq!(correct, ds.len());
}
