//! Batch verbs behind the `substance-ner` binary.
//!
//! Each verb reads its inputs from the run configuration, writes artifacts
//! under `output_dir` together with a `manifest.txt`, and removes whatever
//! it wrote if it fails part-way.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use log::{info, warn};

use crate::bio::LabelScheme;
use crate::config::{required, RunConfig};
use crate::corpus::{
    corpus_stats, load_corpus_dir, parse_ann, serialize_ann, Document, ARGUMENT_LABELS, ARGUMENT_SUFFIX,
    TRIGGER_LABELS, TRIGGER_SUFFIX,
};
use crate::ensemble::{ensemble_predict, load_members, EnsembleConfig};
use crate::error::{Error, Result};
use crate::eval::{collect_spans, micro_prf, EvalReport};
use crate::filter::{build_filter_dataset, train_filter, FilterModel, SentenceFilter};
use crate::model::{load_checkpoint, save_checkpoint, train, DocumentPrediction, SubsetSelector};
use crate::sampling::{kfold_subsets, read_manifest, write_fold_manifests};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const FILTER_FILE: &str = "filter.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Verb {
    Stats,
    Kfold,
    TrainFilter,
    Train,
    Predict,
    Ensemble,
    Evaluate,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Stats => "stats",
            Verb::Kfold => "kfold",
            Verb::TrainFilter => "train-filter",
            Verb::Train => "train",
            Verb::Predict => "predict",
            Verb::Ensemble => "ensemble",
            Verb::Evaluate => "evaluate",
        }
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_USAGE,
        Error::Dimension(_) => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

/// Files written so far, removed again if the run fails.
#[derive(Debug, Default)]
struct Outputs {
    files: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
}

impl Outputs {
    fn prepare(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            self.created_dir = Some(dir.to_path_buf());
        }
        Ok(())
    }

    fn write(&mut self, path: PathBuf, body: &str) -> Result<()> {
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn record(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    fn roll_back(self) {
        for f in &self.files {
            if let Err(e) = fs::remove_file(f) {
                warn!("could not remove partial output {}: {e}", f.display());
            }
        }
        if let Some(dir) = self.created_dir {
            let _ = fs::remove_dir(dir);
        }
    }
}

/// What a successful run produced.
#[derive(Debug, Default)]
pub struct RunOutcome {
    /// Human-readable summary for stdout.
    pub report: String,
    pub files: Vec<PathBuf>,
}

/// Runs one verb. On failure every file the run wrote is removed.
pub fn run_command(verb: Verb, cfg: &RunConfig) -> Result<RunOutcome> {
    info!(
        "{} with config {} seed {}",
        verb.name(),
        cfg.hash(),
        cfg.training.seed
    );
    let mut out = Outputs::default();
    match dispatch(verb, cfg, &mut out) {
        Ok(report) => Ok(RunOutcome { report, files: out.files }),
        Err(e) => {
            out.roll_back();
            Err(e)
        }
    }
}

fn dispatch(verb: Verb, cfg: &RunConfig, out: &mut Outputs) -> Result<String> {
    let report = match verb {
        Verb::Stats => stats(cfg, out)?,
        Verb::Kfold => kfold(cfg, out)?,
        Verb::TrainFilter => train_filter_verb(cfg, out)?,
        Verb::Train => train_verb(cfg, out)?,
        Verb::Predict => predict_verb(cfg, out)?,
        Verb::Ensemble => ensemble_verb(cfg, out)?,
        Verb::Evaluate => evaluate_verb(cfg, out)?,
    };
    if let Some(dir) = &cfg.output_dir {
        out.prepare(dir)?;
        out.write(dir.join(MANIFEST_FILE), &manifest(verb, cfg))?;
    }
    Ok(report)
}

/// Enough to rerun the verb: the config hash, seed, members and every setting.
pub fn manifest(verb: Verb, cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "verb = {}", verb.name());
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "config_hash = {}", cfg.hash());
    let _ = writeln!(s, "seed = {}", cfg.training.seed);
    let members: Vec<String> = cfg.members.iter().map(|p| p.display().to_string()).collect();
    let _ = writeln!(s, "members = {}", members.join(", "));
    let _ = writeln!(s, "config = {}", serde_json::to_string(cfg).expect("config serializes"));
    s
}

fn output_dir<'a>(cfg: &'a RunConfig, out: &mut Outputs) -> Result<&'a Path> {
    let dir = required("output_dir", &cfg.output_dir)?;
    out.prepare(dir)?;
    Ok(dir)
}

fn load_corpus(cfg: &RunConfig) -> Result<Vec<Document>> {
    let dir = required("corpus_dir", &cfg.corpus_dir)?;
    let corpus = load_corpus_dir(dir)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(format!("no .txt documents in {}", dir.display())));
    }
    Ok(corpus)
}

fn stats(cfg: &RunConfig, out: &mut Outputs) -> Result<String> {
    let report = corpus_stats(&load_corpus(cfg)?)?.to_string();
    if let Some(dir) = &cfg.output_dir {
        out.prepare(dir)?;
        out.write(dir.join("stats.txt"), &report)?;
    }
    Ok(report)
}

fn kfold(cfg: &RunConfig, out: &mut Outputs) -> Result<String> {
    let corpus = load_corpus(cfg)?;
    let ids: Vec<String> = corpus.iter().map(|d| d.doc_id.clone()).collect();
    let folds = kfold_subsets(&ids, cfg.folds, cfg.training.seed)?;
    let dir = output_dir(cfg, out)?;
    let written = write_fold_manifests(dir, &folds)?;
    let report = folds
        .iter()
        .map(|f| format!("fold {}: {} train, {} held out\n", f.index, f.train.len(), f.held_out.len()))
        .collect();
    written.into_iter().for_each(|p| out.record(p));
    Ok(report)
}

fn train_filter_verb(cfg: &RunConfig, out: &mut Outputs) -> Result<String> {
    let corpus = load_corpus(cfg)?;
    let model = train_filter(&build_filter_dataset(&corpus), &cfg.embedder, &cfg.filter)?;
    let path = output_dir(cfg, out)?.join(FILTER_FILE);
    out.record(path.clone());
    model.save(&path)?;
    Ok(format!("filter written to {}\n", path.display()))
}

fn train_verb(cfg: &RunConfig, out: &mut Outputs) -> Result<String> {
    let corpus = load_corpus(cfg)?;
    let subset = match &cfg.train_manifest {
        None => SubsetSelector::all(),
        Some(p) => {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("subset");
            SubsetSelector::of(id, read_manifest(p)?)
        }
    };
    let ckpt = train(&corpus, &cfg.embedder, &cfg.training, &subset)?;
    let path = output_dir(cfg, out)?.join(MODEL_FILE);
    out.record(path.clone());
    save_checkpoint(&ckpt, &path)?;
    Ok(format!(
        "trained on {} sentences, final loss {:.6}; checkpoint {}\n",
        ckpt.metadata.training_sentences,
        ckpt.metadata.final_loss,
        path.display()
    ))
}

fn load_filter(cfg: &RunConfig) -> Result<Option<FilterModel>> {
    cfg.filter_checkpoint.as_deref().map(FilterModel::load).transpose()
}

fn write_predictions(dir: &Path, doc_id: &str, pred: &DocumentPrediction, out: &mut Outputs) -> Result<()> {
    out.write(dir.join(format!("{doc_id}.{TRIGGER_SUFFIX}")), &serialize_ann(&pred.triggers))?;
    out.write(dir.join(format!("{doc_id}.{ARGUMENT_SUFFIX}")), &serialize_ann(&pred.arguments))
}

fn predict_verb(cfg: &RunConfig, out: &mut Outputs) -> Result<String> {
    let corpus = load_corpus(cfg)?;
    let model = load_checkpoint(required("checkpoint", &cfg.checkpoint)?)?.model;
    let filter = load_filter(cfg)?;
    let dir = output_dir(cfg, out)?;
    for doc in &corpus {
        let pred = model.predict(doc, filter.as_ref().map(|f| f as &dyn SentenceFilter))?;
        write_predictions(dir, &doc.doc_id, &pred, out)?;
    }
    Ok(format!("predicted {} documents into {}\n", corpus.len(), dir.display()))
}

fn ensemble_verb(cfg: &RunConfig, out: &mut Outputs) -> Result<String> {
    if cfg.members.is_empty() {
        return Err(Error::Config {
            line: 0,
            key: "members".into(),
            message: "an ensemble needs at least one member checkpoint".into(),
        });
    }
    let corpus = load_corpus(cfg)?;
    let ens = EnsembleConfig {
        members: cfg.members.clone(),
        tie_break: cfg.tie_break,
    };
    let members = load_members(&ens)?;
    let filter = load_filter(cfg)?;
    let dir = output_dir(cfg, out)?;
    for doc in &corpus {
        let pred = ensemble_predict(&members, doc, filter.as_ref().map(|f| f as &dyn SentenceFilter), ens.tie_break)?;
        write_predictions(dir, &doc.doc_id, &pred, out)?;
    }
    Ok(format!(
        "{}-member ensemble ({}) predicted {} documents into {}\n",
        ens.n(),
        ens.tie_break.name(),
        corpus.len(),
        dir.display()
    ))
}

fn read_predicted(dir: &Path, gold: &Document) -> Result<Document> {
    let read = |suffix: &str, labels: &[&str]| -> Result<_> {
        let p = dir.join(format!("{}.{suffix}", gold.doc_id));
        if !p.exists() {
            warn!("no predictions at {}; scoring as empty", p.display());
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        parse_ann(&text, labels).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", p.display()),
            },
            other => other,
        })
    };
    Document::new(
        gold.doc_id.clone(),
        gold.text.clone(),
        read(TRIGGER_SUFFIX, &TRIGGER_LABELS)?,
        read(ARGUMENT_SUFFIX, &ARGUMENT_LABELS)?,
    )
}

/// Trigger and argument reports of `predicted` against `gold`.
pub fn evaluate_documents(gold: &[Document], predicted: &[Document]) -> (EvalReport, EvalReport) {
    let trigger = micro_prf(
        &collect_spans(gold, |d| &d.trigger_spans),
        &collect_spans(predicted, |d| &d.trigger_spans),
    );
    let argument = micro_prf(
        &collect_spans(gold, |d| &d.argument_spans),
        &collect_spans(predicted, |d| &d.argument_spans),
    );
    (trigger, argument)
}

fn evaluate_verb(cfg: &RunConfig, out: &mut Outputs) -> Result<String> {
    let gold = load_corpus_dir(required("gold_dir", &cfg.gold_dir)?)?;
    let pred_dir = required("predictions_dir", &cfg.predictions_dir)?;
    let predicted = gold.iter().map(|g| read_predicted(pred_dir, g)).collect::<Result<Vec<_>>>()?;
    let (trigger, argument) = evaluate_documents(&gold, &predicted);
    let table = format!(
        "{}\n{}",
        trigger.table(&LabelScheme::trigger().task.to_string()),
        argument.table(&LabelScheme::argument().task.to_string())
    );
    if let Some(dir) = &cfg.output_dir {
        out.prepare(dir)?;
        out.write(dir.join("report.txt"), &table)?;
        let kv = format!("{}{}", trigger.key_values("trigger"), argument.key_values("argument"));
        out.write(dir.join("report.kv"), &kv)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::corpus::write_document;

    fn note_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let doc = crate::corpus::load_document(
            "Varón de 51 años con antecedentes de policonsumo de drogas. Actualmente, cannabis 1-2 g/día vía oral.",
            "T1\tDrug 52 58\tdrogas\nT2\tCannabis 73 81\tcannabis\n",
            "T3\tAmount 82 87\t1-2 g\nT4\tFrequency 87 91\t/día\nT5\tMethod 92 100\tvía oral\n",
            "note",
        )
        .unwrap();
        write_document(dir.path(), &doc).unwrap();
        dir
    }

    fn config(lines: &str) -> RunConfig {
        parse_config(lines).unwrap()
    }

    #[test]
    fn evaluate_gold_against_itself() {
        let gold = note_dir();
        let out = tempfile::tempdir().unwrap();
        let cfg = config(&format!(
            "gold_dir = {0}\npredictions_dir = {0}\noutput_dir = {1}\n",
            gold.path().display(),
            out.path().join("eval").display()
        ));
        let outcome = run_command(Verb::Evaluate, &cfg).unwrap();
        assert!(outcome.report.contains("1.0000"));
        let kv = fs::read_to_string(out.path().join("eval/report.kv")).unwrap();
        assert!(kv.contains("trigger.micro.f1 = 1\n"));
        assert!(kv.contains("argument.micro.f1 = 1\n"));
        let manifest = fs::read_to_string(out.path().join("eval").join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains(&format!("config_hash = {}", cfg.hash())));
    }

    #[test]
    fn missing_required_path_is_a_usage_error() {
        let err = run_command(Verb::Stats, &RunConfig::default()).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
        assert!(err.to_string().contains("corpus_dir"));
    }

    #[test]
    fn failed_run_leaves_no_outputs() {
        let corpus = note_dir();
        let out = tempfile::tempdir().unwrap();
        let target = out.path().join("pred");
        // A missing checkpoint makes predict fail after the output dir exists.
        let cfg = config(&format!(
            "corpus_dir = {}\noutput_dir = {}\ncheckpoint = {}\n",
            corpus.path().display(),
            target.display(),
            out.path().join("absent.ckpt").display()
        ));
        let err = run_command(Verb::Predict, &cfg).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_DATA);
        assert!(!target.exists());
    }

    #[test]
    fn stats_report() {
        let corpus = note_dir();
        let cfg = config(&format!("corpus_dir = {}\n", corpus.path().display()));
        let report = run_command(Verb::Stats, &cfg).unwrap().report;
        assert!(report.contains("triggers = 2"), "{report}");
        assert!(report.contains("arguments = 3"), "{report}");
    }
}
