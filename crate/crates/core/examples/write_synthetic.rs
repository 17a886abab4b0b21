//! Regenerates the bundled synthetic corpus under `data/synthetic/`.

use std::fs;
use std::path::Path;

use substance_ner::corpus::write_document;
use substance_ner::synthetic::{held_out_corpus, training_corpus};

fn main() -> substance_ner::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic");
    for (split, docs) in [("train", training_corpus()?), ("heldout", held_out_corpus()?)] {
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| substance_ner::Error::Io { path: dir.clone(), source: e })?;
        for doc in &docs {
            write_document(&dir, doc)?;
        }
        println!("{} documents in {}", docs.len(), dir.display());
    }
    Ok(())
}
