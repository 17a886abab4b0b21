//! On-disk container shared by model and filter checkpoints.
//!
//! ```text
//! substance-ner checkpoint
//! version <integer>
//! kind <model|filter>
//! <JSON body>
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &str = "substance-ner checkpoint";
pub const FORMAT_VERSION: u32 = 1;

pub fn write<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    let fail = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let json = serde_json::to_string(body).map_err(|e| fail(e.to_string()))?;
    let content = format!("{MAGIC}\nversion {FORMAT_VERSION}\nkind {kind}\n{json}\n");
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&content, kind).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

fn parse<T: DeserializeOwned>(content: &str, kind: &str) -> std::result::Result<T, String> {
    let mut lines = content.splitn(4, '\n');
    if lines.next() != Some(MAGIC) {
        return Err("not a checkpoint file (bad magic header)".into());
    }
    let version = lines
        .next()
        .and_then(|l| l.strip_prefix("version "))
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or("missing version line")?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported checkpoint version {version} (expected {FORMAT_VERSION})"));
    }
    let found = lines.next().and_then(|l| l.strip_prefix("kind ")).ok_or("missing kind line")?;
    if found.trim() != kind {
        return Err(format!("checkpoint holds a {found}, expected a {kind}"));
    }
    let body = lines.next().ok_or("missing body")?;
    serde_json::from_str(body).map_err(|e| format!("corrupt body: {e}"))
}
