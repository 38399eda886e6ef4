//! Versioned JSON model checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;

const FORMAT: &str = "nfs-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: Model,
    /// Original feature indices the model's input rows correspond to.
    pub active: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: T,
}

pub fn to_json(saved: &SavedModel) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format: FORMAT.into(),
        version: VERSION,
        body: saved,
    })?)
}

pub fn from_json(text: &str) -> Result<SavedModel> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} not supported (expected {VERSION})",
            header.version
        )));
    }
    let env: Envelope<SavedModel> =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if env.body.active.len() != env.body.model.params.input_dim() {
        return Err(Error::Checkpoint(format!(
            "{} active features for a model with {} inputs",
            env.body.active.len(),
            env.body.model.params.input_dim()
        )));
    }
    Ok(env.body)
}

pub fn save(path: &Path, saved: &SavedModel) -> Result<()> {
    std::fs::write(path, to_json(saved)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SavedModel> {
    from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
