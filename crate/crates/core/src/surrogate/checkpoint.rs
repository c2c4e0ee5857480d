use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::FitTrace;
use super::model::SurrogateModel;
use crate::error::{CpboError, Result};

const FORMAT: &str = "cpbo-surrogate";
const VERSION: u32 = 1;

/// Self-describing model document. `gamma` and `lengthscales` are the
/// constrained values, written for readers that do not want to apply
/// softplus themselves; the model itself is the source of truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: Option<u64>,
    pub best_iteration: Option<usize>,
    pub best_loss: Option<f64>,
    pub gamma: f64,
    pub lengthscales: Vec<f64>,
    pub model: SurrogateModel,
}

impl Checkpoint {
    pub fn new(model: SurrogateModel, seed: Option<u64>, trace: Option<&FitTrace>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            seed,
            best_iteration: trace.map(|t| t.best_iteration),
            best_loss: trace.map(|t| t.best_loss).filter(|l| l.is_finite()),
            gamma: model.gamma(),
            lengthscales: model.kernel.lengthscales().to_vec(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(CpboError::InvalidParameter(format!(
                "unsupported checkpoint {} v{}",
                doc.format, doc.version
            )));
        }
        doc.model.validate()?;
        Ok(doc)
    }
}

/// Writes a checkpoint document.
pub fn save_checkpoint(path: &Path, doc: &Checkpoint) -> Result<()> {
    fs::write(path, doc.to_json()?)?;
    Ok(())
}

/// Reads and validates a document written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&fs::read_to_string(path)?)
}
