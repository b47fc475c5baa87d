use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Vocab;
use crate::nn::ParamBlob;
use crate::retrieval::{MemoryFile, RetrievalMemory};

use super::config::ModelConfig;
use super::model::GlossModel;

pub const FORMAT_TAG: &str = "glosslate-checkpoint/1";

/// Everything needed to rebuild a trained model and its retrieval memory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: BTreeMap<String, ParamBlob>,
    pub memory: MemoryFile,
    pub epoch: usize,
    pub dev_bleu4: Option<f64>,
}

impl Checkpoint {
    pub fn capture(model: &GlossModel, memory: &RetrievalMemory, epoch: usize, dev_bleu4: Option<f64>) -> Self {
        Self {
            format: FORMAT_TAG.to_owned(),
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            params: model.store.to_blobs(),
            memory: memory.to_file(),
            epoch,
            dev_bleu4,
        }
    }

    pub fn restore(&self) -> Result<(GlossModel, RetrievalMemory)> {
        if self.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}, expected {FORMAT_TAG:?}",
                self.format
            )));
        }
        if !self.vocab.has_reserved_prefix() {
            return Err(Error::VocabMismatch("checkpoint vocabulary lacks the reserved tokens".into()));
        }
        let mut model = GlossModel::new(self.config.clone(), self.vocab.clone())?;
        model.store.load_blobs(&self.params)?;
        let memory = RetrievalMemory::from_file(self.memory.clone())?;
        Ok((model, memory))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
