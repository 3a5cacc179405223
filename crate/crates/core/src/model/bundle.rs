//! Word model, optional add-on and their vocabularies in one store.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::addon::{InflectorAddon, ADDON_PREFIX};
use super::word::{WordModel, WORD_PREFIX};
use crate::data::{CharVocab, SubwordVocab};
use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, ParamStore, TransformerConfig};

const KIND: &str = "phtrans-model";

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub store: ParamStore<f32>,
    pub word: WordModel,
    pub addon: Option<InflectorAddon>,
    pub vocab: SubwordVocab,
    pub chars: Option<CharVocab>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    word: TransformerConfig,
    vocab: String,
    chars: Option<CharVocab>,
    #[serde(default)]
    extra: serde_json::Value,
}

impl ModelBundle {
    /// Fresh word model; parameters drawn from `seed`.
    pub fn new(vocab: SubwordVocab, cfg: TransformerConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let word = WordModel::new(&mut store, cfg, vocab.len(), &mut rng)?;
        Ok(Self {
            store,
            word,
            addon: None,
            vocab,
            chars: None,
        })
    }

    /// Adds freshly initialised add-on parameters and freezes the word model.
    pub fn attach_addon(&mut self, chars: CharVocab, seed: u64) -> Result<()> {
        if self.addon.is_some() {
            return Err(Error::invalid("model already has an inflection add-on"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let addon = InflectorAddon::new(&mut self.store, &self.word.cfg, chars.len(), &mut rng)?;
        self.store.set_trainable_prefix(WORD_PREFIX, false);
        self.addon = Some(addon);
        self.chars = Some(chars);
        Ok(())
    }

    /// SHA-256 over every word-model parameter.
    pub fn word_checksum(&self) -> String {
        self.store.checksum(WORD_PREFIX)
    }

    pub fn addon_checksum(&self) -> String {
        self.store.checksum(ADDON_PREFIX)
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint<f32>> {
        let meta = Meta {
            kind: KIND.into(),
            word: self.word.cfg,
            vocab: self.vocab.to_text(),
            chars: self.chars.clone(),
            extra,
        };
        Ok(Checkpoint::from_store(&self.store, serde_json::to_value(meta)?))
    }

    /// Rebuilds the bundle described by a checkpoint and loads its weights.
    /// With an add-on, the word model comes back frozen.
    pub fn from_checkpoint(ck: &Checkpoint<f32>) -> Result<Self> {
        let meta: Meta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("unreadable model metadata: {e}")))?;
        if meta.kind != KIND {
            return Err(Error::Checkpoint(format!("not a model checkpoint (kind {:?})", meta.kind)));
        }
        let vocab = SubwordVocab::from_text(&meta.vocab, "checkpoint vocabulary")?;
        let mut bundle = Self::new(vocab, meta.word, 0)?;
        if let Some(chars) = meta.chars {
            bundle.attach_addon(chars, 0)?;
        }
        ck.load_into(&mut bundle.store, "")?;
        Ok(bundle)
    }

    /// Free-form metadata stored alongside the weights.
    pub fn checkpoint_extra(ck: &Checkpoint<f32>) -> serde_json::Value {
        ck.meta.get("extra").cloned().unwrap_or(serde_json::Value::Null)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.to_checkpoint(extra)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
