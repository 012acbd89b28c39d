//! Pieces shared by the model-facing commands: checkpoint loading with
//! vocabulary verification, text/id conversion on both sides, and the
//! `UMT_SEED` environment override.

use std::env;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use umt_core::corpus::Example;
use umt_core::vocab::SEGPAD;
use umt_core::{Checkpoint, Error, Lang, Model, PaddingInfo, Vocabulary};

/// `UMT_SEED` overrides the seed from flags and config files wherever a
/// command draws randomness.
pub fn seed_override() -> Result<Option<u64>> {
    match env::var("UMT_SEED") {
        Ok(text) => {
            let seed = text
                .parse()
                .with_context(|| format!("UMT_SEED={text:?} is not an unsigned integer"))?;
            Ok(Some(seed))
        }
        Err(env::VarError::NotPresent) => Ok(None),
        Err(env::VarError::NotUnicode(_)) => bail!("UMT_SEED is not valid UTF-8"),
    }
}

/// The vocabulary file defaults to `vocab.txt` beside the checkpoint.
pub fn vocab_path(model_path: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => model_path.with_file_name("vocab.txt"),
    }
}

pub struct LoadedModel {
    pub model: Model<f32>,
    pub padding: PaddingInfo,
    pub vocab: Vocabulary,
}

/// Load a checkpoint and its vocabulary, refusing mismatched pairs.
pub fn load_model(model_path: &Path, vocab_path: &Path) -> Result<LoadedModel> {
    let ck = Checkpoint::load(model_path)
        .with_context(|| format!("loading checkpoint {}", model_path.display()))?;
    let vocab = Vocabulary::load(vocab_path)
        .with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    if vocab.hash() != ck.vocab_hash {
        return Err(Error::VocabHashMismatch {
            expected: ck.vocab_hash,
            actual: vocab.hash(),
        }
        .into());
    }
    let (model, padding) = Model::from_checkpoint(&ck)?;
    Ok(LoadedModel { model, padding, vocab })
}

impl LoadedModel {
    /// Terse-side model input: per-line ids, padded per the checkpoint's
    /// padding configuration.
    pub fn terse_input(&self, ex: &Example) -> Result<Vec<u32>> {
        let lines = umt_core::corpus::encode_lines(&self.vocab, ex);
        if self.padding.enabled {
            Ok(umt_core::padding::pad_poem(&lines, &self.padding.schema)?)
        } else {
            Ok(lines.concat())
        }
    }

    pub fn verbose_input(&self, ex: &Example) -> Vec<u32> {
        umt_core::corpus::encode_lines(&self.vocab, ex).concat()
    }

    /// Greedy translation capped at the model's trained length.
    pub fn translate(&self, from: Lang, ids: &[u32]) -> Result<Vec<u32>> {
        let cap = self.model.dims().max_len;
        let out = self.model.generate_greedy(from, from.other(), ids, cap)?;
        Ok(out.ids.into_iter().filter(|&id| id != SEGPAD).collect())
    }

    /// Render generated terse ids in the corpus format: padding stripped,
    /// lines of the schema's length joined by `|`.
    pub fn render_terse(&self, ids: &[u32]) -> String {
        let lines = umt_core::padding::strip_padding(ids, self.padding.schema.line_len());
        let rendered: Vec<String> = lines.iter().map(|l| self.vocab.decode(l)).collect();
        rendered.join("|")
    }

    pub fn render_verbose(&self, ids: &[u32]) -> String {
        self.vocab.decode(ids)
    }
}
