//! Corpus examples and token sequences.
//!
//! Corpus files are UTF-8 plain text with one example per line; the lines of
//! a poem are joined by `|` within its example. The verbose side uses a
//! single line per example.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, PAD};

/// SRC is the verbose (vernacular) side, TGT the terse (poem) side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lang {
    Src,
    Tgt,
}

impl Lang {
    pub fn other(self) -> Lang {
        match self {
            Lang::Src => Lang::Tgt,
            Lang::Tgt => Lang::Src,
        }
    }
}

impl std::fmt::Display for Lang {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Lang::Src => "src",
            Lang::Tgt => "tgt",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub lang: Lang,
}

impl TokenSeq {
    /// PAD is reserved for batch right-padding and may not occur inside a
    /// sequence.
    pub fn new(ids: Vec<u32>, lang: Lang) -> Result<Self> {
        if ids.contains(&PAD) {
            return Err(Error::InvalidInput {
                op: "token_seq",
                msg: "interior PAD token".into(),
            });
        }
        Ok(Self { ids, lang })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One corpus example: a single line for verbose text, four lines for a
/// quatrain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub lines: Vec<String>,
}

impl Example {
    pub fn text(&self) -> String {
        self.lines.concat()
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for raw in text.lines() {
        if raw.is_empty() {
            continue;
        }
        examples.push(Example { lines: raw.split('|').map(str::to_string).collect() });
    }
    Ok(examples)
}

pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.lines.join("|"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Encode each line of the example separately (poem padding needs per-line
/// structure).
pub fn encode_lines(vocab: &Vocabulary, ex: &Example) -> Vec<Vec<u32>> {
    ex.lines.iter().map(|l| vocab.encode(l)).collect()
}
