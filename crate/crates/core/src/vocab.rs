//! Character vocabulary with reserved special tokens.
//!
//! One vocabulary is built over the union of both corpora so that a
//! character occurring on both sides gets a single id (and therefore a
//! single shared embedding row).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const BLANK: u32 = 4;
pub const SEGPAD: u32 = 5;

pub const NUM_SPECIALS: usize = 6;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>", "<blank>", "<p>"];

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from character counts over corpus lines. Characters with
    /// frequency >= `min_count` get ids in order of descending frequency,
    /// ties broken lexicographically.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Self> {
        let mut counts: HashMap<char, usize> = HashMap::new();
        let mut any = false;
        for line in lines {
            any = true;
            for ch in line.chars() {
                *counts.entry(ch).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(char, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(ch, _)| ch.to_string())))
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Encode text character by character; out-of-vocabulary characters
    /// become UNK.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars()
            .map(|ch| {
                let mut buf = [0u8; 4];
                self.id_of(ch.encode_utf8(&mut buf)).unwrap_or(UNK)
            })
            .collect()
    }

    /// Render ids back to text. Special tokens are skipped except BLANK,
    /// which a model may legitimately emit and which renders as its name.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if Self::is_special(id) && id != BLANK {
                continue;
            }
            out.push_str(self.token(id));
        }
        out
    }

    /// FNV-1a over every token in id order, with a 0xFF separator after each
    /// token (0xFF never occurs inside UTF-8 text).
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for &b in t.as_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// One non-special token per line; the id of the token on line i
    /// (0-based) is i + 6.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens[NUM_SPECIALS..] {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            if line.chars().count() != 1 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("expected a single character, got {line:?}"),
                });
            }
        }
        Ok(Self::from_tokens(text.lines().map(|l| l.to_string())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_example() {
        let v = Vocabulary::build(["ab", "ab", "cd"], 1).unwrap();
        assert_eq!(v.len(), 10);
        for ch in ["a", "b", "c", "d"] {
            assert!(v.id_of(ch).unwrap() >= NUM_SPECIALS as u32);
        }
    }

    #[test]
    fn min_count_filters_and_unks() {
        let v = Vocabulary::build(["ab", "ab", "cd"], 2).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v.encode("cd"), vec![UNK, UNK]);
        assert_eq!(v.decode(&v.encode("ab")), "ab");
    }

    #[test]
    fn union_shares_ids() {
        let terse = ["xy"];
        let verbose = ["xz"];
        let v = Vocabulary::build(terse.iter().chain(&verbose).copied(), 1).unwrap();
        assert_eq!(v.encode("x")[0], v.encode("xz")[0]);
        assert_eq!(v.len(), NUM_SPECIALS + 3);
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let v = Vocabulary::build(["bbba", "ca"], 1).unwrap();
        // b:3, a:2, c:1
        assert_eq!(v.token(6), "b");
        assert_eq!(v.token(7), "a");
        assert_eq!(v.token(8), "c");
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(Vocabulary::build([], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(["hello world", "he said"], 1).unwrap();
        v.save(&path).unwrap();
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(v.len(), back.len());
        assert_eq!(v.hash(), back.hash());
        for id in 0..v.len() as u32 {
            assert_eq!(v.token(id), back.token(id));
        }
    }

    #[test]
    fn hash_changes_with_content_and_order() {
        let a = Vocabulary::build(["ab"], 1).unwrap();
        let b = Vocabulary::build(["ac"], 1).unwrap();
        let c = Vocabulary::build(["abbb"], 1).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
