use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clean_text;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const MASK_ID: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[CLS]", "[UNK]", "[MASK]"];

/// Whitespace tokenizer over one vocabulary shared by all languages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub max_len: usize,
}

impl Tokenizer {
    /// Builds the vocabulary from every text, most frequent first with ties
    /// broken lexicographically. Tokens are lower-cased.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_len: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in t.split_whitespace() {
                *counts.entry(tok.to_lowercase()).or_default() += 1;
            }
        }
        let mut by_freq: Vec<(String, usize)> =
            counts.into_iter().filter(|(t, _)| !SPECIAL_TOKENS.contains(&t.as_str())).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(by_freq.into_iter().map(|(t, _)| t)).collect();
        Self::from_tokens(tokens, max_len)
    }

    fn from_tokens(tokens: Vec<String>, max_len: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Tokenizer { tokens, index, max_len }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// `[CLS]` followed by one id per whitespace token, unknowns as `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        std::iter::once(CLS_ID)
            .chain(text.split_whitespace().map(|t| self.index.get(&t.to_lowercase()).copied().unwrap_or(UNK_ID)))
            .collect()
    }

    /// Cleans, tokenizes and pads/truncates to `max_len`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        pad_truncate(self.tokenize(&clean_text(text)), self.max_len)
    }

    /// Token strings for non-special ids, joined by spaces.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().filter(|&&i| i >= SPECIAL_TOKENS.len()).filter_map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Tokenizer = serde_json::from_slice(&std::fs::read(path)?)?;
        if t.tokens.len() < SPECIAL_TOKENS.len() || t.tokens[..4].iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::Format(format!("{} does not start with the reserved tokens", path.display())));
        }
        Ok(Self::from_tokens(t.tokens, t.max_len))
    }
}

/// Truncates at the tail or right-pads with `[PAD]` to exactly `max_len`.
pub fn pad_truncate(mut ids: Vec<usize>, max_len: usize) -> Vec<usize> {
    ids.resize(max_len, PAD_ID);
    ids
}
