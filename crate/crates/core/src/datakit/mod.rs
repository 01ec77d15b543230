//! Corpora, cleaning, tokenization, and the synthetic multilingual generator.

mod io;
mod synth;
mod vocab;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{load_corpus, load_predictions, save_corpus, save_predictions, CorpusFormat, Prediction};
pub(crate) use io::{tsv_row, TSV_HEADER};
pub use synth::{synth_generate, LanguageData, SynthConfig, SynthOutput, TopicInfo, TopicScope};
pub use vocab::{pad_truncate, Tokenizer, CLS_ID, MASK_ID, PAD_ID, SPECIAL_TOKENS, UNK_ID};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "GPE")]
    Gpe,
    #[serde(rename = "ORG")]
    Org,
    #[serde(rename = "NUM")]
    Num,
    #[serde(rename = "PER")]
    Per,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [EntityType::Gpe, EntityType::Org, EntityType::Num, EntityType::Per];
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityType::Gpe => "GPE",
            EntityType::Org => "ORG",
            EntityType::Num => "NUM",
            EntityType::Per => "PER",
        })
    }
}

impl FromStr for EntityType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GPE" => Ok(EntityType::Gpe),
            "ORG" => Ok(EntityType::Org),
            "NUM" => Ok(EntityType::Num),
            "PER" => Ok(EntityType::Per),
            _ => Err(Error::Validation(format!("unknown entity type {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTag {
    pub span: String,
    #[serde(rename = "type")]
    pub kind: EntityType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub lang: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_gold: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_tags: Vec<EntityTag>,
}

impl Example {
    pub fn new(id: impl Into<String>, lang: impl Into<String>, text: impl Into<String>, label: Option<u8>) -> Self {
        Example {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
            label,
            topic_gold: None,
            entity_tags: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lang.is_empty() {
            return Err(Error::Validation(format!("example {} has an empty language code", self.id)));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::Validation(format!("example {} has label {l}, expected 0 or 1", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    pub examples: Vec<Example>,
}

/// Size and check-worthy share of a labeled corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub cw: usize,
    /// Percentage of labeled examples with label 1.
    pub pct_cw: f64,
}

impl Corpus {
    /// Validates every example and rejects duplicate ids.
    pub fn new(name: impl Into<String>, split: Split, examples: Vec<Example>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &examples {
            e.validate()?;
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id {}", e.id)));
            }
        }
        Ok(Corpus { name: name.into(), split, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        let labeled: Vec<u8> = self.examples.iter().filter_map(|e| e.label).collect();
        let cw = labeled.iter().filter(|&&l| l == 1).count();
        let pct_cw = if labeled.is_empty() { 0.0 } else { 100.0 * cw as f64 / labeled.len() as f64 };
        CorpusStats { total: self.examples.len(), cw, pct_cw }
    }

    /// Concatenation of several corpora; ids must stay unique.
    pub fn concat(name: impl Into<String>, split: Split, parts: &[&Corpus]) -> Result<Self> {
        Corpus::new(name, split, parts.iter().flat_map(|c| c.examples.iter().cloned()).collect())
    }

    /// Language of the first example.
    pub fn language(&self) -> Option<&str> {
        self.examples.first().map(|e| e.lang.as_str())
    }
}

fn is_url(tok: &str) -> bool {
    let t = tok.to_ascii_lowercase();
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.")
}

fn is_mention(tok: &str) -> bool {
    tok.len() > 1 && tok.starts_with('@')
}

/// Drops URLs and @-mentions, strips a leading `RT @user` marker, and
/// collapses whitespace.
pub fn clean_text(text: &str) -> String {
    let mut toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() >= 2 && toks[0] == "RT" && is_mention(toks[1]) {
        toks.drain(..2);
    }
    toks.retain(|t| !is_url(t) && !is_mention(t));
    toks.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cleans_retweet_mention_and_url() {
        assert_eq!(clean_text("RT @user Vaccines kill http://t.co/x"), "Vaccines kill");
        assert_eq!(clean_text("plain words here"), "plain words here");
        assert_eq!(clean_text("  a \t b\n"), "a b");
        assert_eq!(clean_text("RT is fine"), "RT is fine");
    }

    fn tweetish() -> impl Strategy<Value = String> {
        let tok = prop_oneof![
            "[a-z]{1,6}",
            Just("RT".to_string()),
            "@[a-z]{0,4}",
            "https?://[a-z.]{1,6}",
            "www\\.[a-z]{1,4}",
            Just(" ".to_string()),
        ];
        proptest::collection::vec(tok, 0..12).prop_map(|v| v.join(" "))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn cleaning_is_idempotent_and_never_grows(t in tweetish()) {
            let once = clean_text(&t);
            prop_assert_eq!(clean_text(&once), once.clone());
            prop_assert!(once.len() <= t.len());
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = Example::new("a", "en", "x", Some(1));
        let err = Corpus::new("c", Split::Train, vec![e.clone(), e]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn stats_count_positives() {
        let ex = (0..8).map(|i| Example::new(i.to_string(), "en", "t", Some((i % 4 == 0) as u8))).collect();
        let c = Corpus::new("c", Split::Test, ex).unwrap();
        let s = c.stats();
        assert_eq!((s.total, s.cw), (8, 2));
        assert_eq!(s.pct_cw, 25.0);
    }
}
