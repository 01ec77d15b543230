//! Synthetic multilingual check-worthiness corpora.
//!
//! Each language has its own surface vocabulary (`en_w3`); topics own a set
//! of anchor tokens shared by every language (`t4_a1`), and a small set of
//! claim cues (`claim_0`) is shared as well. An example is check-worthy iff
//! its topic belongs to the check-worthy class and it carries a cue.
//!
//! Topic placement:
//! - global topics appear in every split of every language;
//! - source language `i` owns `n_topics_regional` regional topics, which
//!   also appear in the test split of zero-shot language `i`, and whose first
//!   topic also appears in the test split of zero-shot language `i - 1`;
//! - every language has `n_topics_local_per_lang` local topics in its test
//!   split only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{load_corpus, save_corpus, CorpusFormat};
use super::{Corpus, EntityTag, EntityType, Example, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Languages with labeled train/dev/test data (the world languages).
    pub source_languages: Vec<String>,
    /// Languages with a labeled test split only.
    pub zero_shot_languages: Vec<String>,
    pub n_topics_global: usize,
    pub n_topics_regional: usize,
    pub n_topics_local_per_lang: usize,
    pub train_per_lang: usize,
    pub dev_per_lang: usize,
    pub test_per_lang: usize,
    pub unlabeled_per_lang: usize,
    pub cw_rate: f64,
    pub anchor_vocab_per_topic: usize,
    pub anchors_per_example: usize,
    pub surface_vocab_per_lang: usize,
    pub surface_per_example: usize,
    pub n_cues: usize,
    /// Probability of each kind of tweet noise (retweet prefix, mention, URL).
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            source_languages: vec!["en".into(), "ar".into(), "es".into()],
            zero_shot_languages: vec!["tr".into(), "bg".into(), "nl".into()],
            n_topics_global: 2,
            n_topics_regional: 2,
            n_topics_local_per_lang: 1,
            train_per_lang: 240,
            dev_per_lang: 80,
            test_per_lang: 120,
            unlabeled_per_lang: 400,
            cw_rate: 0.3,
            anchor_vocab_per_topic: 6,
            anchors_per_example: 3,
            surface_vocab_per_lang: 40,
            surface_per_example: 4,
            n_cues: 3,
            noise_rate: 0.1,
            seed: 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TopicScope {
    Global,
    Regional { source: String },
    Local { lang: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicInfo {
    pub name: String,
    pub scope: TopicScope,
    pub checkworthy: bool,
    pub entity: EntityType,
    pub anchors: Vec<String>,
    /// Languages whose training split contains the topic.
    pub train_languages: Vec<String>,
    /// Languages whose test split contains the topic.
    pub test_languages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageData {
    pub lang: String,
    pub is_source: bool,
    pub train: Option<Corpus>,
    pub dev: Option<Corpus>,
    pub test: Corpus,
    /// Unlabeled text for masked-language-model training.
    pub unlabeled: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub config: SynthConfig,
    pub languages: BTreeMap<String, LanguageData>,
    pub topics: Vec<TopicInfo>,
    /// Example id → gold topic name.
    pub gold: BTreeMap<String, String>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source_languages.is_empty() {
            return Err(Error::Config("at least one source language is required".into()));
        }
        let mut all: Vec<&String> = self.source_languages.iter().chain(&self.zero_shot_languages).collect();
        all.sort();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("source and zero-shot languages must be distinct".into()));
        }
        if all.iter().any(|l| l.is_empty() || l.contains(['.', '\t', ' '])) {
            return Err(Error::Config("language codes must be non-empty without dots or whitespace".into()));
        }
        if !(0.0..=1.0).contains(&self.cw_rate) {
            return Err(Error::Config(format!("cw_rate {} outside [0, 1]", self.cw_rate)));
        }
        if self.anchors_per_example == 0
            || self.anchors_per_example > self.anchor_vocab_per_topic
            || self.surface_vocab_per_lang == 0
            || self.n_cues == 0
        {
            return Err(Error::Config(
                "need 1 ≤ anchors_per_example ≤ anchor_vocab_per_topic and non-empty vocabularies".into(),
            ));
        }
        if self.n_topics_global + self.n_topics_regional == 0 {
            return Err(Error::Config("source languages need at least one topic".into()));
        }
        if self.train_per_lang == 0 || self.dev_per_lang == 0 || self.test_per_lang == 0 {
            return Err(Error::Config("every split needs at least one example".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("synth config serializes")
    }
}

fn build_topics(c: &SynthConfig) -> Vec<TopicInfo> {
    let mut topics = Vec::new();
    let mut push = |name: String, scope: TopicScope| {
        let i = topics.len();
        topics.push(TopicInfo {
            anchors: (0..c.anchor_vocab_per_topic).map(|a| format!("t{i}_a{a}")).collect(),
            checkworthy: i % 2 == 0,
            entity: EntityType::ALL[i % 4],
            name,
            scope,
            train_languages: Vec::new(),
            test_languages: Vec::new(),
        });
    };
    for g in 0..c.n_topics_global {
        push(format!("global{g}"), TopicScope::Global);
    }
    for s in &c.source_languages {
        for r in 0..c.n_topics_regional {
            push(format!("regional_{s}_{r}"), TopicScope::Regional { source: s.clone() });
        }
    }
    for l in c.source_languages.iter().chain(&c.zero_shot_languages) {
        for j in 0..c.n_topics_local_per_lang {
            push(format!("local_{l}_{j}"), TopicScope::Local { lang: l.clone() });
        }
    }
    let n_src = c.source_languages.len();
    let n_zs = c.zero_shot_languages.len();
    for t in topics.iter_mut() {
        match t.scope.clone() {
            TopicScope::Global => {
                t.train_languages = c.source_languages.clone();
                t.test_languages = c.source_languages.iter().chain(&c.zero_shot_languages).cloned().collect();
            }
            TopicScope::Regional { source } => {
                let i = c.source_languages.iter().position(|s| *s == source).expect("known source");
                t.train_languages = vec![source.clone()];
                t.test_languages = vec![source.clone()];
                if i < n_zs {
                    t.test_languages.push(c.zero_shot_languages[i].clone());
                }
                let first = t.name.ends_with("_0");
                if first && n_zs > 0 && n_src > 1 {
                    let prev = (i + n_zs - 1) % n_zs;
                    let zl = &c.zero_shot_languages[prev];
                    if !t.test_languages.contains(zl) {
                        t.test_languages.push(zl.clone());
                    }
                }
            }
            TopicScope::Local { lang } => t.test_languages = vec![lang],
        }
    }
    topics
}

struct Gen<'a> {
    c: &'a SynthConfig,
    rng: ChaCha8Rng,
    surface: WeightedIndex<f64>,
    noise_counter: usize,
}

impl Gen<'_> {
    fn text(&mut self, lang: &str, topic: &TopicInfo, cue: bool) -> (String, String) {
        let c = self.c;
        let mut toks: Vec<String> =
            (0..c.surface_per_example).map(|_| format!("{lang}_w{}", self.surface.sample(&mut self.rng))).collect();
        let anchors: Vec<&String> = topic.anchors.choose_multiple(&mut self.rng, c.anchors_per_example).collect();
        let first_anchor = anchors[0].clone();
        toks.extend(anchors.into_iter().cloned());
        if cue {
            toks.push(format!("claim_{}", self.rng.gen_range(0..c.n_cues)));
        }
        toks.shuffle(&mut self.rng);
        if self.rng.gen_bool(c.noise_rate) {
            self.noise_counter += 1;
            let at = self.rng.gen_range(0..=toks.len());
            toks.insert(at, format!("@user{}", self.noise_counter));
        }
        if self.rng.gen_bool(c.noise_rate) {
            self.noise_counter += 1;
            toks.push(format!("https://t.co/x{}", self.noise_counter));
        }
        if self.rng.gen_bool(c.noise_rate) {
            self.noise_counter += 1;
            toks.insert(0, format!("@src{}", self.noise_counter));
            toks.insert(0, "RT".into());
        }
        (toks.join(" "), first_anchor)
    }

    fn split(
        &mut self,
        lang: &str,
        split: Split,
        n: usize,
        topics: &[&TopicInfo],
        gold: &mut BTreeMap<String, String>,
    ) -> Result<Corpus> {
        let name = format!("synth.{lang}.{split}");
        let mut assign: Vec<usize> = (0..n).map(|i| i % topics.len()).collect();
        assign.shuffle(&mut self.rng);
        let n_pos = (self.c.cw_rate * n as f64).round() as usize;
        let cw_slots: Vec<usize> = (0..n).filter(|&i| topics[assign[i]].checkworthy).collect();
        if n_pos > cw_slots.len() {
            return Err(Error::Config(format!(
                "{name}: cw_rate {} needs {n_pos} positives but only {} examples fall in check-worthy topics",
                self.c.cw_rate,
                cw_slots.len()
            )));
        }
        let mut cued = vec![false; n];
        for &i in &cw_slots[..n_pos] {
            cued[i] = true;
        }
        for i in 0..n {
            if !topics[assign[i]].checkworthy {
                cued[i] = self.rng.gen_bool(0.5);
            }
        }
        let mut examples = Vec::with_capacity(n);
        for i in 0..n {
            let t = topics[assign[i]];
            let (text, anchor) = self.text(lang, t, cued[i]);
            let label = (t.checkworthy && cued[i]) as u8;
            let mut ex = Example::new(format!("{lang}-{split}-{i:04}"), lang, text, Some(label));
            ex.topic_gold = Some(t.name.clone());
            ex.entity_tags = vec![EntityTag { span: anchor, kind: t.entity }];
            gold.insert(ex.id.clone(), t.name.clone());
            examples.push(ex);
        }
        Corpus::new(name, split, examples)
    }
}

/// Generates every corpus of the synthetic suite. Deterministic in `config.seed`.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let topics = build_topics(config);
    let weights: Vec<f64> = (0..config.surface_vocab_per_lang).map(|j| 1.0 / (j + 1) as f64).collect();
    let mut g = Gen {
        c: config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        surface: WeightedIndex::new(weights).expect("positive weights"),
        noise_counter: 0,
    };
    let mut gold = BTreeMap::new();
    let mut languages = BTreeMap::new();
    for lang in config.source_languages.iter().chain(&config.zero_shot_languages) {
        let is_source = config.source_languages.contains(lang);
        let train_topics: Vec<&TopicInfo> = topics.iter().filter(|t| t.train_languages.contains(lang)).collect();
        let test_topics: Vec<&TopicInfo> = topics.iter().filter(|t| t.test_languages.contains(lang)).collect();
        let (train, dev) = if is_source {
            (
                Some(g.split(lang, Split::Train, config.train_per_lang, &train_topics, &mut gold)?),
                Some(g.split(lang, Split::Dev, config.dev_per_lang, &train_topics, &mut gold)?),
            )
        } else {
            (None, None)
        };
        if test_topics.is_empty() {
            return Err(Error::Config(format!("language {lang} has no test topics")));
        }
        let test = g.split(lang, Split::Test, config.test_per_lang, &test_topics, &mut gold)?;
        let mut pool: Vec<&TopicInfo> = train_topics.clone();
        for t in &test_topics {
            if !pool.iter().any(|p| p.name == t.name) {
                pool.push(t);
            }
        }
        let unlabeled = (0..config.unlabeled_per_lang)
            .map(|_| {
                let t = pool[g.rng.gen_range(0..pool.len())];
                let cue = g.rng.gen_bool(0.3);
                g.text(lang, t, cue).0
            })
            .collect();
        languages.insert(lang.clone(), LanguageData { lang: lang.clone(), is_source, train, dev, test, unlabeled });
    }
    Ok(SynthOutput { config: config.clone(), languages, topics, gold })
}

impl SynthOutput {
    pub fn source_languages(&self) -> &[String] {
        &self.config.source_languages
    }

    pub fn zero_shot_languages(&self) -> &[String] {
        &self.config.zero_shot_languages
    }

    pub fn lang(&self, code: &str) -> Result<&LanguageData> {
        self.languages.get(code).ok_or_else(|| Error::Input(format!("no corpus for language {code}")))
    }

    pub fn topic(&self, name: &str) -> Option<&TopicInfo> {
        self.topics.iter().find(|t| t.name == name)
    }

    /// Every text usable for vocabulary building: labeled splits and unlabeled text.
    pub fn all_texts(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for l in self.languages.values() {
            for c in [l.train.as_ref(), l.dev.as_ref(), Some(&l.test)].into_iter().flatten() {
                out.extend(c.examples.iter().map(|e| e.text.as_str()));
            }
            out.extend(l.unlabeled.iter().map(String::as_str));
        }
        out
    }

    /// Writes `<lang>.<split>.tsv`, `<lang>.unlabeled.txt`, `topics.json`
    /// and `synth.toml` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (lang, d) in &self.languages {
            for c in [d.train.as_ref(), d.dev.as_ref(), Some(&d.test)].into_iter().flatten() {
                save_corpus(&dir.join(format!("{lang}.{}.tsv", c.split)), c, CorpusFormat::Tsv)?;
            }
            let mut text = d.unlabeled.join("\n");
            text.push('\n');
            fs::write(dir.join(format!("{lang}.unlabeled.txt")), text)?;
        }
        fs::write(dir.join("topics.json"), serde_json::to_vec_pretty(&self.topics)?)?;
        fs::write(dir.join("synth.toml"), self.config.to_toml())?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let config = SynthConfig::from_toml(&fs::read_to_string(dir.join("synth.toml"))?)?;
        let topics: Vec<TopicInfo> = serde_json::from_slice(&fs::read(dir.join("topics.json"))?)?;
        let mut gold = BTreeMap::new();
        let mut languages = BTreeMap::new();
        for lang in config.source_languages.iter().chain(&config.zero_shot_languages) {
            let is_source = config.source_languages.contains(lang);
            let load = |split: Split| -> Result<Corpus> {
                let mut c = load_corpus(&dir.join(format!("{lang}.{split}.tsv")), CorpusFormat::Tsv, split)?;
                c.name = format!("synth.{lang}.{split}");
                Ok(c)
            };
            let (train, dev) =
                if is_source { (Some(load(Split::Train)?), Some(load(Split::Dev)?)) } else { (None, None) };
            let test = load(Split::Test)?;
            for c in [train.as_ref(), dev.as_ref(), Some(&test)].into_iter().flatten() {
                for e in &c.examples {
                    if let Some(t) = &e.topic_gold {
                        gold.insert(e.id.clone(), t.clone());
                    }
                }
            }
            let unlabeled = fs::read_to_string(dir.join(format!("{lang}.unlabeled.txt")))?
                .lines()
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            languages.insert(lang.clone(), LanguageData { lang: lang.clone(), is_source, train, dev, test, unlabeled });
        }
        Ok(SynthOutput { config, languages, topics, gold })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_per_lang: 60,
            dev_per_lang: 30,
            test_per_lang: 60,
            unlabeled_per_lang: 20,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_output() {
        assert_eq!(synth_generate(&small()).unwrap(), synth_generate(&small()).unwrap());
        let other = SynthConfig { seed: 99, ..small() };
        assert_ne!(synth_generate(&small()).unwrap().gold, synth_generate(&other).unwrap().gold);
    }

    #[test]
    fn realized_rate_close_to_target() {
        let out = synth_generate(&small()).unwrap();
        for d in out.languages.values() {
            for c in [d.train.as_ref(), d.dev.as_ref(), Some(&d.test)].into_iter().flatten() {
                let s = c.stats();
                assert!((s.pct_cw - 30.0).abs() <= 2.0, "{} {}", c.name, s.pct_cw);
            }
        }
    }

    #[test]
    fn topic_placement() {
        let out = synth_generate(&small()).unwrap();
        let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for d in out.languages.values() {
            for e in &d.test.examples {
                let langs = seen.entry(e.topic_gold.clone().unwrap()).or_default();
                if !langs.contains(&e.lang) {
                    langs.push(e.lang.clone());
                }
            }
        }
        for t in &out.topics {
            let langs = &seen[&t.name];
            match &t.scope {
                TopicScope::Global => assert_eq!(langs.len(), 6),
                TopicScope::Local { lang } => assert_eq!(langs, &vec![lang.clone()]),
                TopicScope::Regional { .. } => assert!(langs.len() >= 2),
            }
        }
        // zero-shot language 0 shares all of source 0's regional topics and one of source 1's
        assert_eq!(out.topic("regional_en_0").unwrap().test_languages, vec!["en", "tr", "nl"]);
        assert_eq!(out.topic("regional_ar_0").unwrap().test_languages, vec!["ar", "bg", "tr"]);
        assert_eq!(out.topic("regional_en_1").unwrap().test_languages, vec!["en", "tr"]);
    }

    #[test]
    fn unreachable_rate_is_config_error() {
        let c = SynthConfig { cw_rate: 0.9, ..small() };
        assert!(matches!(synth_generate(&c), Err(Error::Config(_))));
        let c = SynthConfig { zero_shot_languages: vec!["en".into()], ..small() };
        assert!(matches!(synth_generate(&c), Err(Error::Config(_))));
    }

    #[test]
    fn directory_round_trip() {
        let out = synth_generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write_dir(dir.path()).unwrap();
        assert_eq!(SynthOutput::read_dir(dir.path()).unwrap(), out);
    }

    #[test]
    fn config_toml_round_trip() {
        let c = small();
        assert_eq!(SynthConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = SynthConfig::from_toml("seed = 5\ncw_rate = 0.2\n").unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.source_languages.len(), 3);
    }
}
