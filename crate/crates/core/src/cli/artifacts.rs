use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapters::io::load_language_adapter;
use crate::adapters::LanguageAdapterBank;
use crate::datakit::{load_corpus, Corpus, CorpusFormat, Split, Tokenizer};
use crate::encoder::{Backbone, Classifier};
use crate::error::{Error, Result};
use crate::training::{EncodedCorpus, ModelSpec, TrainedModel};

pub const BACKBONE_FILE: &str = "backbone.bin";
pub const VOCAB_FILE: &str = "vocab.json";
pub const LA_FILE: &str = "la.bin";
pub const MODEL_FILE: &str = "model.json";

/// Corpora of one language found in a data directory.
#[derive(Clone, Debug, Default)]
pub struct LangData {
    pub train: Option<Corpus>,
    pub dev: Option<Corpus>,
    pub test: Option<Corpus>,
    pub unlabeled: Vec<String>,
}

/// `<lang>.<split>.tsv|jsonl` and `<lang>.unlabeled.txt` files of a directory.
#[derive(Clone, Debug)]
pub struct DataDir {
    pub root: PathBuf,
    pub languages: BTreeMap<String, LangData>,
}

impl DataDir {
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Input(format!("data directory {} not found", root.display())));
        }
        let mut names: Vec<String> =
            fs::read_dir(root)?.filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok())).collect();
        names.sort();
        let mut languages: BTreeMap<String, LangData> = BTreeMap::new();
        for name in names {
            let parts: Vec<&str> = name.split('.').collect();
            let [lang, kind, ext] = parts.as_slice() else { continue };
            let path = root.join(&name);
            let entry = languages.entry(lang.to_string());
            match (*kind, *ext) {
                ("unlabeled", "txt") => {
                    entry.or_default().unlabeled =
                        fs::read_to_string(&path)?.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect();
                }
                (split @ ("train" | "dev" | "test"), "tsv" | "jsonl") => {
                    let split = match split {
                        "train" => Split::Train,
                        "dev" => Split::Dev,
                        _ => Split::Test,
                    };
                    let corpus = load_corpus(&path, CorpusFormat::from_path(&path), split)?;
                    let slot = entry.or_default();
                    match split {
                        Split::Train => slot.train = Some(corpus),
                        Split::Dev => slot.dev = Some(corpus),
                        Split::Test => slot.test = Some(corpus),
                    }
                }
                _ => {}
            }
        }
        if languages.is_empty() {
            return Err(Error::Input(format!("no corpus files in {}", root.display())));
        }
        Ok(DataDir { root: root.to_path_buf(), languages })
    }

    pub fn lang(&self, l: &str) -> Result<&LangData> {
        self.languages
            .get(l)
            .ok_or_else(|| Error::Input(format!("no data for language {l} in {}", self.root.display())))
    }

    /// Languages with a labeled training split.
    pub fn training_languages(&self) -> Vec<String> {
        self.languages.iter().filter(|(_, d)| d.train.is_some()).map(|(l, _)| l.clone()).collect()
    }

    pub fn test_languages(&self) -> Vec<String> {
        self.languages.iter().filter(|(_, d)| d.test.is_some()).map(|(l, _)| l.clone()).collect()
    }

    pub fn split(&self, l: &str, split: Split) -> Result<&Corpus> {
        let d = self.lang(l)?;
        let c = match split {
            Split::Train => &d.train,
            Split::Dev => &d.dev,
            Split::Test => &d.test,
        };
        c.as_ref().ok_or_else(|| Error::Input(format!("no {split} split for {l} in {}", self.root.display())))
    }

    pub fn encoded(&self, tok: &Tokenizer, l: &str, split: Split) -> Result<EncodedCorpus> {
        EncodedCorpus::new(tok, self.split(l, split)?)
    }

    /// Unlabeled text plus training and development texts: the vocabulary source.
    pub fn vocabulary_texts(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for d in self.languages.values() {
            out.extend(d.unlabeled.iter().map(String::as_str));
            for c in [&d.train, &d.dev].into_iter().flatten() {
                out.extend(c.examples.iter().map(|e| e.text.as_str()));
            }
        }
        out
    }
}

/// Backbone and tokenizer of a `pretrain-backbone` run.
pub fn load_backbone(run: &Path) -> Result<(Backbone, Tokenizer)> {
    let bb = Backbone::load(&run.join(BACKBONE_FILE))?;
    let tok = Tokenizer::load(&run.join(VOCAB_FILE))?;
    if tok.vocab_size() != bb.config.vocab_size {
        return Err(Error::Compatibility(format!(
            "vocabulary has {} tokens, backbone expects {}",
            tok.vocab_size(),
            bb.config.vocab_size
        )));
    }
    Ok((bb, tok))
}

pub fn load_la_bank(runs: &[PathBuf]) -> Result<LanguageAdapterBank> {
    let mut bank = LanguageAdapterBank::default();
    for r in runs {
        bank.insert(load_language_adapter(&r.join(LA_FILE))?);
    }
    Ok(bank)
}

/// `model.json` of a training run: how to rebuild the model for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub spec: ModelSpec,
    /// Paths relative to the run directory.
    pub backbone: PathBuf,
    /// Checkpoints relative to the run directory.
    pub members: Vec<String>,
    pub language_adapters: Vec<PathBuf>,
    pub fallback: String,
    pub max_len: usize,
}

impl ModelDescriptor {
    pub fn write(&self, run: &Path) -> Result<()> {
        fs::write(run.join(MODEL_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(run: &Path) -> Result<Self> {
        let p = run.join(MODEL_FILE);
        let bytes = fs::read(&p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub struct LoadedModel {
    pub model: TrainedModel,
    pub tokenizer: Tokenizer,
    pub descriptor: ModelDescriptor,
}

/// Rebuilds a trained model; `extra_la` adds adapters usable for swapping.
pub fn load_model(run: &Path, extra_la: &[PathBuf], fallback: Option<&str>) -> Result<LoadedModel> {
    let descriptor = ModelDescriptor::read(run)?;
    let (bb, mut tokenizer) = load_backbone(&run.join(&descriptor.backbone))?;
    tokenizer.max_len = descriptor.max_len;
    let members = descriptor.members.iter().map(|m| Classifier::load(&bb, &run.join(m))).collect::<Result<Vec<_>>>()?;
    let mut runs: Vec<PathBuf> = descriptor.language_adapters.iter().map(|p| run.join(p)).collect();
    runs.extend_from_slice(extra_la);
    let bank = load_la_bank(&runs)?;
    let has_slot = members.iter().any(|m| m.stack.as_ref().is_some_and(|s| s.has_language_slot()));
    let model = TrainedModel {
        spec: descriptor.spec.clone(),
        members,
        la_bank: (has_slot && !bank.adapters.is_empty()).then_some(bank),
        fallback: fallback.unwrap_or(&descriptor.fallback).to_string(),
        outcomes: Vec::new(),
    };
    Ok(LoadedModel { model, tokenizer, descriptor })
}

fn canonical(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))
}

/// `target` as seen from the directory `run`, so a run tree can move as a whole.
pub fn relative_to(target: &Path, run: &Path) -> Result<PathBuf> {
    let (t, r) = (canonical(target)?, canonical(run)?);
    let common = t.components().zip(r.components()).take_while(|(a, b)| a == b).count();
    let mut out: PathBuf = r.components().skip(common).map(|_| "..").collect();
    out.extend(t.components().skip(common));
    Ok(out)
}
