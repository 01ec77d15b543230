use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Corpus, EntityTag, Example, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Format implied by the file extension (`.jsonl` or anything else as tsv).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            _ => Err(Error::Config(format!("unknown corpus format {s:?} (expected tsv or jsonl)"))),
        }
    }
}

pub(crate) const TSV_HEADER: &str = "id\tlang\ttext\tlabel\ttopic_gold\tentities";

fn format_entities(tags: &[EntityTag]) -> String {
    tags.iter().map(|t| format!("{}:{}", t.kind, t.span)).collect::<Vec<_>>().join(";")
}

fn parse_entities(field: &str, line: usize) -> Result<Vec<EntityTag>> {
    field
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (kind, span) = s
                .split_once(':')
                .ok_or_else(|| Error::Parse { line, msg: format!("entity {s:?} is not TYPE:span") })?;
            let kind = kind.parse().map_err(|_| Error::Parse { line, msg: format!("unknown entity type {kind:?}") })?;
            Ok(EntityTag { span: span.to_string(), kind })
        })
        .collect()
}

fn parse_tsv_row(raw: &str, line: usize) -> Result<Example> {
    let cols: Vec<&str> = raw.split('\t').collect();
    // columns 7 and 8 (topic_id, scope) appear in topical exports and are ignored
    if cols.len() < 4 || cols.len() > 8 {
        return Err(Error::Parse { line, msg: format!("expected 4 to 8 tab-separated columns, found {}", cols.len()) });
    }
    let label = match cols[3] {
        "" => None,
        s => match s.parse::<u8>() {
            Ok(l @ (0 | 1)) => Some(l),
            Ok(l) => return Err(Error::Validation(format!("line {line} (id {}): label {l} is not 0 or 1", cols[0]))),
            Err(_) => return Err(Error::Parse { line, msg: format!("label {s:?} is not an integer") }),
        },
    };
    let mut ex = Example::new(cols[0], cols[1], cols[2], label);
    if ex.id.is_empty() {
        return Err(Error::Parse { line, msg: "empty id".into() });
    }
    if ex.lang.is_empty() {
        return Err(Error::Validation(format!("line {line} (id {}): empty language code", ex.id)));
    }
    ex.topic_gold = cols.get(4).filter(|s| !s.is_empty()).map(|s| s.to_string());
    ex.entity_tags = match cols.get(5) {
        Some(f) => parse_entities(f, line)?,
        None => Vec::new(),
    };
    Ok(ex)
}

/// Reads a tsv (`id, lang, text, label[, topic_gold[, entities]]`, optional
/// header row) or jsonl corpus.
pub fn load_corpus(path: &Path, format: CorpusFormat, split: Split) -> Result<Corpus> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let raw = line?;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || (i == 0 && format == CorpusFormat::Tsv && raw.starts_with("id\t")) {
            continue;
        }
        let ex = match format {
            CorpusFormat::Tsv => parse_tsv_row(raw, line_no)?,
            CorpusFormat::Jsonl => {
                let ex: Example =
                    serde_json::from_str(raw).map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
                ex.validate().map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
                ex
            }
        };
        if !seen.insert(ex.id.clone()) {
            return Err(Error::Validation(format!("line {line_no}: duplicate id {}", ex.id)));
        }
        examples.push(ex);
    }
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
    Corpus::new(name, split, examples)
}

/// One tsv row without the newline, in [`load_corpus`] column order.
pub(crate) fn tsv_row(e: &Example) -> Result<String> {
    if [&e.id, &e.lang, &e.text].iter().any(|s| s.contains(['\t', '\n'])) {
        return Err(Error::Validation(format!("example {} contains a tab or newline", e.id)));
    }
    Ok(format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        e.id,
        e.lang,
        e.text,
        e.label.map(|l| l.to_string()).unwrap_or_default(),
        e.topic_gold.as_deref().unwrap_or(""),
        format_entities(&e.entity_tags)
    ))
}

pub fn save_corpus(path: &Path, corpus: &Corpus, format: CorpusFormat) -> Result<()> {
    let mut out = String::new();
    match format {
        CorpusFormat::Tsv => {
            out.push_str(TSV_HEADER);
            out.push('\n');
            for e in &corpus.examples {
                out.push_str(&tsv_row(e)?);
                out.push('\n');
            }
        }
        CorpusFormat::Jsonl => {
            for e in &corpus.examples {
                out.push_str(&serde_json::to_string(e)?);
                out.push('\n');
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub lang: String,
    pub score: f64,
    pub pred_label: u8,
}

/// Writes `id, lang, score, pred_label` rows with a header.
pub fn save_predictions(path: &Path, rows: &[Prediction]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "id\tlang\tscore\tpred_label")?;
    for r in rows {
        writeln!(f, "{}\t{}\t{}\t{}", r.id, r.lang, r.score, r.pred_label)?;
    }
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate().skip(1) {
        if raw.is_empty() {
            continue;
        }
        let c: Vec<&str> = raw.split('\t').collect();
        let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
        if c.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        out.push(Prediction {
            id: c[0].into(),
            lang: c[1].into(),
            score: c[2].parse().map_err(|_| bad("bad score"))?,
            pred_label: c[3].parse().map_err(|_| bad("bad label"))?,
        });
    }
    Ok(out)
}
