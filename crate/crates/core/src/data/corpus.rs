use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One aligned sentence pair with optional POS and lemma columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub id: usize,
    pub src_tokens: Vec<String>,
    pub tgt_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_lemmas: Option<Vec<String>>,
}

impl ParallelExample {
    pub fn new(id: usize, src: &str, tgt: &str) -> Self {
        Self {
            id,
            src_tokens: split(src),
            tgt_tokens: split(tgt),
            src_pos: None,
            tgt_pos: None,
            tgt_lemmas: None,
        }
    }

    /// Checks non-empty token lists and annotation lengths.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.src_tokens.is_empty() {
            return Err("empty source sentence".into());
        }
        if self.tgt_tokens.is_empty() {
            return Err("empty target sentence".into());
        }
        let checks = [
            ("src_pos", &self.src_pos, self.src_tokens.len()),
            ("tgt_pos", &self.tgt_pos, self.tgt_tokens.len()),
            ("tgt_lemmas", &self.tgt_lemmas, self.tgt_tokens.len()),
        ];
        for (name, col, want) in checks {
            if let Some(col) = col {
                if col.len() != want {
                    return Err(format!(
                        "{name} has {} entries but the sentence has {want} tokens",
                        col.len()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn has_annotations(&self) -> bool {
        self.src_pos.is_some() && self.tgt_pos.is_some() && self.tgt_lemmas.is_some()
    }
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn optional(col: Option<&str>) -> Option<Vec<String>> {
    col.map(str::trim).filter(|c| !c.is_empty()).map(split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the format from the file extension, defaulting to TSV.
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
            other => Err(Error::invalid(format!("unknown corpus format {other}"))),
        }
    }
}

#[derive(Deserialize, Serialize)]
struct JsonRecord {
    src: String,
    tgt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    src_pos: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tgt_pos: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tgt_lemmas: Option<String>,
}

/// Reads a corpus; ids are assigned in file order from 0. Blank lines are skipped.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<ParallelExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (src, tgt, src_pos, tgt_pos, lemmas) = match format {
            CorpusFormat::Tsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() < 2 || cols.len() > 5 {
                    return Err(Error::parse(
                        &shown,
                        lineno,
                        format!("expected 2 to 5 tab-separated columns, found {}", cols.len()),
                    ));
                }
                (
                    cols[0].to_string(),
                    cols[1].to_string(),
                    optional(cols.get(2).copied()),
                    optional(cols.get(3).copied()),
                    optional(cols.get(4).copied()),
                )
            }
            CorpusFormat::Jsonl => {
                let rec: JsonRecord = serde_json::from_str(line)
                    .map_err(|e| Error::parse(&shown, lineno, e.to_string()))?;
                (
                    rec.src,
                    rec.tgt,
                    optional(rec.src_pos.as_deref()),
                    optional(rec.tgt_pos.as_deref()),
                    optional(rec.tgt_lemmas.as_deref()),
                )
            }
        };
        let ex = ParallelExample {
            id: out.len(),
            src_tokens: split(&src),
            tgt_tokens: split(&tgt),
            src_pos,
            tgt_pos,
            tgt_lemmas: lemmas,
        };
        ex.validate().map_err(|m| Error::parse(&shown, lineno, m))?;
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("corpus {shown} is empty")));
    }
    Ok(out)
}

/// Writes a corpus in the same layout [`load_corpus`] reads.
pub fn save_corpus(path: &Path, examples: &[ParallelExample], format: CorpusFormat) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        let join = |v: &Option<Vec<String>>| v.as_ref().map(|v| v.join(" "));
        match format {
            CorpusFormat::Tsv => {
                let mut cols = vec![ex.src_tokens.join(" "), ex.tgt_tokens.join(" ")];
                let extra = [join(&ex.src_pos), join(&ex.tgt_pos), join(&ex.tgt_lemmas)];
                let last = extra.iter().rposition(Option::is_some);
                if let Some(last) = last {
                    for col in &extra[..=last] {
                        cols.push(col.clone().unwrap_or_default());
                    }
                }
                writeln!(buf, "{}", cols.join("\t")).expect("write to vec");
            }
            CorpusFormat::Jsonl => {
                let rec = JsonRecord {
                    src: ex.src_tokens.join(" "),
                    tgt: ex.tgt_tokens.join(" "),
                    src_pos: join(&ex.src_pos),
                    tgt_pos: join(&ex.tgt_pos),
                    tgt_lemmas: join(&ex.tgt_lemmas),
                };
                writeln!(buf, "{}", serde_json::to_string(&rec)?).expect("write to vec");
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
