//! Noun and verb dictionaries, training frequencies and the seen/unseen split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PhraseCandidate;
use crate::data::ParallelExample;
use crate::error::{Error, Result};

const NOUN_TAGS: [&str; 6] = ["NN", "NNS", "NNP", "NNPS", "NOUN", "PROPN"];
/// Source-side tags of noun-derived verbs.
const NOMINAL_VERB_TAGS: [&str; 2] = ["SAHEN", "VS"];
const VERB_TAGS: [&str; 7] = ["VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "VERB"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosClass {
    #[serde(rename = "NOUN")]
    Noun,
    #[serde(rename = "VERB")]
    Verb,
}

impl PosClass {
    pub const ALL: [PosClass; 2] = [PosClass::Noun, PosClass::Verb];

    pub fn as_str(self) -> &'static str {
        match self {
            PosClass::Noun => "NOUN",
            PosClass::Verb => "VERB",
        }
    }

    /// The placeholder token standing for this class.
    pub fn placeholder(self) -> &'static str {
        match self {
            PosClass::Noun => crate::data::specials::NOUN_STR,
            PosClass::Verb => crate::data::specials::VERB_STR,
        }
    }

    pub fn placeholder_id(self) -> usize {
        match self {
            PosClass::Noun => crate::data::specials::NOUN,
            PosClass::Verb => crate::data::specials::VERB,
        }
    }
}

impl fmt::Display for PosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NOUN" => Ok(PosClass::Noun),
            "VERB" => Ok(PosClass::Verb),
            other => Err(Error::invalid(format!("unknown POS class {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictEntry {
    pub src_phrase: Vec<String>,
    pub tgt_phrase: Vec<String>,
    pub tgt_lemma: Vec<String>,
    pub pos_class: PosClass,
    /// Phrase-pair co-occurrences found during extraction.
    pub pair_count: u64,
    /// Training pairs containing the source phrase and the target lemma.
    pub train_freq: u64,
}

impl DictEntry {
    /// Identity of an entry: source phrase, target lemma and class.
    pub fn key(&self) -> (String, String, PosClass) {
        (self.src_phrase.join(" "), self.tgt_lemma.join(" "), self.pos_class)
    }

    /// Whether the source phrase occurs in `ex` and the lemma in its target.
    pub fn occurs_in(&self, ex: &ParallelExample) -> bool {
        let lemmas = ex.tgt_lemmas.as_ref().unwrap_or(&ex.tgt_tokens);
        contains_seq(&ex.src_tokens, &self.src_phrase) && contains_seq(lemmas, &self.tgt_lemma)
    }
}

pub(crate) fn find_seq<S: AsRef<str>>(hay: &[S], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&i| {
        hay[i..i + needle.len()]
            .iter()
            .zip(needle)
            .all(|(a, b)| a.as_ref() == b)
    })
}

fn contains_seq(hay: &[String], needle: &[String]) -> bool {
    find_seq(hay, needle).is_some()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionary {
    pub entries: Vec<DictEntry>,
}

impl Dictionary {
    pub fn new(entries: Vec<DictEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn of_class(&self, pos: PosClass) -> impl Iterator<Item = &DictEntry> {
        self.entries.iter().filter(move |e| e.pos_class == pos)
    }

    pub fn contains_key(&self, key: &(String, String, PosClass)) -> bool {
        self.entries.iter().any(|e| &e.key() == key)
    }

    /// Entries of both dictionaries, first occurrence of a key kept.
    pub fn merged(&self, other: &Dictionary) -> Dictionary {
        let mut seen = HashSet::new();
        let entries = self
            .entries
            .iter()
            .chain(&other.entries)
            .filter(|e| seen.insert(e.key()))
            .cloned()
            .collect();
        Dictionary { entries }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.src_phrase.join(" "),
                e.tgt_phrase.join(" "),
                e.tgt_lemma.join(" "),
                e.pos_class,
                e.pair_count,
                e.train_freq
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, &path.display().to_string())
    }

    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::parse(origin, i + 1, m);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(bad(format!("expected 6 columns, found {}", cols.len())));
            }
            let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
            let entry = DictEntry {
                src_phrase: toks(cols[0]),
                tgt_phrase: toks(cols[1]),
                tgt_lemma: toks(cols[2]),
                pos_class: cols[3].parse().map_err(|e: Error| bad(e.to_string()))?,
                pair_count: cols[4].parse().map_err(|_| bad("bad pair_count".into()))?,
                train_freq: cols[5].parse().map_err(|_| bad("bad train_freq".into()))?,
            };
            if entry.src_phrase.is_empty() || entry.tgt_phrase.is_empty() || entry.tgt_lemma.is_empty() {
                return Err(bad("empty phrase".into()));
            }
            if entry.pair_count == 0 {
                return Err(bad("pair_count must be at least 1".into()));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

fn all_in(tags: &[String], set: &[&str]) -> bool {
    !tags.is_empty() && tags.iter().all(|t| set.contains(&t.as_str()))
}

/// Sorts candidates into the noun and verb dictionaries.
///
/// NOUN: every token on both sides carries a noun tag. VERB: every source
/// token is a nominal-verb tag and the first target token is verb-tagged.
/// Anything else is dropped. Candidates sharing source phrase, lemma and
/// class are merged; the most frequent surface is kept as `tgt_phrase`.
pub fn classify_entries(table: &[PhraseCandidate]) -> Result<(Dictionary, Dictionary)> {
    let mut merged: BTreeMap<(String, String, PosClass), (DictEntry, u64)> = BTreeMap::new();
    for c in table {
        let (Some(st), Some(tt), Some(lemma)) = (&c.src_tags, &c.tgt_tags, &c.tgt_lemma) else {
            return Err(Error::invalid(format!(
                "phrase pair {:?} -> {:?} has no POS/lemma annotation; supply src_pos, tgt_pos and tgt_lemmas columns",
                c.src_phrase.join(" "),
                c.tgt_phrase.join(" ")
            )));
        };
        let pos = if all_in(st, &NOUN_TAGS) && all_in(tt, &NOUN_TAGS) {
            PosClass::Noun
        } else if all_in(st, &NOMINAL_VERB_TAGS) && VERB_TAGS.contains(&tt[0].as_str()) {
            PosClass::Verb
        } else {
            continue;
        };
        let entry = DictEntry {
            src_phrase: c.src_phrase.clone(),
            tgt_phrase: c.tgt_phrase.clone(),
            tgt_lemma: lemma.clone(),
            pos_class: pos,
            pair_count: c.pair_count,
            train_freq: 0,
        };
        match merged.entry(entry.key()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                let n = entry.pair_count;
                v.insert((entry, n));
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let (kept, best) = o.get_mut();
                kept.pair_count += c.pair_count;
                if c.pair_count > *best || (c.pair_count == *best && c.tgt_phrase < kept.tgt_phrase) {
                    kept.tgt_phrase = c.tgt_phrase.clone();
                    *best = c.pair_count;
                }
            }
        }
    }
    let mut nouns = Dictionary::default();
    let mut verbs = Dictionary::default();
    for (_, (e, _)) in merged {
        match e.pos_class {
            PosClass::Noun => nouns.entries.push(e),
            PosClass::Verb => verbs.entries.push(e),
        }
    }
    Ok((nouns, verbs))
}

/// Indexes entries by the first token of their source phrase.
fn by_first_token(dict: &Dictionary) -> HashMap<&str, Vec<usize>> {
    let mut idx: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, e) in dict.entries.iter().enumerate() {
        idx.entry(e.src_phrase[0].as_str()).or_default().push(i);
    }
    idx
}

/// Indices of entries occurring in `ex`, ascending.
fn occurring(dict: &Dictionary, idx: &HashMap<&str, Vec<usize>>, ex: &ParallelExample) -> Vec<usize> {
    let mut hits = HashSet::new();
    for tok in &ex.src_tokens {
        if let Some(cands) = idx.get(tok.as_str()) {
            for &i in cands {
                if dict.entries[i].occurs_in(ex) {
                    hits.insert(i);
                }
            }
        }
    }
    let mut hits: Vec<usize> = hits.into_iter().collect();
    hits.sort_unstable();
    hits
}

/// Sets `train_freq` of every entry to the number of training pairs it occurs in.
pub fn count_train_freq(dict: &mut Dictionary, corpus: &[ParallelExample]) {
    let idx = by_first_token(dict);
    let mut freq = vec![0u64; dict.len()];
    for ex in corpus {
        for i in occurring(dict, &idx, ex) {
            freq[i] += 1;
        }
    }
    for (e, f) in dict.entries.iter_mut().zip(freq) {
        e.train_freq = f;
    }
}

/// Which held-out set defines the evaluation dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSource {
    Dev,
    Test,
    Both,
}

impl FromStr for EvalSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev" => Ok(EvalSource::Dev),
            "test" => Ok(EvalSource::Test),
            "both" => Ok(EvalSource::Both),
            other => Err(Error::invalid(format!("unknown evaluation source {other}"))),
        }
    }
}

/// Entries of `dict` that occur in the chosen held-out set(s).
pub fn build_eval_dict(
    dict: &Dictionary,
    dev: &[ParallelExample],
    test: &[ParallelExample],
    source: EvalSource,
) -> Dictionary {
    let sets: Vec<&[ParallelExample]> = match source {
        EvalSource::Dev => vec![dev],
        EvalSource::Test => vec![test],
        EvalSource::Both => vec![dev, test],
    };
    let idx = by_first_token(dict);
    let mut keep = vec![false; dict.len()];
    for set in sets {
        for ex in set {
            for i in occurring(dict, &idx, ex) {
                keep[i] = true;
            }
        }
    }
    Dictionary {
        entries: dict
            .entries
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(e, _)| e.clone())
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictSplit {
    pub seen: Dictionary,
    pub unseen: Dictionary,
    pub seed: u64,
}

/// Shuffles each class of `eval_dict` under `seed` and sends half of it to
/// `unseen` (the larger half to `seen` when odd). Returns the split and
/// `train_dict` with every unseen entry removed.
pub fn split_seen_unseen(
    eval_dict: &Dictionary,
    train_dict: &Dictionary,
    seed: u64,
) -> Result<(DictSplit, Dictionary)> {
    if eval_dict.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 evaluation entries to split, found {}",
            eval_dict.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = Dictionary::default();
    let mut unseen = Dictionary::default();
    for pos in PosClass::ALL {
        let mut entries: Vec<DictEntry> = eval_dict.of_class(pos).cloned().collect();
        entries.shuffle(&mut rng);
        let n_unseen = entries.len() / 2;
        let rest = entries.split_off(n_unseen);
        unseen.entries.extend(entries);
        seen.entries.extend(rest);
    }
    let unseen_keys: HashSet<_> = unseen.entries.iter().map(DictEntry::key).collect();
    let pruned = Dictionary {
        entries: train_dict
            .entries
            .iter()
            .filter(|e| !unseen_keys.contains(&e.key()))
            .cloned()
            .collect(),
    };
    Ok((DictSplit { seen, unseen, seed }, pruned))
}
