use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AugmentMode, InflectionLexicon};
use crate::align::{DictEntry, Dictionary, PosClass};
use crate::data::ParallelExample;

/// Maximum training frequency an entry may have to be used for augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub noun_max_freq: u64,
    pub verb_max_freq: u64,
}

impl Thresholds {
    pub fn unlimited() -> Self {
        Self {
            noun_max_freq: u64::MAX,
            verb_max_freq: u64::MAX,
        }
    }

    pub fn passes(&self, e: &DictEntry) -> bool {
        match e.pos_class {
            PosClass::Noun => e.train_freq <= self.noun_max_freq,
            PosClass::Verb => e.train_freq <= self.verb_max_freq,
        }
    }
}

/// The one constrained span of a sentence pair. Spans are half-open token ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintAnnotation {
    pub pair_id: usize,
    pub entry: DictEntry,
    pub src_span: (usize, usize),
    pub tgt_span: (usize, usize),
    pub reference_surface: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<AugmentMode>,
}

impl ConstraintAnnotation {
    pub fn pos(&self) -> PosClass {
        self.entry.pos_class
    }

    pub fn lemma(&self) -> &[String] {
        &self.entry.tgt_lemma
    }
}

/// Token of a phrase that carries inflection: first for verbs, last for nouns.
pub(crate) fn head_index(pos: PosClass, len: usize) -> usize {
    match pos {
        PosClass::Verb => 0,
        PosClass::Noun => len.saturating_sub(1),
    }
}

/// Dictionary entries passing the thresholds, indexed by first source token.
pub struct ConstraintSelector {
    entries: Vec<DictEntry>,
    by_first: HashMap<String, Vec<usize>>,
}

impl ConstraintSelector {
    pub fn new(dict: &Dictionary, thresholds: &Thresholds) -> Self {
        let entries: Vec<DictEntry> = dict
            .entries
            .iter()
            .filter(|e| thresholds.passes(e))
            .cloned()
            .collect();
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_first.entry(e.src_phrase[0].clone()).or_default().push(i);
        }
        Self { entries, by_first }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn target_span(&self, e: &DictEntry, ex: &ParallelExample, lex: &InflectionLexicon) -> Option<usize> {
        let len = e.tgt_lemma.len();
        if len > ex.tgt_tokens.len() {
            return None;
        }
        let head = head_index(e.pos_class, len);
        (0..=ex.tgt_tokens.len() - len).find(|&t| {
            let by_lemma_column = ex
                .tgt_lemmas
                .as_ref()
                .is_some_and(|l| l[t..t + len] == e.tgt_lemma[..]);
            by_lemma_column
                || (0..len).all(|k| {
                    let tok = &ex.tgt_tokens[t + k];
                    let lemma = &e.tgt_lemma[k];
                    if k == head {
                        lex.is_form_of(lemma, e.pos_class, tok)
                    } else {
                        tok == lemma
                    }
                })
        })
    }

    /// Leftmost source match wins, then the longest source phrase, then
    /// dictionary order. The target must contain an attested form of the lemma.
    pub fn select(&self, ex: &ParallelExample, lex: &InflectionLexicon) -> Option<ConstraintAnnotation> {
        for s in 0..ex.src_tokens.len() {
            let Some(cands) = self.by_first.get(&ex.src_tokens[s]) else {
                continue;
            };
            let mut best: Option<(usize, usize, usize)> = None;
            for &i in cands {
                let e = &self.entries[i];
                let n = e.src_phrase.len();
                if s + n > ex.src_tokens.len() || ex.src_tokens[s..s + n] != e.src_phrase[..] {
                    continue;
                }
                if best.is_some_and(|(bn, _, _)| bn >= n) {
                    continue;
                }
                if let Some(t) = self.target_span(e, ex, lex) {
                    best = Some((n, i, t));
                }
            }
            if let Some((n, i, t)) = best {
                let e = &self.entries[i];
                let len = e.tgt_lemma.len();
                return Some(ConstraintAnnotation {
                    pair_id: ex.id,
                    entry: e.clone(),
                    src_span: (s, s + n),
                    tgt_span: (t, t + len),
                    reference_surface: ex.tgt_tokens[t..t + len].to_vec(),
                    mode: None,
                });
            }
        }
        None
    }
}

/// One-off form of [`ConstraintSelector::select`].
pub fn select_constraint(
    ex: &ParallelExample,
    dict: &Dictionary,
    lex: &InflectionLexicon,
    thresholds: &Thresholds,
) -> Option<ConstraintAnnotation> {
    ConstraintSelector::new(dict, thresholds).select(ex, lex)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn entry(src: &str, lemma: &str, pos: PosClass, freq: u64) -> DictEntry {
        let t = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        DictEntry {
            src_phrase: t(src),
            tgt_phrase: t(lemma),
            tgt_lemma: t(lemma),
            pos_class: pos,
            pair_count: 1,
            train_freq: freq,
        }
    }

    pub(crate) fn lexicon() -> InflectionLexicon {
        let mut lex = InflectionLexicon::new();
        for (tag, s) in [("VB", "control"), ("VBD", "controlled"), ("VBG", "controlling"), ("VBZ", "controls")] {
            lex.insert("control", PosClass::Verb, tag, s).unwrap();
        }
        lex.insert("make", PosClass::Verb, "VBD", "made").unwrap();
        lex.insert("system", PosClass::Noun, "NN", "system").unwrap();
        lex.insert("system", PosClass::Noun, "NNS", "systems").unwrap();
        lex
    }

    #[test]
    fn leftmost_source_match_wins() {
        let dict = Dictionary::new(vec![
            entry("seido", "system", PosClass::Noun, 3),
            entry("kanri", "control", PosClass::Verb, 3),
        ]);
        let ex = ParallelExample::new(0, "x kanri y z seido", "the systems are controlled");
        let c = select_constraint(&ex, &dict, &lexicon(), &Thresholds::unlimited()).unwrap();
        assert_eq!(c.src_span, (1, 2));
        assert_eq!(c.tgt_span, (3, 4));
        assert_eq!(c.reference_surface, ["controlled"]);
    }

    #[test]
    fn longer_phrase_wins_at_same_position() {
        let dict = Dictionary::new(vec![
            entry("seigyo", "control", PosClass::Verb, 1),
            entry("seigyo keisu", "control system", PosClass::Noun, 1),
        ]);
        let ex = ParallelExample::new(0, "seigyo keisu", "control systems");
        let c = select_constraint(&ex, &dict, &lexicon(), &Thresholds::unlimited()).unwrap();
        assert_eq!(c.entry.pos_class, PosClass::Noun);
        assert_eq!(c.reference_surface, ["control", "systems"]);
    }

    #[test]
    fn both_sides_must_match() {
        let dict = Dictionary::new(vec![entry("kanri", "control", PosClass::Verb, 1)]);
        let ex = ParallelExample::new(0, "kanri", "it was made");
        assert!(select_constraint(&ex, &dict, &lexicon(), &Thresholds::unlimited()).is_none());
    }

    #[test]
    fn thresholds_filter_by_class() {
        let dict = Dictionary::new(vec![entry("kanri", "control", PosClass::Verb, 30)]);
        let ex = ParallelExample::new(0, "kanri", "controls");
        let strict = Thresholds { noun_max_freq: 100, verb_max_freq: 20 };
        assert!(select_constraint(&ex, &dict, &lexicon(), &strict).is_none());
        let loose = Thresholds { noun_max_freq: 0, verb_max_freq: 30 };
        assert!(select_constraint(&ex, &dict, &lexicon(), &loose).is_some());
    }
}
