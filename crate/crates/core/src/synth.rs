//! Synthetic bilingual corpus whose target verbs inflect for tense.
//!
//! The source language is verb-final and marks tense with a trailing
//! `PRS`/`PST`/`PROG` token and plural nouns with `ra`. The target puts a time
//! word first (`now`, `yesterday`, `still`) and inflects the verb:
//!
//! - present: lemma unchanged
//! - past: final vowel dropped, then `ta`; a stem already ending in `t` only
//!   takes `a` (`patu` -> `pata`, `miko` -> `mikta`)
//! - progressive: lemma + `na`
//!
//! A few train-only verbs have irregular past forms. Plural nouns take `ri`.
//! Lemmas are split into train-only, seen-eval and unseen-eval partitions;
//! unseen lemmas never occur in training or development sentences.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{count_train_freq, DictEntry, DictSplit, Dictionary, PosClass};
use crate::augment::InflectionLexicon;
use crate::data::ParallelExample;
use crate::error::{Error, Result};

const TGT_CONSONANTS: &[u8] = b"ptkmnslrh";
const SRC_CONSONANTS: &[u8] = b"bdgzvfjwy";
const VOWELS: &[u8] = b"aeiou";

/// Fixed irregular past forms; their lemmas always land in the train partition.
const IRREGULAR_PAST: [(&str, &str); 6] = [
    ("kemo", "kenda"),
    ("hasu", "hesta"),
    ("nori", "nuro"),
    ("melo", "molla"),
    ("pise", "paso"),
    ("rutu", "rota"),
];

/// Lemmas that are always present (regular, train partition).
const FIXED_VERBS: [&str; 2] = ["patu", "miko"];

const SUBJECTS: [(&str, &str); 3] = [("watu", "we"), ("anu", "you"), ("kare", "they")];
const PLURAL_MARK: &str = "ra";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tense {
    Prs,
    Pst,
    Prog,
}

impl Tense {
    pub const ALL: [Tense; 3] = [Tense::Prs, Tense::Pst, Tense::Prog];

    pub fn source_marker(self) -> &'static str {
        match self {
            Tense::Prs => "PRS",
            Tense::Pst => "PST",
            Tense::Prog => "PROG",
        }
    }

    pub fn time_word(self) -> &'static str {
        match self {
            Tense::Prs => "now",
            Tense::Pst => "yesterday",
            Tense::Prog => "still",
        }
    }

    pub fn form_tag(self) -> &'static str {
        match self {
            Tense::Prs => "VB",
            Tense::Pst => "VBD",
            Tense::Prog => "VBG",
        }
    }
}

impl fmt::Display for Tense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.source_marker())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    Train,
    SeenEval,
    UnseenEval,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lemma {
    pub src: String,
    pub tgt: String,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Verbs per partition: train-only, seen-eval, unseen-eval.
    pub verbs: [usize; 3],
    /// Nouns per partition: train-only, seen-eval, unseen-eval.
    pub nouns: [usize; 3],
    pub n_train: usize,
    pub n_dev: usize,
    /// Test sentences per (class, seen/unseen) block.
    pub n_test_per_cell: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            verbs: [160, 20, 20],
            nouns: [80, 10, 10],
            n_train: 8000,
            n_dev: 400,
            n_test_per_cell: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthGrammar {
    pub verbs: Vec<Lemma>,
    /// Train and seen nouns ordered by decreasing frequency, then unseen nouns.
    pub nouns: Vec<Lemma>,
    pub irregular_past: BTreeMap<String, String>,
}

fn regular_past(lemma: &str) -> String {
    let stem = &lemma[..lemma.len() - 1];
    if stem.ends_with('t') {
        format!("{stem}a")
    } else {
        format!("{stem}ta")
    }
}

fn random_word(rng: &mut impl Rng, consonants: &[u8]) -> String {
    let syllables = if rng.gen_bool(0.5) { 2 } else { 3 };
    let mut w = String::with_capacity(2 * syllables);
    for _ in 0..syllables {
        w.push(*consonants.choose(rng).expect("non-empty") as char);
        w.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    w
}

fn plural(noun: &str) -> String {
    format!("{noun}ri")
}

impl SynthGrammar {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        let n_verbs: usize = cfg.verbs.iter().sum();
        let n_nouns: usize = cfg.nouns.iter().sum();
        let fixed = IRREGULAR_PAST.len() + FIXED_VERBS.len();
        if cfg.verbs[0] < fixed {
            return Err(Error::invalid(format!("need at least {fixed} train-only verbs")));
        }
        if cfg.verbs[1] == 0 || cfg.verbs[2] == 0 || cfg.nouns[1] == 0 || cfg.nouns[2] == 0 || cfg.nouns[0] == 0 {
            return Err(Error::invalid("every noun and verb partition needs at least one lemma"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let irregular_past: BTreeMap<String, String> = IRREGULAR_PAST
            .iter()
            .map(|(l, p)| (l.to_string(), p.to_string()))
            .collect();

        // every target string any lemma can surface as, to keep forms unambiguous
        let mut taken: HashSet<String> = SUBJECTS.iter().map(|(_, t)| t.to_string()).collect();
        for w in ["now", "yesterday", "still", "one", "many", PLURAL_MARK, "wo", "wa"] {
            taken.insert(w.to_string());
        }
        let mut src_taken: HashSet<String> = taken.clone();
        for (s, _) in SUBJECTS {
            src_taken.insert(s.to_string());
        }

        let verb_forms = |l: &str| -> Vec<String> {
            let past = irregular_past.get(l).cloned().unwrap_or_else(|| regular_past(l));
            vec![l.to_string(), past, format!("{l}na")]
        };
        let mut tgt_verbs: Vec<String> = Vec::with_capacity(n_verbs);
        for l in IRREGULAR_PAST.iter().map(|(l, _)| *l).chain(FIXED_VERBS) {
            for f in verb_forms(l) {
                taken.insert(f);
            }
            tgt_verbs.push(l.to_string());
        }
        while tgt_verbs.len() < n_verbs {
            let w = random_word(&mut rng, TGT_CONSONANTS);
            let forms = verb_forms(&w);
            let distinct: HashSet<&String> = forms.iter().collect();
            if distinct.len() < forms.len() || forms.iter().any(|f| taken.contains(f)) {
                continue;
            }
            taken.extend(forms);
            tgt_verbs.push(w);
        }
        let mut tgt_nouns: Vec<String> = Vec::with_capacity(n_nouns);
        while tgt_nouns.len() < n_nouns {
            let w = random_word(&mut rng, TGT_CONSONANTS);
            let forms = [w.clone(), plural(&w)];
            if forms.iter().any(|f| taken.contains(f)) {
                continue;
            }
            taken.extend(forms);
            tgt_nouns.push(w);
        }
        let mut src_words: Vec<String> = Vec::with_capacity(n_verbs + n_nouns);
        while src_words.len() < n_verbs + n_nouns {
            let w = random_word(&mut rng, SRC_CONSONANTS);
            if src_taken.insert(w.clone()) {
                src_words.push(w);
            }
        }

        // verbs: fixed ones stay in train, the rest are shuffled into partitions
        let mut rest: Vec<String> = tgt_verbs.split_off(fixed);
        rest.shuffle(&mut rng);
        let mut partitions = Vec::with_capacity(n_verbs);
        partitions.extend(std::iter::repeat_n(Partition::Train, cfg.verbs[0]));
        partitions.extend(std::iter::repeat_n(Partition::SeenEval, cfg.verbs[1]));
        partitions.extend(std::iter::repeat_n(Partition::UnseenEval, cfg.verbs[2]));
        let verbs: Vec<Lemma> = tgt_verbs
            .into_iter()
            .chain(rest)
            .zip(partitions)
            .zip(&src_words[..n_verbs])
            .map(|((tgt, partition), src)| Lemma {
                src: src.clone(),
                tgt,
                partition,
            })
            .collect();

        // nouns: eval nouns are drawn from the rare half of the frequency ranking
        let n_known = cfg.nouns[0] + cfg.nouns[1];
        let rare_start = n_known / 2;
        if n_known - rare_start < cfg.nouns[1] {
            return Err(Error::invalid("too few train nouns to host the seen-eval nouns"));
        }
        let mut rare: Vec<usize> = (rare_start..n_known).collect();
        rare.shuffle(&mut rng);
        let seen_ranks: HashSet<usize> = rare[..cfg.nouns[1]].iter().copied().collect();
        let nouns: Vec<Lemma> = tgt_nouns
            .into_iter()
            .zip(&src_words[n_verbs..])
            .enumerate()
            .map(|(i, (tgt, src))| Lemma {
                src: src.clone(),
                tgt,
                partition: if i >= n_known {
                    Partition::UnseenEval
                } else if seen_ranks.contains(&i) {
                    Partition::SeenEval
                } else {
                    Partition::Train
                },
            })
            .collect();
        Ok(Self {
            verbs,
            nouns,
            irregular_past,
        })
    }

    /// Ground-truth verb form.
    pub fn oracle_inflect(&self, lemma: &str, tense: Tense) -> String {
        oracle_inflect(self, lemma, tense)
    }

    pub fn verbs_in(&self, p: Partition) -> impl Iterator<Item = &Lemma> {
        self.verbs.iter().filter(move |l| l.partition == p)
    }

    pub fn nouns_in(&self, p: Partition) -> impl Iterator<Item = &Lemma> {
        self.nouns.iter().filter(move |l| l.partition == p)
    }

    pub fn lexicon(&self) -> InflectionLexicon {
        let mut lex = InflectionLexicon::new();
        for v in &self.verbs {
            for t in Tense::ALL {
                lex.insert(&v.tgt, PosClass::Verb, t.form_tag(), &self.oracle_inflect(&v.tgt, t))
                    .expect("generated forms are consistent");
            }
        }
        for n in &self.nouns {
            lex.insert(&n.tgt, PosClass::Noun, "NN", &n.tgt).expect("consistent");
            lex.insert(&n.tgt, PosClass::Noun, "NNS", &plural(&n.tgt)).expect("consistent");
        }
        lex
    }
}

/// Applies the irregular table first, then the suffix rules.
pub fn oracle_inflect(grammar: &SynthGrammar, lemma: &str, tense: Tense) -> String {
    match tense {
        Tense::Prs => lemma.to_string(),
        Tense::Pst => grammar
            .irregular_past
            .get(lemma)
            .cloned()
            .unwrap_or_else(|| regular_past(lemma)),
        Tense::Prog => format!("{lemma}na"),
    }
}

/// What a generated sentence pair was built from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpec {
    pub verb: usize,
    pub noun: usize,
    pub tense: Tense,
    pub plural: bool,
    pub subject: usize,
}

fn realize(g: &SynthGrammar, id: usize, s: &SentenceSpec) -> ParallelExample {
    let v = &g.verbs[s.verb];
    let n = &g.nouns[s.noun];
    let (subj_src, subj_tgt) = SUBJECTS[s.subject];
    let mut src = vec![subj_src, "wa", n.src.as_str()];
    let mut src_pos = vec!["PRP", "P", "NN"];
    if s.plural {
        src.push(PLURAL_MARK);
        src_pos.push("PL");
    }
    src.extend(["wo", v.src.as_str(), s.tense.source_marker()]);
    src_pos.extend(["P", "SAHEN", "TNS"]);
    let verb = oracle_inflect(g, &v.tgt, s.tense);
    let (det, noun, noun_tag) = if s.plural {
        ("many", plural(&n.tgt), "NNS")
    } else {
        ("one", n.tgt.clone(), "NN")
    };
    let tgt = [s.tense.time_word(), subj_tgt, verb.as_str(), det, noun.as_str()];
    let tgt_pos = ["RB", "PRP", s.tense.form_tag(), "DT", noun_tag];
    let lemmas = [s.tense.time_word(), subj_tgt, v.tgt.as_str(), det, n.tgt.as_str()];
    let own = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    ParallelExample {
        id,
        src_tokens: own(&src),
        tgt_tokens: own(&tgt),
        src_pos: Some(own(&src_pos)),
        tgt_pos: Some(own(&tgt_pos)),
        tgt_lemmas: Some(own(&lemmas)),
    }
}

/// Everything the pipeline needs from the synthetic language.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub grammar: SynthGrammar,
    pub train: Vec<ParallelExample>,
    pub dev: Vec<ParallelExample>,
    /// Four blocks of `n_test_per_cell` pairs: seen verbs, unseen verbs,
    /// seen nouns, unseen nouns.
    pub test: Vec<ParallelExample>,
    pub train_specs: Vec<SentenceSpec>,
    pub test_specs: Vec<SentenceSpec>,
    /// Training-time dictionary (unseen entries already removed), with
    /// `train_freq` counted on `train`.
    pub dictionary: Dictionary,
    pub split: DictSplit,
    pub lexicon: InflectionLexicon,
}

struct Sampler {
    noun_weights: Vec<f64>,
}

impl Sampler {
    fn pick(rng: &mut impl Rng, items: &[usize]) -> usize {
        *items.choose(rng).expect("non-empty partition")
    }

    /// Zipf-like choice among `items` (weights indexed by noun rank).
    fn noun(&self, rng: &mut impl Rng, items: &[usize]) -> usize {
        let total: f64 = items.iter().map(|&i| self.noun_weights[i]).sum();
        let mut x = rng.gen::<f64>() * total;
        for &i in items {
            x -= self.noun_weights[i];
            if x <= 0.0 {
                return i;
            }
        }
        *items.last().expect("non-empty")
    }

    fn spec(rng: &mut impl Rng, verb: usize, noun: usize) -> SentenceSpec {
        SentenceSpec {
            verb,
            noun,
            tense: *Tense::ALL.choose(rng).expect("three tenses"),
            plural: rng.gen_bool(0.5),
            subject: rng.gen_range(0..SUBJECTS.len()),
        }
    }
}

fn indices(lemmas: &[Lemma], parts: &[Partition]) -> Vec<usize> {
    (0..lemmas.len())
        .filter(|&i| parts.contains(&lemmas[i].partition))
        .collect()
}

fn entry(l: &Lemma, pos: PosClass) -> DictEntry {
    DictEntry {
        src_phrase: vec![l.src.clone()],
        tgt_phrase: vec![l.tgt.clone()],
        tgt_lemma: vec![l.tgt.clone()],
        pos_class: pos,
        pair_count: 1,
        train_freq: 0,
    }
}

/// Generates train/dev/test corpora, the dictionaries, the seen/unseen split
/// and the inflection lexicon.
pub fn gen_corpus(grammar: &SynthGrammar, cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.n_train == 0 {
        return Err(Error::invalid("n_train must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de);
    let sampler = Sampler {
        noun_weights: (0..grammar.nouns.len()).map(|r| 1.0 / (r + 1) as f64).collect(),
    };
    let known = [Partition::Train, Partition::SeenEval];
    let train_verbs = indices(&grammar.verbs, &known);
    let train_nouns = indices(&grammar.nouns, &known);
    let only_train_verbs = indices(&grammar.verbs, &[Partition::Train]);
    let only_train_nouns = indices(&grammar.nouns, &[Partition::Train]);

    let mut train_specs = Vec::with_capacity(cfg.n_train);
    for _ in 0..cfg.n_train {
        let v = Sampler::pick(&mut rng, &train_verbs);
        let n = sampler.noun(&mut rng, &train_nouns);
        train_specs.push(Sampler::spec(&mut rng, v, n));
    }
    let mut dev_specs = Vec::with_capacity(cfg.n_dev);
    for _ in 0..cfg.n_dev {
        let v = Sampler::pick(&mut rng, &train_verbs);
        let n = sampler.noun(&mut rng, &train_nouns);
        dev_specs.push(Sampler::spec(&mut rng, v, n));
    }
    let blocks: [(Vec<usize>, bool); 4] = [
        (indices(&grammar.verbs, &[Partition::SeenEval]), true),
        (indices(&grammar.verbs, &[Partition::UnseenEval]), true),
        (indices(&grammar.nouns, &[Partition::SeenEval]), false),
        (indices(&grammar.nouns, &[Partition::UnseenEval]), false),
    ];
    let mut test_specs = Vec::with_capacity(4 * cfg.n_test_per_cell);
    for (pool, is_verb) in &blocks {
        for _ in 0..cfg.n_test_per_cell {
            let spec = if *is_verb {
                let v = Sampler::pick(&mut rng, pool);
                let n = sampler.noun(&mut rng, &only_train_nouns);
                Sampler::spec(&mut rng, v, n)
            } else {
                let v = Sampler::pick(&mut rng, &only_train_verbs);
                let n = Sampler::pick(&mut rng, pool);
                Sampler::spec(&mut rng, v, n)
            };
            test_specs.push(spec);
        }
    }
    let build = |specs: &[SentenceSpec]| -> Vec<ParallelExample> {
        specs.iter().enumerate().map(|(i, s)| realize(grammar, i, s)).collect()
    };
    let train = build(&train_specs);
    let dev = build(&dev_specs);
    let test = build(&test_specs);

    let mut full = Dictionary::default();
    let mut seen = Dictionary::default();
    let mut unseen = Dictionary::default();
    for (lemmas, pos) in [(&grammar.nouns, PosClass::Noun), (&grammar.verbs, PosClass::Verb)] {
        for l in lemmas {
            let e = entry(l, pos);
            match l.partition {
                Partition::Train => full.entries.push(e),
                Partition::SeenEval => {
                    full.entries.push(e.clone());
                    seen.entries.push(e);
                }
                Partition::UnseenEval => unseen.entries.push(e),
            }
        }
    }
    count_train_freq(&mut full, &train);
    for e in &mut full.entries {
        e.pair_count = e.train_freq.max(1);
    }
    for d in [&mut seen, &mut unseen] {
        for e in &mut d.entries {
            if let Some(f) = full.entries.iter().find(|f| f.key() == e.key()) {
                e.train_freq = f.train_freq;
                e.pair_count = f.pair_count;
            }
        }
    }
    Ok(SynthData {
        lexicon: grammar.lexicon(),
        grammar: grammar.clone(),
        train,
        dev,
        test,
        train_specs,
        test_specs,
        dictionary: full,
        split: DictSplit {
            seen,
            unseen,
            seed: cfg.seed,
        },
    })
}
