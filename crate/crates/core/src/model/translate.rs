//! Constrained translation: source preparation, word-level decoding and
//! placeholder filling per strategy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::decode::{beam_search, greedy};
use crate::align::PosClass;
use crate::augment::{apply_morph_postprocess, CodeSwitchForm, ConstraintAnnotation, InflectionLexicon};
use crate::data::specials::{self, BOS, PAD, UNK};
use crate::error::{Error, Result};

use super::bundle::ModelBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    None,
    PhOracle,
    PhLemma,
    PhCommon,
    PhMorph,
    Cs,
    Proposed,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::None,
        Strategy::PhOracle,
        Strategy::PhLemma,
        Strategy::PhCommon,
        Strategy::PhMorph,
        Strategy::Cs,
        Strategy::Proposed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::PhOracle => "ph-oracle",
            Strategy::PhLemma => "ph-lemma",
            Strategy::PhCommon => "ph-common",
            Strategy::PhMorph => "ph-morph",
            Strategy::Cs => "cs",
            Strategy::Proposed => "proposed",
        }
    }

    /// Whether the source carries a placeholder and the output is filled.
    pub fn uses_placeholder(self) -> bool {
        matches!(
            self,
            Strategy::PhOracle | Strategy::PhLemma | Strategy::PhCommon | Strategy::Proposed
        )
    }

    pub fn needs_constraint(self) -> bool {
        !matches!(self, Strategy::None | Strategy::Cs)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|k| k.as_str()).collect();
                Error::invalid(format!("unknown strategy {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Final output plus what happened on the way.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    pub hypothesis: String,
    /// Text substituted for each placeholder, left to right.
    pub fills: Vec<String>,
    /// Placeholder tokens in the word decoder's output, before filling.
    pub placeholder_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Translation {
    pub fn tokens(&self) -> Vec<String> {
        self.hypothesis.split_whitespace().map(str::to_string).collect()
    }
}

fn placeholder_token(pos: PosClass) -> &'static str {
    match pos {
        PosClass::Noun => specials::NOUN_STR,
        PosClass::Verb => specials::VERB_STR,
    }
}

fn placeholder_class(tok: &str) -> Option<PosClass> {
    match tok {
        specials::NOUN_STR => Some(PosClass::Noun),
        specials::VERB_STR => Some(PosClass::Verb),
        _ => None,
    }
}

/// Inflects the head of a lemma phrase (last token for nouns, first for verbs).
pub fn inflect_phrase(lemma: &[String], pos: PosClass, tag: &str, lex: &InflectionLexicon) -> Option<Vec<String>> {
    if lemma.is_empty() {
        return None;
    }
    let h = crate::augment::head_of(pos, lemma.len());
    let form = lex.lookup(&lemma[h], pos, tag)?;
    let mut out = lemma.to_vec();
    out[h] = form.to_string();
    Some(out)
}

/// Most common form used by the rule-based fill: singular nouns, past verbs.
pub fn common_tag(pos: PosClass) -> &'static str {
    match pos {
        PosClass::Noun => "NN",
        PosClass::Verb => "VBD",
    }
}

pub struct Translator<'a> {
    pub bundle: &'a ModelBundle,
    pub lexicon: Option<&'a InflectionLexicon>,
    /// 0 or 1 selects greedy decoding.
    pub beam: usize,
    /// Which form `cs` writes into the source.
    pub cs_form: CodeSwitchForm,
}

impl<'a> Translator<'a> {
    pub fn new(bundle: &'a ModelBundle, lexicon: Option<&'a InflectionLexicon>, beam: usize) -> Self {
        Self {
            bundle,
            lexicon,
            beam,
            cs_form: CodeSwitchForm::Lemma,
        }
    }

    /// Source tokens as the word model should see them under `strategy`.
    pub fn prepare_source(
        &self,
        src: &[String],
        constraint: Option<&ConstraintAnnotation>,
        strategy: Strategy,
    ) -> Result<Vec<String>> {
        let Some(c) = constraint else {
            if strategy.needs_constraint() {
                return Err(Error::invalid(format!("strategy {strategy} needs a constraint")));
            }
            return Ok(src.to_vec());
        };
        let (s0, s1) = c.src_span;
        if s0 >= s1 || s1 > src.len() {
            return Err(Error::invalid(format!(
                "constraint span {:?} outside a source of {} tokens",
                c.src_span,
                src.len()
            )));
        }
        let with: Vec<String> = match strategy {
            Strategy::None => return Ok(src.to_vec()),
            Strategy::PhOracle | Strategy::PhLemma | Strategy::PhCommon | Strategy::Proposed => {
                vec![placeholder_token(c.pos()).to_string()]
            }
            Strategy::PhMorph => c.lemma().to_vec(),
            Strategy::Cs => match self.cs_form {
                CodeSwitchForm::Oracle => c.reference_surface.clone(),
                CodeSwitchForm::Lemma => c.lemma().to_vec(),
            },
        };
        let mut out = src[..s0].to_vec();
        out.extend(with);
        out.extend_from_slice(&src[s1..]);
        Ok(out)
    }

    fn banned(&self, strategy: Strategy) -> Vec<usize> {
        let vocab = &self.bundle.vocab;
        let mut banned = vec![PAD, BOS, UNK];
        match strategy {
            Strategy::None | Strategy::Cs => {
                banned.extend([specials::NOUN, specials::VERB]);
                banned.extend(vocab.tag_ids());
            }
            Strategy::PhMorph => banned.extend([specials::NOUN, specials::VERB]),
            _ => banned.extend(vocab.tag_ids()),
        }
        banned
    }

    /// Word-level output tokens for prepared sources, before any filling.
    pub fn decode_words(&self, sources: &[Vec<String>], strategy: Strategy) -> Result<Vec<Vec<String>>> {
        let b = self.bundle;
        let ids: Vec<Vec<usize>> = sources.iter().map(|s| b.vocab.encode(s)).collect();
        let banned = self.banned(strategy);
        let pieces = if self.beam <= 1 {
            greedy(&b.word, &b.store, &ids, &banned)?
        } else {
            ids.iter()
                .map(|s| beam_search(&b.word, &b.store, s, self.beam, &banned))
                .collect::<Result<Vec<_>>>()?
        };
        pieces.iter().map(|p| b.vocab.decode(p)).collect()
    }

    /// Applies the strategy's post-processing to decoded word tokens.
    pub fn finish(
        &self,
        words: &[String],
        constraint: Option<&ConstraintAnnotation>,
        strategy: Strategy,
    ) -> Result<Translation> {
        let placeholders: Vec<usize> = (0..words.len())
            .filter(|&i| placeholder_class(&words[i]).is_some())
            .collect();
        let mut t = Translation {
            placeholder_count: placeholders.len(),
            ..Default::default()
        };
        let tokens: Vec<String> = match strategy {
            Strategy::None | Strategy::Cs => words.to_vec(),
            Strategy::PhMorph => {
                let lex = self.lexicon.ok_or_else(|| Error::invalid("ph-morph needs an inflection lexicon"))?;
                apply_morph_postprocess(words, lex)
            }
            _ => {
                let c = constraint.ok_or_else(|| Error::invalid(format!("strategy {strategy} needs a constraint")))?;
                if placeholders.len() > 1 {
                    t.notes.push(format!("{} placeholders emitted", placeholders.len()));
                }
                if placeholders.iter().any(|&i| placeholder_class(&words[i]) != Some(c.pos())) {
                    t.notes.push("placeholder of the other class emitted".into());
                }
                self.fill(words, &placeholders, c, strategy, &mut t)?
            }
        };
        t.hypothesis = tokens.join(" ");
        Ok(t)
    }

    fn fill(
        &self,
        words: &[String],
        placeholders: &[usize],
        c: &ConstraintAnnotation,
        strategy: Strategy,
        t: &mut Translation,
    ) -> Result<Vec<String>> {
        let mut fills: Vec<Vec<String>> = Vec::with_capacity(placeholders.len());
        for (k, &at) in placeholders.iter().enumerate() {
            let fill = match strategy {
                Strategy::PhOracle => c.reference_surface.clone(),
                Strategy::PhLemma => c.lemma().to_vec(),
                Strategy::PhCommon => {
                    let lex = self.lexicon.ok_or_else(|| Error::invalid("ph-common needs an inflection lexicon"))?;
                    inflect_phrase(c.lemma(), c.pos(), common_tag(c.pos()), lex).unwrap_or_else(|| {
                        t.notes.push("lemma missing from lexicon; used as is".into());
                        c.lemma().to_vec()
                    })
                }
                Strategy::Proposed => {
                    // earlier placeholders already filled, later ones shown as the lemma
                    let mut context: Vec<String> = Vec::with_capacity(words.len());
                    let mut j = 0;
                    for (i, w) in words.iter().enumerate() {
                        if j < placeholders.len() && placeholders[j] == i {
                            if j < k {
                                context.extend(fills[j].iter().cloned());
                            } else if j == k {
                                context.push(placeholder_token(c.pos()).to_string());
                            } else {
                                context.extend(c.lemma().iter().cloned());
                            }
                            j += 1;
                        } else {
                            context.push(w.clone());
                        }
                    }
                    debug_assert!(at < words.len());
                    self.inflect(&context, c, t)?
                }
                _ => unreachable!("not a placeholder strategy"),
            };
            fills.push(fill);
        }
        t.fills = fills.iter().map(|f| f.join(" ")).collect();
        let mut out = Vec::with_capacity(words.len());
        let mut j = 0;
        for (i, w) in words.iter().enumerate() {
            if j < placeholders.len() && placeholders[j] == i {
                out.extend(fills[j].iter().cloned());
                j += 1;
            } else {
                out.push(w.clone());
            }
        }
        Ok(out)
    }

    /// Character decoder output for the lemma of `c` in `context`.
    fn inflect(&self, context: &[String], c: &ConstraintAnnotation, t: &mut Translation) -> Result<Vec<String>> {
        let b = self.bundle;
        let (addon, chars) = match (&b.addon, &b.chars) {
            (Some(a), Some(ch)) => (a, ch),
            _ => return Err(Error::invalid("proposed strategy needs a model with the inflection add-on")),
        };
        let ctx_ids = b.vocab.encode(context);
        let (lemma, unknown) = chars.encode(&c.lemma().join(" "));
        if unknown > 0 {
            t.notes.push(format!("{unknown} lemma characters outside the character vocabulary"));
        }
        let (out, truncated) = addon.char_decode(&b.store, &b.word, &ctx_ids, &lemma)?;
        if truncated {
            t.notes.push("character output truncated".into());
        }
        let text = chars.decode(&out);
        let fill: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if fill.is_empty() {
            t.notes.push("empty character output; used the lemma".into());
            return Ok(c.lemma().to_vec());
        }
        Ok(fill)
    }

    /// One sentence end to end.
    pub fn translate(
        &self,
        src: &[String],
        constraint: Option<&ConstraintAnnotation>,
        strategy: Strategy,
    ) -> Result<Translation> {
        let prepared = self.prepare_source(src, constraint, strategy)?;
        let words = self.decode_words(&[prepared], strategy)?;
        self.finish(&words[0], constraint, strategy)
    }
}
