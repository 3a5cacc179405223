use serde::{Deserialize, Serialize};

use super::select::head_index;
use super::{parse_tag_token, tag_pos, tag_token, ConstraintAnnotation, InflectionLexicon};
use crate::data::{specials, ParallelExample};
use crate::error::{Error, Result};

/// Annotation written for tokens inserted into the source by code-switching.
const SWITCHED_TAG: &str = "CS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeSwitchForm {
    Oracle,
    Lemma,
}

fn check_spans(ex: &ParallelExample, c: &ConstraintAnnotation) -> Result<()> {
    let (s0, s1) = c.src_span;
    let (t0, t1) = c.tgt_span;
    if s0 >= s1 || s1 > ex.src_tokens.len() || ex.src_tokens[s0..s1] != c.entry.src_phrase[..] {
        return Err(Error::invalid(format!(
            "pair {}: source span {:?} does not hold {:?}",
            ex.id, c.src_span, c.entry.src_phrase
        )));
    }
    if t0 >= t1 || t1 > ex.tgt_tokens.len() || ex.tgt_tokens[t0..t1] != c.reference_surface[..] {
        return Err(Error::invalid(format!(
            "pair {}: target span {:?} does not hold {:?}",
            ex.id, c.tgt_span, c.reference_surface
        )));
    }
    Ok(())
}

fn splice<T: Clone>(v: &[T], span: (usize, usize), with: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut out = v[..span.0].to_vec();
    out.extend(with);
    out.extend_from_slice(&v[span.1..]);
    out
}

fn splice_opt(
    col: &Option<Vec<String>>,
    span: (usize, usize),
    with: impl IntoIterator<Item = String>,
) -> Option<Vec<String>> {
    col.as_ref().map(|c| splice(c, span, with))
}

/// Replaces both constrained spans by the class placeholder token.
pub fn render_placeholder(ex: &ParallelExample, c: &ConstraintAnnotation) -> Result<ParallelExample> {
    check_spans(ex, c)?;
    let ph = c.pos().placeholder().to_string();
    let one = || std::iter::once(ph.clone());
    Ok(ParallelExample {
        id: ex.id,
        src_tokens: splice(&ex.src_tokens, c.src_span, one()),
        tgt_tokens: splice(&ex.tgt_tokens, c.tgt_span, one()),
        src_pos: splice_opt(&ex.src_pos, c.src_span, one()),
        tgt_pos: splice_opt(&ex.tgt_pos, c.tgt_span, one()),
        tgt_lemmas: splice_opt(&ex.tgt_lemmas, c.tgt_span, one()),
    })
}

/// Writes the reference form or the lemma into the source; the target is untouched.
pub fn render_codeswitch(
    ex: &ParallelExample,
    c: &ConstraintAnnotation,
    form: CodeSwitchForm,
) -> Result<ParallelExample> {
    check_spans(ex, c)?;
    let words = match form {
        CodeSwitchForm::Oracle => c.reference_surface.clone(),
        CodeSwitchForm::Lemma => c.lemma().to_vec(),
    };
    let tags = vec![SWITCHED_TAG.to_string(); words.len()];
    Ok(ParallelExample {
        id: ex.id,
        src_tokens: splice(&ex.src_tokens, c.src_span, words),
        src_pos: splice_opt(&ex.src_pos, c.src_span, tags),
        ..ex.clone()
    })
}

/// Lemma on both sides, with the form tag of the reference right after the
/// inflected head token on the target side. `None` when the lexicon cannot
/// analyse the reference form.
pub fn render_morphtag(
    ex: &ParallelExample,
    c: &ConstraintAnnotation,
    lex: &InflectionLexicon,
) -> Result<Option<ParallelExample>> {
    check_spans(ex, c)?;
    let lemma = c.lemma();
    let head = head_index(c.pos(), lemma.len());
    let Some((head_lemma, tag)) = lex.reverse(c.pos(), &c.reference_surface[head]) else {
        return Ok(None);
    };
    if head_lemma != lemma[head] {
        return Ok(None);
    }
    let tag = tag_token(tag);
    let mut tgt_words = lemma.to_vec();
    tgt_words.insert(head + 1, tag.clone());
    let tgt_pos = ex.tgt_pos.as_ref().map(|p| {
        let mut span: Vec<String> = p[c.tgt_span.0..c.tgt_span.1].to_vec();
        span.insert(head + 1, tag.clone());
        splice(p, c.tgt_span, span)
    });
    let src_tags = vec![SWITCHED_TAG.to_string(); lemma.len()];
    Ok(Some(ParallelExample {
        id: ex.id,
        src_tokens: splice(&ex.src_tokens, c.src_span, lemma.iter().cloned()),
        tgt_tokens: splice(&ex.tgt_tokens, c.tgt_span, tgt_words.clone()),
        src_pos: splice_opt(&ex.src_pos, c.src_span, src_tags),
        tgt_pos,
        tgt_lemmas: splice_opt(&ex.tgt_lemmas, c.tgt_span, tgt_words),
    }))
}

/// Turns `lemma <TAG>` pairs into surface forms. Tags the lexicon cannot
/// resolve are dropped and the lemma kept.
pub fn apply_morph_postprocess<S: AsRef<str>>(tokens: &[S], lex: &InflectionLexicon) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let tok = tok.as_ref();
        let Some(tag) = parse_tag_token(tok) else {
            out.push(tok.to_string());
            continue;
        };
        let pos = tag_pos(tag).expect("form tags have a class");
        if let Some(prev) = out.last_mut() {
            if let Some(surface) = lex.lookup(prev, pos, tag) {
                *prev = surface.to_string();
            }
        }
    }
    out
}

/// Replaces every placeholder token by `fill`.
pub fn fill_placeholders<S: AsRef<str>>(tokens: &[S], fill: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + fill.len());
    for t in tokens {
        let t = t.as_ref();
        if t == specials::NOUN_STR || t == specials::VERB_STR {
            out.extend(fill.iter().cloned());
        } else {
            out.push(t.to_string());
        }
    }
    out
}
