//! Turning corpora and manifests into id sequences.

use std::collections::HashMap;

use super::addon::AddonExample;
use crate::augment::{render_placeholder, ConstraintAnnotation};
use crate::data::{CharVocab, ParallelExample, SubwordVocab};
use crate::error::{Error, Result};

/// Characters of every target token, plus the space joining multi-word terms.
pub fn char_vocab_for(corpus: &[ParallelExample]) -> CharVocab {
    let words = corpus.iter().flat_map(|ex| ex.tgt_tokens.iter().map(String::as_str));
    CharVocab::build(words.chain([" "]))
}

/// Piece ids of both sides.
pub fn encode_pairs(vocab: &SubwordVocab, corpus: &[ParallelExample]) -> Vec<(Vec<usize>, Vec<usize>)> {
    corpus
        .iter()
        .map(|ex| (vocab.encode(&ex.src_tokens), vocab.encode(&ex.tgt_tokens)))
        .collect()
}

/// One add-on example per manifest entry: the reference target with the
/// constrained span replaced by its placeholder, the lemma and the reference
/// surface. `corpus` is looked up by example id.
pub fn addon_examples(
    corpus: &[ParallelExample],
    manifest: &[ConstraintAnnotation],
    vocab: &SubwordVocab,
    chars: &CharVocab,
) -> Result<Vec<AddonExample>> {
    let by_id: HashMap<usize, &ParallelExample> = corpus.iter().map(|ex| (ex.id, ex)).collect();
    let mut unknown_chars = 0;
    let mut out = Vec::with_capacity(manifest.len());
    for c in manifest {
        let ex = by_id
            .get(&c.pair_id)
            .ok_or_else(|| Error::invalid(format!("manifest refers to missing pair {}", c.pair_id)))?;
        let rendered = render_placeholder(ex, c)?;
        let (lemma, u1) = chars.encode(&c.lemma().join(" "));
        let (surface, u2) = chars.encode(&c.reference_surface.join(" "));
        unknown_chars += u1 + u2;
        out.push(AddonExample {
            context: vocab.encode(&rendered.tgt_tokens),
            lemma,
            surface,
        });
    }
    if unknown_chars > 0 {
        log::warn!("{unknown_chars} characters outside the character vocabulary mapped to UNK");
    }
    Ok(out)
}
