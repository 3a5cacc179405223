//! Character-level inflection of a lemma conditioned on the placeholder's
//! context in the generated target sentence.
//!
//! The context encoder reads target pieces through the word model's
//! (frozen) embedding table. Its state at the placeholder, `h_p`, is
//! prepended to the positionally encoded lemma characters to form the memory
//! of a small character decoder.

use rand::Rng;

use super::word::{add_embedding, argmax, teacher_targets, WordModel};
use crate::data::specials::{BOS, EOS, NOUN, PAD, VERB};
use crate::error::{Error, Result};
use crate::tensor::nn::{embed_sequence, Decoder, Encoder, Linear, Memory};
use crate::tensor::{Ctx, Graph, ParamId, ParamStore, Scalar, SeqBatch, Tensor, TransformerConfig, Var};

pub const ADDON_PREFIX: &str = "addon.";

/// Extra output characters allowed beyond the lemma length.
pub const EXTRA_CHARS: usize = 8;

#[derive(Clone, Debug)]
pub struct InflectorAddon {
    pub cfg: TransformerConfig,
    pub n_chars: usize,
    pub ctx_encoder: Encoder,
    pub char_embed: ParamId,
    pub char_decoder: Decoder,
    pub char_out: Linear,
}

/// One stage-2 training example, all as ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AddonExample {
    /// Target pieces with exactly one placeholder.
    pub context: Vec<usize>,
    pub lemma: Vec<usize>,
    pub surface: Vec<usize>,
}

pub fn is_placeholder_id(id: usize) -> bool {
    id == NOUN || id == VERB
}

/// Position of the only placeholder in `context`.
pub fn placeholder_index(context: &[usize]) -> Result<usize> {
    let found: Vec<usize> = (0..context.len()).filter(|&i| is_placeholder_id(context[i])).collect();
    match found.as_slice() {
        [p] => Ok(*p),
        [] => Err(Error::invalid("context has no placeholder token")),
        _ => Err(Error::invalid(format!(
            "context has {} placeholder tokens; exactly one is supported",
            found.len()
        ))),
    }
}

/// Encoded memory of a batch: `[batch * len, d]` with padding mask.
pub struct CharMemory {
    pub states: Var,
    pub len: usize,
    pub valid: Vec<bool>,
}

impl InflectorAddon {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        word: &TransformerConfig,
        n_chars: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let cfg = TransformerConfig::addon_for(word);
        cfg.validate()?;
        if n_chars <= EOS {
            return Err(Error::invalid("character vocabulary too small"));
        }
        let d = cfg.d_model;
        Ok(Self {
            cfg,
            n_chars,
            ctx_encoder: Encoder::new(store, "addon.ctx", &cfg, rng)?,
            char_embed: add_embedding(store, "addon.char_embed", n_chars, d, rng)?,
            char_decoder: Decoder::new(store, "addon.char_dec", &cfg, rng)?,
            char_out: Linear::new(store, "addon.char_out", d, n_chars, rng)?,
        })
    }

    /// Contextual states `[batch * T, d]` of each context and the row of its
    /// placeholder.
    pub fn context_encode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        word: &WordModel,
        contexts: &[Vec<usize>],
    ) -> Result<(Var, SeqBatch, Vec<usize>)> {
        if contexts.is_empty() {
            return Err(Error::invalid("no contexts to encode"));
        }
        let batch = SeqBatch::from_seqs(contexts, PAD);
        let mut rows = Vec::with_capacity(contexts.len());
        for (b, c) in contexts.iter().enumerate() {
            rows.push(b * batch.len + placeholder_index(c)?);
        }
        let x = embed_sequence(g, ctx, word.embed, &batch, self.cfg.max_positions)?;
        let h = self
            .ctx_encoder
            .forward(g, ctx, x, batch.batch, batch.len, &batch.valid)?;
        Ok((h, batch, rows))
    }

    /// `[h_p; positional(c_1..c_L)]` per example, padded to the longest lemma.
    pub fn assemble_memory<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        h_p: Var,
        lemmas: &[Vec<usize>],
    ) -> Result<CharMemory> {
        let b = lemmas.len();
        if g.value(h_p).rows() != b {
            return Err(Error::shape(
                "assemble_memory",
                format!("{} placeholder states for {b} lemmas", g.value(h_p).rows()),
            ));
        }
        if lemmas.iter().any(Vec::is_empty) {
            return Err(Error::invalid("empty lemma"));
        }
        let chars = SeqBatch::from_seqs(lemmas, PAD);
        let e = embed_sequence(g, ctx, self.char_embed, &chars, self.cfg.max_positions)?;
        let all = g.concat(&[h_p, e])?;
        let len = chars.len + 1;
        let mut order = Vec::with_capacity(b * len);
        let mut valid = Vec::with_capacity(b * len);
        for i in 0..b {
            order.push(i);
            valid.push(true);
            for j in 0..chars.len {
                order.push(b + i * chars.len + j);
                valid.push(chars.valid[i * chars.len + j]);
            }
        }
        let states = g.gather_rows(all, &order)?;
        Ok(CharMemory { states, len, valid })
    }

    fn char_logits<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        memory: &CharMemory,
        inputs: &SeqBatch,
    ) -> Result<Var> {
        let y = embed_sequence(g, ctx, self.char_embed, inputs, self.cfg.max_positions)?;
        let mem = Memory {
            states: memory.states,
            len: memory.len,
            valid: &memory.valid,
        };
        let h = self
            .char_decoder
            .forward(g, ctx, y, inputs.batch, inputs.len, &inputs.valid, &mem)?;
        self.char_out.forward(g, h)
    }

    fn memory_of<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        word: &WordModel,
        contexts: &[Vec<usize>],
        lemmas: &[Vec<usize>],
    ) -> Result<CharMemory> {
        let (h, _, rows) = self.context_encode(g, ctx, word, contexts)?;
        let h_p = g.gather_rows(h, &rows)?;
        self.assemble_memory(g, ctx, h_p, lemmas)
    }

    /// Mean character cross-entropy of the reference surfaces.
    pub fn loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        word: &WordModel,
        batch: &[AddonExample],
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::invalid("empty add-on batch"));
        }
        let contexts: Vec<Vec<usize>> = batch.iter().map(|e| e.context.clone()).collect();
        let lemmas: Vec<Vec<usize>> = batch.iter().map(|e| e.lemma.clone()).collect();
        let memory = self.memory_of(g, ctx, word, &contexts, &lemmas)?;
        let inputs: Vec<Vec<usize>> = batch
            .iter()
            .map(|e| std::iter::once(BOS).chain(e.surface.iter().copied()).collect())
            .collect();
        let inputs = SeqBatch::from_seqs(&inputs, PAD);
        let logits = self.char_logits(g, ctx, &memory, &inputs)?;
        let surfaces: Vec<Vec<usize>> = batch.iter().map(|e| e.surface.clone()).collect();
        g.cross_entropy(logits, &teacher_targets(&surfaces, inputs.len))
    }

    /// Memory rows `[L + 1, d]` for one context and lemma.
    pub fn memory<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        word: &WordModel,
        context: &[usize],
        lemma: &[usize],
    ) -> Result<Tensor<T>> {
        let mut g = Graph::inference(store);
        let m = self.memory_of(&mut g, &mut Ctx::eval(), word, &[context.to_vec()], &[lemma.to_vec()])?;
        Ok(g.value(m.states).clone())
    }

    /// Greedy character decoding from BOS until EOS or `lemma.len() +
    /// EXTRA_CHARS` characters. Returns the characters and whether the length
    /// cap was hit.
    pub fn char_decode<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        word: &WordModel,
        context: &[usize],
        lemma: &[usize],
    ) -> Result<(Vec<usize>, bool)> {
        let memory = self.memory(store, word, context, lemma)?;
        self.char_decode_from(store, &memory, lemma.len() + EXTRA_CHARS)
    }

    /// Greedy decoding against a precomputed memory.
    pub fn char_decode_from<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        memory: &Tensor<T>,
        max_len: usize,
    ) -> Result<(Vec<usize>, bool)> {
        let mut out: Vec<usize> = Vec::new();
        let valid = vec![true; memory.rows()];
        while out.len() < max_len {
            let mut g = Graph::inference(store);
            let states = g.constant(memory.clone());
            let mem = CharMemory {
                states,
                len: memory.rows(),
                valid: valid.clone(),
            };
            let prefix: Vec<usize> = std::iter::once(BOS).chain(out.iter().copied()).collect();
            let inputs = SeqBatch::from_seqs(&[prefix], PAD);
            let logits = self.char_logits(&mut g, &mut Ctx::eval(), &mem, &inputs)?;
            let mut row: Vec<T> = g.value(logits).row(inputs.len - 1).to_vec();
            for s in [PAD, BOS] {
                row[s] = T::neg_infinity();
            }
            let c = argmax(&row);
            if c == EOS {
                return Ok((out, false));
            }
            out.push(c);
        }
        Ok((out, true))
    }
}
