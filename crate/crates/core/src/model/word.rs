//! Word-level encoder-decoder over shared subword pieces.

use rand::Rng;

use crate::data::specials::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::tensor::nn::{embed_sequence, Decoder, Encoder, Linear, Memory};
use crate::tensor::{Ctx, Graph, ParamId, ParamStore, Scalar, SeqBatch, Tensor, TransformerConfig, Var};

pub const WORD_PREFIX: &str = "word.";

/// Uniform table with standard deviation `d^-1/2`, so that after the
/// `sqrt(d)` input scaling embeddings have unit variance.
pub(crate) fn add_embedding<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    rows: usize,
    d: usize,
    rng: &mut impl Rng,
) -> Result<ParamId> {
    let a = (3.0 / d as f64).sqrt();
    store.add(name, Tensor::from_fn(&[rows, d], |_| T::from_f64_lossy(rng.gen_range(-a..a))))
}

#[derive(Clone, Debug)]
pub struct WordModel {
    pub cfg: TransformerConfig,
    pub vocab_size: usize,
    /// Shared by source, target and the add-on's context encoder.
    pub embed: ParamId,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub out: Linear,
}

/// Source and target piece ids of a batch; EOS/BOS are added internally.
#[derive(Clone, Debug, Default)]
pub struct WordBatch {
    pub src: Vec<Vec<usize>>,
    pub tgt: Vec<Vec<usize>>,
}

impl WordBatch {
    pub fn target_tokens(&self) -> usize {
        self.tgt.iter().map(|t| t.len() + 1).sum()
    }
}

pub(crate) fn with_eos(ids: &[usize]) -> Vec<usize> {
    let mut v = ids.to_vec();
    v.push(EOS);
    v
}

/// Encoder output kept outside any graph, reused across decoding steps.
#[derive(Clone, Debug)]
pub struct Encoded<T> {
    pub states: Tensor<T>,
    pub batch: usize,
    pub len: usize,
    pub valid: Vec<bool>,
}

impl<T: Scalar> Encoded<T> {
    /// Rows of sentence `b`, repeated `times`.
    pub fn repeat(&self, b: usize, times: usize) -> Encoded<T> {
        let d = self.states.cols();
        let rows = &self.states.data()[b * self.len * d..(b + 1) * self.len * d];
        let valid = &self.valid[b * self.len..(b + 1) * self.len];
        let mut data = Vec::with_capacity(times * rows.len());
        let mut v = Vec::with_capacity(times * valid.len());
        for _ in 0..times {
            data.extend_from_slice(rows);
            v.extend_from_slice(valid);
        }
        Encoded {
            states: Tensor::new(vec![times * self.len, d], data).expect("repeat shape"),
            batch: times,
            len: self.len,
            valid: v,
        }
    }
}

impl WordModel {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: TransformerConfig,
        vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if vocab_size <= EOS {
            return Err(Error::invalid("vocabulary too small"));
        }
        let d = cfg.d_model;
        Ok(Self {
            cfg,
            vocab_size,
            embed: add_embedding(store, "word.embed", vocab_size, d, rng)?,
            encoder: Encoder::new(store, "word.enc", &cfg, rng)?,
            decoder: Decoder::new(store, "word.dec", &cfg, rng)?,
            out: Linear::new(store, "word.out", d, vocab_size, rng)?,
        })
    }

    /// Encodes source sequences (EOS appended here).
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        src: &[Vec<usize>],
    ) -> Result<(Var, SeqBatch)> {
        let seqs: Vec<Vec<usize>> = src.iter().map(|s| with_eos(s)).collect();
        let batch = SeqBatch::from_seqs(&seqs, PAD);
        let x = embed_sequence(g, ctx, self.embed, &batch, self.cfg.max_positions)?;
        let h = self
            .encoder
            .forward(g, ctx, x, batch.batch, batch.len, &batch.valid)?;
        Ok((h, batch))
    }

    /// Encoder states as a detached tensor.
    pub fn encode_detached<T: Scalar>(&self, store: &ParamStore<T>, src: &[Vec<usize>]) -> Result<Encoded<T>> {
        let mut g = Graph::inference(store);
        let (h, batch) = self.encode(&mut g, &mut Ctx::eval(), src)?;
        Ok(Encoded {
            states: g.value(h).clone(),
            batch: batch.batch,
            len: batch.len,
            valid: batch.valid,
        })
    }

    /// Logits `[batch * len, vocab]` for decoder inputs `inputs` (already
    /// starting with BOS) against `memory`.
    pub fn decode_logits<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        inputs: &SeqBatch,
        memory: &Memory<'_>,
    ) -> Result<Var> {
        let y = embed_sequence(g, ctx, self.embed, inputs, self.cfg.max_positions)?;
        let h = self
            .decoder
            .forward(g, ctx, y, inputs.batch, inputs.len, &inputs.valid, memory)?;
        self.out.forward(g, h)
    }

    /// Mean token cross-entropy of the batch under teacher forcing.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, ctx: &mut Ctx<'_>, batch: &WordBatch) -> Result<Var> {
        if batch.src.is_empty() || batch.src.len() != batch.tgt.len() {
            return Err(Error::invalid("word batch needs matching, non-empty src and tgt"));
        }
        let (mem, src) = self.encode(g, ctx, &batch.src)?;
        let inputs: Vec<Vec<usize>> = batch
            .tgt
            .iter()
            .map(|t| std::iter::once(BOS).chain(t.iter().copied()).collect())
            .collect();
        let inputs = SeqBatch::from_seqs(&inputs, PAD);
        let memory = Memory {
            states: mem,
            len: src.len,
            valid: &src.valid,
        };
        let logits = self.decode_logits(g, ctx, &inputs, &memory)?;
        let targets = teacher_targets(&batch.tgt, inputs.len);
        g.cross_entropy(logits, &targets)
    }

    /// Teacher-forced argmax predictions per sentence (length `tgt + 1`).
    pub fn teacher_forced_argmax<T: Scalar>(&self, store: &ParamStore<T>, batch: &WordBatch) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::inference(store);
        let mut ctx = Ctx::eval();
        let (mem, src) = self.encode(&mut g, &mut ctx, &batch.src)?;
        let inputs: Vec<Vec<usize>> = batch
            .tgt
            .iter()
            .map(|t| std::iter::once(BOS).chain(t.iter().copied()).collect())
            .collect();
        let inputs = SeqBatch::from_seqs(&inputs, PAD);
        let memory = Memory {
            states: mem,
            len: src.len,
            valid: &src.valid,
        };
        let logits = self.decode_logits(&mut g, &mut ctx, &inputs, &memory)?;
        let lt = g.value(logits);
        Ok(batch
            .tgt
            .iter()
            .enumerate()
            .map(|(b, t)| {
                (0..=t.len())
                    .map(|i| argmax(lt.row(b * inputs.len + i)))
                    .collect()
            })
            .collect())
    }

    /// Log-probabilities of the next piece after each prefix; every prefix
    /// starts with BOS and all have the same length.
    pub fn next_log_probs<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        enc: &Encoded<T>,
        prefixes: &[Vec<usize>],
    ) -> Result<Vec<Vec<f64>>> {
        if prefixes.len() != enc.batch {
            return Err(Error::invalid("one prefix per encoded sentence expected"));
        }
        let mut g = Graph::inference(store);
        let states = g.constant(enc.states.clone());
        let memory = Memory {
            states,
            len: enc.len,
            valid: &enc.valid,
        };
        let inputs = SeqBatch::from_seqs(prefixes, PAD);
        let logits = self.decode_logits(&mut g, &mut Ctx::eval(), &inputs, &memory)?;
        let lt = g.value(logits);
        Ok((0..prefixes.len())
            .map(|b| log_softmax(lt.row(b * inputs.len + prefixes[b].len() - 1)))
            .collect())
    }
}

/// Targets for decoder inputs of width `len`: the target pieces then EOS.
pub(crate) fn teacher_targets(tgt: &[Vec<usize>], len: usize) -> Vec<Option<usize>> {
    let mut targets = Vec::with_capacity(tgt.len() * len);
    for t in tgt {
        for i in 0..len {
            targets.push(match i.cmp(&t.len()) {
                std::cmp::Ordering::Less => Some(t[i]),
                std::cmp::Ordering::Equal => Some(EOS),
                std::cmp::Ordering::Greater => None,
            });
        }
    }
    targets
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let xs: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    xs.into_iter().map(|x| x - z).collect()
}
