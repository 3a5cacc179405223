//! Transformer building blocks on top of [`Graph`].
//!
//! Layers only hold [`ParamId`]s; the tensors live in a [`ParamStore`] so that
//! a whole model can be checkpointed or frozen by name prefix.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{AttnShape, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_positions: usize,
}

impl TransformerConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            dropout: 0.1,
            max_positions: 256,
        }
    }

    /// Transformer-base dimensions.
    pub fn base() -> Self {
        Self {
            d_model: 512,
            n_heads: 8,
            n_layers: 6,
            d_ff: 2048,
            dropout: 0.1,
            max_positions: 512,
        }
    }

    /// Two-layer stack with `d_ff = 2 * d_model`, used by the inflection add-on.
    pub fn addon_for(word: &TransformerConfig) -> Self {
        Self {
            n_layers: 2,
            d_ff: 2 * word.d_model,
            ..*word
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_model,
            self.n_heads,
            self.n_layers,
            self.d_ff,
            self.max_positions,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid(format!("transformer dims must be >= 1: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Training-time randomness. Without an rng, dropout is disabled.
pub struct Ctx<'r> {
    pub dropout: f64,
    pub rng: Option<&'r mut dyn RngCore>,
}

impl Ctx<'_> {
    pub fn eval() -> Self {
        Ctx {
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn dropout<T: Scalar>(&mut self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let p = self.dropout;
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let n = g.value(x).len();
        let mask = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        g.mask_mul(x, mask)
    }
}

/// Padded batch of sequences, row-major `[batch, len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<usize>,
    pub valid: Vec<bool>,
}

impl SeqBatch {
    pub fn from_seqs(seqs: &[Vec<usize>], pad: usize) -> Self {
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut valid = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            for i in 0..len {
                ids.push(s.get(i).copied().unwrap_or(pad));
                valid.push(i < s.len());
            }
        }
        Self {
            batch: seqs.len(),
            len,
            ids,
            valid,
        }
    }
}

/// Sinusoidal position table `[n, d]`.
pub fn sinusoidal_positions<T: Scalar>(n: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[n, d], |idx| {
        let pos = (idx / d) as f64;
        let c = idx % d;
        let i = (c / 2) as f64;
        let angle = pos / 10000f64.powf(2.0 * i / d as f64);
        T::from_f64_lossy(if c.is_multiple_of(2) { angle.sin() } else { angle.cos() })
    })
}

/// Tiles the first `len` positions over `batch` sequences.
pub fn tiled_positions<T: Scalar>(batch: usize, len: usize, d: usize) -> Tensor<T> {
    let pe = sinusoidal_positions::<T>(len, d);
    let mut data = Vec::with_capacity(batch * len * d);
    for _ in 0..batch {
        data.extend_from_slice(pe.data());
    }
    Tensor::new(vec![batch * len, d], data).expect("tiled shape")
}

/// `embedding * sqrt(d) + positions`, followed by dropout.
pub fn embed_sequence<T: Scalar>(
    g: &mut Graph<'_, T>,
    ctx: &mut Ctx<'_>,
    table: ParamId,
    seqs: &SeqBatch,
    max_positions: usize,
) -> Result<Var> {
    if seqs.len > max_positions {
        return Err(Error::invalid(format!(
            "sequence length {} exceeds max positions {}",
            seqs.len, max_positions
        )));
    }
    let t = g.param(table);
    let d = g.value(t).cols();
    let e = g.embedding(t, &seqs.ids)?;
    let e = g.scale(e, T::from_usize(d).expect("d").sqrt());
    let pe = g.constant(tiled_positions(seqs.batch, seqs.len, d));
    let x = g.add(e, pe)?;
    ctx.dropout(g, x)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng)?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Self { w, b })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[d], T::one()))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[d]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, T::from_f64_lossy(LN_EPS))
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d, d, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d, d, rng)?,
            o: Linear::new(store, &format!("{name}.o"), d, d, rng)?,
            heads: cfg.n_heads,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        queries: Var,
        keys: Var,
        batch: usize,
        q_len: usize,
        k_len: usize,
        key_valid: &[bool],
        causal: bool,
    ) -> Result<Var> {
        let q = self.q.forward(g, queries)?;
        let k = self.k.forward(g, keys)?;
        let v = self.v.forward(g, keys)?;
        let shape = AttnShape {
            batch,
            q_len,
            k_len,
            heads: self.heads,
        };
        let a = g.attention(q, k, v, shape, key_valid, causal)?;
        self.o.forward(g, a)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            inner: Linear::new(store, &format!("{name}.inner"), cfg.d_model, cfg.d_ff, rng)?,
            outer: Linear::new(store, &format!("{name}.outer"), cfg.d_ff, cfg.d_model, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h);
        self.outer.forward(g, h)
    }
}

/// Pre-norm encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

/// Stack of encoder layers with a final layer norm.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub ln_final: LayerNorm,
}

impl Encoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("{name}.{l}");
            layers.push(EncoderLayer {
                ln_attn: LayerNorm::new(store, &format!("{p}.ln_attn"), cfg.d_model)?,
                attn: MultiHeadAttention::new(store, &format!("{p}.attn"), cfg, rng)?,
                ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), cfg.d_model)?,
                ff: FeedForward::new(store, &format!("{p}.ff"), cfg, rng)?,
            });
        }
        Ok(Self {
            layers,
            ln_final: LayerNorm::new(store, &format!("{name}.ln_final"), cfg.d_model)?,
        })
    }

    /// `x` is `[batch * len, d]`; returns contextual states of the same shape.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        x: Var,
        batch: usize,
        len: usize,
        valid: &[bool],
    ) -> Result<Var> {
        let mut x = x;
        for layer in &self.layers {
            let h = layer.ln_attn.forward(g, x)?;
            let a = layer.attn.forward(g, h, h, batch, len, len, valid, false)?;
            let a = ctx.dropout(g, a)?;
            x = g.add(x, a)?;
            let h = layer.ln_ff.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            let f = ctx.dropout(g, f)?;
            x = g.add(x, f)?;
        }
        self.ln_final.forward(g, x)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

/// Memory the decoder attends to.
pub struct Memory<'m> {
    pub states: Var,
    pub len: usize,
    pub valid: &'m [bool],
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub ln_final: LayerNorm,
}

impl Decoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("{name}.{l}");
            layers.push(DecoderLayer {
                ln_self: LayerNorm::new(store, &format!("{p}.ln_self"), cfg.d_model)?,
                self_attn: MultiHeadAttention::new(store, &format!("{p}.self_attn"), cfg, rng)?,
                ln_cross: LayerNorm::new(store, &format!("{p}.ln_cross"), cfg.d_model)?,
                cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross_attn"), cfg, rng)?,
                ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), cfg.d_model)?,
                ff: FeedForward::new(store, &format!("{p}.ff"), cfg, rng)?,
            });
        }
        Ok(Self {
            layers,
            ln_final: LayerNorm::new(store, &format!("{name}.ln_final"), cfg.d_model)?,
        })
    }

    /// Causal decoder over `x` (`[batch * len, d]`) attending to `memory`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut Ctx<'_>,
        x: Var,
        batch: usize,
        len: usize,
        valid: &[bool],
        memory: &Memory<'_>,
    ) -> Result<Var> {
        let mut x = x;
        for layer in &self.layers {
            let h = layer.ln_self.forward(g, x)?;
            let a = layer
                .self_attn
                .forward(g, h, h, batch, len, len, valid, true)?;
            let a = ctx.dropout(g, a)?;
            x = g.add(x, a)?;
            let h = layer.ln_cross.forward(g, x)?;
            let c = layer.cross_attn.forward(
                g,
                h,
                memory.states,
                batch,
                len,
                memory.len,
                memory.valid,
                false,
            )?;
            let c = ctx.dropout(g, c)?;
            x = g.add(x, c)?;
            let h = layer.ln_ff.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            let f = ctx.dropout(g, f)?;
            x = g.add(x, f)?;
        }
        self.ln_final.forward(g, x)
    }
}
