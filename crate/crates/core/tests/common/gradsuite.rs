//! Randomised gradient cases for every primitive and for whole transformer blocks.

#![allow(dead_code)]

use phtrans_core::tensor::nn::{embed_sequence, Decoder, Encoder, Memory};
use phtrans_core::tensor::{
    AttnShape, Ctx, Graph, ParamId, ParamStore, Scalar, SeqBatch, Tensor, TransformerConfig, Var,
};
use phtrans_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_leaves_at, check_params_at, project, rand_tensor, LeafLoss, ParamLoss};

#[derive(Clone, Copy)]
pub enum Prim {
    MatMul,
    MatMulT,
    Add,
    Mul,
    AddBias,
    Scale,
    Relu,
    LayerNorm,
    Softmax,
    Embedding,
    Concat,
    Gather,
    Attention,
    AttentionCausal,
    CrossEntropy,
    Sum,
    MaskMul,
}

pub const ALL_PRIMS: [Prim; 17] = [
    Prim::MatMul,
    Prim::MatMulT,
    Prim::Add,
    Prim::Mul,
    Prim::AddBias,
    Prim::Scale,
    Prim::Relu,
    Prim::LayerNorm,
    Prim::Softmax,
    Prim::Embedding,
    Prim::Concat,
    Prim::Gather,
    Prim::Attention,
    Prim::AttentionCausal,
    Prim::CrossEntropy,
    Prim::Sum,
    Prim::MaskMul,
];

impl Prim {
    pub fn name(self) -> &'static str {
        match self {
            Prim::MatMul => "matmul",
            Prim::MatMulT => "matmul_transposed",
            Prim::Add => "add",
            Prim::Mul => "mul",
            Prim::AddBias => "add_bias",
            Prim::Scale => "scale",
            Prim::Relu => "relu",
            Prim::LayerNorm => "layer_norm",
            Prim::Softmax => "softmax",
            Prim::Embedding => "embedding_lookup",
            Prim::Concat => "concat",
            Prim::Gather => "gather_rows",
            Prim::Attention => "attention",
            Prim::AttentionCausal => "attention_causal",
            Prim::CrossEntropy => "cross_entropy",
            Prim::Sum => "sum",
            Prim::MaskMul => "mask_mul",
        }
    }
}

/// One randomised instance of a primitive.
pub struct PrimCase {
    prim: Prim,
    inputs: Vec<Tensor<f64>>,
    ints: Vec<usize>,
    flags: Vec<bool>,
    opt_targets: Vec<Option<usize>>,
    dims: [usize; 4],
    seed: u64,
}

impl PrimCase {
    pub fn random(prim: Prim, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..5);
        let k = rng.gen_range(1..6);
        let n = rng.gen_range(1..5);
        let mut ints = Vec::new();
        let mut flags = Vec::new();
        let mut opt_targets = Vec::new();
        let mut dims = [m, k, n, 0];
        let inputs = match prim {
            Prim::MatMul => vec![rand_tensor(&mut rng, &[m, k], 1.0), rand_tensor(&mut rng, &[k, n], 1.0)],
            Prim::MatMulT => vec![rand_tensor(&mut rng, &[m, k], 1.0), rand_tensor(&mut rng, &[n, k], 1.0)],
            Prim::Add | Prim::Mul => vec![rand_tensor(&mut rng, &[m, k], 1.0), rand_tensor(&mut rng, &[m, k], 1.0)],
            Prim::AddBias => vec![rand_tensor(&mut rng, &[m, k], 1.0), rand_tensor(&mut rng, &[k], 1.0)],
            Prim::Scale | Prim::Sum | Prim::Softmax => vec![rand_tensor(&mut rng, &[m, k], 2.0)],
            Prim::Relu => {
                // keep clear of the kink at zero
                let t = Tensor::from_fn(&[m, k], |_| {
                    let v: f64 = rng.gen_range(0.05..1.0);
                    let v = if rng.gen_bool(0.5) { v } else { -v };
                    (v as f32) as f64
                });
                vec![t]
            }
            Prim::LayerNorm => {
                let cols = k + 1;
                dims[1] = cols;
                vec![
                    rand_tensor(&mut rng, &[m, cols], 2.0),
                    rand_tensor(&mut rng, &[cols], 1.5),
                    rand_tensor(&mut rng, &[cols], 1.0),
                ]
            }
            Prim::Embedding => {
                let count = rng.gen_range(1..7);
                ints = (0..count).map(|_| rng.gen_range(0..m + 1)).collect();
                vec![rand_tensor(&mut rng, &[m + 1, k], 1.0)]
            }
            Prim::Concat => vec![
                rand_tensor(&mut rng, &[m, k], 1.0),
                rand_tensor(&mut rng, &[n, k], 1.0),
                rand_tensor(&mut rng, &[1, k], 1.0),
            ],
            Prim::Gather => {
                let count = rng.gen_range(1..7);
                ints = (0..count).map(|_| rng.gen_range(0..m)).collect();
                vec![rand_tensor(&mut rng, &[m, k], 1.0)]
            }
            Prim::Attention | Prim::AttentionCausal => {
                let heads = rng.gen_range(1..3);
                let dh = rng.gen_range(1..4);
                let d = heads * dh;
                let batch = rng.gen_range(1..3);
                let q_len = rng.gen_range(1..4);
                let k_len = if matches!(prim, Prim::AttentionCausal) {
                    q_len
                } else {
                    rng.gen_range(1..4)
                };
                dims = [batch, q_len, k_len, heads];
                for b in 0..batch {
                    for j in 0..k_len {
                        // first key of each sequence always visible
                        flags.push(j == 0 || rng.gen_bool(0.7));
                        let _ = b;
                    }
                }
                vec![
                    rand_tensor(&mut rng, &[batch * q_len, d], 1.0),
                    rand_tensor(&mut rng, &[batch * k_len, d], 1.0),
                    rand_tensor(&mut rng, &[batch * k_len, d], 1.0),
                ]
            }
            Prim::CrossEntropy => {
                opt_targets = (0..m)
                    .map(|i| {
                        if i > 0 && rng.gen_bool(0.25) {
                            None
                        } else {
                            Some(rng.gen_range(0..k))
                        }
                    })
                    .collect();
                vec![rand_tensor(&mut rng, &[m, k], 2.0)]
            }
            Prim::MaskMul => {
                flags = (0..m * k).map(|_| rng.gen_bool(0.8)).collect();
                vec![rand_tensor(&mut rng, &[m, k], 1.0)]
            }
        };
        Self {
            prim,
            inputs,
            ints,
            flags,
            opt_targets,
            dims,
            seed,
        }
    }

    pub fn max_rel_error(&self) -> Result<f64> {
        self.max_rel_error_at::<f32>()
    }

    pub fn max_rel_error_at<T: Scalar>(&self) -> Result<f64> {
        check_leaves_at::<T>(self, &self.inputs)
    }
}

impl LeafLoss for PrimCase {
    fn build<T: Scalar>(&self, g: &mut Graph<'_, T>, x: &[Var]) -> Result<Var> {
        let out = match self.prim {
            Prim::MatMul => g.matmul(x[0], x[1])?,
            Prim::MatMulT => g.matmul_opt(x[0], x[1], true)?,
            Prim::Add => g.add(x[0], x[1])?,
            Prim::Mul => g.mul(x[0], x[1])?,
            Prim::AddBias => g.add_bias(x[0], x[1])?,
            Prim::Scale => g.scale(x[0], T::from_f64_lossy(-1.75)),
            Prim::Relu => g.relu(x[0]),
            Prim::LayerNorm => g.layer_norm(x[0], x[1], x[2], T::from_f64_lossy(1e-6))?,
            Prim::Softmax => g.softmax(x[0]),
            Prim::Embedding => g.embedding(x[0], &self.ints)?,
            Prim::Concat => g.concat(x)?,
            Prim::Gather => g.gather_rows(x[0], &self.ints)?,
            Prim::Attention | Prim::AttentionCausal => {
                let [batch, q_len, k_len, heads] = self.dims;
                let shape = AttnShape {
                    batch,
                    q_len,
                    k_len,
                    heads,
                };
                let causal = matches!(self.prim, Prim::AttentionCausal);
                g.attention(x[0], x[1], x[2], shape, &self.flags, causal)?
            }
            Prim::CrossEntropy => return g.cross_entropy(x[0], &self.opt_targets),
            Prim::Sum => return Ok(g.sum(x[0])),
            Prim::MaskMul => {
                let mask = self
                    .flags
                    .iter()
                    .map(|k| if *k { T::from_f64_lossy(1.25) } else { T::zero() })
                    .collect();
                g.mask_mul(x[0], mask)?
            }
        };
        project(g, out, self.seed ^ 0x9e37)
    }
}

/// Which transformer block a [`BlockCase`] exercises.
#[derive(Clone, Copy, Debug)]
pub enum Block {
    Encoder,
    Decoder,
}

/// Embedding + positions + one full encoder or decoder block (with final norm)
/// + output projection + cross-entropy.
pub struct BlockCase {
    pub kind: Block,
    pub store: ParamStore<f32>,
    cfg: TransformerConfig,
    embed: ParamId,
    encoder: Encoder,
    decoder: Decoder,
    out: ParamId,
    src: SeqBatch,
    tgt: SeqBatch,
    targets: Vec<Option<usize>>,
}

impl BlockCase {
    pub fn random(kind: Block, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = rng.gen_range(1..3);
        let cfg = TransformerConfig {
            d_model: heads * rng.gen_range(4..7),
            n_heads: heads,
            n_layers: 1,
            d_ff: rng.gen_range(4..10),
            dropout: 0.0,
            max_positions: 16,
        };
        let vocab = rng.gen_range(4..8);
        let mut store = ParamStore::new();
        let embed = store.add_glorot("embed", vocab, cfg.d_model, &mut rng)?;
        let encoder = Encoder::new(&mut store, "enc", &cfg, &mut rng)?;
        let decoder = Decoder::new(&mut store, "dec", &cfg, &mut rng)?;
        let out = store.add_glorot("out", cfg.d_model, vocab, &mut rng)?;
        // perturb norms away from the identity so their gradients are generic
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.name(id).contains(".ln") {
                for v in store.get_mut(id).data_mut() {
                    *v += rng.gen_range(-0.3f32..0.3);
                }
            }
        }
        let batch = rng.gen_range(1..3);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<usize>> {
            (0..batch)
                .map(|_| {
                    let len = rng.gen_range(1..4);
                    (0..len).map(|_| rng.gen_range(1..vocab)).collect()
                })
                .collect()
        };
        let src = SeqBatch::from_seqs(&mk(&mut rng), 0);
        let tgt_seqs = mk(&mut rng);
        let tgt = SeqBatch::from_seqs(&tgt_seqs, 0);
        let targets = tgt
            .valid
            .iter()
            .map(|v| v.then(|| rng.gen_range(0..vocab)))
            .collect();
        Ok(Self {
            kind,
            store,
            cfg,
            embed,
            encoder,
            decoder,
            out,
            src,
            tgt,
            targets,
        })
    }

    pub fn max_rel_error(&self, rng: &mut impl Rng) -> Result<f64> {
        self.max_rel_error_at::<f32>(rng)
    }

    pub fn max_rel_error_at<T: Scalar>(&self, rng: &mut impl Rng) -> Result<f64> {
        let mut store = self.store.clone();
        match self.kind {
            Block::Encoder => store.set_trainable_prefix("dec", false),
            Block::Decoder => {}
        }
        check_params_at::<T>(self, &store, 6, rng)
    }
}

impl ParamLoss for BlockCase {
    fn build<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let mut ctx = Ctx::eval();
        let x = embed_sequence(g, &mut ctx, self.embed, &self.src, self.cfg.max_positions)?;
        let mem = self
            .encoder
            .forward(g, &mut ctx, x, self.src.batch, self.src.len, &self.src.valid)?;
        let states = match self.kind {
            Block::Encoder => {
                let out = g.param(self.out);
                let logits = g.matmul(mem, out)?;
                let targets: Vec<Option<usize>> = self
                    .src
                    .valid
                    .iter()
                    .zip(&self.src.ids)
                    .map(|(v, id)| v.then_some(*id))
                    .collect();
                return g.cross_entropy(logits, &targets);
            }
            Block::Decoder => {
                let y = embed_sequence(g, &mut ctx, self.embed, &self.tgt, self.cfg.max_positions)?;
                let memory = Memory {
                    states: mem,
                    len: self.src.len,
                    valid: &self.src.valid,
                };
                self.decoder
                    .forward(g, &mut ctx, y, self.tgt.batch, self.tgt.len, &self.tgt.valid, &memory)?
            }
        };
        let out = g.param(self.out);
        let logits = g.matmul(states, out)?;
        g.cross_entropy(logits, &self.targets)
    }
}

/// Runs every primitive over `shapes` random instances and both block kinds
/// over `shapes` instances. Returns `(case, worst relative error)`.
pub fn run_suite(shapes: u64) -> Result<Vec<(String, f64)>> {
    run_suite_at::<f32>(shapes)
}

pub fn run_suite_at<T: Scalar>(shapes: u64) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for prim in ALL_PRIMS {
        let mut worst = 0.0f64;
        for s in 0..shapes {
            worst = worst.max(PrimCase::random(prim, 1000 + s).max_rel_error_at::<T>()?);
        }
        out.push((prim.name().to_string(), worst));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in [Block::Encoder, Block::Decoder] {
        let mut worst = 0.0f64;
        for s in 0..shapes {
            let case = BlockCase::random(kind, 5000 + s)?;
            worst = worst.max(case.max_rel_error_at::<T>(&mut rng)?);
        }
        out.push((format!("{kind:?}_block").to_lowercase(), worst));
    }
    Ok(out)
}
