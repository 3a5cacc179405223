//! Numeric backbone: dense tensors, reverse-mode differentiation, transformer
//! layers, Adam and the warmup schedule, and the checkpoint container.

mod array;
pub mod checkpoint;
mod graph;
pub mod nn;
pub mod optim;
mod params;
mod scalar;

pub use array::Tensor;
pub use checkpoint::Checkpoint;
pub use graph::{AttnShape, Backward, Graph, ParamGrads, Var};
pub use nn::{Ctx, SeqBatch, TransformerConfig};
pub use optim::{adam_step, noam_lr, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
