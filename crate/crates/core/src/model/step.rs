//! Single optimisation steps for the word model and the add-on.

use serde::{Deserialize, Serialize};

use super::addon::{placeholder_index, AddonExample};
use super::bundle::ModelBundle;
use super::word::WordBatch;
use crate::error::{Error, Result};
use crate::tensor::{adam_step, noam_lr, AdamConfig, AdamState, Ctx, Graph};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub warmup: u64,
    /// Multiplier on the warmup schedule.
    pub lr_scale: f64,
    #[serde(default)]
    pub adam: AdamConfig,
}

/// Adam with the warmup schedule, tracking its own step count.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimConfig,
    pub d_model: usize,
    pub state: AdamState<f32>,
}

impl Optimizer {
    pub fn new(config: OptimConfig, d_model: usize, num_params: usize) -> Self {
        Self {
            config,
            d_model,
            state: AdamState::new(config.adam, num_params),
        }
    }

    /// Learning rate the next step will use.
    pub fn next_lr(&self) -> Result<f64> {
        Ok(self.config.lr_scale * noam_lr(self.state.step + 1, self.d_model, self.config.warmup)?)
    }
}

/// Teacher-forced update of the word model; returns the batch loss.
pub fn train_step_word(
    bundle: &mut ModelBundle,
    batch: &WordBatch,
    opt: &mut Optimizer,
    ctx: &mut Ctx<'_>,
) -> Result<f64> {
    let (loss, grads) = {
        let mut g = Graph::with_params(&bundle.store);
        let l = bundle.word.loss(&mut g, ctx, batch)?;
        let back = g.backward(l)?;
        (g.value(l).item() as f64, g.param_grads(&back))
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("word loss {loss} at step {}", opt.state.step + 1)));
    }
    let lr = opt.next_lr()?;
    adam_step(&mut bundle.store, &grads, &mut opt.state, lr)?;
    Ok(loss)
}

/// Character cross-entropy update of the add-on. Word-model parameters are
/// frozen and receive no gradient.
pub fn train_step_addon(
    bundle: &mut ModelBundle,
    batch: &[AddonExample],
    opt: &mut Optimizer,
    ctx: &mut Ctx<'_>,
) -> Result<f64> {
    for e in batch {
        placeholder_index(&e.context)?;
    }
    let addon = bundle
        .addon
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no inflection add-on"))?;
    let (loss, grads) = {
        let mut g = Graph::with_params(&bundle.store);
        let l = addon.loss(&mut g, ctx, &bundle.word, batch)?;
        let back = g.backward(l)?;
        (g.value(l).item() as f64, g.param_grads(&back))
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("add-on loss {loss} at step {}", opt.state.step + 1)));
    }
    let lr = opt.next_lr()?;
    adam_step(&mut bundle.store, &grads, &mut opt.state, lr)?;
    Ok(loss)
}

/// Add-on loss without an update (validation).
pub fn addon_loss(bundle: &ModelBundle, batch: &[AddonExample]) -> Result<f64> {
    let addon = bundle
        .addon
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no inflection add-on"))?;
    let mut g = Graph::inference(&bundle.store);
    let l = addon.loss(&mut g, &mut Ctx::eval(), &bundle.word, batch)?;
    Ok(g.value(l).item() as f64)
}

/// Word-model loss without an update.
pub fn word_loss(bundle: &ModelBundle, batch: &WordBatch) -> Result<f64> {
    let mut g = Graph::inference(&bundle.store);
    let l = bundle.word.loss(&mut g, &mut Ctx::eval(), batch)?;
    Ok(g.value(l).item() as f64)
}
