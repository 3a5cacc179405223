//! Two-stage training with early stopping.
//!
//! Stage 1 trains the word model and keeps the epoch with the best
//! validation BLEU. Stage 2 freezes it, attaches a fresh inflection add-on
//! and keeps the epoch with the lowest validation character loss.
//!
//! Every epoch draws its batching order and dropout masks from an rng seeded
//! by `(seed, epoch)`, and the optimiser state is saved with the weights, so a
//! run resumed from an epoch-end state file follows the uninterrupted run
//! bit for bit.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::specials::{BOS, PAD, UNK};
use crate::data::{CharVocab, ParallelExample};
use crate::error::{Error, Result};
use crate::eval::bleu;
use crate::model::{
    addon_loss, greedy, train_step_addon, train_step_word, AddonExample, ModelBundle, OptimConfig, Optimizer,
    WordBatch,
};
use crate::tensor::{Checkpoint, Ctx, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    ValBleu,
    ValLoss,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::ValBleu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub stage: u8,
    /// Padded tokens per batch (source plus target for the word model,
    /// context plus characters for the add-on).
    pub batch_tokens: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub metric: Metric,
    pub seed: u64,
    pub optim: OptimConfig,
    /// Where epoch-end state, the best checkpoint and the log are written.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from the state file in `checkpoint_dir` when present.
    #[serde(default)]
    pub resume: bool,
}

pub const STAGE1_PATIENCE: usize = 3;
pub const STAGE2_PATIENCE: usize = 5;

impl TrainPlan {
    pub fn stage1(seed: u64, optim: OptimConfig) -> Self {
        Self {
            stage: 1,
            batch_tokens: 2000,
            max_epochs: 30,
            patience: STAGE1_PATIENCE,
            metric: Metric::ValBleu,
            seed,
            optim,
            checkpoint_dir: None,
            resume: false,
        }
    }

    pub fn stage2(seed: u64, optim: OptimConfig) -> Self {
        Self {
            stage: 2,
            patience: STAGE2_PATIENCE,
            metric: Metric::ValLoss,
            ..Self::stage1(seed, optim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.batch_tokens == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_tokens, max_epochs and patience must be at least 1".into(),
            ));
        }
        if self.optim.warmup == 0 || self.optim.lr_scale.is_nan() || self.optim.lr_scale <= 0.0 {
            return Err(Error::Config("warmup must be >= 1 and lr_scale > 0".into()));
        }
        Ok(())
    }
}

/// Outcome of the early-stopping rule after some epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub best_epoch: usize,
    pub stop: bool,
}

/// Best epoch (first occurrence of the best value; ties do not count as an
/// improvement) and whether `patience` epochs have passed since it.
pub fn early_stop(history: &[f64], higher_is_better: bool, patience: usize) -> Option<StopDecision> {
    let mut best: Option<(usize, f64)> = None;
    for (e, &v) in history.iter().enumerate() {
        let better = match best {
            None => true,
            Some((_, b)) => {
                if higher_is_better {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((e, v));
        }
    }
    let (best_epoch, _) = best?;
    Some(StopDecision {
        best_epoch,
        stop: history.len() - 1 - best_epoch >= patience,
    })
}

/// Indices grouped into batches of at most `budget` padded tokens, similar
/// lengths together, batch order shuffled.
pub fn make_batches(lengths: &[(usize, usize)], budget: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| (lengths[i].0 + lengths[i].1, lengths[i].0));
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let (mut max_a, mut max_b) = (0, 0);
    for i in order {
        let (a, b) = lengths[i];
        let (na, nb) = (max_a.max(a), max_b.max(b));
        if !cur.is_empty() && (na + nb) * (cur.len() + 1) > budget {
            batches.push(std::mem::take(&mut cur));
            max_a = a;
            max_b = b;
        } else {
            max_a = na;
            max_b = nb;
        }
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(rng);
    batches
}

fn epoch_rng(seed: u64, epoch: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: u8,
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the best epoch.
    pub bundle: ModelBundle,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct LoopState {
    epoch: usize,
    log: Vec<EpochLog>,
    best: ParamStore<f32>,
}

fn state_path(dir: &Path, stage: u8) -> PathBuf {
    dir.join(format!("stage{stage}-state.ckpt"))
}

pub fn best_path(dir: &Path, stage: u8) -> PathBuf {
    dir.join(format!("stage{stage}-best.ckpt"))
}

pub fn log_path(dir: &Path) -> PathBuf {
    dir.join("train_log.jsonl")
}

fn save_state(dir: &Path, bundle: &ModelBundle, opt: &Optimizer, st: &LoopState, stage: u8) -> Result<()> {
    let mut ck = bundle.to_checkpoint(serde_json::json!({
        "stage": stage,
        "epoch": st.epoch,
        "adam_step": opt.state.step,
        "log": st.log,
    }))?;
    for (id, name, _) in bundle.store.iter() {
        if let Some(m) = &opt.state.m[id.index()] {
            ck.tensors.push((format!("adam.m.{name}"), m.clone()));
        }
        if let Some(v) = &opt.state.v[id.index()] {
            ck.tensors.push((format!("adam.v.{name}"), v.clone()));
        }
    }
    for (_, name, t) in st.best.iter() {
        ck.tensors.push((format!("best.{name}"), t.clone()));
    }
    let tmp = state_path(dir, stage).with_extension("tmp");
    ck.save(&tmp)?;
    fs::rename(&tmp, state_path(dir, stage)).map_err(|e| Error::io(state_path(dir, stage), e))
}

fn load_state(path: &Path, bundle: &mut ModelBundle, opt: &mut Optimizer) -> Result<LoopState> {
    let ck = Checkpoint::<f32>::load(path)?;
    ck.load_into(&mut bundle.store, "")?;
    let extra = ModelBundle::checkpoint_extra(&ck);
    let epoch = extra["epoch"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("state file lacks epoch".into()))? as usize;
    opt.state.step = extra["adam_step"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("state file lacks adam_step".into()))?;
    let log: Vec<EpochLog> = serde_json::from_value(extra["log"].clone())?;
    let mut best = bundle.store.clone();
    let names: Vec<(usize, String)> = bundle
        .store
        .iter()
        .map(|(id, n, _)| (id.index(), n.to_string()))
        .collect();
    for (i, name) in names {
        opt.state.m[i] = ck.get(&format!("adam.m.{name}")).cloned();
        opt.state.v[i] = ck.get(&format!("adam.v.{name}")).cloned();
        let t: &Tensor<f32> = ck
            .get(&format!("best.{name}"))
            .ok_or_else(|| Error::Checkpoint(format!("state file lacks best.{name}")))?;
        best.assign(&name, t.clone())?;
    }
    Ok(LoopState { epoch, log, best })
}

fn append_log(dir: &Path, entry: &EpochLog) -> Result<()> {
    let path = log_path(dir);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string(entry)?).map_err(|e| Error::io(&path, e))
}

/// Shared epoch loop. `step` trains on one batch of item indices; `validate`
/// scores the current weights.
fn train_loop(
    plan: &TrainPlan,
    mut bundle: ModelBundle,
    lengths: &[(usize, usize)],
    dropout: f64,
    mut step: impl FnMut(&mut ModelBundle, &[usize], &mut Optimizer, &mut Ctx<'_>) -> Result<f64>,
    validate: impl Fn(&ModelBundle) -> Result<f64>,
) -> Result<TrainOutcome> {
    plan.validate()?;
    let mut opt = Optimizer::new(plan.optim, bundle.word.cfg.d_model, bundle.store.len());
    let dir = plan.checkpoint_dir.as_deref();
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut st = match dir.map(|d| state_path(d, plan.stage)) {
        Some(p) if plan.resume && p.exists() => {
            log::info!("resuming stage {} from {}", plan.stage, p.display());
            load_state(&p, &mut bundle, &mut opt)?
        }
        _ => {
            if let Some(d) = dir {
                let lp = log_path(d);
                if plan.stage == 1 && lp.exists() {
                    fs::remove_file(&lp).map_err(|e| Error::io(&lp, e))?;
                }
            }
            LoopState {
                epoch: 0,
                log: Vec::new(),
                best: bundle.store.clone(),
            }
        }
    };
    let higher = plan.metric.higher_is_better();
    let history = |log: &[EpochLog]| log.iter().map(|l| l.val_metric).collect::<Vec<_>>();
    let mut stopped_early = early_stop(&history(&st.log), higher, plan.patience).is_some_and(|d| d.stop);
    while !stopped_early && st.epoch < plan.max_epochs {
        let mut rng = epoch_rng(plan.seed, st.epoch, 0xba7c);
        let batches = make_batches(lengths, plan.batch_tokens, &mut rng);
        let mut drop_rng = epoch_rng(plan.seed, st.epoch, 0xd20b);
        let mut ctx = Ctx {
            dropout,
            rng: Some(&mut drop_rng),
        };
        let mut total = 0.0;
        for b in &batches {
            let loss = step(&mut bundle, b, &mut opt, &mut ctx).map_err(|e| match (e, dir) {
                (Error::NonFinite(m), Some(d)) => Error::NonFinite(format!(
                    "{m}; last good state is {}",
                    state_path(d, plan.stage).display()
                )),
                (e, _) => e,
            })?;
            total += loss;
        }
        let val = validate(&bundle)?;
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("validation metric {val} at epoch {}", st.epoch)));
        }
        let entry = EpochLog {
            stage: plan.stage,
            epoch: st.epoch,
            step: opt.state.step,
            lr: opt.next_lr()?,
            train_loss: total / batches.len().max(1) as f64,
            val_metric: val,
        };
        log::info!(
            "stage {} epoch {} loss {:.4} val {:.4}",
            plan.stage,
            entry.epoch,
            entry.train_loss,
            entry.val_metric
        );
        st.log.push(entry.clone());
        let decision = early_stop(&history(&st.log), higher, plan.patience).expect("non-empty history");
        if decision.best_epoch == st.epoch {
            st.best = bundle.store.clone();
        }
        stopped_early = decision.stop;
        st.epoch += 1;
        if let Some(d) = dir {
            append_log(d, &entry)?;
            save_state(d, &bundle, &opt, &st, plan.stage)?;
        }
    }
    let best_epoch = early_stop(&history(&st.log), higher, plan.patience)
        .map(|d| d.best_epoch)
        .unwrap_or(0);
    bundle.store = st.best;
    if let Some(d) = dir {
        bundle.save(&best_path(d, plan.stage), serde_json::json!({"stage": plan.stage, "best_epoch": best_epoch}))?;
    }
    Ok(TrainOutcome {
        bundle,
        log: st.log,
        best_epoch,
        stopped_early,
    })
}

/// Greedy corpus BLEU of the word model on `val` (no constraints).
pub fn validation_bleu(bundle: &ModelBundle, val: &[ParallelExample]) -> Result<f64> {
    let mut hyps = Vec::with_capacity(val.len());
    let banned = [PAD, BOS, UNK];
    for chunk in val.chunks(128) {
        let srcs: Vec<Vec<usize>> = chunk.iter().map(|ex| bundle.vocab.encode(&ex.src_tokens)).collect();
        for out in greedy(&bundle.word, &bundle.store, &srcs, &banned)? {
            hyps.push(bundle.vocab.decode(&out)?.join(" "));
        }
    }
    let refs: Vec<String> = val.iter().map(|ex| ex.tgt_tokens.join(" ")).collect();
    bleu(&hyps, &refs)
}

/// Trains the word model on `train` and keeps the best validation-BLEU epoch.
pub fn run_stage1(
    plan: &TrainPlan,
    bundle: ModelBundle,
    train: &[ParallelExample],
    val: &[ParallelExample],
) -> Result<TrainOutcome> {
    if plan.stage != 1 {
        return Err(Error::Config(format!("run_stage1 got a stage {} plan", plan.stage)));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("stage 1 needs training and validation data"));
    }
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = train
        .iter()
        .map(|ex| (bundle.vocab.encode(&ex.src_tokens), bundle.vocab.encode(&ex.tgt_tokens)))
        .collect();
    let lengths: Vec<(usize, usize)> = pairs.iter().map(|(s, t)| (s.len() + 1, t.len() + 1)).collect();
    let dropout = bundle.word.cfg.dropout;
    train_loop(
        plan,
        bundle,
        &lengths,
        dropout,
        |b, idx, opt, ctx| {
            let batch = WordBatch {
                src: idx.iter().map(|&i| pairs[i].0.clone()).collect(),
                tgt: idx.iter().map(|&i| pairs[i].1.clone()).collect(),
            };
            train_step_word(b, &batch, opt, ctx)
        },
        |b| validation_bleu(b, val),
    )
}

/// Mean character loss over `val` in fixed chunks.
pub fn validation_char_loss(bundle: &ModelBundle, val: &[AddonExample]) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0usize;
    for chunk in val.chunks(128) {
        let n: usize = chunk.iter().map(|e| e.surface.len() + 1).sum();
        total += addon_loss(bundle, chunk)? * n as f64;
        weight += n;
    }
    Ok(total / weight.max(1) as f64)
}

/// Attaches a fresh add-on to the stage-1 model and trains only the add-on.
pub fn run_stage2(
    plan: &TrainPlan,
    stage1: &ModelBundle,
    chars: CharVocab,
    train: &[AddonExample],
    val: &[AddonExample],
) -> Result<TrainOutcome> {
    if plan.stage != 2 {
        return Err(Error::Config(format!("run_stage2 got a stage {} plan", plan.stage)));
    }
    if train.is_empty() {
        return Err(Error::invalid("augmentation manifest is empty; nothing to train in stage 2"));
    }
    if val.is_empty() {
        return Err(Error::invalid("stage 2 needs validation examples"));
    }
    if stage1.addon.is_some() {
        return Err(Error::Checkpoint("stage-1 checkpoint already carries an add-on".into()));
    }
    let mut bundle = stage1.clone();
    bundle.attach_addon(chars, plan.seed ^ 0xadd0)?;
    let lengths: Vec<(usize, usize)> = train
        .iter()
        .map(|e| (e.context.len() + e.lemma.len() + 1, e.surface.len() + 1))
        .collect();
    let dropout = bundle.word.cfg.dropout;
    train_loop(
        plan,
        bundle,
        &lengths,
        dropout,
        |b, idx, opt, ctx| {
            let batch: Vec<AddonExample> = idx.iter().map(|&i| train[i].clone()).collect();
            train_step_addon(b, &batch, opt, ctx)
        },
        |b| validation_char_loss(b, val),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_patience() {
        let o = OptimConfig {
            warmup: 10,
            lr_scale: 1.0,
            adam: Default::default(),
        };
        assert_eq!(TrainPlan::stage1(0, o).patience, 3);
        assert_eq!(TrainPlan::stage1(0, o).metric, Metric::ValBleu);
        assert_eq!(TrainPlan::stage2(0, o).patience, 5);
        assert_eq!(TrainPlan::stage2(0, o).metric, Metric::ValLoss);
    }

    #[test]
    fn flat_metric_stops_after_patience_epochs() {
        let h = [20.0; 4];
        assert_eq!(
            early_stop(&h, true, 3),
            Some(StopDecision {
                best_epoch: 0,
                stop: true
            })
        );
        assert!(!early_stop(&h[..3], true, 3).unwrap().stop);
    }

    #[test]
    fn improving_metric_never_stops() {
        let h: Vec<f64> = (0..30).map(|i| i as f64).collect();
        for n in 1..=h.len() {
            assert!(!early_stop(&h[..n], true, 3).unwrap().stop);
        }
        let down: Vec<f64> = (0..30).map(|i| -(i as f64)).collect();
        assert!(!early_stop(&down, false, 5).unwrap().stop);
        assert_eq!(early_stop(&[], true, 3), None);
    }

    #[test]
    fn loss_metric_tracks_minimum() {
        let h = [3.0, 2.0, 2.5, 2.1, 2.2, 2.0, 2.3];
        let d = early_stop(&h, false, 5).unwrap();
        assert_eq!(d.best_epoch, 1);
        assert!(d.stop);
    }

    #[test]
    fn batches_cover_every_item_once_within_budget() {
        let lengths: Vec<(usize, usize)> = (0..200).map(|i| (3 + i % 7, 2 + i % 5)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches = make_batches(&lengths, 60, &mut rng);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..200).collect::<Vec<_>>());
        for b in &batches {
            let a = b.iter().map(|&i| lengths[i].0).max().unwrap();
            let c = b.iter().map(|&i| lengths[i].1).max().unwrap();
            assert!(b.len() == 1 || (a + c) * b.len() <= 60);
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(batches, make_batches(&lengths, 60, &mut rng2));
    }
}
