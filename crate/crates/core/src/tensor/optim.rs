use serde::{Deserialize, Serialize};

use super::{ParamGrads, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Inverse-square-root schedule with linear warmup:
/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64) -> Result<f64> {
    if step == 0 || warmup == 0 || d_model == 0 {
        return Err(Error::invalid(format!(
            "noam_lr needs step, warmup and d_model >= 1 (got {step}, {warmup}, {d_model})"
        )));
    }
    let step = step as f64;
    let warmup = warmup as f64;
    Ok((d_model as f64).powf(-0.5) * step.powf(-0.5).min(step * warmup.powf(-1.5)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First and second moment estimates, one slot per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![None; num_params],
            v: vec![None; num_params],
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are left alone.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamGrads<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for (id, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {} at step {}",
                params.name(id),
                state.step + 1
            )));
        }
    }
    state.step += 1;
    if state.m.len() < params.len() {
        state.m.resize(params.len(), None);
        state.v.resize(params.len(), None);
    }
    let t = state.step as f64;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powf(t);
    let bc2 = 1.0 - c.beta2.powf(t);
    let b1 = T::from_f64_lossy(c.beta1);
    let b2 = T::from_f64_lossy(c.beta2);
    let one = T::one();
    let step_size = T::from_f64_lossy(lr / bc1);
    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
    let eps = T::from_f64_lossy(c.eps);
    for (id, g) in grads.iter() {
        if !params.is_trainable(id) {
            continue;
        }
        let i = id.index();
        let m = state.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let p = params.get_mut(id);
        for (((pv, mv), vv), gv) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mv = b1 * *mv + (one - b1) * *gv;
            *vv = b2 * *vv + (one - b2) * *gv * *gv;
            *pv -= step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noam_crossover_equals_closed_form() {
        let (d, w) = (64, 400);
        let lr = noam_lr(w, d, w).unwrap();
        let want = ((d as f64) * (w as f64)).powf(-0.5);
        assert!((lr - want).abs() < 1e-15);
        let w = w as f64;
        assert!((w.powf(-0.5) - w * w.powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn noam_rejects_step_zero() {
        assert!(noam_lr(0, 64, 10).is_err());
        assert!(noam_lr(1, 64, 0).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::scalar(1.0)).unwrap();
        let mut state = AdamState::new(AdamConfig::default(), 1);
        let mut graph = super::super::Graph::with_params(&store);
        let w = graph.param(id);
        let l = graph.scale(w, 0.5);
        let back = graph.backward(l).unwrap();
        let grads = graph.param_grads(&back);
        drop(graph);
        adam_step(&mut store, &grads, &mut state, 0.1).unwrap();
        // bias-corrected first step is lr * sign(g)
        assert!((store.get(id).item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::scalar(1.0)).unwrap();
        let mut graph = super::super::Graph::with_params(&store);
        let w = graph.param(id);
        let l = graph.scale(w, f32::NAN);
        let back = graph.backward(l).unwrap();
        let grads = graph.param_grads(&back);
        drop(graph);
        let mut state = AdamState::new(AdamConfig::default(), 1);
        let err = adam_step(&mut store, &grads, &mut state, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
