//! Central finite-difference oracle.
//!
//! Analytic gradients are taken from the `f32` engine; the numerical
//! derivative evaluates the same loss at `f64`, so the reference carries no
//! single-precision rounding noise.

#![allow(dead_code)]

use phtrans_core::tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use phtrans_core::Result;
use rand::Rng;

pub const FD_EPS: f64 = 1e-5;
/// Denominator floor of the relative error; gradients smaller than this are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-2;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A scalar loss built from differentiable leaves.
pub trait LeafLoss {
    fn build<T: Scalar>(&self, g: &mut Graph<'_, T>, leaves: &[Var]) -> Result<Var>;
}

/// A scalar loss built from parameters of a store.
pub trait ParamLoss {
    fn build<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Result<Var>;
}

/// Random tensor whose values are exactly representable in `f32`.
pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| (rng.gen_range(-scale..scale) as f32) as f64)
}

/// Projects `out` onto fixed random weights so any output becomes a scalar.
pub fn project<T: Scalar>(g: &mut Graph<'_, T>, out: Var, seed: u64) -> Result<Var> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(out).shape().to_vec();
    let w = Tensor::from_fn(&shape, |_| {
        T::from_f64_lossy((rng.gen_range(-1.0..1.0f64) as f32) as f64)
    });
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn eval_leaves(loss: &impl LeafLoss, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let l = loss.build(&mut g, &leaves)?;
    Ok(g.value(l).item())
}

/// Maximum relative error over every input element, analytic gradient in `f32`.
pub fn check_leaves(loss: &impl LeafLoss, inputs: &[Tensor<f64>]) -> Result<f64> {
    check_leaves_at::<f32>(loss, inputs)
}

/// Same as [`check_leaves`] with the analytic gradient computed in `T`.
pub fn check_leaves_at<T: Scalar>(loss: &impl LeafLoss, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::<T>::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.cast())).collect();
    let l = loss.build(&mut g, &leaves)?;
    let back = g.backward(l)?;
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match back.wrt(leaves[i]) {
            Some(gr) => gr.iter().map(|v| v.to_f64_lossy()).collect(),
            None => vec![0.0; input.len()],
        };
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_EPS;
            let numeric = (eval_leaves(loss, &plus)? - eval_leaves(loss, &minus)?) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}

/// Maximum relative error over up to `per_tensor` sampled elements of every
/// trainable parameter.
pub fn check_params(
    loss: &impl ParamLoss,
    store: &ParamStore<f32>,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    check_params_at::<f32>(loss, store, per_tensor, rng)
}

/// Same as [`check_params`] with the analytic gradient computed in `T`.
pub fn check_params_at<T: Scalar>(
    loss: &impl ParamLoss,
    store: &ParamStore<f32>,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let analytic_store = store.cast::<T>();
    let mut g = Graph::with_params(&analytic_store);
    let l = loss.build(&mut g)?;
    let back = g.backward(l)?;
    let grads = g.param_grads(&back);
    drop(g);
    let base = store.cast::<f64>();
    let mut worst = 0.0f64;
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        let n = store.get(id).len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for j in picks {
            let analytic = grads.get(id).map(|t| t.data()[j].to_f64_lossy()).unwrap_or(0.0);
            let mut plus = base.clone();
            plus.get_mut(id).data_mut()[j] += FD_EPS;
            let mut minus = base.clone();
            minus.get_mut(id).data_mut()[j] -= FD_EPS;
            let lp = {
                let mut g = Graph::with_params(&plus);
                let l = loss.build(&mut g)?;
                g.value(l).item()
            };
            let lm = {
                let mut g = Graph::with_params(&minus);
                let l = loss.build(&mut g)?;
                g.value(l).item()
            };
            let numeric = (lp - lm) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    Ok(worst)
}
