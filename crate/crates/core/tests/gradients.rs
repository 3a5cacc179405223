mod common;

use common::gradcheck::{check_leaves, LeafLoss};
use common::gradsuite::{Block, BlockCase, PrimCase, ALL_PRIMS};
use phtrans_core::tensor::{AttnShape, Graph, Scalar, Tensor, Var};
use phtrans_core::{Error, Result};
use rand::SeedableRng;

const TOL: f64 = 1e-4;
const TOL_F64: f64 = 1e-6;

#[test]
fn every_primitive_matches_finite_differences() {
    for prim in ALL_PRIMS {
        for seed in 0..8 {
            let err = PrimCase::random(prim, seed).max_rel_error().unwrap();
            assert!(err <= TOL, "{} seed {seed}: rel err {err:e}", prim.name());
        }
    }
}

#[test]
fn transformer_blocks_match_finite_differences() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for kind in [Block::Encoder, Block::Decoder] {
        for seed in 0..3 {
            let case = BlockCase::random(kind, seed).unwrap();
            let err = case.max_rel_error(&mut rng).unwrap();
            assert!(err <= TOL, "{kind:?} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn double_precision_gradients_are_tighter() {
    for (name, err) in common::gradsuite::run_suite_at::<f64>(4).unwrap() {
        assert!(err <= TOL_F64, "{name}: rel err {err:e}");
    }
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[1, 2]));
    let y = g.softmax(x);
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn gradient_of_sum_of_squares() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let back = g.backward(s).unwrap();
    assert_eq!(back.wrt(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::<f32>::new();
    let a = g.leaf(Tensor::zeros(&[2, 3]));
    let b = g.leaf(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { op, detail }) => {
            assert_eq!(op, "matmul");
            assert!(detail.contains("[2, 3]"));
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    assert!(matches!(g.add_bias(a, b), Err(Error::Shape { op: "add_bias", .. })));
}

#[test]
fn masked_attention_rows_sum_to_one() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let shape = AttnShape {
        batch: 2,
        q_len: 3,
        k_len: 4,
        heads: 2,
    };
    let q = common::gradcheck::rand_tensor(&mut rng, &[6, 4], 2.0).cast::<f32>();
    let k = common::gradcheck::rand_tensor(&mut rng, &[8, 4], 2.0).cast::<f32>();
    let v = common::gradcheck::rand_tensor(&mut rng, &[8, 4], 2.0).cast::<f32>();
    let valid = [true, true, false, false, true, true, true, false];
    let mut g = Graph::<f32>::new();
    let (q, k, v) = (g.constant(q), g.constant(k), g.constant(v));
    let a = g.attention(q, k, v, shape, &valid, false).unwrap();
    let probs = g.attention_probs(a).unwrap();
    for (r, row) in probs.chunks(4).enumerate() {
        let b = r / (2 * 3);
        let total: f32 = row.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        for (j, p) in row.iter().enumerate() {
            if !valid[b * 4 + j] {
                assert_eq!(*p, 0.0);
            }
        }
    }
}

struct NoGradThroughConstant;

impl LeafLoss for NoGradThroughConstant {
    fn build<T: Scalar>(&self, g: &mut Graph<'_, T>, leaves: &[Var]) -> Result<Var> {
        let c = g.constant(Tensor::full(&[1, 2], T::from_f64_lossy(3.0)));
        let y = g.mul(leaves[0], c)?;
        Ok(g.sum(y))
    }
}

#[test]
fn constants_scale_gradients_without_receiving_them() {
    let x = Tensor::new(vec![1, 2], vec![0.5, -0.25]).unwrap();
    assert!(check_leaves(&NoGradThroughConstant, &[x]).unwrap() <= TOL);
}

#[test]
fn cross_entropy_of_confident_correct_logits_is_tiny() {
    let mut g = Graph::<f32>::new();
    let logits = Tensor::new(vec![2, 3], vec![20.0, 0.0, 0.0, 0.0, 0.0, 20.0]).unwrap();
    let l = g.leaf(logits);
    let loss = g.cross_entropy(l, &[Some(0), Some(2)]).unwrap();
    assert!(g.value(loss).item() <= 1e-3);
}
