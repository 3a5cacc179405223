use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use phtrans_bench::{desk_model, desk_vocab, random_matrix, synth_data};
use phtrans_core::align::align_ibm1;
use phtrans_core::eval::bleu;
use phtrans_core::model::{beam_search, greedy, train_step_word, OptimConfig, Optimizer};
use phtrans_core::tensor::{Ctx, Graph};
use rand::SeedableRng;
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_fwd_bwd");
    for n in [32usize, 64, 128] {
        let (a, b) = (random_matrix(n, n, 1), random_matrix(n, n, 2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::<f32>::new();
                let (x, y) = (g.leaf(a.clone()), g.leaf(b.clone()));
                let z = g.matmul(x, y).unwrap();
                let s = g.sum(z);
                black_box(g.backward(s).unwrap());
            })
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let data = synth_data(400);
    let (bundle, batch) = desk_model(&data, 64);
    let optim = OptimConfig {
        warmup: 400,
        lr_scale: 1.0,
        adam: Default::default(),
    };
    c.bench_function("word_train_step_64_pairs", |bench| {
        let mut model = bundle.clone();
        let mut opt = Optimizer::new(optim, model.word.cfg.d_model, model.store.len());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        bench.iter(|| {
            let mut ctx = Ctx {
                dropout: 0.1,
                rng: Some(&mut rng),
            };
            black_box(train_step_word(&mut model, &batch, &mut opt, &mut ctx).unwrap())
        })
    });
}

fn decoding(c: &mut Criterion) {
    let data = synth_data(400);
    let (bundle, batch) = desk_model(&data, 32);
    let banned = [0usize, 1, 3];
    c.bench_function("greedy_32_sentences", |bench| {
        bench.iter(|| black_box(greedy(&bundle.word, &bundle.store, &batch.src, &banned).unwrap()))
    });
    c.bench_function("beam4_one_sentence", |bench| {
        bench.iter(|| black_box(beam_search(&bundle.word, &bundle.store, &batch.src[0], 4, &banned).unwrap()))
    });
}

fn text(c: &mut Criterion) {
    let data = synth_data(2000);
    c.bench_function("subword_train_2000_pairs", |bench| bench.iter(|| black_box(desk_vocab(&data.train))));
    let vocab = desk_vocab(&data.train);
    c.bench_function("subword_encode_2000_lines", |bench| {
        bench.iter(|| {
            for ex in &data.train {
                black_box(vocab.encode(&ex.tgt_tokens));
            }
        })
    });
    let refs: Vec<String> = data.train.iter().map(|e| e.tgt_tokens.join(" ")).collect();
    let hyps: Vec<String> = refs.iter().rev().cloned().collect();
    c.bench_function("bleu_2000_sentences", |bench| bench.iter(|| black_box(bleu(&hyps, &refs).unwrap())));
    c.bench_function("ibm1_2000_pairs_5_iters", |bench| {
        bench.iter(|| black_box(align_ibm1(&data.train, 5).unwrap().log_likelihood))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, training, decoding, text
}
criterion_main!(benches);
