//! Fixtures shared by the benchmarks.

use phtrans_core::data::{ParallelExample, SubwordVocab};
use phtrans_core::model::{ModelBundle, WordBatch};
use phtrans_core::pipeline::{build_vocab, RunConfig};
use phtrans_core::synth::{gen_corpus, SynthConfig, SynthData, SynthGrammar};
use phtrans_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic corpus of `n_train` pairs with the default lexicon sizes.
pub fn synth_data(n_train: usize) -> SynthData {
    let cfg = SynthConfig {
        n_train,
        n_dev: 50,
        n_test_per_cell: 20,
        ..SynthConfig::default()
    };
    let grammar = SynthGrammar::generate(&cfg).expect("grammar");
    gen_corpus(&grammar, &cfg).expect("corpus")
}

pub fn desk_vocab(corpus: &[ParallelExample]) -> SubwordVocab {
    build_vocab(corpus, RunConfig::desk().vocab.size).expect("vocab")
}

/// Desk-sized word model and one encoded batch of `batch` pairs.
pub fn desk_model(data: &SynthData, batch: usize) -> (ModelBundle, WordBatch) {
    let vocab = desk_vocab(&data.train);
    let pairs = &data.train[..batch.min(data.train.len())];
    let wb = WordBatch {
        src: pairs.iter().map(|p| vocab.encode(&p.src_tokens)).collect(),
        tgt: pairs.iter().map(|p| vocab.encode(&p.tgt_tokens)).collect(),
    };
    let bundle = ModelBundle::new(vocab, RunConfig::desk().model, 1).expect("model");
    (bundle, wb)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-1.0..1.0))
}
