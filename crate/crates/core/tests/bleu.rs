mod common;

use common::bleu_oracle::corpus_bleu;
use phtrans_core::align::{DictEntry, PosClass};
use phtrans_core::augment::ConstraintAnnotation;
use phtrans_core::eval::{bleu, term_use_rate, tokenize_13a};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "the", "."]), 0..10)
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_brute_force_oracle(pairs in prop::collection::vec((words(), words()), 1..5)) {
        let hyps: Vec<String> = pairs.iter().map(|p| p.0.join(" ")).collect();
        let refs: Vec<String> = pairs.iter().map(|p| p.1.join(" ")).collect();
        let got = bleu(&hyps, &refs).unwrap();
        prop_assert!((got - corpus_bleu(&pairs)).abs() <= 1e-9, "{got} vs {}", corpus_bleu(&pairs));
        prop_assert!((0.0..=100.0).contains(&got));
    }
}

#[test]
fn identical_corpora_score_exactly_100() {
    let corpus = ["Hello, world!", "the quick brown fox jumps over the lazy dog"];
    assert_eq!(bleu(&corpus, &corpus).unwrap(), 100.0);
}

#[test]
fn tokenization_separates_punctuation() {
    assert_eq!(tokenize_13a("Hello, world!"), ["Hello", ",", "world", "!"]);
}

fn annotation(surface: &str) -> ConstraintAnnotation {
    ConstraintAnnotation {
        pair_id: 0,
        entry: DictEntry {
            src_phrase: vec!["x".into()],
            tgt_phrase: vec!["y".into()],
            tgt_lemma: vec!["y".into()],
            pos_class: PosClass::Verb,
            pair_count: 1,
            train_freq: 0,
        },
        src_span: (0, 1),
        tgt_span: (0, 1),
        reference_surface: surface.split(' ').map(str::to_string).collect(),
        mode: None,
    }
}

#[test]
fn three_of_four_outputs_use_the_term() {
    let a = annotation("controlled");
    let b = annotation("ran away");
    let outputs = [
        ("we controlled it .", &a),
        ("Controlled, they left", &a),
        ("we control it", &a),
        ("he ran away yesterday", &b),
    ];
    assert_eq!(term_use_rate(&outputs), 0.75);
}
