use super::*;
use crate::align::PosClass;
use crate::align::DictEntry;
use crate::augment::{ConstraintAnnotation, InflectionLexicon};
use crate::data::specials::VERB;
use crate::data::{CharVocab, SubwordConfig, SubwordVocab};
use crate::tensor::{Ctx, Graph, TransformerConfig};

fn lexicon_for(forms: &[(&str, PosClass, &str, &str)]) -> InflectionLexicon {
    let mut lex = InflectionLexicon::new();
    for (l, p, t, s) in forms {
        lex.insert(l, *p, t, s).unwrap();
    }
    lex
}

fn annotation(
    src: &str,
    lemma: &str,
    pos: PosClass,
    src_span: (usize, usize),
    tgt_span: (usize, usize),
    surface: &str,
) -> ConstraintAnnotation {
    ConstraintAnnotation {
        pair_id: 0,
        entry: DictEntry {
            src_phrase: words(src),
            tgt_phrase: words(surface),
            tgt_lemma: words(lemma),
            pos_class: pos,
            pair_count: 1,
            train_freq: 1,
        },
        src_span,
        tgt_span,
        reference_surface: words(surface),
        mode: None,
    }
}

fn tiny_cfg() -> TransformerConfig {
    TransformerConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        dropout: 0.0,
        max_positions: 64,
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn vocab() -> SubwordVocab {
    let lines = [
        words("yesterday we pata one tomu"),
        words("now we patu many tomuri"),
        words("watu wa tomu wo zobe PST"),
    ];
    SubwordVocab::train(lines.iter().map(|l| l.as_slice()), &SubwordConfig::with_size(60)).unwrap()
}

fn bundle_with_addon() -> ModelBundle {
    let mut b = ModelBundle::new(vocab(), tiny_cfg(), 1).unwrap();
    b.attach_addon(CharVocab::build(["patunaeyrsdowm ", "kih"]), 2).unwrap();
    b
}

fn context(b: &ModelBundle, s: &str) -> Vec<usize> {
    b.vocab.encode(&words(s))
}

#[test]
fn context_encoder_needs_exactly_one_placeholder() {
    let b = bundle_with_addon();
    let addon = b.addon.as_ref().unwrap();
    let mut g = Graph::inference(&b.store);
    let none = context(&b, "yesterday we pata");
    assert!(addon.context_encode(&mut g, &mut Ctx::eval(), &b.word, &[none]).is_err());
    let two = context(&b, "[VERB] we [NOUN]");
    assert!(addon.context_encode(&mut g, &mut Ctx::eval(), &b.word, &[two]).is_err());
    let one = context(&b, "yesterday we [VERB] one tomu");
    let (h, batch, rows) = addon
        .context_encode(&mut g, &mut Ctx::eval(), &b.word, std::slice::from_ref(&one))
        .unwrap();
    assert_eq!(g.value(h).rows(), one.len());
    assert_eq!(batch.len, one.len());
    assert_eq!(one[rows[0]], VERB);
}

#[test]
fn memory_has_lemma_length_plus_one_and_starts_with_h_p() {
    let b = bundle_with_addon();
    let addon = b.addon.as_ref().unwrap();
    let chars = b.chars.as_ref().unwrap();
    let ctx_ids = context(&b, "yesterday we [VERB] one tomu");
    for lemma in ["patu", "p", "patunaa"] {
        let (ids, unknown) = chars.encode(lemma);
        assert_eq!(unknown, 0);
        let m = addon.memory(&b.store, &b.word, &ctx_ids, &ids).unwrap();
        assert_eq!(m.rows(), lemma.chars().count() + 1);
    }
    let mut g = Graph::inference(&b.store);
    let (h, _, rows) = addon
        .context_encode(&mut g, &mut Ctx::eval(), &b.word, std::slice::from_ref(&ctx_ids))
        .unwrap();
    let h_p = g.value(h).row(rows[0]).to_vec();
    let m = addon.memory(&b.store, &b.word, &ctx_ids, &chars.encode("patu").0).unwrap();
    assert_eq!(m.row(0), h_p.as_slice());
    assert!(addon.memory(&b.store, &b.word, &ctx_ids, &[]).is_err());
}

#[test]
fn swapping_context_tokens_changes_h_p() {
    let b = bundle_with_addon();
    let addon = b.addon.as_ref().unwrap();
    let lemma = b.chars.as_ref().unwrap().encode("patu").0;
    let a = addon
        .memory(&b.store, &b.word, &context(&b, "yesterday we [VERB] one tomu"), &lemma)
        .unwrap();
    let c = addon
        .memory(&b.store, &b.word, &context(&b, "we yesterday [VERB] one tomu"), &lemma)
        .unwrap();
    assert_ne!(a.row(0), c.row(0));
}

#[test]
fn char_decoding_is_bounded_and_deterministic() {
    let b = bundle_with_addon();
    let addon = b.addon.as_ref().unwrap();
    let lemma = b.chars.as_ref().unwrap().encode("patu").0;
    let ctx_ids = context(&b, "now we [VERB] many tomuri");
    let (out, _) = addon.char_decode(&b.store, &b.word, &ctx_ids, &lemma).unwrap();
    assert!(out.len() <= lemma.len() + EXTRA_CHARS);
    assert_eq!(out, addon.char_decode(&b.store, &b.word, &ctx_ids, &lemma).unwrap().0);
}

#[test]
fn decoder_is_causal() {
    use crate::tensor::nn::Memory;
    use crate::tensor::SeqBatch;
    let b = bundle_with_addon();
    let enc = b.word.encode_detached(&b.store, &[context(&b, "watu wa tomu")]).unwrap();
    let logits = |prefix: Vec<usize>| {
        let mut g = Graph::inference(&b.store);
        let states = g.constant(enc.states.clone());
        let mem = Memory {
            states,
            len: enc.len,
            valid: &enc.valid,
        };
        let inputs = SeqBatch::from_seqs(&[prefix], 0);
        let l = b.word.decode_logits(&mut g, &mut Ctx::eval(), &inputs, &mem).unwrap();
        g.value(l).clone()
    };
    let a = logits(vec![1, 7, 8, 9]);
    let c = logits(vec![1, 7, 8, 12]);
    for t in 0..3 {
        assert_eq!(a.row(t), c.row(t));
    }
    assert_ne!(a.row(3), c.row(3));
}

#[test]
fn untrained_decoding_respects_length_caps() {
    let b = bundle_with_addon();
    let src = context(&b, "watu wa tomu wo zobe PST");
    let out = greedy(&b.word, &b.store, std::slice::from_ref(&src), &[]).unwrap();
    assert!(out[0].len() <= default_max_len(src.len()));
    let beam = beam_search(&b.word, &b.store, &src, 3, &[]).unwrap();
    assert!(beam.len() <= default_max_len(src.len()));
    assert_eq!(beam, beam_search(&b.word, &b.store, &src, 3, &[]).unwrap());
}

#[test]
fn addon_steps_leave_the_word_model_untouched_and_reduce_loss() {
    let mut b = bundle_with_addon();
    let before = b.word_checksum();
    let chars = b.chars.clone().unwrap();
    let ex = AddonExample {
        context: context(&b, "yesterday we [VERB] one tomu"),
        lemma: chars.encode("patu").0,
        surface: chars.encode("pata").0,
    };
    let mut opt = Optimizer::new(
        OptimConfig {
            warmup: 1,
            lr_scale: 1e-3 * (16f64 * 1.0).sqrt(),
            adam: Default::default(),
        },
        16,
        b.store.len(),
    );
    let batch = vec![ex];
    let first = addon_loss(&b, &batch).unwrap();
    for _ in 0..50 {
        train_step_addon(&mut b, &batch, &mut opt, &mut Ctx::eval()).unwrap();
    }
    let last = addon_loss(&b, &batch).unwrap();
    assert!(last < first, "{last} !< {first}");
    assert_eq!(b.word_checksum(), before);
}

#[test]
fn addon_batch_without_placeholder_is_rejected() {
    let mut b = bundle_with_addon();
    let chars = b.chars.clone().unwrap();
    let bad = AddonExample {
        context: context(&b, "yesterday we pata"),
        lemma: chars.encode("patu").0,
        surface: chars.encode("pata").0,
    };
    let mut opt = Optimizer::new(
        OptimConfig {
            warmup: 10,
            lr_scale: 1.0,
            adam: Default::default(),
        },
        16,
        b.store.len(),
    );
    assert!(train_step_addon(&mut b, &[bad], &mut opt, &mut Ctx::eval()).is_err());
}

#[test]
fn checkpoint_round_trip_restores_everything() {
    let b = bundle_with_addon();
    let ck = b.to_checkpoint(serde_json::json!({"stage": 2})).unwrap();
    let bytes = ck.to_bytes().unwrap();
    let back = ModelBundle::from_checkpoint(&crate::tensor::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.word_checksum(), b.word_checksum());
    assert_eq!(back.addon_checksum(), b.addon_checksum());
    assert_eq!(back.vocab.to_text(), b.vocab.to_text());
    assert_eq!(back.chars, b.chars);
    assert!(!back.store.is_trainable(back.word.embed));
}

#[test]
fn strategy_names_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
    }
    let err = "ph-magic".parse::<Strategy>().unwrap_err().to_string();
    assert!(err.contains("ph-magic"));
}

#[test]
fn rule_based_fills() {
    let b = bundle_with_addon();
    let lex = lexicon_for(&[("patu", PosClass::Verb, "VBD", "pata"), ("tomu", PosClass::Noun, "NN", "tomu")]);
    let tr = Translator::new(&b, Some(&lex), 1);
    let c = annotation("zobe", "patu", PosClass::Verb, (4, 5), (2, 3), "pata");
    let out = words("yesterday we [VERB] one tomu");
    let t = tr.finish(&out, Some(&c), Strategy::PhOracle).unwrap();
    assert_eq!(t.hypothesis, "yesterday we pata one tomu");
    assert_eq!(t.placeholder_count, 1);
    assert_eq!(tr.finish(&out, Some(&c), Strategy::PhLemma).unwrap().hypothesis, "yesterday we patu one tomu");
    assert_eq!(tr.finish(&out, Some(&c), Strategy::PhCommon).unwrap().hypothesis, "yesterday we pata one tomu");
    let two = words("[VERB] we [NOUN]");
    let t = tr.finish(&two, Some(&c), Strategy::PhOracle).unwrap();
    assert_eq!(t.hypothesis, "pata we pata");
    assert_eq!(t.placeholder_count, 2);
    assert_eq!(t.notes.len(), 2);
    let src = words("watu wa tomu wo zobe PST");
    assert_eq!(
        tr.prepare_source(&src, Some(&c), Strategy::Proposed).unwrap(),
        words("watu wa tomu wo [VERB] PST")
    );
    assert_eq!(tr.prepare_source(&src, Some(&c), Strategy::Cs).unwrap(), words("watu wa tomu wo patu PST"));
    assert!(tr.prepare_source(&src, None, Strategy::PhLemma).is_err());
}

#[test]
fn none_strategy_never_emits_specials() {
    let b = bundle_with_addon();
    let tr = Translator::new(&b, None, 2);
    let t = tr.translate(&words("watu wa tomu wo zobe PST"), None, Strategy::None).unwrap();
    for tok in t.tokens() {
        assert!(!tok.starts_with('[') && !tok.starts_with('<'), "{tok}");
    }
}
