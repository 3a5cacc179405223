use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use phtrans_core::align::{
    align_ibm1, build_eval_dict, classify_entries, count_train_freq, extract_phrases, load_pharaoh, save_pharaoh,
    DictEntry, Dictionary, PosClass,
};
use phtrans_core::augment::{augment_corpus, load_manifest, save_manifest, ConstraintAnnotation, InflectionLexicon};
use phtrans_core::data::{load_corpus, save_corpus, CorpusFormat, ParallelExample, SubwordConfig, SubwordVocab};
use phtrans_core::eval::{build_cells, render_table, run_grid, sample_for_annotation, write_annotation_sheet, AnnotationRow};
use phtrans_core::model::{addon_examples, char_vocab_for, ModelBundle, Strategy, Translator};
use phtrans_core::pipeline::{
    constraints_for, load_jsonl, run_synthetic, save_jsonl, save_split, write_eval_outputs, write_synth_data,
    RunConfig,
};
use phtrans_core::synth::{gen_corpus, SynthGrammar};
use phtrans_core::train::{run_stage1, run_stage2};
use phtrans_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{Command, Common, TrainArgs};

fn corpus(path: &Path) -> Result<Vec<ParallelExample>> {
    load_corpus(path, CorpusFormat::from_path(path))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

/// Directory holding a file output; the resolved config is written there.
fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(common.config.as_deref(), common.preset.map(Into::into))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.threads = t as usize;
    }
    Ok(cfg)
}

pub fn run(command: Command, mut cfg: RunConfig) -> Result<()> {
    match command {
        Command::Synth { out } => {
            cfg.validate()?;
            let sc = cfg.synth_config();
            let grammar = SynthGrammar::generate(&sc)?;
            let data = gen_corpus(&grammar, &sc)?;
            write_synth_data(&out, &data)?;
            cfg.write_to(&out)?;
            log::info!(
                "wrote {} train, {} dev, {} test pairs to {}",
                data.train.len(),
                data.dev.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::BuildVocab { corpora, out, size } => {
            if let Some(s) = size {
                cfg.vocab.size = s;
            }
            cfg.validate()?;
            let mut all = Vec::new();
            for p in &corpora {
                all.extend(corpus(p)?);
            }
            let sides = all.iter().flat_map(|e| [e.src_tokens.as_slice(), e.tgt_tokens.as_slice()]);
            let vocab = SubwordVocab::train(sides, &SubwordConfig::with_size(cfg.vocab.size))?;
            cfg.write_to(&parent_dir(&out))?;
            vocab.save(&out)?;
            log::info!("vocabulary of {} pieces written to {}", vocab.len(), out.display());
        }
        Command::Align { corpus: path, out, iterations } => {
            if let Some(n) = iterations {
                cfg.align.iterations = n;
            }
            cfg.validate()?;
            let data = corpus(&path)?;
            let aligned = align_ibm1(&data, cfg.align.iterations)?;
            cfg.write_to(&parent_dir(&out))?;
            save_pharaoh(&out, &aligned.alignments)?;
            if let Some(ll) = aligned.log_likelihood.last() {
                log::info!("final log-likelihood {ll:.4}");
            }
        }
        Command::BuildDict {
            corpus: path,
            alignments,
            out,
            dev,
            test,
            eval_source,
            max_phrase_len,
            min_pair_count,
        } => {
            if let Some(n) = max_phrase_len {
                cfg.align.max_phrase_len = n;
            }
            if let Some(n) = min_pair_count {
                cfg.align.min_pair_count = n;
            }
            cfg.validate()?;
            let train = corpus(&path)?;
            let links = load_pharaoh(&alignments, &train)?;
            let table = extract_phrases(&train, &links, cfg.align.max_phrase_len, cfg.align.min_pair_count)?;
            let (nouns, verbs) = classify_entries(&table)?;
            let mut dict = nouns.merged(&verbs);
            count_train_freq(&mut dict, &train);
            mkdir(&out)?;
            cfg.write_to(&out)?;
            let dict = if dev.is_some() || test.is_some() {
                let dev = dev.as_deref().map(corpus).transpose()?.unwrap_or_default();
                let test = test.as_deref().map(corpus).transpose()?.unwrap_or_default();
                let eval = build_eval_dict(&dict, &dev, &test, eval_source);
                let (split, pruned) = phtrans_core::align::split_seen_unseen(&eval, &dict, cfg.seed)?;
                save_split(&out, &split)?;
                log::info!("{} seen and {} unseen evaluation entries", split.seen.len(), split.unseen.len());
                pruned
            } else {
                dict
            };
            dict.save(&out.join("dict.tsv"))?;
            log::info!("{} dictionary entries from {} phrase pairs", dict.len(), table.len());
        }
        Command::Augment {
            corpus: path,
            dict,
            lexicon,
            out,
            mode,
            ratio,
            noun_max_freq,
            verb_max_freq,
        } => {
            if let Some(m) = mode {
                cfg.augment.mode = m;
            }
            if ratio.is_some() {
                cfg.augment.target_ratio = ratio;
            }
            if let Some(n) = noun_max_freq {
                cfg.augment.noun_max_freq = n;
            }
            if let Some(n) = verb_max_freq {
                cfg.augment.verb_max_freq = n;
            }
            cfg.validate()?;
            let train = corpus(&path)?;
            let dict = Dictionary::load(&dict)?;
            let lex = InflectionLexicon::load(&lexicon)?;
            let output = augment_corpus(&train, &dict, &lex, &cfg.augment_settings())?;
            mkdir(&out)?;
            cfg.write_to(&out)?;
            save_corpus(&out.join("augmented.tsv"), &output.augmented, CorpusFormat::Tsv)?;
            save_manifest(&out.join("manifest.jsonl"), &output.manifest)?;
            log::info!(
                "{} augmented pairs from {} qualifying ({} lexicon misses)",
                output.augmented.len(),
                output.qualifying,
                output.lexicon_misses
            );
        }
        Command::Train(args) => train(args, cfg)?,
        Command::Translate {
            model,
            input,
            output,
            strategy,
            lexicon,
            beam,
        } => {
            if let Some(b) = beam {
                cfg.eval.beam = b;
            }
            cfg.validate()?;
            let bundle = ModelBundle::load(&model)?;
            let lex = lexicon.as_deref().map(InflectionLexicon::load).transpose()?;
            let tr = Translator::new(&bundle, lex.as_ref(), cfg.eval.beam);
            let records: Vec<TranslateInput> = load_jsonl(&input)?;
            let mut results = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                let src: Vec<String> = r.src.split_whitespace().map(str::to_string).collect();
                let constraint = r
                    .constraint
                    .as_ref()
                    .map(|c| c.annotation(i, &src))
                    .transpose()
                    .map_err(|e| Error::Config(format!("{}:{}: {e}", input.display(), i + 1)))?;
                // unconstrained records get a plain translation
                let s = match constraint {
                    None if strategy.needs_constraint() => Strategy::None,
                    _ => strategy,
                };
                let t = tr.translate(&src, constraint.as_ref(), s)?;
                results.push(t);
            }
            cfg.write_to(&parent_dir(&output))?;
            save_jsonl(&output, &results)?;
            log::info!("translated {} sentences with {strategy}", results.len());
        }
        Command::Evaluate {
            model,
            model_for,
            test,
            seen,
            unseen,
            lexicon,
            out,
            strategies,
            beam,
        } => {
            if let Some(b) = beam {
                cfg.eval.beam = b;
            }
            if !strategies.is_empty() {
                cfg.eval.strategies = strategies;
            }
            cfg.validate()?;
            let default = ModelBundle::load(&model)?;
            let mut extra: HashMap<Strategy, ModelBundle> = HashMap::new();
            for (s, p) in &model_for {
                extra.insert(*s, ModelBundle::load(p)?);
            }
            let split = phtrans_core::align::DictSplit {
                seen: Dictionary::load(&seen)?,
                unseen: Dictionary::load(&unseen)?,
                seed: cfg.seed,
            };
            let lex = InflectionLexicon::load(&lexicon)?;
            let test = corpus(&test)?;
            let cells = build_cells(&test, &split, &lex);
            if cells.is_empty() {
                return Err(Error::Config("no test pair matches the seen or unseen dictionaries".into()));
            }
            let models: Vec<(Strategy, &ModelBundle)> = cfg
                .eval
                .strategies
                .iter()
                .map(|s| (*s, extra.get(s).unwrap_or(&default)))
                .collect();
            let grid = run_grid(&models, &lex, &cells, cfg.eval.beam, cfg.seed)?;
            mkdir(&out)?;
            cfg.write_to(&out)?;
            write_eval_outputs(&out, &grid, &cells, &cfg)?;
            println!("{}", render_table(&grid.reports));
        }
        Command::SampleAnnotate { pool, n, out } => {
            if let Some(n) = n {
                cfg.eval.annotate = n;
            }
            cfg.validate()?;
            let rows: Vec<AnnotationRow> = load_jsonl(&pool)?;
            let sample = sample_for_annotation(&rows, cfg.eval.annotate, cfg.seed)?;
            cfg.write_to(&parent_dir(&out))?;
            write_annotation_sheet(&out, &sample)?;
            log::info!("{} of {} rows written to {}", sample.len(), rows.len(), out.display());
        }
        Command::Pipeline { out } => {
            let run = run_synthetic(&cfg, Some(&out))?;
            println!("{}", render_table(run.reports()));
        }
    }
    Ok(())
}

fn train(args: TrainArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(n) = args.max_epochs {
        match args.stage {
            1 => cfg.stage1.max_epochs = n,
            _ => cfg.stage2.max_epochs = n,
        }
    }
    cfg.validate()?;
    let mut plan = cfg.plan(args.stage, Some(args.out.clone()))?;
    plan.resume = args.resume;
    let train = corpus(&args.corpus)?;
    let dev = corpus(&args.dev)?;
    mkdir(&args.out)?;
    cfg.write_to(&args.out)?;
    let missing = |flag: &str| Error::Config(format!("stage {} needs --{flag}", args.stage));
    let outcome = if args.stage == 1 {
        let vocab = SubwordVocab::load(args.vocab.as_deref().ok_or_else(|| missing("vocab"))?)?;
        let mut set = train;
        if let Some(p) = &args.augmented {
            set.extend(corpus(p)?);
        }
        let bundle = ModelBundle::new(vocab, cfg.model, cfg.seed)?;
        run_stage1(&plan, bundle, &set, &dev)?
    } else {
        let stage1 = ModelBundle::load(args.model.as_deref().ok_or_else(|| missing("model"))?)?;
        let manifest = load_manifest(args.manifest.as_deref().ok_or_else(|| missing("manifest"))?)?;
        let dict = Dictionary::load(args.dict.as_deref().ok_or_else(|| missing("dict"))?)?;
        let lex = InflectionLexicon::load(args.lexicon.as_deref().ok_or_else(|| missing("lexicon"))?)?;
        let chars = char_vocab_for(&train);
        let train_ex = addon_examples(&train, &manifest, &stage1.vocab, &chars)?;
        let dev_manifest = constraints_for(&dev, &dict, &lex);
        let val_ex = addon_examples(&dev, &dev_manifest, &stage1.vocab, &chars)?;
        run_stage2(&plan, &stage1, chars, &train_ex, &val_ex)?
    };
    let path = args.out.join("model.ckpt");
    outcome.bundle.save(
        &path,
        json!({ "stage": args.stage, "best_epoch": outcome.best_epoch, "stopped_early": outcome.stopped_early }),
    )?;
    log::info!("best epoch {} saved to {}", outcome.best_epoch, path.display());
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TranslateInput {
    src: String,
    #[serde(default)]
    constraint: Option<ConstraintInput>,
}

/// A user-specified term: the source phrase it replaces, the target lemma
/// and its class. `surface` is the reference form some strategies need.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ConstraintInput {
    src_phrase: String,
    lemma: String,
    pos: String,
    #[serde(default)]
    surface: Option<String>,
}

impl ConstraintInput {
    fn annotation(&self, pair_id: usize, src: &[String]) -> Result<ConstraintAnnotation> {
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let phrase = words(&self.src_phrase);
        let lemma = words(&self.lemma);
        if phrase.is_empty() || lemma.is_empty() {
            return Err(Error::Config("constraint needs a non-empty src_phrase and lemma".into()));
        }
        let pos: PosClass = self.pos.parse()?;
        let start = src
            .windows(phrase.len())
            .position(|w| w == phrase.as_slice())
            .ok_or_else(|| Error::Config(format!("src_phrase {:?} does not occur in src", self.src_phrase)))?;
        let surface = self.surface.as_deref().map(words).unwrap_or_default();
        Ok(ConstraintAnnotation {
            pair_id,
            entry: DictEntry {
                src_phrase: phrase.clone(),
                tgt_phrase: if surface.is_empty() { lemma.clone() } else { surface.clone() },
                tgt_lemma: lemma,
                pos_class: pos,
                pair_count: 0,
                train_freq: 0,
            },
            src_span: (start, start + phrase.len()),
            tgt_span: (0, 0),
            reference_surface: surface,
            mode: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_span_is_located() {
        let c = ConstraintInput {
            src_phrase: "b c".into(),
            lemma: "x".into(),
            pos: "VERB".into(),
            surface: None,
        };
        let src: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let a = c.annotation(0, &src).unwrap();
        assert_eq!(a.src_span, (1, 3));
        assert_eq!(a.pos(), PosClass::Verb);
        let missing = ConstraintInput {
            src_phrase: "z".into(),
            ..c
        };
        assert!(missing.annotation(0, &src).is_err());
    }
}
