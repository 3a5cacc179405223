//! Run configuration, the `desk` and `paper` presets, and the end-to-end
//! run on the synthetic language.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::align::{DictSplit, Dictionary};
use crate::augment::{
    augment_corpus, save_manifest, AugmentMode, AugmentOutput, AugmentSettings, ConstraintAnnotation,
    ConstraintSelector, InflectionLexicon, Thresholds,
};
use crate::data::{save_corpus, CorpusFormat, ParallelExample, SubwordConfig, SubwordVocab};
use crate::error::{Error, Result};
use crate::eval::{
    build_cells, render_table, run_grid, sample_for_annotation, save_reports, write_annotation_sheet, CellSet, EvalReport,
    GridResult,
};
use crate::model::{addon_examples, char_vocab_for, ModelBundle, OptimConfig, Strategy, DEFAULT_BEAM};
use crate::synth::{gen_corpus, SynthConfig, SynthData, SynthGrammar};
use crate::tensor::TransformerConfig;
use crate::train::{run_stage1, run_stage2, Metric, TrainOutcome, TrainPlan, STAGE1_PATIENCE, STAGE2_PATIENCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?}; expected desk or paper"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabConfig {
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub iterations: usize,
    pub max_phrase_len: usize,
    /// Phrase pairs must co-occur at least this often to enter a dictionary.
    pub min_pair_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    pub noun_max_freq: u64,
    pub verb_max_freq: u64,
    /// Augmented copies per original pair; absent keeps every qualifying pair.
    pub target_ratio: Option<f64>,
}

impl AugmentConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            noun_max_freq: self.noun_max_freq,
            verb_max_freq: self.verb_max_freq,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub batch_tokens: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup: u64,
    pub lr_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub beam: usize,
    pub strategies: Vec<Strategy>,
    pub annotate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Worker threads; 1 keeps every run reproducible.
    pub threads: usize,
    pub synth: SynthConfig,
    pub vocab: VocabConfig,
    pub model: TransformerConfig,
    pub align: AlignConfig,
    pub augment: AugmentConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub eval: EvalConfig,
}

fn overlay(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl RunConfig {
    /// Scaled-down constants that train in minutes on one core.
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            seed: 1,
            threads: 1,
            synth: SynthConfig::default(),
            vocab: VocabConfig { size: 1000 },
            model: TransformerConfig::desk(),
            align: AlignConfig {
                iterations: 10,
                max_phrase_len: 3,
                min_pair_count: 2,
            },
            augment: AugmentConfig {
                mode: AugmentMode::Placeholder,
                noun_max_freq: 60,
                verb_max_freq: 2000,
                target_ratio: Some(0.5),
            },
            stage1: StageConfig {
                batch_tokens: 2000,
                max_epochs: 30,
                patience: STAGE1_PATIENCE,
                warmup: 400,
                lr_scale: 1.0,
            },
            stage2: StageConfig {
                batch_tokens: 2000,
                max_epochs: 200,
                patience: STAGE2_PATIENCE,
                warmup: 400,
                lr_scale: 1.0,
            },
            eval: EvalConfig {
                beam: DEFAULT_BEAM,
                strategies: vec![
                    Strategy::None,
                    Strategy::PhOracle,
                    Strategy::PhLemma,
                    Strategy::PhCommon,
                    Strategy::Proposed,
                ],
                annotate: crate::eval::DEFAULT_SAMPLE,
            },
        }
    }

    /// Full-scale constants: 16k pieces, transformer-base, 8000 warmup steps,
    /// extraction count > 100, augmentation thresholds noun 20 / verb 2000.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            preset: Preset::Paper,
            vocab: VocabConfig { size: 16_000 },
            model: TransformerConfig::base(),
            align: AlignConfig {
                min_pair_count: 101,
                ..desk.align
            },
            augment: AugmentConfig {
                noun_max_freq: 20,
                verb_max_freq: 2000,
                ..desk.augment
            },
            stage1: StageConfig {
                batch_tokens: 8000,
                max_epochs: 100,
                warmup: 8000,
                ..desk.stage1
            },
            stage2: StageConfig {
                batch_tokens: 8000,
                max_epochs: 100,
                warmup: 8000,
                ..desk.stage2
            },
            ..desk
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Parses a TOML file laid over a preset. The preset is taken from the
    /// file's `preset` key, else `default_preset`. Unknown keys are errors.
    pub fn from_toml(text: &str, default_preset: Preset) -> Result<Self> {
        Self::overlay_toml(text, None, default_preset)
    }

    /// Like [`RunConfig::from_toml`], but `preset` (when given) wins over the
    /// file's own `preset` key.
    pub fn overlay_toml(text: &str, preset: Option<Preset>, default_preset: Preset) -> Result<Self> {
        let mut user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let from_file = match user.get("preset") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| Error::Config("preset must be a string".into()))?
                    .parse()?,
            ),
            None => None,
        };
        let chosen = preset.or(from_file).unwrap_or(default_preset);
        if let Some(t) = user.as_table_mut() {
            t.remove("preset");
        }
        let mut base = toml::Value::try_from(Self::preset(chosen)).map_err(|e| Error::Config(e.to_string()))?;
        overlay(&mut base, user);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The preset, optionally overlaid with a TOML file.
    pub fn resolve(config: Option<&Path>, preset: Option<Preset>) -> Result<Self> {
        match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::overlay_toml(&text, preset, Preset::Desk)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            }
            None => Ok(Self::preset(preset.unwrap_or(Preset::Desk))),
        }
    }

    /// Writes the resolved configuration as `config.toml` in `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.vocab.size == 0 {
            return Err(Error::Config("vocab.size must be at least 1".into()));
        }
        if let Some(r) = self.augment.target_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("augment.target_ratio {r} outside [0, 1]")));
            }
        }
        if self.eval.strategies.is_empty() {
            return Err(Error::Config("eval.strategies is empty".into()));
        }
        self.plan(1, None)?.validate()?;
        self.plan(2, None)?.validate()
    }

    fn optim(&self, stage: &StageConfig) -> OptimConfig {
        OptimConfig {
            warmup: stage.warmup,
            lr_scale: stage.lr_scale,
            adam: Default::default(),
        }
    }

    /// Training plan for `stage`, writing under `dir` when given.
    pub fn plan(&self, stage: u8, dir: Option<PathBuf>) -> Result<TrainPlan> {
        let (s, metric) = match stage {
            1 => (&self.stage1, Metric::ValBleu),
            2 => (&self.stage2, Metric::ValLoss),
            _ => return Err(Error::Config(format!("stage must be 1 or 2, got {stage}"))),
        };
        Ok(TrainPlan {
            stage,
            batch_tokens: s.batch_tokens,
            max_epochs: s.max_epochs,
            patience: s.patience,
            metric,
            seed: self.seed,
            optim: self.optim(s),
            checkpoint_dir: dir,
            resume: false,
        })
    }

    pub fn augment_settings(&self) -> AugmentSettings {
        AugmentSettings {
            mode: self.augment.mode,
            thresholds: self.augment.thresholds(),
            target_ratio: self.augment.target_ratio,
            seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }
}

/// Subword vocabulary over both sides of `corpus`.
pub fn build_vocab(corpus: &[ParallelExample], size: usize) -> Result<SubwordVocab> {
    let sides = corpus
        .iter()
        .flat_map(|ex| [ex.src_tokens.as_slice(), ex.tgt_tokens.as_slice()]);
    SubwordVocab::train(sides, &SubwordConfig::with_size(size))
}

/// Everything produced by [`run_synthetic`].
pub struct SyntheticRun {
    pub data: SynthData,
    pub augmented: AugmentOutput,
    pub vocab: SubwordVocab,
    pub stage1: TrainOutcome,
    pub stage2: TrainOutcome,
    pub cells: Vec<CellSet>,
    pub grid: GridResult,
}

impl SyntheticRun {
    pub fn reports(&self) -> &[EvalReport] {
        &self.grid.reports
    }
}

/// synth -> augment -> vocab -> stage 1 -> stage 2 -> evaluation grid.
/// With `out`, every intermediate artifact is written there.
pub fn run_synthetic(cfg: &RunConfig, out: Option<&Path>) -> Result<SyntheticRun> {
    cfg.validate()?;
    if cfg.augment.mode != AugmentMode::Placeholder {
        return Err(Error::Config("the synthetic run trains the placeholder model; set augment.mode = \"placeholder\"".into()));
    }
    let synth_cfg = cfg.synth_config();
    let grammar = SynthGrammar::generate(&synth_cfg)?;
    let data = gen_corpus(&grammar, &synth_cfg)?;
    let augmented = augment_corpus(&data.train, &data.dictionary, &data.lexicon, &cfg.augment_settings())?;
    let training_set = augmented.training_set(&data.train);
    let vocab = build_vocab(&training_set, cfg.vocab.size)?;
    if let Some(dir) = out {
        write_synthetic_inputs(dir, cfg, &data, &augmented, &vocab)?;
    }
    log::info!(
        "synthetic data: {} train, {} augmented, {} dev, {} test, vocab {}",
        data.train.len(),
        augmented.augmented.len(),
        data.dev.len(),
        data.test.len(),
        vocab.len()
    );

    let bundle = ModelBundle::new(vocab.clone(), cfg.model, cfg.seed)?;
    let dir = |sub: &str| out.map(|d| d.join(sub));
    let stage1 = run_stage1(&cfg.plan(1, dir("train"))?, bundle, &training_set, &data.dev)?;

    let chars = char_vocab_for(&data.train);
    let train_ex = addon_examples(&data.train, &augmented.manifest, &vocab, &chars)?;
    let dev_manifest = constraints_for(&data.dev, &data.dictionary, &data.lexicon);
    let val_ex = addon_examples(&data.dev, &dev_manifest, &vocab, &chars)?;
    let stage2 = run_stage2(&cfg.plan(2, dir("train"))?, &stage1.bundle, chars, &train_ex, &val_ex)?;

    let cells = build_cells(&data.test, &data.split, &data.lexicon);
    let models: Vec<(Strategy, &ModelBundle)> = cfg.eval.strategies.iter().map(|&s| (s, &stage2.bundle)).collect();
    let grid = run_grid(&models, &data.lexicon, &cells, cfg.eval.beam, cfg.seed)?;
    if let Some(d) = out {
        stage2.bundle.save(&d.join("model.ckpt"), json!({ "stage": 2, "best_epoch": stage2.best_epoch }))?;
        write_eval_outputs(&d.join("eval"), &grid, &cells, cfg)?;
        log::info!("\n{}", render_table(&grid.reports));
    }
    Ok(SyntheticRun {
        data,
        augmented,
        vocab,
        stage1,
        stage2,
        cells,
        grid,
    })
}

fn write_synthetic_inputs(
    dir: &Path,
    cfg: &RunConfig,
    data: &SynthData,
    augmented: &AugmentOutput,
    vocab: &SubwordVocab,
) -> Result<()> {
    cfg.write_to(dir)?;
    write_synth_data(dir, data)?;
    save_manifest(&dir.join("manifest.jsonl"), &augmented.manifest)?;
    save_corpus(&dir.join("augmented.tsv"), &augmented.augmented, CorpusFormat::Tsv)?;
    vocab.save(&dir.join("vocab.txt"))
}

/// Reports, per-sentence outputs and, for the proposed strategy, an
/// annotation sheet of up to `eval.annotate` sampled rows.
pub fn write_eval_outputs(dir: &Path, grid: &GridResult, cells: &[CellSet], cfg: &RunConfig) -> Result<()> {
    save_reports(dir, "report", &grid.reports)?;
    save_jsonl(&dir.join("outputs.jsonl"), &grid.outputs)?;
    for r in &grid.reports {
        let strategy: Strategy = r.strategy.parse()?;
        let rows = grid.annotation_rows(strategy, cells);
        save_jsonl(&dir.join(format!("annotation-pool-{strategy}.jsonl")), &rows)?;
        if strategy == Strategy::Proposed && cfg.eval.annotate > 0 {
            let sample = sample_for_annotation(&rows, cfg.eval.annotate.min(rows.len()), cfg.seed)?;
            write_annotation_sheet(&dir.join("annotation.tsv"), &sample)?;
        }
    }
    Ok(())
}

/// One JSON object per line.
pub fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for it in items {
        buf.push_str(&serde_json::to_string(it)?);
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// First usable constraint of every pair that has one, ignoring frequency.
pub fn constraints_for(
    corpus: &[ParallelExample],
    dict: &Dictionary,
    lex: &InflectionLexicon,
) -> Vec<ConstraintAnnotation> {
    let selector = ConstraintSelector::new(dict, &Thresholds::unlimited());
    corpus.iter().filter_map(|ex| selector.select(ex, lex)).collect()
}

/// Corpora, dictionaries, split and lexicon of a synthetic dataset.
pub fn write_synth_data(dir: &Path, data: &SynthData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_corpus(&dir.join("train.tsv"), &data.train, CorpusFormat::Tsv)?;
    save_corpus(&dir.join("dev.tsv"), &data.dev, CorpusFormat::Tsv)?;
    save_corpus(&dir.join("test.tsv"), &data.test, CorpusFormat::Tsv)?;
    data.dictionary.save(&dir.join("dict.tsv"))?;
    save_split(dir, &data.split)?;
    data.lexicon.save(&dir.join("lexicon.tsv"))
}

pub fn save_split(dir: &Path, split: &DictSplit) -> Result<()> {
    split.seen.save(&dir.join("seen.tsv"))?;
    split.unseen.save(&dir.join("unseen.tsv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_constants() {
        let p = RunConfig::paper();
        assert_eq!(p.stage1.warmup, 8000);
        assert_eq!(p.vocab.size, 16_000);
        assert_eq!(p.align.min_pair_count, 101);
        assert_eq!((p.augment.noun_max_freq, p.augment.verb_max_freq), (20, 2000));
        assert_eq!((p.stage1.patience, p.stage2.patience), (3, 5));
        assert_eq!(p.model, TransformerConfig::base());
        p.validate().unwrap();
    }

    #[test]
    fn toml_overlays_preset_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_toml("seed = 7\n[stage1]\nmax_epochs = 2\n", Preset::Desk).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.stage1.max_epochs, 2);
        assert_eq!(cfg.stage1.warmup, RunConfig::desk().stage1.warmup);
        let paper = RunConfig::from_toml("preset = \"paper\"\n", Preset::Desk).unwrap();
        assert_eq!(paper.stage1.warmup, 8000);
        assert!(RunConfig::from_toml("bogus = 1\n", Preset::Desk).is_err());
        assert!(RunConfig::from_toml("[stage1]\nwarmpu = 3\n", Preset::Desk).is_err());
        assert!(RunConfig::from_toml("[augment]\ntarget_ratio = 2.0\n", Preset::Desk).is_err());
        let forced = RunConfig::overlay_toml("preset = \"paper\"\nseed = 3\n", Some(Preset::Desk), Preset::Desk).unwrap();
        assert_eq!((forced.preset, forced.seed, forced.stage1.warmup), (Preset::Desk, 3, 400));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::desk();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text, Preset::Paper).unwrap(), cfg);
    }
}
