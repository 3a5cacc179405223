use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phtrans_core::augment::AugmentMode;
use phtrans_core::align::EvalSource;
use phtrans_core::model::Strategy;
use phtrans_core::pipeline::Preset;

#[derive(Parser, Debug)]
#[command(name = "phtrans", version, about = "Terminology-constrained translation with placeholder inflection")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base constants: scaled-down `desk` or full-scale `paper`.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    /// TOML file laid over the preset; flags win over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic benchmark: corpora, dictionaries and lexicon.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a subword vocabulary from both sides of one or more corpora.
    BuildVocab {
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        /// Vocabulary file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Word-align a corpus with IBM Model 1 and write Pharaoh links.
    Align {
        #[arg(long)]
        corpus: PathBuf,
        /// Alignment file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Extract and classify dictionary entries, optionally splitting
    /// evaluation entries into seen and unseen.
    BuildDict {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        alignments: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Held-out data that defines the evaluation entries.
        #[arg(long, default_value = "dev", value_parser = parse_eval_source)]
        eval_source: EvalSource,
        #[arg(long)]
        max_phrase_len: Option<usize>,
        #[arg(long)]
        min_pair_count: Option<u64>,
    },
    /// Render constrained copies of a corpus.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AugmentMode>,
        /// Augmented copies as a fraction of the corpus size.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        noun_max_freq: Option<u64>,
        #[arg(long)]
        verb_max_freq: Option<u64>,
    },
    /// Train the word model (stage 1) or the inflection add-on (stage 2).
    Train(TrainArgs),
    /// Translate JSONL records `{src, constraint?}`; records without a
    /// constraint are translated plainly.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "proposed", value_parser = parse_strategy)]
        strategy: Strategy,
        /// Needed by ph-common and ph-morph.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Score strategies on the seen/unseen NOUN/VERB grid.
    Evaluate {
        /// Model used by every strategy without its own `--model-for`.
        #[arg(long)]
        model: PathBuf,
        /// `STRATEGY=PATH`, e.g. `cs=cs.ckpt`.
        #[arg(long = "model-for", value_parser = parse_model_for)]
        model_for: Vec<(Strategy, PathBuf)>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        seen: PathBuf,
        #[arg(long)]
        unseen: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated strategies; defaults to the configured list.
        #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
        strategies: Vec<Strategy>,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Draw a uniform sample of outputs into a TSV sheet for manual tagging.
    SampleAnnotate {
        /// Annotation pool JSONL written by `evaluate`.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic data, both training stages and evaluation in one run.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Original training corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation corpus.
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Stage 1: vocabulary file.
    #[arg(long, required_if_eq("stage", "1"))]
    pub vocab: Option<PathBuf>,
    /// Stage 1: augmented copies appended to the corpus.
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    /// Stage 2: stage-1 checkpoint.
    #[arg(long, required_if_eq("stage", "2"))]
    pub model: Option<PathBuf>,
    /// Stage 2: augmentation manifest.
    #[arg(long, required_if_eq("stage", "2"))]
    pub manifest: Option<PathBuf>,
    /// Stage 2: dictionary used to pick validation constraints.
    #[arg(long, required_if_eq("stage", "2"))]
    pub dict: Option<PathBuf>,
    /// Stage 2: inflection lexicon.
    #[arg(long, required_if_eq("stage", "2"))]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Continue from the state file in `--out`.
    #[arg(long)]
    pub resume: bool,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: phtrans_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<AugmentMode, String> {
    s.parse().map_err(|e: phtrans_core::Error| e.to_string())
}

fn parse_eval_source(s: &str) -> Result<EvalSource, String> {
    s.parse().map_err(|e: phtrans_core::Error| e.to_string())
}

fn parse_model_for(s: &str) -> Result<(Strategy, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected STRATEGY=PATH")?;
    Ok((parse_strategy(name)?, PathBuf::from(path)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn stage_two_requires_a_model() {
        let r = Cli::try_parse_from(["phtrans", "train", "--stage", "2", "--corpus", "a", "--dev", "b", "--out", "c"]);
        assert!(r.is_err());
    }

    #[test]
    fn model_overrides_parse() {
        assert_eq!(parse_model_for("cs=x.ckpt").unwrap(), (Strategy::Cs, PathBuf::from("x.ckpt")));
        assert!(parse_model_for("nope").is_err());
        assert!(parse_model_for("bogus=x").is_err());
    }
}
